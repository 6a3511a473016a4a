"""Continuous-time power market dynamics for a single supplier and consumer.

The market state is x = (p_g, p_d, e): power supply, power demand, and
stored (imbalanced) energy.  Supply speeds up when the price exceeds the
marginal cost b_g + c_g*p_g plus an excess-energy charge k*e; demand speeds
up when the marginal benefit b_d - c_d*p_d exceeds the price.  Stored
energy integrates the supply/demand mismatch plus any renewable input.

All quantities use abstract consistent units (power, energy, price, time);
no unit conversions are performed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMarketError, DomainError, ParameterError

__all__ = [
    "MarketParams",
    "MarketState",
    "Disturbance",
    "SystemMatrices",
    "supply_rate",
    "demand_rate",
    "storage_rate",
    "market_drift",
    "assemble_system_matrices",
    "compute_equilibrium",
]


def _require_finite(name, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{name}: non-finite input {v!r}")


@dataclass(frozen=True)
class MarketParams:
    """Scalar market constants.

    ``c_d`` is stored as a positive magnitude and applied with a negative
    sign in the demand drift (downward-sloping demand: marginal benefit
    b_d_hat - c_d * p_d).  ``in_mean`` is the predicted mean renewable
    input; when nonzero, the third disturbance channel is interpreted as
    the deviation from it.
    """

    c_g: float
    c_d: float
    tau_g: float
    tau_d: float
    b_g_hat: float
    b_d_hat: float
    k: float
    tau_lambda: float
    epsilon: float
    in_mean: float = 0.0

    def __post_init__(self):
        for name in ("c_g", "c_d", "tau_g", "tau_d", "k", "tau_lambda", "epsilon"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise ParameterError(f"{name} must be finite and > 0, got {v!r}")
        for name in ("b_g_hat", "b_d_hat", "in_mean"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class MarketState:
    """Market state (p_g, p_d, e); e may be negative (energy deficit)."""

    p_g: float
    p_d: float
    e: float

    def __post_init__(self):
        _require_finite("MarketState", self.p_g, self.p_d, self.e)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_g, self.p_d, self.e], dtype=float)

    @classmethod
    def from_array(cls, x) -> "MarketState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class Disturbance:
    """Disturbance w = (delta_g, delta_d, in_dev).

    ``in_dev`` is the raw renewable input, or its deviation from
    ``MarketParams.in_mean`` when the forecast offset is active.
    """

    delta_g: float = 0.0
    delta_d: float = 0.0
    in_dev: float = 0.0

    def __post_init__(self):
        _require_finite("Disturbance", self.delta_g, self.delta_d, self.in_dev)

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_g, self.delta_d, self.in_dev], dtype=float)

    @classmethod
    def from_array(cls, w) -> "Disturbance":
        w = np.asarray(w, dtype=float)
        return cls(float(w[0]), float(w[1]), float(w[2]))


ZERO_DISTURBANCE = Disturbance(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SystemMatrices:
    """Compact form  dx/dt = A x + b + tau * lam + B w,  z = C x + D lam."""

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    tau: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def drift(self, x, lam, w) -> np.ndarray:
        """Drift for plain arrays; hot path used by the simulator."""
        return self.A @ x + self.b + self.tau * lam + self.B @ w

    def output(self, x, lam) -> np.ndarray:
        return self.C @ x + self.D * lam


def assemble_system_matrices(params: MarketParams) -> SystemMatrices:
    """Build the compact state-space matrices from market constants.

    A carries the sparsity pattern
        [[-c_g/tau_g, 0, -k/tau_g], [0, -c_d/tau_d, 0], [1, -1, 0]],
    B = diag(-1/tau_g, 1/tau_d, 1), tau = (1/tau_g, -1/tau_d, 0), and
    b = (-b_g_hat/tau_g, b_d_hat/tau_d, in_mean).  The output z = (e,
    epsilon * lam) is encoded by C selecting e and D = (0, epsilon).
    """
    p = params
    A = np.array([
        [-p.c_g / p.tau_g, 0.0, -p.k / p.tau_g],
        [0.0, -p.c_d / p.tau_d, 0.0],
        [1.0, -1.0, 0.0],
    ])
    B = np.diag([-1.0 / p.tau_g, 1.0 / p.tau_d, 1.0])
    b = np.array([-p.b_g_hat / p.tau_g, p.b_d_hat / p.tau_d, p.in_mean])
    tau = np.array([1.0 / p.tau_g, -1.0 / p.tau_d, 0.0])
    C = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    D = np.array([0.0, p.epsilon])
    return SystemMatrices(A=A, B=B, b=b, tau=tau, C=C, D=D)


def supply_rate(params: MarketParams, p_g: float, e: float, lam: float,
                delta_g: float = 0.0) -> float:
    """d(p_g)/dt = (-c_g*p_g - k*e - b_g_hat + lam - delta_g) / tau_g."""
    _require_finite("supply_rate", p_g, e, lam, delta_g)
    p = params
    return (-p.c_g * p_g - p.k * e - p.b_g_hat + lam - delta_g) / p.tau_g


def demand_rate(params: MarketParams, p_d: float, lam: float,
                delta_d: float = 0.0) -> float:
    """d(p_d)/dt = (-c_d*p_d + b_d_hat - lam + delta_d) / tau_d."""
    _require_finite("demand_rate", p_d, lam, delta_d)
    p = params
    return (-p.c_d * p_d + p.b_d_hat - lam + delta_d) / p.tau_d


def storage_rate(p_g: float, p_d: float, in_power: float) -> float:
    """d(e)/dt = p_g + in - p_d."""
    _require_finite("storage_rate", p_g, p_d, in_power)
    return p_g + in_power - p_d


def market_drift(params: MarketParams, state: MarketState, lam: float,
                 w: Disturbance = ZERO_DISTURBANCE) -> np.ndarray:
    """Full state drift A x + b + tau*lam + B w.

    Component-wise identical to (supply_rate, demand_rate, storage_rate);
    with a nonzero ``in_mean`` the third channel of ``w`` is the deviation
    from it, so the total renewable input is in_mean + w.in_dev.
    """
    _require_finite("market_drift", lam)
    mats = assemble_system_matrices(params)
    return mats.drift(state.as_array(), lam, w.as_array())


def compute_equilibrium(params: MarketParams) -> tuple[float, float]:
    """Market-clearing point: p* where marginal cost meets marginal benefit.

    Solves b_g_hat + c_g*p = b_d_hat - c_d*p, giving
    p* = (b_d_hat - b_g_hat)/(c_g + c_d) and lam* = b_g_hat + c_g*p*.
    The drift at state (p*, p*, 0) with lam* and w = 0 is the zero vector.
    """
    denom = params.c_g + params.c_d
    if denom == 0.0:
        raise DegenerateMarketError("c_g + c_d must be nonzero")
    p_star = (params.b_d_hat - params.b_g_hat) / denom
    lam_star = params.b_g_hat + params.c_g * p_star
    return p_star, lam_star
