"""Closed-loop integration and trajectory metrics.

The simulator always integrates the true affine market dynamics; the
rule-based model enters only through the controller and the dissipation
diagnostics.  Disturbances are piecewise constant (sample and hold) with
per-interval values drawn from a counter-keyed generator, so any (seed,
time) query is reproducible independent of query order.

With a storage target q the integration runs on the shifted energy
coordinate: the drift is evaluated at (p_g, p_d, e - q), which realizes
the supply-side charge k*(e - q) and leaves the storage row unchanged.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .controllers import ACE, FUZZY, PricingPolicy, ace_price_rate, fuzzy_price
from .errors import ConfigError, DivergenceError, IntegrationError, ParameterError
from .fuzzy import FuzzyBox
from .lmi import GainSet, LmiProblem, phi_quadratic_form
from .market import (Disturbance, MarketParams, MarketState,
                     assemble_system_matrices)

__all__ = [
    "DisturbanceSpec",
    "SimConfig",
    "Trajectory",
    "Metrics",
    "generate_disturbance",
    "disturbance_schedule",
    "rk4_step",
    "simulate_closed_loop",
    "compute_metrics",
    "dissipation_check_along",
    "trajectory_to_csv",
    "trajectory_from_csv",
]

DIVERGENCE_GUARD = 1e6


@dataclass(frozen=True)
class DisturbanceSpec:
    """Sample-and-hold uniform disturbance on (delta_g, delta_d, in)."""

    ranges: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    hold_interval: float = 0.1
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if not self.hold_interval > 0:
            raise ParameterError("hold_interval must be > 0")
        for lo, hi in self.ranges:
            if lo > hi:
                raise ParameterError(f"disturbance range [{lo}, {hi}] has lo > hi")
        if self.seed < 0:
            raise ParameterError("seed must be >= 0")

    @classmethod
    def disabled_spec(cls) -> "DisturbanceSpec":
        return cls(ranges=((0.0, 0.0), (0.0, 0.0), (0.0, 0.0)), enabled=False)


def _interval_index(t: float, hold: float) -> int:
    # the relative nudge keeps accumulated step times just below a boundary
    # from falling into the previous interval
    return max(int(math.floor(t / hold + 1e-9)), 0)


def _interval_value(seed: int, channel: int, j: int, lo: float, hi: float) -> float:
    u = np.random.default_rng((seed, channel, j)).random()
    return lo + (hi - lo) * u


def generate_disturbance(spec: DisturbanceSpec, t: float) -> Disturbance:
    """Held disturbance value at time t; pure function of (spec, t)."""
    if not spec.enabled:
        return Disturbance(0.0, 0.0, 0.0)
    j = _interval_index(t, spec.hold_interval)
    vals = [_interval_value(spec.seed, c, j, *spec.ranges[c]) for c in range(3)]
    return Disturbance(*vals)


def disturbance_schedule(spec: DisturbanceSpec, n_intervals: int) -> np.ndarray:
    """Values for intervals 0..n-1; row j equals generate_disturbance at j*hold."""
    out = np.zeros((n_intervals, 3))
    if not spec.enabled:
        return out
    for j in range(n_intervals):
        for c in range(3):
            out[j, c] = _interval_value(spec.seed, c, j, *spec.ranges[c])
    return out


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    dt: float
    initial_state: MarketState
    initial_lambda: float = 0.0
    record_stride: int = 1

    def __post_init__(self):
        if not self.t_end > 0 or not self.dt > 0:
            raise ParameterError("t_end and dt must be > 0")
        if self.record_stride < 1:
            raise ParameterError("record_stride must be >= 1")
        n = self.t_end / self.dt
        if abs(n - round(n)) > 1e-9 * max(n, 1.0):
            raise ConfigError(f"dt={self.dt} does not divide t_end={self.t_end}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class Trajectory:
    """Recorded closed-loop run; outputs are z = (e - q, epsilon*lambda)."""

    times: np.ndarray          # (N,)
    states: np.ndarray         # (N, 3) rows (p_g, p_d, e)
    prices: np.ndarray         # (N,)
    disturbances: np.ndarray   # (N, 3)
    outputs: np.ndarray        # (N, 2)

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class Metrics:
    settling_time: Optional[float]
    rms_imbalance: float
    max_abs_imbalance: float
    mean_supply_demand_gap: float
    empirical_ratio: Optional[float]


def rk4_step(derivative: Callable[[np.ndarray, float], np.ndarray],
             x: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta update."""
    if not dt > 0:
        raise ParameterError("dt must be > 0")
    k1 = derivative(x, t)
    k2 = derivative(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = derivative(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = derivative(x + dt * k3, t + dt)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite derivative near t={t}")
    return out


def simulate_closed_loop(params: MarketParams, policy: PricingPolicy,
                         dist: DisturbanceSpec, config: SimConfig) -> Trajectory:
    """Integrate the market under the chosen policy with held disturbances.

    The disturbance is evaluated once per step (its hold grid aligns with
    the step grid by construction) and held constant through the stage
    evaluations.  Recording happens at ``record_stride`` multiples plus
    the final step.
    """
    hold_ratio = dist.hold_interval / config.dt
    if dist.enabled and abs(hold_ratio - round(hold_ratio)) > 1e-9 * max(hold_ratio, 1.0):
        raise ConfigError(
            f"dt={config.dt} does not divide hold_interval={dist.hold_interval}")

    mats = assemble_system_matrices(params)
    q = policy.storage_target_q
    n = config.n_steps
    n_intervals = _interval_index(config.t_end, dist.hold_interval) + 1
    schedule = disturbance_schedule(dist, n_intervals)
    eps = params.epsilon

    x = config.initial_state.as_array()
    lam = float(config.initial_lambda)
    shift = np.array([0.0, 0.0, q])

    times, states, prices, dists, outputs = [], [], [], [], []

    def record(i, x, lam):
        t_row = i * config.dt
        w_row = schedule[_interval_index(t_row, dist.hold_interval)]
        times.append(t_row)
        states.append(x.copy())
        prices.append(lam)
        dists.append(w_row.copy())
        outputs.append(np.array([x[2] - q, eps * lam]))

    if policy.kind == FUZZY:
        lam = fuzzy_price(policy, x)
    record(0, x, lam)

    for i in range(n):
        t = i * config.dt
        w = schedule[_interval_index(t, dist.hold_interval)]
        if policy.kind == ACE:
            tau_lam = policy.ace_tau_lambda

            def deriv(z, _t):
                xs = z[:3] - shift
                return np.concatenate([
                    mats.drift(xs, z[3], w),
                    [ace_price_rate(z[2], tau_lam, q)],
                ])

            z = rk4_step(deriv, np.concatenate([x, [lam]]), t, config.dt)
            x, lam = z[:3], float(z[3])
        else:

            def deriv(xv, _t):
                return mats.drift(xv - shift, fuzzy_price(policy, xv), w)

            x = rk4_step(deriv, x, t, config.dt)
            lam = fuzzy_price(policy, x)

        if np.max(np.abs(x)) > DIVERGENCE_GUARD:
            prefix = Trajectory(times=np.array(times), states=np.array(states),
                                prices=np.array(prices), disturbances=np.array(dists),
                                outputs=np.array(outputs))
            raise DivergenceError(f"state exceeded guard at t={t:.3f}", t=t,
                                  prefix=prefix)
        if (i + 1) % config.record_stride == 0 or i + 1 == n:
            record(i + 1, x, lam)

    return Trajectory(times=np.array(times), states=np.array(states),
                      prices=np.array(prices), disturbances=np.array(dists),
                      outputs=np.array(outputs))


def compute_metrics(traj: Trajectory, band: float = 0.1,
                    window: Optional[tuple[float, float]] = None) -> Metrics:
    """Summary metrics on the recorded grid (integrals by trapezoid).

    Settling time is the first time after which |e - q| stays inside the
    band through the horizon end (None if the band is re-exceeded at the
    final sample).  The supply/demand gap averages p_d - p_g over
    ``window``.  The empirical ratio sqrt(int z'z / int w'w) is reported
    only when the disturbance energy is nonzero.
    """
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    t = traj.times
    z1 = traj.outputs[:, 0]
    bad = np.abs(z1) >= band
    if not bad.any():
        settling = 0.0
    else:
        last = int(np.nonzero(bad)[0][-1])
        settling = None if last == len(z1) - 1 else float(t[last + 1])
    span = t[-1] - t[0]
    rms = float(np.sqrt(np.trapezoid(z1 * z1, t) / span)) if span > 0 else float(abs(z1[0]))
    if window is None:
        sel = np.ones(len(t), dtype=bool)
    else:
        sel = (t >= window[0]) & (t <= window[1])
        if sel.sum() < 2:
            raise ParameterError(f"window {window} selects fewer than 2 samples")
    gap = traj.states[sel, 1] - traj.states[sel, 0]
    tw = t[sel]
    mean_gap = float(np.trapezoid(gap, tw) / (tw[-1] - tw[0])) if len(tw) > 1 else float(gap[0])
    w_energy = float(np.trapezoid(np.sum(traj.disturbances ** 2, axis=1), t))
    if w_energy > 0.0:
        z_energy = float(np.trapezoid(np.sum(traj.outputs ** 2, axis=1), t))
        ratio = float(np.sqrt(z_energy / w_energy))
    else:
        ratio = None
    return Metrics(settling_time=settling, rms_imbalance=rms,
                   max_abs_imbalance=float(np.max(np.abs(z1))),
                   mean_supply_demand_gap=mean_gap, empirical_ratio=ratio)


def dissipation_check_along(traj: Trajectory, problem: LmiProblem,
                            gains: GainSet, P: np.ndarray, box: FuzzyBox,
                            storage_target: float = 0.0
                            ) -> tuple[float, float]:
    """Evaluate the blended dissipation form at every recorded sample.

    Returns the maximum value and the fraction of strictly negative
    samples; exact zero samples (state and disturbance both zero) are
    excluded from the strictness count.
    """
    values = []
    zeros = 0
    for x, w in zip(traj.states, traj.disturbances):
        xt = np.array([x[0], x[1], x[2] - storage_target])
        if not np.any(xt) and not np.any(w):
            zeros += 1
            continue
        values.append(phi_quadratic_form(problem, gains, P, xt, w, box))
    if not values:
        return 0.0, 1.0
    values = np.array(values)
    return float(values.max()), float(np.mean(values < 0.0))


_CSV_HEADER = "t,p_g,p_d,e,lambda,w_dg,w_dd,w_in,z1,z2"


def trajectory_to_csv(traj: Trajectory) -> str:
    out = io.StringIO()
    out.write(_CSV_HEADER + "\n")
    for i in range(len(traj)):
        row = [traj.times[i], *traj.states[i], traj.prices[i],
               *traj.disturbances[i], *traj.outputs[i]]
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def trajectory_from_csv(text: str) -> Trajectory:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _CSV_HEADER:
        raise ParameterError("malformed trajectory file")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return Trajectory(times=data[:, 0], states=data[:, 1:4], prices=data[:, 4],
                      disturbances=data[:, 5:8], outputs=data[:, 8:10])
