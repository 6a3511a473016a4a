"""Pricing policies: the integral baseline and the rule-based static law.

The baseline integrates the negative energy imbalance into the price
(a dynamic controller); the rule-based law maps the current state to a
price directly (a static controller).  Policies are immutable; the
integrated price state of the baseline lives in the simulator's augmented
state vector, not here.

A storage target q shifts the energy premise: every occurrence of e is
replaced by e - q, including the supply-side excess charge, the premise
vector, the gain multiplication, and the performance output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ParameterError
from .fuzzy import FuzzyBox, active_rules
from .lmi import GainSet
from .market import MarketState

__all__ = ["ACE", "FUZZY", "PricingPolicy", "ace_price_rate", "fuzzy_price", "price"]

ACE = "ace"
FUZZY = "fuzzy"


@dataclass(frozen=True)
class PricingPolicy:
    kind: str
    ace_lambda0: float = 0.0
    ace_tau_lambda: float = 1.0
    fuzzy_gains: Optional[GainSet] = None
    fuzzy_box: Optional[FuzzyBox] = None
    storage_target_q: float = 0.0

    def __post_init__(self):
        if self.kind not in (ACE, FUZZY):
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == ACE:
            if not self.ace_tau_lambda > 0:
                raise ParameterError("ace_tau_lambda must be > 0")
        else:
            if self.fuzzy_gains is None or self.fuzzy_box is None:
                raise ConfigError("fuzzy policy needs a gain set and a premise box")
            if len(self.fuzzy_gains.K_list) != self.fuzzy_box.rule_count:
                raise ConfigError(
                    f"gain set has {len(self.fuzzy_gains.K_list)} rows, premise box "
                    f"has {self.fuzzy_box.rule_count} rules")


def ace_price_rate(e: float, tau_lambda: float, target: float = 0.0) -> float:
    """d(lambda)/dt = -(e - target) / tau_lambda."""
    if not tau_lambda > 0:
        raise ParameterError("tau_lambda must be > 0")
    return -(e - target) / tau_lambda


def fuzzy_price(policy: PricingPolicy, x: MarketState | np.ndarray) -> float:
    """Static price sum_m h_m(x~) K_m x~ with x~ = (p_g, p_d, e - q).

    Premises are clamped to the box for the membership evaluation; the
    gain rows multiply the unclamped shifted state.
    """
    if policy.kind != FUZZY:
        raise ConfigError("fuzzy_price requires a fuzzy policy")
    xv = x.as_array() if isinstance(x, MarketState) else np.asarray(x, dtype=float)
    xt = np.array([xv[0], xv[1], xv[2] - policy.storage_target_q])
    idx, wts = active_rules(policy.fuzzy_box, xt)
    return float(wts @ (policy.fuzzy_gains.K_list[idx] @ xt))


def price(policy: PricingPolicy, x: MarketState | np.ndarray,
          internal_lambda: float) -> float:
    """Uniform controller interface.

    The baseline returns the integrated price state carried by the
    simulator; the static law ignores it.
    """
    if policy.kind == ACE:
        return internal_lambda
    return fuzzy_price(policy, x)
