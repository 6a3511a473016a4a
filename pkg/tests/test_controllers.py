import numpy as np
import pytest

from gridprice import (ACE, FUZZY, FuzzyBox, GainSet, PricingPolicy,
                       ace_price_rate, fuzzy_price, price)
from gridprice.errors import ConfigError
from gridprice.market import MarketState


def uniform_gainset(box, row):
    return GainSet(K_list=np.tile(np.asarray(row, dtype=float),
                                  (box.rule_count, 1)), gamma=1.0)


def test_ace_price_rate_values():
    assert ace_price_rate(0.0, 100.0) == 0.0
    assert ace_price_rate(10.0, 100.0) == -0.1
    assert ace_price_rate(5.0, 100.0, target=5.0) == 0.0


def test_ace_price_rate_depends_only_on_energy():
    # same e, any supply/demand context: identical rate
    assert ace_price_rate(3.0, 50.0) == ace_price_rate(3.0, 50.0)
    assert ace_price_rate(-2.0, 50.0) == pytest.approx(0.04)


def test_fuzzy_price_uniform_rows_collapse(box):
    K = [0.1, 0.2, -1.0]
    pol = PricingPolicy(kind=FUZZY, fuzzy_gains=uniform_gainset(box, K),
                        fuzzy_box=box)
    rng = np.random.default_rng(0)
    for x in rng.uniform([0, 0, -15], [30, 30, 15], size=(30, 3)):
        assert fuzzy_price(pol, x) == pytest.approx(np.dot(K, x), rel=1e-12)


def test_fuzzy_price_zero_state(box):
    pol = PricingPolicy(kind=FUZZY, fuzzy_gains=uniform_gainset(box, [1, 2, 3]),
                        fuzzy_box=box)
    assert fuzzy_price(pol, np.zeros(3)) == 0.0
    # with a storage target the shifted state is what multiplies the gains
    pol_q = PricingPolicy(kind=FUZZY, fuzzy_gains=uniform_gainset(box, [1, 2, 3]),
                          fuzzy_box=box, storage_target_q=4.0)
    assert fuzzy_price(pol_q, np.array([0.0, 0.0, 4.0])) == 0.0


def test_fuzzy_price_vertex_selects_single_rule(box):
    rng = np.random.default_rng(7)
    K_list = rng.normal(size=(box.rule_count, 3))
    pol = PricingPolicy(kind=FUZZY, fuzzy_gains=GainSet(K_list=K_list, gamma=1.0),
                        fuzzy_box=box)
    for m in (0, 13, 37, 63):
        v = box.rule_vertex(m)
        assert fuzzy_price(pol, v) == pytest.approx(float(K_list[m] @ v), rel=1e-12)


def test_fuzzy_price_gain_homogeneity(box):
    rng = np.random.default_rng(3)
    K_list = rng.normal(size=(box.rule_count, 3))
    p1 = PricingPolicy(kind=FUZZY, fuzzy_gains=GainSet(K_list=K_list, gamma=1.0),
                       fuzzy_box=box)
    p3 = PricingPolicy(kind=FUZZY, fuzzy_gains=GainSet(K_list=3.0 * K_list, gamma=1.0),
                       fuzzy_box=box)
    for x in rng.uniform([5, 5, -10], [25, 25, 10], size=(20, 3)):
        assert fuzzy_price(p3, x) == pytest.approx(3.0 * fuzzy_price(p1, x), rel=1e-12)


def test_fuzzy_price_continuity_across_cell_boundary(box):
    rng = np.random.default_rng(5)
    K_list = rng.normal(size=(box.rule_count, 3))
    pol = PricingPolicy(kind=FUZZY, fuzzy_gains=GainSet(K_list=K_list, gamma=1.0),
                        fuzzy_box=box)
    peak = box.axes[0].peaks[1]
    below = fuzzy_price(pol, np.array([peak - 1e-9, 8.0, 0.5]))
    above = fuzzy_price(pol, np.array([peak + 1e-9, 8.0, 0.5]))
    assert above == pytest.approx(below, abs=1e-6)


def test_storage_target_shifts_only_energy_premise(box):
    rng = np.random.default_rng(11)
    K_list = rng.normal(size=(box.rule_count, 3))
    gains = GainSet(K_list=K_list, gamma=1.0)
    base = PricingPolicy(kind=FUZZY, fuzzy_gains=gains, fuzzy_box=box)
    shifted = PricingPolicy(kind=FUZZY, fuzzy_gains=gains, fuzzy_box=box,
                            storage_target_q=2.5)
    for x in rng.uniform([5, 5, -7], [25, 25, 7], size=(20, 3)):
        moved = x.copy()
        moved[2] += 2.5
        assert fuzzy_price(shifted, moved) == pytest.approx(
            fuzzy_price(base, x), rel=1e-12)


def test_storage_target_zero_is_identity(box):
    rng = np.random.default_rng(13)
    K_list = rng.normal(size=(box.rule_count, 3))
    gains = GainSet(K_list=K_list, gamma=1.0)
    base = PricingPolicy(kind=FUZZY, fuzzy_gains=gains, fuzzy_box=box)
    q0 = PricingPolicy(kind=FUZZY, fuzzy_gains=gains, fuzzy_box=box,
                       storage_target_q=0.0)
    for x in rng.uniform([0, 0, -15], [30, 30, 15], size=(20, 3)):
        assert fuzzy_price(q0, x) == fuzzy_price(base, x)


def test_price_interface(box):
    ace = PricingPolicy(kind=ACE, ace_lambda0=4.66, ace_tau_lambda=100.0)
    assert price(ace, MarketState(10.0, 12.0, 1.0), 4.66) == 4.66
    pol = PricingPolicy(kind=FUZZY, fuzzy_gains=uniform_gainset(box, [0.1, 0.1, -1]),
                        fuzzy_box=box)
    x = MarketState(10.0, 12.0, 1.0)
    assert price(pol, x, internal_lambda=99.0) == fuzzy_price(pol, x)


def test_policy_validation(box):
    with pytest.raises(ConfigError):
        PricingPolicy(kind="bang-bang")
    with pytest.raises(ConfigError):
        PricingPolicy(kind=FUZZY, fuzzy_box=box)  # no gains
    bad = GainSet(K_list=np.zeros((5, 3)), gamma=1.0)
    with pytest.raises(ConfigError):
        PricingPolicy(kind=FUZZY, fuzzy_gains=bad, fuzzy_box=box)
