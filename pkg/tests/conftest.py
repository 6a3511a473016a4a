import os

import numpy as np
import pytest

from gridprice import (FuzzyBox, LmiProblem, MarketParams,
                       assemble_system_matrices, generate_training_data,
                       identify_rule_matrices, solve_feasibility,
                       synthesize_anchored_gains)

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")


@pytest.fixture(scope="session")
def params():
    """Reference market constants used throughout the suite."""
    return MarketParams(c_g=0.4, c_d=0.5, tau_g=0.2, tau_d=0.25,
                        b_g_hat=2.0, b_d_hat=10.0, k=0.1, tau_lambda=100.0,
                        epsilon=0.1)


@pytest.fixture(scope="session")
def box():
    return FuzzyBox.default()


@pytest.fixture(scope="session")
def mats(params):
    return assemble_system_matrices(params)


@pytest.fixture(scope="session")
def model(params, box):
    samples = generate_training_data(params, box, 1500, seed=1)
    return identify_rule_matrices(samples, box, ridge=1e-8)


@pytest.fixture(scope="session")
def rule_problem(model, params):
    return LmiProblem.from_model(model, params, gamma_sq=2.0)


@pytest.fixture(scope="session")
def deviation_problem(mats):
    """Single-matrix problem for the exact dynamics around the clearing point."""
    return LmiProblem(A_list=mats.A[None, :, :], tau=mats.tau, B=mats.B,
                      C=mats.C, D=mats.D, gamma_sq=2.0)


@pytest.fixture(scope="session")
def deviation_solution(deviation_problem):
    res = solve_feasibility(deviation_problem)
    assert not hasattr(res, "best_margin"), "deviation problem must be feasible"
    return res


@pytest.fixture(scope="session")
def anchored(params, box):
    gains, cert = synthesize_anchored_gains(params, box, gamma_sq=2.0)
    return gains, cert


@pytest.fixture(scope="session")
def equilibrium_state():
    p_star = 8.0 / 0.9
    return np.array([p_star, p_star, 0.0]), 2.0 + 0.4 * p_star
