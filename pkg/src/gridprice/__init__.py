"""Microgrid power-market pricing workbench.

Market dynamics, rule-based drift identification, robust pricing-gain
synthesis via matrix inequalities, closed-loop simulation, and a staged
CLI pipeline for comparing pricing schemes.
"""

from .market import (MarketParams, MarketState, Disturbance, SystemMatrices,
                     supply_rate, demand_rate, storage_rate, market_drift,
                     assemble_system_matrices, compute_equilibrium)
from .fuzzy import (AxisPartition, FuzzyBox, IdentifiedModel, membership_value,
                    rule_activation, active_rules, generate_training_data,
                    identify_rule_matrices, blend_dynamics,
                    approximation_error_sup)
from .lmi import (LmiProblem, LmiSolution, Infeasible, GainSet,
                  VerificationReport, AnchoredCertificate, assemble_rule_lmi,
                  block_margins, solve_feasibility, minimize_gamma,
                  recover_gains, verify_solution, phi_quadratic_form,
                  synthesize_anchored_gains)
from .controllers import ACE, FUZZY, PricingPolicy, ace_price_rate, fuzzy_price, price
from .sim import (DisturbanceSpec, SimConfig, Trajectory, Metrics,
                  generate_disturbance, rk4_step, simulate_closed_loop,
                  compute_metrics, dissipation_check_along)
from .config import ScenarioConfig, parse_config, emit_config
from .pipeline import run_pipeline, emit_plot_data

__version__ = "0.1.0"
