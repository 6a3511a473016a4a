"""Robust pricing-gain synthesis via linear matrix inequalities.

Two synthesis routes live here.

``solve_feasibility`` poses the per-rule block inequality in (Q, Y_m)
exactly as stated for the rule-based model and maximizes a uniform
eigenvalue margin.  Feasibility is always re-confirmed by an eigenvalue
check that is independent of the optimizer's claimed status.  For the
affine market drift interpolated over a box that contains the market
clearing point, this problem turns out to be infeasible at every
attenuation level: the closed loop must settle at the clearing point,
where the performance output (0, epsilon*price) is nonzero, so no
origin-centered quadratic certificate can decrease there.  The solver
reports that honestly.

``synthesize_anchored_gains`` is the certified alternative: it designs a
single state-feedback row for the deviation dynamics around the clearing
point (where the plant is exactly linear and the same block inequality is
comfortably feasible), pins the clearing price exactly through a linear
anchoring constraint, and replicates the row across all rules.  The
replicated gain set evaluates to the same price law under the fuzzy
blend, so it plugs into the rule-based controller unchanged.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import (AssemblyError, BracketError, ConditioningError,
                     ParameterError, SynthesisError)
from .fuzzy import FuzzyBox, IdentifiedModel, activation_matrix
from .market import MarketParams, assemble_system_matrices, compute_equilibrium

__all__ = [
    "LmiProblem",
    "LmiSolution",
    "Infeasible",
    "GainSet",
    "VerificationReport",
    "AnchoredCertificate",
    "assemble_rule_lmi",
    "block_margins",
    "solve_feasibility",
    "minimize_gamma",
    "recover_gains",
    "verify_solution",
    "phi_quadratic_form",
    "synthesize_anchored_gains",
    "gains_to_text",
    "gains_from_text",
]

_SOLVER_ORDER = ("CLARABEL", "SCS", "CVXOPT")


@dataclass(frozen=True)
class LmiProblem:
    """Per-rule consequents plus the shared input/output matrices."""

    A_list: np.ndarray        # (M, 3, 3)
    tau: np.ndarray           # (3,)
    B: np.ndarray             # (3, 3)
    C: np.ndarray             # (2, 3)
    D: np.ndarray             # (2,)
    gamma_sq: float

    def __post_init__(self):
        A = np.asarray(self.A_list)
        if A.ndim != 3 or A.shape[1:] != (3, 3):
            raise AssemblyError(f"A_list must be (M, 3, 3), got {A.shape}")
        if np.shape(self.tau) != (3,) or np.shape(self.B) != (3, 3):
            raise AssemblyError("tau must be (3,), B must be (3, 3)")
        if np.shape(self.C) != (2, 3) or np.shape(self.D) != (2,):
            raise AssemblyError("C must be (2, 3), D must be (2,)")
        if not self.gamma_sq > 0:
            raise ParameterError(f"gamma_sq must be > 0, got {self.gamma_sq}")

    @property
    def rule_count(self) -> int:
        return len(self.A_list)

    @classmethod
    def from_model(cls, model: IdentifiedModel, params: MarketParams,
                   gamma_sq: float) -> "LmiProblem":
        mats = assemble_system_matrices(params)
        return cls(A_list=np.asarray(model.A_list, dtype=float), tau=mats.tau,
                   B=mats.B, C=mats.C, D=mats.D, gamma_sq=gamma_sq)

    def with_gamma_sq(self, gamma_sq: float) -> "LmiProblem":
        return LmiProblem(self.A_list, self.tau, self.B, self.C, self.D, gamma_sq)


@dataclass(frozen=True)
class LmiSolution:
    """Certified feasible point of the block inequalities."""

    Q: np.ndarray             # (3, 3) symmetric positive definite
    Y_list: np.ndarray        # (M, 3)
    gamma: float
    block_margins: np.ndarray  # largest eigenvalue of each assembled block
    q_margin: float            # smallest eigenvalue of Q


@dataclass(frozen=True)
class Infeasible:
    """Best attained point when no certified solution exists."""

    gamma: float
    best_margin: float         # largest block eigenvalue at the best point
    block_margins: np.ndarray
    q_margin: float
    Q: np.ndarray
    Y_list: np.ndarray
    status: str


@dataclass(frozen=True)
class GainSet:
    """Per-rule pricing gain rows; the price is sum_m h_m K_m x."""

    K_list: np.ndarray        # (M, 3)
    gamma: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.asarray(self.K_list)
        if K.ndim != 2 or K.shape[1] != 3:
            raise AssemblyError(f"K_list must be (M, 3), got {K.shape}")
        if not np.all(np.isfinite(K)):
            raise ParameterError("gain entries must be finite")


@dataclass(frozen=True)
class VerificationReport:
    """Independent re-check of a solution in the P coordinates."""

    p_matrix: np.ndarray
    lmi25_margins: np.ndarray
    phi_sample_max: float
    samples_used: int

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.lmi25_margins < 0.0) and self.phi_sample_max < 0.0)


@dataclass(frozen=True)
class AnchoredCertificate:
    """Certificate of the deviation-coordinate design."""

    P: np.ndarray             # Lyapunov matrix of the deviation system
    K: np.ndarray             # the single synthesized gain row
    gamma: float
    block_margin: float       # largest eigenvalue of the certified block
    p_margin: float           # smallest eigenvalue of P
    x_star: np.ndarray
    lambda_star: float
    iterations: int


def assemble_rule_lmi(problem: LmiProblem, m: int, Q: np.ndarray,
                      Y_m: np.ndarray) -> np.ndarray:
    """Assemble the 8x8 symmetric block for rule m at a point (Q, Y_m).

    Layout (star = symmetric fill):

        [ A_m Q + tau Y_m + (*)   B            Q C^T + Y_m^T D^T ]
        [ *                       -gamma^2 I3  0                 ]
        [ *                       *            -I2               ]
    """
    Q = np.asarray(Q, dtype=float)
    Y_m = np.asarray(Y_m, dtype=float).reshape(-1)
    if Q.shape != (3, 3) or Y_m.shape != (3,):
        raise AssemblyError(f"Q must be (3, 3) and Y_m length 3, got {Q.shape}, {Y_m.shape}")
    if not 0 <= m < problem.rule_count:
        raise AssemblyError(f"rule index {m} out of range")
    A_m = problem.A_list[m]
    top = A_m @ Q + np.outer(problem.tau, Y_m)
    top = top + top.T
    right = Q @ problem.C.T + np.outer(Y_m, problem.D)
    blk = np.zeros((8, 8))
    blk[:3, :3] = top
    blk[:3, 3:6] = problem.B
    blk[3:6, :3] = problem.B.T
    blk[:3, 6:] = right
    blk[6:, :3] = right.T
    blk[3:6, 3:6] = -problem.gamma_sq * np.eye(3)
    blk[6:, 6:] = -np.eye(2)
    return blk


def block_margins(problem: LmiProblem, Q: np.ndarray,
                  Y_list: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of every rule block; the independent certificate."""
    return np.array([
        np.linalg.eigvalsh(assemble_rule_lmi(problem, m, Q, Y_list[m]))[-1]
        for m in range(problem.rule_count)
    ])


def _solve(prob: cp.Problem, solver: str | None):
    order = (solver,) if solver else _SOLVER_ORDER
    last = None
    for name in order:
        if name not in cp.installed_solvers():
            continue
        try:
            with warnings.catch_warnings():
                # accuracy warnings are expected near the feasibility boundary;
                # the eigenvalue certificate is the deciding check
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=name)
            return name
        except cp.error.SolverError as exc:
            last = exc
    raise SynthesisError(f"no solver produced a result: {last}")


def solve_feasibility(problem: LmiProblem, margin: float = 1e-6,
                      tol: float = 1e-8, solver: str | None = None,
                      q_cap: float = 1e4) -> LmiSolution | Infeasible:
    """Search for (Q, Y_m) making every rule block negative definite.

    Maximizes a uniform eigenvalue margin t subject to all blocks <= -t I
    and Q >= t I (Q bounded above by ``q_cap`` to keep the search
    compact).  The returned object is decided purely by the independent
    eigenvalue certificate at the solver's point: all block eigenvalues
    <= -margin and the smallest eigenvalue of Q >= margin.  Solver
    non-convergence is reported as Infeasible with diagnostics, not as an
    exception.
    """
    if margin <= 0 or tol <= 0:
        raise ParameterError("margin and tol must be > 0")
    M = problem.rule_count
    Q = cp.Variable((3, 3), symmetric=True)
    Ys = [cp.Variable((1, 3)) for _ in range(M)]
    t = cp.Variable()
    tau_c = problem.tau.reshape(3, 1)
    D_c = problem.D.reshape(2, 1)
    gsq = problem.gamma_sq
    cons = [Q >> t * np.eye(3), Q << q_cap * np.eye(3), t <= 1.0]
    for m in range(M):
        AQ = problem.A_list[m] @ Q + tau_c @ Ys[m]
        blk = cp.bmat([
            [AQ + AQ.T, problem.B, Q @ problem.C.T + Ys[m].T @ D_c.T],
            [problem.B.T, -gsq * np.eye(3), np.zeros((3, 2))],
            [problem.C @ Q + D_c @ Ys[m], np.zeros((2, 3)), -np.eye(2)],
        ])
        cons.append(blk << -t * np.eye(8))
    prob = cp.Problem(cp.Maximize(t), cons)
    try:
        status_solver = _solve(prob, solver)
    except SynthesisError:
        status_solver = "failed"
    if Q.value is None:
        return Infeasible(gamma=float(np.sqrt(gsq)), best_margin=np.inf,
                          block_margins=np.full(M, np.inf), q_margin=-np.inf,
                          Q=np.eye(3), Y_list=np.zeros((M, 3)),
                          status=f"solver produced no point ({status_solver})")
    Qv = np.asarray(Q.value)
    Qv = 0.5 * (Qv + Qv.T)
    Yv = np.vstack([y.value for y in Ys])
    margins = block_margins(problem, Qv, Yv)
    q_margin = float(np.linalg.eigvalsh(Qv)[0])
    gamma = float(np.sqrt(gsq))
    if np.all(margins <= -margin) and q_margin >= margin:
        return LmiSolution(Q=Qv, Y_list=Yv, gamma=gamma, block_margins=margins,
                           q_margin=q_margin)
    return Infeasible(gamma=gamma, best_margin=float(margins.max()),
                      block_margins=margins, q_margin=q_margin, Q=Qv, Y_list=Yv,
                      status=str(prob.status))


def minimize_gamma(problem: LmiProblem, gamma_lo: float, gamma_hi: float,
                   bisect_tol: float = 1e-3, margin: float = 1e-6,
                   tol: float = 1e-8, solver: str | None = None
                   ) -> tuple[float, LmiSolution]:
    """Bisection on the attenuation level gamma (not gamma squared).

    Requires feasibility at ``gamma_hi``; the feasible set grows with
    gamma, so bisection is exact up to ``bisect_tol``.  Returns the
    smallest tested feasible gamma with its certified solution.
    """
    if not (0 < gamma_lo < gamma_hi):
        raise BracketError(f"need 0 < gamma_lo < gamma_hi, got [{gamma_lo}, {gamma_hi}]")
    res = solve_feasibility(problem.with_gamma_sq(gamma_hi ** 2), margin, tol, solver)
    if isinstance(res, Infeasible):
        raise BracketError(
            f"problem infeasible at gamma_hi={gamma_hi} "
            f"(best block margin {res.best_margin:.3g})")
    best_gamma, best = gamma_hi, res
    lo_res = solve_feasibility(problem.with_gamma_sq(gamma_lo ** 2), margin, tol, solver)
    if isinstance(lo_res, LmiSolution):
        return gamma_lo, lo_res
    lo, hi = gamma_lo, gamma_hi
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        res = solve_feasibility(problem.with_gamma_sq(mid ** 2), margin, tol, solver)
        if isinstance(res, LmiSolution):
            hi, best_gamma, best = mid, mid, res
        else:
            lo = mid
    return best_gamma, best


def recover_gains(solution: LmiSolution, cond_limit: float = 1e10) -> GainSet:
    """K_m = Y_m Q^{-1} for every rule."""
    Q = solution.Q
    cond = float(np.linalg.cond(Q))
    if not np.isfinite(cond) or cond > cond_limit:
        raise ConditioningError(f"Q condition number {cond:.3g} exceeds {cond_limit:.3g}")
    K = np.linalg.solve(Q.T, solution.Y_list.T).T
    residual = np.abs(K @ Q - solution.Y_list).max()
    scale = max(np.abs(solution.Y_list).max(), 1.0)
    if residual > 1e-10 * scale:
        raise ConditioningError(f"gain round-trip residual {residual:.3g} too large")
    return GainSet(K_list=K, gamma=solution.gamma,
                   provenance={"mode": "rule-lmi", "q_margin": solution.q_margin})


def _p_form_block(problem: LmiProblem, A_m: np.ndarray, K_m: np.ndarray,
                  P: np.ndarray) -> np.ndarray:
    """P-coordinate block for one rule with closed-loop matrices."""
    At = A_m + np.outer(problem.tau, K_m)
    Ct = problem.C + np.outer(problem.D, K_m)
    blk = np.zeros((8, 8))
    blk[:3, :3] = At.T @ P + P @ At
    blk[:3, 3:6] = P @ problem.B
    blk[3:6, :3] = (P @ problem.B).T
    blk[:3, 6:] = Ct.T
    blk[6:, :3] = Ct
    blk[3:6, 3:6] = -problem.gamma_sq * np.eye(3)
    blk[6:, 6:] = -np.eye(2)
    return blk


def phi_quadratic_form(problem: LmiProblem, gains: GainSet, P: np.ndarray,
                       x, w, box: FuzzyBox) -> float:
    """Blended dissipation form [x; w]^T Phi(x) [x; w].

    Phi(x) interpolates, with the rule activations at x, the per-rule
    matrices [[At^T P + P At + Ct^T Ct, P B], [B^T P, -gamma^2 I3]].  The
    value equals dV/dt + z^T z - gamma^2 w^T w under the rule-based model
    dynamics with V = x^T P x.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    from .fuzzy import active_rules
    idx, wts = active_rules(box, x)
    PB = P @ problem.B
    total = 0.0
    for m, h in zip(idx, wts):
        if h == 0.0:
            continue
        At = problem.A_list[m] + np.outer(problem.tau, gains.K_list[m])
        Ct = problem.C + np.outer(problem.D, gains.K_list[m])
        top = At.T @ P + P @ At + Ct.T @ Ct
        val = x @ top @ x + 2.0 * (x @ PB @ w) - problem.gamma_sq * (w @ w)
        total += h * val
    return float(total)


def verify_solution(problem: LmiProblem, gains: GainSet, Q: np.ndarray,
                    n_samples: int, seed: int, box: FuzzyBox,
                    w_low=(-1.0, -1.0, -1.0), w_high=(1.0, 1.0, 1.0),
                    cond_limit: float = 1e10) -> VerificationReport:
    """Re-derive the P-coordinate certificate and sample the dissipation form.

    Builds P = Q^{-1}, records the largest eigenvalue of every rule block
    in P coordinates, then evaluates the blended quadratic form on
    ``n_samples`` state/disturbance pairs drawn uniformly from the box and
    the given disturbance ranges.  Deterministic in ``seed``.
    """
    cond = float(np.linalg.cond(Q))
    if not np.isfinite(cond) or cond > cond_limit:
        raise ConditioningError(f"Q condition number {cond:.3g} exceeds {cond_limit:.3g}")
    P = np.linalg.inv(Q)
    P = 0.5 * (P + P.T)
    margins = np.array([
        np.linalg.eigvalsh(_p_form_block(problem, problem.A_list[m],
                                         gains.K_list[m], P))[-1]
        for m in range(problem.rule_count)
    ])
    rng = np.random.default_rng(seed)
    X = rng.uniform(box.lower, box.upper, size=(n_samples, 3))
    W = rng.uniform(np.asarray(w_low, dtype=float), np.asarray(w_high, dtype=float),
                    size=(n_samples, 3))
    # vectorized over samples: phi = sum_m h_m [x w]^T Phi_m [x w]
    H = activation_matrix(box, X)
    M = problem.rule_count
    tops = np.empty((M, 3, 3))
    for m in range(M):
        At = problem.A_list[m] + np.outer(problem.tau, gains.K_list[m])
        Ct = problem.C + np.outer(problem.D, gains.K_list[m])
        tops[m] = At.T @ P + P @ At + Ct.T @ Ct
    xx_top = np.einsum("li,mij,lj->lm", X, tops, X)
    cross = 2.0 * np.einsum("li,ij,lj->l", X, P @ problem.B, W)
    wquad = problem.gamma_sq * np.sum(W * W, axis=1)
    phi = np.sum(H * xx_top, axis=1) + cross - wquad
    return VerificationReport(p_matrix=P, lmi25_margins=margins,
                              phi_sample_max=float(phi.max()),
                              samples_used=n_samples)


# --- anchored synthesis -------------------------------------------------------


def _deviation_block(A, tau, B, C, D, gamma_sq, P, K):
    At = A + np.outer(tau, K)
    Ct = C + np.outer(D, K)
    blk = np.zeros((8, 8))
    blk[:3, :3] = At.T @ P + P @ At
    blk[:3, 3:6] = P @ B
    blk[3:6, :3] = (P @ B).T
    blk[:3, 6:] = Ct.T
    blk[6:, :3] = Ct
    blk[3:6, 3:6] = -gamma_sq * np.eye(3)
    blk[6:, 6:] = -np.eye(2)
    return blk


def synthesize_anchored_gains(params: MarketParams, box: FuzzyBox,
                              gamma_sq: float, margin: float = 1e-6,
                              solver: str | None = None, max_rounds: int = 8,
                              decay_lo: float = 0.3, decay_hi: float = 30.0
                              ) -> tuple[GainSet, AnchoredCertificate]:
    """Certified price design around the market clearing point.

    In deviation coordinates (state minus clearing point, price minus
    clearing price) the market is exactly linear, so the single-matrix
    version of the rule block inequality applies without approximation.
    The anchoring constraint K x* = lambda* makes the raw-coordinate law
    lambda = K x carry the clearing price with zero offset, which is what
    lets one gain row serve every rule.

    Procedure: a minimum-norm certified design with a closed-loop decay
    band [decay_lo, decay_hi] (the band keeps the loop fast enough to beat
    the integral baseline but slow enough for fixed-step integration),
    then alternating Lyapunov/gain updates that pull the gain onto the
    anchoring hyperplane while keeping the certificate.  The final
    certificate is re-checked by eigenvalue.
    """
    mats = assemble_system_matrices(params)
    A, tau, B, C, D = mats.A, mats.tau, mats.B, mats.C, mats.D
    p_star, lam_star = compute_equilibrium(params)
    x_star = np.array([p_star, p_star, 0.0])
    tau_c = tau.reshape(3, 1)
    D_c = D.reshape(2, 1)

    def p_step(K):
        P = cp.Variable((3, 3), symmetric=True)
        t = cp.Variable()
        At = A + np.outer(tau, K)
        Ct = C + np.outer(D, K)
        blk = cp.bmat([
            [At.T @ P + P @ At, P @ B, Ct.T],
            [B.T @ P, -gamma_sq * np.eye(3), np.zeros((3, 2))],
            [Ct, np.zeros((2, 3)), -np.eye(2)],
        ])
        cons = [P >> 1e-4 * np.eye(3), P << 1e2 * np.eye(3),
                blk << -t * np.eye(8), t <= 1.0]
        _solve(cp.Problem(cp.Maximize(t), cons), solver)
        return (t.value, None if P.value is None else 0.5 * (P.value + P.value.T))

    def k_step(P, K_ref):
        K = cp.Variable((1, 3))
        s = cp.Variable()
        At = A + tau_c @ K
        Ct = C + D_c @ K
        blk = cp.bmat([
            [At.T @ P + P @ At, P @ B, Ct.T],
            [B.T @ P, -gamma_sq * np.eye(3), np.zeros((3, 2))],
            [Ct, np.zeros((2, 3)), -np.eye(2)],
        ])
        cons = [blk << s * np.eye(8), K @ x_star == lam_star]
        obj = cp.Minimize(s + 1e-3 * cp.sum_squares(K - K_ref.reshape(1, 3)))
        _solve(cp.Problem(obj, cons), solver)
        return s.value, K.value.ravel()

    # initial minimum-gain certified design (unanchored)
    Q0 = cp.Variable((3, 3), symmetric=True)
    Y0 = cp.Variable((1, 3))
    AQ = A @ Q0 + tau_c @ Y0
    blk0 = cp.bmat([
        [AQ + AQ.T, B, Q0 @ C.T + Y0.T @ D_c.T],
        [B.T, -gamma_sq * np.eye(3), np.zeros((3, 2))],
        [C @ Q0 + D_c @ Y0, np.zeros((2, 3)), -np.eye(2)],
    ])
    cons0 = [Q0 >> np.eye(3), Q0 << 1e3 * np.eye(3), blk0 << -1e-4 * np.eye(8),
             AQ + AQ.T << -2.0 * decay_lo * Q0, AQ + AQ.T >> -2.0 * decay_hi * Q0]
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(Y0)), cons0), solver)
    if Q0.value is None:
        raise SynthesisError("initial deviation design failed")
    K = (Y0.value @ np.linalg.inv(Q0.value)).ravel()

    rounds = 0
    P = None
    for rounds in range(1, max_rounds + 1):
        t, P = p_step(K)
        if P is None:
            raise SynthesisError("Lyapunov update failed")
        s, K_new = k_step(P, K)
        anchored_ok = s is not None and s < -margin
        converged = anchored_ok and np.allclose(K_new, K, atol=1e-9, rtol=0.0)
        K = K_new
        if converged:
            break

    t, P = p_step(K)
    if P is None:
        raise SynthesisError("final Lyapunov certificate failed")
    blk = _deviation_block(A, tau, B, C, D, gamma_sq, P, K)
    blk_margin = float(np.linalg.eigvalsh(blk)[-1])
    p_margin = float(np.linalg.eigvalsh(P)[0])
    anchor_err = abs(float(K @ x_star) - lam_star)
    if blk_margin > -margin or p_margin < margin or anchor_err > 1e-8 * max(1.0, abs(lam_star)):
        raise SynthesisError(
            f"anchored synthesis uncertified: block margin {blk_margin:.3g}, "
            f"P margin {p_margin:.3g}, anchor error {anchor_err:.3g}")

    M = box.rule_count
    gains = GainSet(K_list=np.tile(K, (M, 1)), gamma=float(np.sqrt(gamma_sq)),
                    provenance={"mode": "anchored-equilibrium",
                                "block_margin": blk_margin,
                                "p_margin": p_margin,
                                "rounds": rounds})
    cert = AnchoredCertificate(P=P, K=K, gamma=float(np.sqrt(gamma_sq)),
                               block_margin=blk_margin, p_margin=p_margin,
                               x_star=x_star, lambda_star=lam_star,
                               iterations=rounds)
    return gains, cert


# --- plain-text serialization -------------------------------------------------
#
# Header keys, then one `m k1 k2 k3` row per rule, then the 3x3 Q matrix
# (row per line).  repr precision makes round-trips bit exact.


def gains_to_text(gains: GainSet, Q: np.ndarray, epsilon: float,
                  margin: float, seed: int) -> str:
    out = io.StringIO()
    out.write("# pricing gain set\n")
    out.write(f"rules = {len(gains.K_list)}\n")
    out.write(f"gamma = {float(gains.gamma)!r}\n")
    out.write(f"epsilon = {float(epsilon)!r}\n")
    out.write(f"margin = {float(margin)!r}\n")
    out.write(f"seed = {seed}\n")
    mode = gains.provenance.get("mode", "rule-lmi")
    out.write(f"mode = {mode}\n")
    for m, row in enumerate(gains.K_list):
        out.write(f"{m} " + " ".join(repr(float(v)) for v in row) + "\n")
    out.write("Q\n")
    for row in np.asarray(Q, dtype=float):
        out.write(" ".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def gains_from_text(text: str) -> tuple[GainSet, np.ndarray, dict]:
    header: dict = {}
    rows: dict[int, np.ndarray] = {}
    q_rows: list[list[float]] = []
    in_q = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "Q":
            in_q = True
            continue
        if in_q:
            q_rows.append([float(v) for v in line.split()])
            continue
        if "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
            header[key] = val
            continue
        parts = line.split()
        rows[int(parts[0])] = np.array([float(v) for v in parts[1:4]])
    M = int(header["rules"])
    if len(rows) != M or len(q_rows) != 3:
        raise ParameterError("malformed gain file")
    K = np.stack([rows[m] for m in range(M)])
    gains = GainSet(K_list=K, gamma=float(header["gamma"]),
                    provenance={"mode": header.get("mode", "rule-lmi")})
    meta = {"epsilon": float(header["epsilon"]), "margin": float(header["margin"]),
            "seed": int(header["seed"]), "mode": header.get("mode", "rule-lmi")}
    return gains, np.array(q_rows), meta
