"""Stage orchestration: identify -> synthesize -> verify -> simulate -> compare.

Stages communicate only through files in the output directory, so each
stage can be rerun in isolation.  Artifact names:

    model.txt         identified rule model
    gains.txt         pricing gains plus the certificate Gram matrix
    synth_report.txt  solve diagnostics (rule-form margins, fallback record)
    verify.txt        verification report for the rule-form inequalities
    traj_<kind>[_seed<s>].csv   recorded runs
    compare.txt / compare.csv   per-seed controller comparison
    plot/             per-variable series and metrics summaries
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .config import ScenarioConfig
from .controllers import ACE, FUZZY, PricingPolicy
from .errors import DependencyError, GridPriceError
from .fuzzy import (approximation_error_sup, generate_training_data,
                    identify_rule_matrices, model_from_text, model_to_text)
from .lmi import (Infeasible, LmiProblem, gains_from_text, gains_to_text,
                  minimize_gamma, recover_gains, solve_feasibility,
                  synthesize_anchored_gains, verify_solution)
from .market import compute_equilibrium
from .sim import (DisturbanceSpec, Metrics, SimConfig, Trajectory,
                  compute_metrics, simulate_closed_loop, trajectory_to_csv)

__all__ = ["STAGES", "run_pipeline", "emit_plot_data", "apply_seed_override"]

STAGES = ("identify", "synthesize", "verify", "simulate", "compare")


def apply_seed_override(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Replace every seed in the config (identification, disturbance, verify)."""
    identify = replace(cfg.identify, seed=seed)
    verify = replace(cfg.verify, seed=seed)
    disturbance = cfg.disturbance
    compare_seeds = cfg.compare_seeds
    if disturbance is not None:
        disturbance = replace(disturbance, seed=seed)
        compare_seeds = (seed,)
    return replace(cfg, identify=identify, verify=verify,
                   disturbance=disturbance, compare_seeds=compare_seeds)


def _write(path: str, text: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _need(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise DependencyError(f"missing {os.path.basename(path)}; run the "
                              f"'{producer}' stage first")
    return path


def stage_identify(cfg: ScenarioConfig, out: str) -> list[str]:
    samples = generate_training_data(cfg.market, cfg.box, cfg.identify.samples,
                                     cfg.identify.seed)
    model = identify_rule_matrices(samples, cfg.box, ridge=cfg.identify.ridge)
    fresh = generate_training_data(cfg.market, cfg.box, cfg.identify.samples,
                                   cfg.identify.seed + 1)
    fresh_sup = approximation_error_sup(model, fresh)
    report = (f"rules = {cfg.box.rule_count}\n"
              f"samples = {cfg.identify.samples}\n"
              f"seed = {cfg.identify.seed}\n"
              f"sup_error_train = {float(model.sup_error)!r}\n"
              f"sup_error_fresh = {float(fresh_sup)!r}\n")
    return [
        _write(os.path.join(out, "model.txt"), model_to_text(model)),
        _write(os.path.join(out, "identify_report.txt"), report),
    ]


def stage_synthesize(cfg: ScenarioConfig, out: str) -> list[str]:
    with open(_need(os.path.join(out, "model.txt"), "identify")) as fh:
        model = model_from_text(fh.read())
    syn = cfg.synthesize
    problem = LmiProblem.from_model(model, cfg.market, syn.gamma_sq)
    lines = [f"rules = {problem.rule_count}", f"gamma_sq = {syn.gamma_sq!r}",
             f"epsilon = {cfg.market.epsilon!r}", f"margin = {syn.margin!r}"]

    result = None
    if syn.minimize:
        try:
            gamma_best, result = minimize_gamma(problem, syn.gamma_lo, syn.gamma_hi,
                                                syn.bisect_tol, syn.margin, syn.tol)
            lines.append(f"minimized_gamma = {gamma_best!r}")
        except GridPriceError as exc:
            lines.append(f"minimize_gamma_failed = {exc}")
            result = solve_feasibility(problem, syn.margin, syn.tol)
    else:
        result = solve_feasibility(problem, syn.margin, syn.tol)

    if isinstance(result, Infeasible):
        lines.append("rule_form_feasible = false")
        lines.append(f"best_block_margin = {float(result.best_margin)!r}")
        lines.append(f"q_margin = {float(result.q_margin)!r}")
        lines.append(f"solver_status = {result.status}")
        if not syn.anchored_fallback:
            _write(os.path.join(out, "synth_report.txt"), "\n".join(lines) + "\n")
            raise GridPriceError(
                "rule-form inequalities infeasible and the anchored fallback is "
                f"disabled (best block margin {result.best_margin:.3g})")
        gains, cert = synthesize_anchored_gains(cfg.market, cfg.box, syn.gamma_sq,
                                                margin=syn.margin)
        Q = np.linalg.inv(cert.P)
        lines.append("mode = anchored-equilibrium")
        lines.append(f"anchored_block_margin = {float(cert.block_margin)!r}")
        lines.append(f"anchored_p_margin = {float(cert.p_margin)!r}")
        lines.append(f"anchored_rounds = {cert.iterations}")
        lines.append(f"clearing_power = {float(cert.x_star[0])!r}")
        lines.append(f"clearing_price = {float(cert.lambda_star)!r}")
    else:
        gains = recover_gains(result)
        Q = result.Q
        lines.append("rule_form_feasible = true")
        lines.append(f"worst_block_margin = {float(result.block_margins.max())!r}")
        lines.append(f"q_margin = {float(result.q_margin)!r}")
        lines.append("mode = rule-lmi")

    gain_text = gains_to_text(gains, Q, epsilon=cfg.market.epsilon,
                              margin=syn.margin, seed=cfg.identify.seed)
    return [
        _write(os.path.join(out, "gains.txt"), gain_text),
        _write(os.path.join(out, "synth_report.txt"), "\n".join(lines) + "\n"),
    ]


def stage_verify(cfg: ScenarioConfig, out: str) -> list[str]:
    with open(_need(os.path.join(out, "model.txt"), "identify")) as fh:
        model = model_from_text(fh.read())
    with open(_need(os.path.join(out, "gains.txt"), "synthesize")) as fh:
        gains, Q, meta = gains_from_text(fh.read())
    problem = LmiProblem.from_model(model, cfg.market, cfg.synthesize.gamma_sq)
    report = verify_solution(problem, gains, Q, cfg.verify.samples,
                             cfg.verify.seed, cfg.box,
                             w_low=cfg.verify.w_low, w_high=cfg.verify.w_high)
    lines = [f"mode = {meta['mode']}",
             f"samples_used = {report.samples_used}",
             f"seed = {cfg.verify.seed}",
             f"rule_form_feasible = {'true' if report.feasible else 'false'}",
             f"worst_lmi25_margin = {float(report.lmi25_margins.max())!r}",
             f"phi_sample_max = {report.phi_sample_max!r}",
             "lmi25_margins:"]
    lines += [f"  {m} {float(v)!r}" for m, v in enumerate(report.lmi25_margins)]
    return [_write(os.path.join(out, "verify.txt"), "\n".join(lines) + "\n")]


def _build_policy(cfg: ScenarioConfig, kind: str, out: str) -> PricingPolicy:
    q = cfg.controller.storage_target
    if kind == ACE:
        return PricingPolicy(kind=ACE, ace_lambda0=cfg.controller.ace_lambda0,
                             ace_tau_lambda=cfg.market.tau_lambda,
                             storage_target_q=q)
    with open(_need(os.path.join(out, "gains.txt"), "synthesize")) as fh:
        gains, _Q, _meta = gains_from_text(fh.read())
    return PricingPolicy(kind=FUZZY, fuzzy_gains=gains, fuzzy_box=cfg.box,
                         storage_target_q=q,
                         ace_lambda0=cfg.controller.ace_lambda0,
                         ace_tau_lambda=cfg.market.tau_lambda)


def _dist_for_seed(cfg: ScenarioConfig, seed) -> DisturbanceSpec:
    if cfg.disturbance is None or seed is None:
        return DisturbanceSpec.disabled_spec()
    return replace(cfg.disturbance, seed=seed)


def _run_one(cfg: ScenarioConfig, kind: str, seed, out: str) -> tuple[Trajectory, Metrics]:
    policy = _build_policy(cfg, kind, out)
    dist = _dist_for_seed(cfg, seed)
    traj = simulate_closed_loop(cfg.market, policy, dist, cfg.sim)
    window = (cfg.sim.t_end / 3.0, cfg.sim.t_end)
    return traj, compute_metrics(traj, band=0.1, window=window)


def _traj_name(kind: str, seed) -> str:
    return f"traj_{kind}.csv" if seed is None else f"traj_{kind}_seed{seed}.csv"


def stage_simulate(cfg: ScenarioConfig, out: str) -> list[str]:
    kind = cfg.controller.kind
    seed = cfg.disturbance.seed if cfg.disturbance is not None else None
    traj, metrics = _run_one(cfg, kind, seed, out)
    paths = [_write(os.path.join(out, _traj_name(kind, seed)),
                    trajectory_to_csv(traj))]
    if cfg.outputs.plot_data:
        plot_dir = os.path.join(out, "plot")
        paths += emit_plot_data(traj, plot_dir, prefix=kind, metrics=metrics)
    return paths


def _fmt(v) -> str:
    if v is None:
        return "-"
    return f"{v:.6g}"


def stage_compare(cfg: ScenarioConfig, out: str) -> list[str]:
    seeds = list(cfg.compare_seeds) if cfg.disturbance is not None else [None]
    rows = []
    paths = []
    for seed in seeds:
        per = {}
        for kind in (ACE, FUZZY):
            traj, met = _run_one(cfg, kind, seed, out)
            paths.append(_write(os.path.join(out, _traj_name(kind, seed)),
                                trajectory_to_csv(traj)))
            per[kind] = met
        rows.append((seed, per[ACE], per[FUZZY]))

    header = ("seed", "ace_rms", "fuzzy_rms", "ace_settle", "fuzzy_settle",
              "ace_gap", "fuzzy_gap", "ace_ratio", "fuzzy_ratio", "lower_rms")
    csv_lines = [",".join(header)]
    txt_lines = ["  ".join(f"{h:>12}" for h in header)]
    fuzzy_wins = 0
    for seed, am, fm in rows:
        better = FUZZY if fm.rms_imbalance < am.rms_imbalance else ACE
        fuzzy_wins += better == FUZZY
        cells = (("-" if seed is None else str(seed)),
                 _fmt(am.rms_imbalance), _fmt(fm.rms_imbalance),
                 _fmt(am.settling_time), _fmt(fm.settling_time),
                 _fmt(am.mean_supply_demand_gap), _fmt(fm.mean_supply_demand_gap),
                 _fmt(am.empirical_ratio), _fmt(fm.empirical_ratio), better)
        csv_lines.append(",".join(cells))
        txt_lines.append("  ".join(f"{c:>12}" for c in cells))
    txt_lines.append("")
    txt_lines.append(f"fuzzy lower rms on {fuzzy_wins} of {len(rows)} runs")
    paths.append(_write(os.path.join(out, "compare.csv"), "\n".join(csv_lines) + "\n"))
    paths.append(_write(os.path.join(out, "compare.txt"), "\n".join(txt_lines) + "\n"))
    return paths


def emit_plot_data(traj: Trajectory, directory: str, prefix: str = "run",
                   metrics: Metrics | None = None) -> list[str]:
    """Per-variable (t, value) series plus a metrics summary."""
    if len(traj) == 0:
        raise GridPriceError("empty trajectory")
    os.makedirs(directory, exist_ok=True)
    series = {
        "p_g": traj.states[:, 0], "p_d": traj.states[:, 1],
        "e": traj.states[:, 2], "lambda": traj.prices,
    }
    paths = []
    for name, vals in series.items():
        body = "t,value\n" + "".join(
            f"{float(t)!r},{float(v)!r}\n" for t, v in zip(traj.times, vals))
        paths.append(_write(os.path.join(directory, f"{prefix}_{name}.csv"), body))
    if metrics is None:
        metrics = compute_metrics(traj)
    summary = (f"settling_time = {_fmt(metrics.settling_time)}\n"
               f"rms_imbalance = {metrics.rms_imbalance!r}\n"
               f"max_abs_imbalance = {metrics.max_abs_imbalance!r}\n"
               f"mean_supply_demand_gap = {metrics.mean_supply_demand_gap!r}\n"
               f"empirical_ratio = {_fmt(metrics.empirical_ratio)}\n")
    paths.append(_write(os.path.join(directory, f"{prefix}_metrics.txt"), summary))
    return paths


_STAGE_FUNCS = {
    "identify": stage_identify,
    "synthesize": stage_synthesize,
    "verify": stage_verify,
    "simulate": stage_simulate,
    "compare": stage_compare,
}


@dataclass(frozen=True)
class PipelineResult:
    artifacts: tuple[str, ...]
    equilibrium: tuple[float, float]


def run_pipeline(cfg: ScenarioConfig, stages=STAGES, out: str | None = None,
                 log=print) -> PipelineResult:
    """Run the requested stages in dependency order; raise on any failure."""
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise GridPriceError(f"unknown stage(s): {', '.join(unknown)}")
    out = out or cfg.outputs.directory
    os.makedirs(out, exist_ok=True)
    ordered = [s for s in STAGES if s in stages]
    artifacts: list[str] = []
    for stage in ordered:
        log(f"[{stage}] running")
        produced = _STAGE_FUNCS[stage](cfg, out)
        for p in produced:
            log(f"[{stage}] wrote {p}")
        artifacts += produced
    return PipelineResult(artifacts=tuple(artifacts),
                          equilibrium=compute_equilibrium(cfg.market))
