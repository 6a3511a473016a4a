"""Scenario configuration: a flat sectioned key-value text format.

Sections appear as ``[name]`` lines; entries as ``key = value``; ``#``
starts a comment.  Unknown sections or keys are rejected, missing
required keys are reported with the section name, and every error names
the offending key and line.  Seeds are mandatory wherever randomness
exists.  The full schema is documented in docs/config-format.md.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

from .controllers import ACE, FUZZY
from .errors import ConfigError
from .fuzzy import FuzzyBox
from .market import MarketParams, MarketState
from .sim import DisturbanceSpec, SimConfig

__all__ = ["ScenarioConfig", "IdentifySettings", "SynthesizeSettings",
           "ControllerSettings", "VerifySettings", "OutputSettings",
           "parse_config", "parse_config_text", "emit_config"]

REQUIRED = object()


@dataclass(frozen=True)
class IdentifySettings:
    samples: int = 1500
    seed: int = REQUIRED  # type: ignore[assignment]
    ridge: float = 1e-8


@dataclass(frozen=True)
class SynthesizeSettings:
    gamma_sq: float = 2.0
    margin: float = 1e-6
    tol: float = 1e-8
    minimize: bool = False
    gamma_lo: float = 0.1
    gamma_hi: float = 1.4142135623730951
    bisect_tol: float = 1e-3
    anchored_fallback: bool = True


@dataclass(frozen=True)
class ControllerSettings:
    kind: str = FUZZY
    ace_lambda0: float = 0.0
    storage_target: float = 0.0


@dataclass(frozen=True)
class VerifySettings:
    samples: int = 10000
    seed: int = REQUIRED  # type: ignore[assignment]
    w_low: tuple = (-1.0, -1.0, -1.0)
    w_high: tuple = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    plot_data: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    market: MarketParams
    box: FuzzyBox
    identify: IdentifySettings
    synthesize: SynthesizeSettings
    controller: ControllerSettings
    disturbance: Optional[DisturbanceSpec]
    compare_seeds: tuple[int, ...]
    sim: SimConfig
    verify: VerifySettings
    outputs: OutputSettings


def _to_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_floats(s: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in s.split(","))


def _to_ints(s: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in s.split(","))


# section -> key -> (converter, default); REQUIRED marks mandatory keys
_SCHEMA = {
    "market": {
        "c_g": (float, REQUIRED), "c_d": (float, REQUIRED),
        "tau_g": (float, REQUIRED), "tau_d": (float, REQUIRED),
        "b_g_hat": (float, REQUIRED), "b_d_hat": (float, REQUIRED),
        "k": (float, REQUIRED), "tau_lambda": (float, REQUIRED),
        "epsilon": (float, REQUIRED), "in_mean": (float, 0.0),
    },
    "box": {
        "p_g": (_to_floats, (5.0, 25.0, 4.0)),
        "p_d": (_to_floats, (5.0, 25.0, 4.0)),
        "e": (_to_floats, (-10.0, 10.0, 4.0)),
    },
    "identify": {
        "samples": (int, 1500), "seed": (int, REQUIRED), "ridge": (float, 1e-8),
    },
    "synthesize": {
        "gamma_sq": (float, 2.0), "margin": (float, 1e-6), "tol": (float, 1e-8),
        "minimize": (_to_bool, False), "gamma_lo": (float, 0.1),
        "gamma_hi": (float, 1.4142135623730951), "bisect_tol": (float, 1e-3),
        "anchored_fallback": (_to_bool, True),
    },
    "controller": {
        "kind": (str, FUZZY), "ace_lambda0": (float, 0.0),
        "storage_target": (float, 0.0),
    },
    "disturbance": {
        "dg": (_to_floats, (-0.5, 0.5)), "dd": (_to_floats, (-0.4, 0.6)),
        "in": (_to_floats, (0.0, 2.0)), "hold": (float, 0.1),
        "seed": (int, REQUIRED), "compare_seeds": (_to_ints, None),
    },
    "sim": {
        "t_end": (float, REQUIRED), "dt": (float, 0.01),
        "p_g0": (float, REQUIRED), "p_d0": (float, REQUIRED),
        "e0": (float, REQUIRED), "record_stride": (int, 1),
    },
    "verify": {
        "samples": (int, 10000), "seed": (int, REQUIRED),
        "w_low": (_to_floats, (-1.0, -1.0, -1.0)),
        "w_high": (_to_floats, (1.0, 1.0, 1.0)),
    },
    "outputs": {
        "dir": (str, "out"), "plot_data": (_to_bool, True),
    },
}

_REQUIRED_SECTIONS = ("market", "identify", "sim", "verify")


def parse_config_text(text: str, name: str = "<config>") -> ScenarioConfig:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(f"{name}: unknown section [{current}]", line=lineno)
            if current in sections:
                raise ConfigError(f"{name}: duplicate section [{current}]", line=lineno)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"{name}: expected 'key = value'", line=lineno)
        if current is None:
            raise ConfigError(f"{name}: entry before any section", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA[current]:
            raise ConfigError(f"{name}: unknown key in [{current}]", key=key, line=lineno)
        if key in sections[current]:
            raise ConfigError(f"{name}: duplicate key in [{current}]", key=key, line=lineno)
        sections[current][key] = (value, lineno)

    for sec in _REQUIRED_SECTIONS:
        if sec not in sections:
            raise ConfigError(f"{name}: missing required section [{sec}]")

    def build(sec: str) -> dict:
        out = {}
        present = sections.get(sec, {})
        for key, (conv, default) in _SCHEMA[sec].items():
            if key in present:
                value, lineno = present[key]
                try:
                    out[key] = conv(value)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{name}: bad value {value!r}: {exc}",
                                      key=key, line=lineno) from None
            elif default is REQUIRED:
                raise ConfigError(f"{name}: missing required key in [{sec}]", key=key)
            else:
                out[key] = default
        return out

    mk = build("market")
    try:
        market = MarketParams(**mk)
    except Exception as exc:
        raise ConfigError(f"{name}: invalid market parameters: {exc}") from None

    bx = build("box")
    bounds, counts = [], []
    for key in ("p_g", "p_d", "e"):
        spec = bx[key]
        if len(spec) != 3 or spec[2] != int(spec[2]) or int(spec[2]) < 2:
            raise ConfigError(f"{name}: box axis needs 'lo, hi, count>=2'", key=key)
        bounds.append((spec[0], spec[1]))
        counts.append(int(spec[2]))
    try:
        box = FuzzyBox.uniform(bounds, counts)
    except Exception as exc:
        raise ConfigError(f"{name}: invalid box: {exc}") from None

    identify = IdentifySettings(**build("identify"))
    synthesize = SynthesizeSettings(**build("synthesize"))

    ct = build("controller")
    if ct["kind"] not in (ACE, FUZZY):
        raise ConfigError(f"{name}: controller kind must be 'ace' or 'fuzzy'",
                          key="kind")
    controller = ControllerSettings(**ct)

    disturbance = None
    compare_seeds: tuple[int, ...] = ()
    if "disturbance" in sections:
        dd = build("disturbance")
        for key in ("dg", "dd", "in"):
            if len(dd[key]) != 2:
                raise ConfigError(f"{name}: disturbance range needs 'lo, hi'", key=key)
        try:
            disturbance = DisturbanceSpec(
                ranges=(tuple(dd["dg"]), tuple(dd["dd"]), tuple(dd["in"])),
                hold_interval=dd["hold"], seed=dd["seed"], enabled=True)
        except Exception as exc:
            raise ConfigError(f"{name}: invalid disturbance: {exc}") from None
        compare_seeds = dd["compare_seeds"] or (dd["seed"],)

    sm = build("sim")
    try:
        sim = SimConfig(t_end=sm["t_end"], dt=sm["dt"],
                        initial_state=MarketState(sm["p_g0"], sm["p_d0"], sm["e0"]),
                        initial_lambda=ct["ace_lambda0"],
                        record_stride=sm["record_stride"])
    except Exception as exc:
        raise ConfigError(f"{name}: invalid sim block: {exc}") from None

    vf = build("verify")
    if len(vf["w_low"]) != 3 or len(vf["w_high"]) != 3:
        raise ConfigError(f"{name}: verify w_low/w_high need three entries")
    verify = VerifySettings(samples=vf["samples"], seed=vf["seed"],
                            w_low=tuple(vf["w_low"]), w_high=tuple(vf["w_high"]))

    ot = build("outputs")
    outputs = OutputSettings(directory=ot["dir"], plot_data=ot["plot_data"])

    return ScenarioConfig(market=market, box=box, identify=identify,
                          synthesize=synthesize, controller=controller,
                          disturbance=disturbance, compare_seeds=compare_seeds,
                          sim=sim, verify=verify, outputs=outputs)


def parse_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), name=str(path))


def emit_config(cfg: ScenarioConfig) -> str:
    """Canonical text for a parsed config; parse(emit(cfg)) is field-identical."""
    out = io.StringIO()

    def sec(name, pairs):
        out.write(f"[{name}]\n")
        for key, val in pairs:
            if val is None:
                continue
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, tuple):
                val = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in val)
            elif isinstance(val, float):
                val = repr(val)
            out.write(f"{key} = {val}\n")
        out.write("\n")

    m = cfg.market
    sec("market", [(f.name if f.name != "in_mean" else "in_mean", getattr(m, f.name))
                   for f in dc_fields(m)])
    sec("box", [(name, (ax.lower, ax.upper, float(ax.size)))
                for name, ax in zip(("p_g", "p_d", "e"), cfg.box.axes)])
    sec("identify", [("samples", cfg.identify.samples), ("seed", cfg.identify.seed),
                     ("ridge", cfg.identify.ridge)])
    s = cfg.synthesize
    sec("synthesize", [("gamma_sq", s.gamma_sq), ("margin", s.margin), ("tol", s.tol),
                       ("minimize", s.minimize), ("gamma_lo", s.gamma_lo),
                       ("gamma_hi", s.gamma_hi), ("bisect_tol", s.bisect_tol),
                       ("anchored_fallback", s.anchored_fallback)])
    c = cfg.controller
    sec("controller", [("kind", c.kind), ("ace_lambda0", c.ace_lambda0),
                       ("storage_target", c.storage_target)])
    if cfg.disturbance is not None:
        d = cfg.disturbance
        sec("disturbance", [("dg", d.ranges[0]), ("dd", d.ranges[1]),
                            ("in", d.ranges[2]), ("hold", d.hold_interval),
                            ("seed", d.seed),
                            ("compare_seeds", cfg.compare_seeds or None)])
    sim = cfg.sim
    st = sim.initial_state
    sec("sim", [("t_end", sim.t_end), ("dt", sim.dt), ("p_g0", st.p_g),
                ("p_d0", st.p_d), ("e0", st.e), ("record_stride", sim.record_stride)])
    v = cfg.verify
    sec("verify", [("samples", v.samples), ("seed", v.seed),
                   ("w_low", v.w_low), ("w_high", v.w_high)])
    o = cfg.outputs
    sec("outputs", [("dir", o.directory), ("plot_data", o.plot_data)])
    return out.getvalue()
