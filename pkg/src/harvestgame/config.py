"""Flat `key = value` experiment files with one section per module.

    [geometry]  layout, placement radii, path loss
    [energy]    CES battery, packet volumes, arrivals
    [game]      power levels, SINR targets, discount, solver mode
    [sim]       outage thresholds, slots, replications, sweep
    [mfg]       mean-field grid and physical constants
    [compare]   single-CES model and the M values for the density comparison

Omitted keys take the dataclass defaults; an empty file is a valid config.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from types import SimpleNamespace

from .mfg import MfgConfig, MfgConfigError
from .simulation import CesMdpConfig, ScenarioConfig


class ConfigError(ValueError):
    """Bad key or value; the message names the offending `section.key`."""


SCENARIO_SECTIONS = {
    "geometry": ("num_sbs", "layout", "num_clusters", "ring_radius", "cluster_radius", "macro_radius",
                 "coverage_radius", "inner_radius", "outer_radius", "min_separation", "pathloss_exponent",
                 "rayleigh_mean_sq", "topology_seed"),
    "energy": ("battery_capacity", "sbs_packet_volume", "quanta_ratio", "slot_duration", "arrival",
               "transfer_loss_fraction", "sbs_battery"),
    "game": ("mbs_power_levels", "target_sinr_mbs", "target_sinr_sbs", "noise", "discount", "mode",
             "enumeration_budget"),
    "sim": ("sbs_outage_threshold", "mbs_outage_threshold"),
}
MODES = ("enumerate", "bri", "best-response-iteration", "incremental")
SWEEP_PARAMETERS = ("M", "lambda1", "C")


@dataclass
class RunSettings:
    slots: int = 10_000
    replications: int = 20
    horizon: int = 1000               # trajectory length for solve-stochastic / baseline
    pin_topology: bool = True
    sweep_parameter: str = "M"
    sweep_values: tuple = (5, 10, 15, 20)
    epsilon: float = 1e-6             # incremental-mode improvement floor
    compare_m: tuple = (100, 200, 300, 400, 500, 600, 700, 800)


RUN_KEYS = {"sim": ("slots", "replications", "horizon", "pin_topology", "sweep_parameter", "sweep_values"),
            "game": ("epsilon",), "compare": ("compare_m",)}


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    mfg: MfgConfig = field(default_factory=MfgConfig)
    mdp: CesMdpConfig = field(default_factory=CesMdpConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def to_sections(self):
        """Plain nested dict, section -> key -> value, without derived arrays."""
        out = {s: {} for s in ("geometry", "energy", "game", "sim", "mfg", "compare")}
        sc = dataclasses.asdict(self.scenario)
        for sec, keys in SCENARIO_SECTIONS.items():
            for k in keys:
                out[sec][k] = sc[k]
        for sec, keys in RUN_KEYS.items():
            for k in keys:
                out[sec][k] = getattr(self.run, k)
        for f in dataclasses.fields(MfgConfig):
            if f.name != "m0":
                out["mfg"][f.name] = getattr(self.mfg, f.name)
        for f in dataclasses.fields(CesMdpConfig):
            out["compare"][f.name] = getattr(self.mdp, f.name)
        return out

    def snapshot(self):
        return json.loads(json.dumps(self.to_sections(), default=list))


def _parse_value(text, default, where):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if isinstance(default, tuple):
            return tuple(float(v) if any(c in v for c in ".eE") else int(v)
                         for v in text.replace(",", " ").split())
        if isinstance(default, int):
            v = float(text)
            if v != int(v):
                raise ValueError("expected an integer")
            return int(v)
        if isinstance(default, float) or default is None:
            if text.lower() in ("none", ""):
                return None
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def _check(cond, where, why):
    if not cond:
        raise ConfigError(f"{where}: {why}")


def _validate(sc: ScenarioConfig, run: RunSettings):
    _check(0 < sc.discount < 1, "game.discount", f"must lie in (0, 1), got {sc.discount}")
    _check(sc.mode in MODES, "game.mode", f"must be one of {MODES}, got {sc.mode!r}")
    _check(sc.battery_capacity >= 1, "energy.battery_capacity", "must be >= 1")
    _check(sc.slot_duration > 0, "energy.slot_duration", "must be > 0")
    _check(0 <= sc.transfer_loss_fraction < 1, "energy.transfer_loss_fraction", "must lie in [0, 1)")
    P = sc.mbs_power_levels
    _check(len(P) > 0 and all(p > 0 for p in P) and all(b > a for a, b in zip(P, P[1:])),
           "game.mbs_power_levels", "must be positive and strictly increasing")
    _check(sc.noise >= 0, "game.noise", "must be >= 0")
    _check(sc.enumeration_budget >= 1, "game.enumeration_budget", "must be >= 1")
    _check(sc.macro_radius > 0 and sc.coverage_radius > 0, "geometry.macro_radius",
           "radii must be > 0")
    _check(run.slots >= 1, "sim.slots", "must be >= 1")
    _check(run.replications >= 1, "sim.replications", "must be >= 1")
    _check(run.horizon >= 1, "sim.horizon", "must be >= 1")
    _check(run.sweep_parameter in SWEEP_PARAMETERS, "sim.sweep_parameter",
           f"must be one of {SWEEP_PARAMETERS}")
    _check(len(run.sweep_values) > 0, "sim.sweep_values", "must list at least one value")
    _check(len(run.compare_m) > 0 and all(m >= 1 for m in run.compare_m), "compare.compare_m",
           "must list positive integers")
    _check(run.epsilon >= 0, "game.epsilon", "must be >= 0")


def from_sections(data) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from section -> key -> raw string."""
    sc_defaults = dataclasses.asdict(ScenarioConfig())
    run_defaults = dataclasses.asdict(RunSettings())
    mfg_defaults = {f.name: f.default for f in dataclasses.fields(MfgConfig) if f.name != "m0"}
    mdp_defaults = dataclasses.asdict(CesMdpConfig())
    sc_kw, run_kw, mfg_kw, mdp_kw = {}, {}, {}, {}
    for sec, items in data.items():
        if sec == "DEFAULT":
            continue
        for key, raw in items.items():
            where = f"{sec}.{key}"
            if key in SCENARIO_SECTIONS.get(sec, ()):
                sc_kw[key] = _parse_value(raw, sc_defaults[key], where)
            elif key in RUN_KEYS.get(sec, ()):
                run_kw[key] = _parse_value(raw, run_defaults[key], where)
            elif sec == "mfg" and key in mfg_defaults:
                mfg_kw[key] = _parse_value(raw, mfg_defaults[key], where)
            elif sec == "compare" and key in mdp_defaults:
                mdp_kw[key] = _parse_value(raw, mdp_defaults[key], where)
            elif sec == "game" and key == "beta":
                sc_kw["discount"] = _parse_value(raw, 0.9, where)
            else:
                raise ConfigError(f"{where}: unknown key")
    run = RunSettings(**run_kw)
    _validate(SimpleNamespace(**{**sc_defaults, **sc_kw}), run)
    try:
        sc = ScenarioConfig(**{**sc_defaults, **sc_kw})
    except ValueError as exc:
        raise ConfigError(f"geometry/energy: {exc}") from None
    try:
        mfg = MfgConfig(**{**mfg_defaults, **mfg_kw})
    except MfgConfigError as exc:
        raise ConfigError(f"mfg.{exc}") from None
    mdp = CesMdpConfig(**{**mdp_defaults, **mdp_kw})
    _check(mdp.battery_capacity >= 1, "compare.battery_capacity", "must be >= 1")
    _check(0 < mdp.discount < 1, "compare.discount", f"must lie in (0, 1), got {mdp.discount}")
    if sc.sbs_battery <= 0 or sc.quanta_ratio <= 0:
        raise ConfigError("energy.sbs_battery/quanta_ratio: must be > 0")
    return ExperimentConfig(sc, mfg, mdp, run)


def loads(text) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from None
    unknown = set(cp.sections()) - {"geometry", "energy", "game", "sim", "mfg", "compare"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    return from_sections({s: dict(cp.items(s)) for s in cp.sections()})


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


def dumps(cfg: ExperimentConfig) -> str:
    lines = []
    for sec, items in cfg.to_sections().items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {_format_value(v)}" for k, v in items.items()]
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


def override(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Re-validate after replacing `section.key` style overrides, e.g. override(cfg, **{"game.mode": "bri"})."""
    data = {s: {k: _format_value(v) for k, v in items.items()} for s, items in cfg.to_sections().items()}
    for dotted, v in kw.items():
        sec, key = dotted.split(".", 1)
        data.setdefault(sec, {})[key] = _format_value(v)
    return from_sections(data)
