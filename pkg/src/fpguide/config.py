"""YAML run configuration for the command-line driver.

Grammar (every section is a mapping; ``?`` marks optional keys)::

    schedule:
      T: 50                     # integer >= 2
      beta_start?: 0.0001       # both or neither; neither gives the scaled
      beta_end?: 0.02           # 1000-step DDPM endpoints (scaled by 1000/T)
    model:
      dimension: 1
      components:               # nonempty list
        - {weight: 0.5, mean: [-2.0], variance: 0.5}
        - {weight: 0.5, mean: [2.0], variance: 0.5}
      conditions:               # label -> one weight per component
        c0: [1, 0]
        c1: [0, 1]
    method:
      name: fsg                 # cfg | cfgpp | zsampling | resampling | fsg
      condition: c0
      # cfg: w, K?   cfgpp: lambda, K?   zsampling: w, gamma, active_steps,
      # reverse_strength?   resampling: w, gamma, active_steps, repeats?
      # fsg: lambda, gamma and either iterations [[t, K, dt], ...] or
      #      planner {budget, ratio?}; inner_steps? for both legs
    sampler?: ddim              # ddim | ddpm
    seeds: [0, 1, 2]
    output?: {dir: out, snapshots: false}
    analysis?:                  # sections read by the analysis subcommands
      contraction?: {...}
      bound?: {...}
      golden?: {...}
      sweep?: {...}

The analysis sections are documented in the README.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .guidance import IterationSchedule, plan_stage_allocation
from .model import ConditionalGMM, GMMPredictor
from .sampler import IntervalSolverConfig
from .schedule import build_linear_beta_schedule, scaled_linear_schedule

METHODS = ("cfg", "cfgpp", "zsampling", "resampling", "fsg")
SAMPLERS = ("ddim", "ddpm")
OPERATOR_KINDS = ("identity", "linear_cfg", "linear_cfgpp", "zsampling", "resampling", "foresight")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _get(d, key, path, kind=None, required=True, default=None):
    if not isinstance(d, dict):
        raise ConfigError(path, "must be a mapping")
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "is required")
        return default
    v = d[key]
    where = f"{path}.{key}" if path else key
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise ConfigError(where, f"must be an integer, got {v!r}")
        return int(v)
    if kind == "number":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(where, f"must be a number, got {v!r}")
        if not np.isfinite(v):
            raise ConfigError(where, "must be finite")
        return float(v)
    if kind == "str":
        if not isinstance(v, str):
            raise ConfigError(where, f"must be a string, got {v!r}")
        return v
    if kind == "list":
        if not isinstance(v, list):
            raise ConfigError(where, f"must be a list, got {v!r}")
        return v
    if kind == "dict":
        if not isinstance(v, dict):
            raise ConfigError(where, f"must be a mapping, got {v!r}")
        return v
    return v


def _nonneg(v, where):
    if v < 0:
        raise ConfigError(where, f"must be >= 0, got {v}")
    return v


@dataclass(frozen=True)
class MethodConfig:
    name: str
    condition: str
    params: dict


@dataclass
class RunConfig:
    """Validated configuration plus the raw mapping it came from."""

    raw: dict
    T: int
    beta_start: float | None
    beta_end: float | None
    model: ConditionalGMM
    method: MethodConfig
    sampler: str
    seeds: list
    output_dir: str
    snapshots: bool
    analysis: dict = field(default_factory=dict)

    def schedule(self):
        if self.beta_start is None:
            return scaled_linear_schedule(self.T)
        return build_linear_beta_schedule(self.T, self.beta_start, self.beta_end)

    def predictor(self) -> GMMPredictor:
        return GMMPredictor(self.model, self.schedule())

    def iteration_schedule(self) -> IterationSchedule:
        p = self.method.params
        if "iterations" in p:
            return IterationSchedule(tuple(tuple(e) for e in p["iterations"]), self.T, p["lambda"], p["gamma"])
        plan = p["planner"]
        return plan_stage_allocation(self.T, plan["budget"], plan["ratio"], lam=p["lambda"], gamma=p["gamma"])

    def solver(self) -> IntervalSolverConfig:
        return IntervalSolverConfig(self.method.params.get("inner_steps", 1))

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring the output directory."""
    body = copy.deepcopy(raw)
    if isinstance(body.get("output"), dict):
        body["output"].pop("dir", None)
    text = json.dumps(body, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _parse_model(raw) -> ConditionalGMM:
    m = _get(raw, "model", "", "dict")
    d = _get(m, "dimension", "model", "int")
    if d < 1:
        raise ConfigError("model.dimension", "must be >= 1")
    comps = _get(m, "components", "model", "list")
    if not comps:
        raise ConfigError("model.components", "must be a nonempty list")
    weights, means, variances = [], [], []
    for i, c in enumerate(comps):
        where = f"model.components[{i}]"
        if not isinstance(c, dict):
            raise ConfigError(where, "must be a mapping")
        w = _nonneg(_get(c, "weight", where, "number"), f"{where}.weight")
        mean = _get(c, "mean", where)
        mean = [mean] if isinstance(mean, (int, float)) else mean
        if not isinstance(mean, list) or len(mean) != d:
            raise ConfigError(f"{where}.mean", f"must be a list of {d} numbers")
        var = _get(c, "variance", where, "number")
        if var <= 0:
            raise ConfigError(f"{where}.variance", f"must be > 0, got {var}")
        weights.append(w)
        means.append([float(x) for x in mean])
        variances.append(var)
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigError("model.components", f"weights sum to {sum(weights):.12g}, not 1")
    weights = list(np.asarray(weights) / sum(weights))
    conds = _get(m, "conditions", "model", "dict", required=False, default={})
    parsed = {}
    for label, cw in conds.items():
        where = f"model.conditions.{label}"
        if not isinstance(cw, list) or len(cw) != len(comps):
            raise ConfigError(where, f"must list {len(comps)} weights")
        cw = [float(x) for x in cw]
        if min(cw) < 0 or abs(sum(cw) - 1.0) > 1e-9:
            raise ConfigError(where, "weights must be nonnegative and sum to 1")
        parsed[str(label)] = list(np.asarray(cw) / sum(cw))
    return ConditionalGMM(weights, means, variances, parsed)


def _check_condition(label, model, where):
    if label not in model.conditions:
        known = ", ".join(sorted(model.conditions)) or "none"
        raise ConfigError(where, f"unknown condition {label!r} (model defines: {known})")
    return label


def _parse_method(raw, model, T) -> MethodConfig:
    m = _get(raw, "method", "", "dict")
    name = _get(m, "name", "method", "str")
    if name not in METHODS:
        raise ConfigError("method.name", f"must be one of {', '.join(METHODS)}, got {name!r}")
    cond = _check_condition(_get(m, "condition", "method", "str"), model, "method.condition")
    p = {}
    num = lambda k, **kw: _nonneg(_get(m, k, "method", "number", **kw), f"method.{k}")  # noqa: E731
    if name in ("cfg", "zsampling", "resampling"):
        p["w"] = num("w")
    if name in ("cfgpp", "fsg"):
        p["lambda"] = num("lambda")
    if name in ("zsampling", "resampling", "fsg"):
        p["gamma"] = num("gamma")
    if name in ("cfg", "cfgpp"):
        p["K"] = _get(m, "K", "method", "int", required=False, default=1)
        if p["K"] < 1:
            raise ConfigError("method.K", "must be >= 1")
    if name in ("zsampling", "resampling"):
        steps = _get(m, "active_steps", "method", "list")
        for s in steps:
            if isinstance(s, bool) or not isinstance(s, int) or not 1 <= s <= T - 1:
                raise ConfigError("method.active_steps", f"entries must be integers in 1..{T - 1}, got {s!r}")
        p["active_steps"] = sorted(set(steps))
    if name == "zsampling":
        p["reverse_strength"] = _nonneg(
            _get(m, "reverse_strength", "method", "number", required=False, default=0.0), "method.reverse_strength"
        )
    if name == "resampling":
        p["repeats"] = _get(m, "repeats", "method", "int", required=False, default=1)
        if p["repeats"] < 1:
            raise ConfigError("method.repeats", "must be >= 1")
    if name == "fsg":
        has_s = m.get("iterations") is not None
        has_p = m.get("planner") is not None
        if has_s == has_p:
            raise ConfigError("method.iterations", "fsg needs exactly one of 'iterations' or 'planner'")
        if has_s:
            its = _get(m, "iterations", "method", "list")
            for e in its:
                if not (isinstance(e, list) and len(e) == 3 and all(isinstance(v, int) for v in e)):
                    raise ConfigError("method.iterations", f"entries must be [t, K, dt] integer triples, got {e!r}")
            p["iterations"] = [list(e) for e in its]
        else:
            plan = _get(m, "planner", "method", "dict")
            budget = _get(plan, "budget", "method.planner", "int")
            if budget < T or (budget - T) % 2:
                raise ConfigError("method.planner.budget", f"needs budget >= T={T} and budget - T even, got {budget}")
            ratio = _get(plan, "ratio", "method.planner", "list", required=False, default=[3, 2, 1])
            if len(ratio) != 3 or any(isinstance(r, bool) or not isinstance(r, (int, float)) or r < 0 for r in ratio):
                raise ConfigError("method.planner.ratio", "must be three nonnegative numbers")
            p["planner"] = {"budget": budget, "ratio": [float(r) for r in ratio]}
        p["inner_steps"] = _get(m, "inner_steps", "method", "int", required=False, default=1)
        if p["inner_steps"] < 1:
            raise ConfigError("method.inner_steps", "must be >= 1")
    return MethodConfig(name, cond, p)


def validate(raw: dict) -> RunConfig:
    """Check every invariant and build a :class:`RunConfig`.

    Raises:
        ConfigError: naming the first violated field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    sch = _get(raw, "schedule", "", "dict")
    T = _get(sch, "T", "schedule", "int")
    if T < 2:
        raise ConfigError("schedule.T", f"must be >= 2, got {T}")
    b0 = _get(sch, "beta_start", "schedule", "number", required=False)
    b1 = _get(sch, "beta_end", "schedule", "number", required=False)
    if (b0 is None) != (b1 is None):
        raise ConfigError("schedule.beta_end" if b1 is None else "schedule.beta_start", "give both endpoints or neither")
    if b0 is not None and not 0.0 < b0 <= b1 < 1.0:
        raise ConfigError("schedule.beta_start", f"need 0 < beta_start <= beta_end < 1, got ({b0}, {b1})")
    model = _parse_model(raw)
    method = _parse_method(raw, model, T)
    sampler = _get(raw, "sampler", "", "str", required=False, default="ddim")
    if sampler not in SAMPLERS:
        raise ConfigError("sampler", f"must be one of {', '.join(SAMPLERS)}, got {sampler!r}")
    seeds = _get(raw, "seeds", "", "list")
    if not seeds:
        raise ConfigError("seeds", "must be a nonempty list")
    for s in seeds:
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError("seeds", f"entries must be nonnegative integers, got {s!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "entries must be unique")
    out = _get(raw, "output", "", "dict", required=False, default={})
    out_dir = _get(out, "dir", "output", "str", required=False, default="fpguide-out")
    snaps = _get(out, "snapshots", "output", required=False, default=False)
    if not isinstance(snaps, bool):
        raise ConfigError("output.snapshots", "must be true or false")
    analysis = _get(raw, "analysis", "", "dict", required=False, default={})
    cfg = RunConfig(raw, T, b0, b1, model, method, sampler, sorted(seeds), out_dir, snaps, analysis)
    if method.name == "fsg":
        try:
            cfg.iteration_schedule()
        except ValueError as e:
            where = "method.iterations" if "iterations" in method.params else "method.planner"
            raise ConfigError(where, str(e)) from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError("--config", f"cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError("--config", f"not valid YAML: {e}") from None
    return validate(raw)


# ------------------------------------------------------------ analysis sections


@dataclass(frozen=True)
class OperatorConfig:
    kind: str
    w: float = 0.0
    lam: float = 0.0
    gamma: float = 1.0
    dt: int | None = None
    dt_fraction: float | None = None
    calibrate: bool = True
    reverse_strength: float = 0.0


def parse_operator(d, where, T) -> OperatorConfig:
    kind = _get(d, "kind", where, "str")
    if kind not in OPERATOR_KINDS:
        raise ConfigError(f"{where}.kind", f"must be one of {', '.join(OPERATOR_KINDS)}, got {kind!r}")
    num = lambda k, default: _nonneg(_get(d, k, where, "number", required=False, default=default), f"{where}.{k}")  # noqa: E731
    dt = _get(d, "dt", where, "int", required=False)
    frac = _get(d, "dt_fraction", where, "number", required=False)
    if kind == "foresight" and (dt is None) == (frac is None):
        raise ConfigError(f"{where}.dt", "foresight needs exactly one of dt or dt_fraction")
    if dt is not None and not 1 <= dt <= T:
        raise ConfigError(f"{where}.dt", f"must lie in 1..{T}")
    if frac is not None and not 0.0 < frac <= 1.0:
        raise ConfigError(f"{where}.dt_fraction", "must lie in (0, 1]")
    cal = _get(d, "calibrate", where, required=False, default=True)
    if not isinstance(cal, bool):
        raise ConfigError(f"{where}.calibrate", "must be true or false")
    return OperatorConfig(
        kind, num("w", 0.0), num("lambda", 0.0), num("gamma", 1.0), dt, frac, cal, num("reverse_strength", 0.0)
    )


def section(cfg: RunConfig, name: str) -> dict:
    sec = cfg.analysis.get(name)
    if sec is None:
        raise ConfigError(f"analysis.{name}", "section is required for this subcommand")
    if not isinstance(sec, dict):
        raise ConfigError(f"analysis.{name}", "must be a mapping")
    return sec


def get_path(raw: dict, dotted: str):
    cur = raw
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def set_path(raw: dict, dotted: str, value) -> dict:
    out = copy.deepcopy(raw)
    cur = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        cur = cur[part]
    cur[parts[-1]] = value
    return out
