"""Command-line driver: ``fpguide <subcommand> --config run.yaml``.

Exit codes: 0 success, 2 configuration error (the message names the field),
3 numerical failure (the message names the timestep).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    BoundParams,
    bound_check_dict,
    bound_grid_csv,
    contraction_rate,
    golden_path_experiment,
    optimal_beta,
    prediction_gap,
    report_json,
    theorem_check,
)
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    get_path,
    load_config,
    parse_operator,
    section,
    set_path,
    validate,
)
from .guidance import (
    FixedPointOperatorSpec,
    NumericalError,
    run_cfg_xk,
    run_cfgpp_xk,
    run_fsg,
    run_resampling,
    run_zsampling,
)
from .model import Latent, sample_x0, sample_xT
from .schedule import schedule_csv

OUT_ENV = "FPGUIDE_OUT_DIR"
COMMANDS = ("sample", "gap", "contraction", "bound", "golden", "sweep", "schedule-dump")
SWEEP_COMMANDS = ("sample", "gap", "contraction", "golden")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _header(cfg_hash: str) -> str:
    return f"fpguide {__version__} config {cfg_hash}"


def _csv(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _stamp(payload: dict, cfg_hash: str) -> dict:
    return {"version": __version__, "config_hash": cfg_hash, **payload}


# ---------------------------------------------------------------- per-seed jobs


def _run_method(cfg: RunConfig, seed: int, snapshots: bool):
    pred = cfg.predictor()
    m = cfg.method
    p = m.params
    x_T = sample_xT(cfg.model.d, cfg.T, np.random.default_rng(seed))
    kw = dict(seed=seed, sampler=cfg.sampler, snapshots=snapshots)
    if m.name == "cfg":
        rec = run_cfg_xk(pred, m.condition, p["w"], p["K"], x_T, **kw)
    elif m.name == "cfgpp":
        rec = run_cfgpp_xk(pred, m.condition, p["lambda"], p["K"], x_T, **kw)
    elif m.name == "zsampling":
        rec = run_zsampling(
            pred, m.condition, p["w"], p["gamma"], x_T, p["active_steps"],
            reverse_strength=p["reverse_strength"], **kw,
        )
    elif m.name == "resampling":
        rec = run_resampling(
            pred, m.condition, p["w"], p["gamma"], x_T, p["active_steps"], repeats=p["repeats"], **kw
        )
    else:
        rec = run_fsg(pred, m.condition, cfg.iteration_schedule(), x_T, solver=cfg.solver(), **kw)
    rec.config_hash = cfg.config_hash
    return pred, rec


def _job_sample(raw, seed):
    cfg = validate(raw)
    _, rec = _run_method(cfg, seed, cfg.snapshots)
    d = rec.to_dict()
    d["run_id"] = f"{cfg.method.name}-seed{seed}"
    return seed, d


def _job_gap(raw, seed):
    cfg = validate(raw)
    pred, rec = _run_method(cfg, seed, True)
    series = prediction_gap(pred, cfg.method.condition, rec)
    T = cfg.T
    late = series.values[np.asarray(series.timesteps) <= T / 3.0].mean()
    return seed, {
        "run_id": f"{cfg.method.name}-seed{seed}",
        "timesteps": [int(t) for t in series.timesteps],
        "gaps": series.values.tolist(),
        "nfe_per_step": rec.nfe_per_step.tolist(),
        "nfe_total": int(rec.nfe_total),
        "loss": float(series.loss),
        "late_third_loss": float(late),
    }


def _contraction_setup(cfg: RunConfig):
    sec = section(cfg, "contraction")
    op = parse_operator(sec.get("operator"), "analysis.contraction.operator", cfg.T)
    cond = sec.get("condition", cfg.method.condition)
    if op.kind != "identity" and cond not in cfg.model.conditions:
        raise ConfigError("analysis.contraction.condition", f"unknown condition {cond!r}")
    if "timesteps" in sec:
        ts = sec["timesteps"]
        where = "analysis.contraction.timesteps"
    else:
        ts = [int(round(f * cfg.T)) for f in sec.get("t_fractions", [0.2, 0.4, 0.6, 0.8])]
        where = "analysis.contraction.t_fractions"
    if not ts or any(not isinstance(t, (int, np.integer)) or not 1 <= t <= cfg.T for t in ts):
        raise ConfigError(where, f"timesteps must be a nonempty list inside 1..{cfg.T}")
    n_pairs = sec.get("n_pairs", 2000)
    if not isinstance(n_pairs, int) or n_pairs < 1:
        raise ConfigError("analysis.contraction.n_pairs", "must be an integer >= 1")
    scale = sec.get("perturbation_scale", 1e-2)
    if not isinstance(scale, (int, float)) or not scale > 0:
        raise ConfigError("analysis.contraction.perturbation_scale", "must be > 0")
    x0_cond = sec.get("x0", "unconditional")
    if x0_cond != "unconditional" and x0_cond not in cfg.model.conditions:
        raise ConfigError("analysis.contraction.x0", f"unknown condition {x0_cond!r}")
    return op, cond, ts, n_pairs, float(scale), (None if x0_cond == "unconditional" else x0_cond)


def _job_contraction(raw, seed):
    cfg = validate(raw)
    op, cond, ts, n_pairs, scale, x0_cond = _contraction_setup(cfg)
    pred = cfg.predictor()
    rng = np.random.default_rng(seed)
    rows = []
    for t in ts:
        dt = op.dt if op.dt is not None else max(1, int(round((op.dt_fraction or 0.0) * t)))
        if op.kind == "foresight" and dt > t:
            raise ConfigError("analysis.contraction.operator.dt", f"dt={dt} exceeds t={t}")
        if op.kind in ("zsampling", "resampling") and t >= cfg.T:
            raise ConfigError("analysis.contraction.timesteps", f"{op.kind} needs t < T={cfg.T}")
        spec = FixedPointOperatorSpec(
            op.kind, None if op.kind == "identity" else cond, w=op.w, lam=op.lam, gamma=op.gamma,
            dt=dt if op.kind == "foresight" else 1, calibrate=op.calibrate, reverse_strength=op.reverse_strength,
        )
        sampler = lambda g, n: sample_x0(cfg.model, x0_cond, g, n).x  # noqa: E731
        est = contraction_rate(spec, pred, sampler, int(t), n_pairs, scale, rng)
        rows.append({"t": int(t), "dt": int(dt), "rate": est.rate, "stderr": est.stderr})
    return seed, {"operator": op.__dict__, "condition": cond, "n_pairs": n_pairs,
                  "perturbation_scale": scale, "rows": rows}


def _golden_setup(cfg: RunConfig):
    sec = section(cfg, "golden")
    conds = sec.get("conditions")
    if not isinstance(conds, list) or len(conds) != 2:
        raise ConfigError("analysis.golden.conditions", "must list [match, mismatch] condition labels")
    for c in conds:
        if c not in cfg.model.conditions:
            raise ConfigError("analysis.golden.conditions", f"unknown condition {c!r}")
    if np.allclose(cfg.model.weights_for(conds[0]), cfg.model.weights_for(conds[1])):
        raise ConfigError("analysis.golden.conditions", "match and mismatch conditions have identical reweightings")
    if "t_star" in sec:
        t_star = sec["t_star"]
    else:
        t_star = int(round(sec.get("t_star_fraction", 0.6) * cfg.T))
    if not isinstance(t_star, int) or not 1 <= t_star <= cfg.T:
        raise ConfigError("analysis.golden.t_star", f"must lie in 1..{cfg.T}")
    w = sec.get("w", 1.0)
    if not isinstance(w, (int, float)) or w < 0:
        raise ConfigError("analysis.golden.w", "must be >= 0")
    n = sec.get("n_trials", 200)
    if not isinstance(n, int) or n < 1:
        raise ConfigError("analysis.golden.n_trials", "must be an integer >= 1")
    return tuple(conds), t_star, float(w), n


def _job_golden(raw, seed):
    cfg = validate(raw)
    conds, t_star, w, n = _golden_setup(cfg)
    rep = golden_path_experiment(cfg.predictor(), conds, t_star, w, n, np.random.default_rng(seed))
    if not (np.all(np.isfinite(rep.match_loglik)) and np.all(np.isfinite(rep.mismatch_loglik))):
        raise NumericalError(0, "golden-path sample")
    return seed, dict(rep.summary(), conditions=list(conds))


JOBS = {"sample": _job_sample, "gap": _job_gap, "contraction": _job_contraction, "golden": _job_golden}


def _map_seeds(kind, raw, seeds, workers):
    """Run one job per seed; results come back sorted by seed."""
    job = JOBS[kind]
    if workers <= 1 or len(seeds) == 1:
        results = [job(raw, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, [raw] * len(seeds), seeds))
    return [r for _, r in sorted(results, key=lambda x: x[0])]


# ------------------------------------------------------------------- commands


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def cmd_sample(cfg: RunConfig, out: Path, workers: int):
    h = cfg.config_hash
    records = _map_seeds("sample", cfg.raw, cfg.seeds, workers)
    lines = [json.dumps(_stamp(r, h), sort_keys=True) for r in records]
    rows = []
    for r in records:
        cum = np.cumsum(r["nfe_per_step"])
        for t, g, n in zip(r["timesteps"], r["gaps"], cum):
            rows.append((r["run_id"], t, float(np.mean(g)), int(n)))
    return [
        _write(out, "trajectories.jsonl", "\n".join(lines) + "\n"),
        _write(out, "gaps.csv", _csv(_header(h), ["run_id", "t", "gap", "nfe_cum"], rows)),
    ]


def cmd_gap(cfg: RunConfig, out: Path, workers: int):
    h = cfg.config_hash
    res = _map_seeds("gap", cfg.raw, cfg.seeds, workers)
    rows = []
    for r in res:
        cum = np.cumsum(r["nfe_per_step"])
        for t, g, n in zip(r["timesteps"], r["gaps"], cum):
            rows.append((r["run_id"], t, float(g), int(n)))
    losses = np.array([r["loss"] for r in res])
    late = np.array([r["late_third_loss"] for r in res])
    se = lambda a: float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0  # noqa: E731
    report = _stamp({
        "method": cfg.method.name,
        "seeds": cfg.seeds,
        "per_seed": [{k: r[k] for k in ("run_id", "nfe_total", "loss", "late_third_loss")} for r in res],
        "mean_loss": float(losses.mean()),
        "stderr_loss": se(losses),
        "mean_late_third_loss": float(late.mean()),
        "stderr_late_third_loss": se(late),
    }, h)
    return [
        _write(out, "gap.json", report_json(report)),
        _write(out, "gaps.csv", _csv(_header(h), ["run_id", "t", "gap", "nfe_cum"], rows)),
    ]


def cmd_contraction(cfg: RunConfig, out: Path, workers: int):
    _contraction_setup(cfg)
    h = cfg.config_hash
    res = _map_seeds("contraction", cfg.raw, cfg.seeds, workers)
    rows = [(s, r["t"], r["dt"], r["rate"], r["stderr"]) for s, rr in zip(cfg.seeds, res) for r in rr["rows"]]
    report = _stamp({"seeds": cfg.seeds, "results": [dict(r, seed=s) for s, r in zip(cfg.seeds, res)]}, h)
    return [
        _write(out, "contraction.json", report_json(report)),
        _write(out, "contraction.csv", _csv(_header(h), ["seed", "t", "dt", "rate", "stderr"], rows)),
    ]


def _bound_params(cfg: RunConfig, sec: dict, N: int) -> BoundParams:
    const = sec.get("constants")
    if not isinstance(const, dict):
        raise ConfigError("analysis.bound.constants", "needs B, L, r (and optionally C, c) or use 'measure'")
    vals = {}
    for k, default in (("B", None), ("L", None), ("r", None), ("C", 2.0), ("c", 0.5)):
        v = const.get(k, default)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"analysis.bound.constants.{k}", "must be a number")
        vals[k] = float(v)
    coef = sec.get("coefficients", "schedule")
    try:
        if coef == "schedule":
            return BoundParams.from_schedule(cfg.schedule(), N, vals["B"], vals["L"], vals["r"], vals["C"], vals["c"])
        if isinstance(coef, dict):
            return BoundParams.constant(
                N, cfg.T, vals["B"], vals["L"], vals["r"], float(coef.get("lambda", 1.0)),
                float(coef.get("mu", 0.0)), vals["C"], vals["c"],
            )
    except AnalysisError as e:
        raise ConfigError("analysis.bound.constants", str(e)) from None
    raise ConfigError("analysis.bound.coefficients", "must be 'schedule' or {lambda, mu}")


def cmd_bound(cfg: RunConfig, out: Path, workers: int):
    sec = section(cfg, "bound")
    N = sec.get("N")
    if not isinstance(N, int) or N < 1:
        raise ConfigError("analysis.bound.N", "must be a positive integer")
    h = cfg.config_hash
    header = _header(h)
    if "measure" in sec:
        m = sec["measure"] or {}
        if not isinstance(m, dict):
            raise ConfigError("analysis.bound.measure", "must be a mapping")
        seed = cfg.seeds[0]
        check = theorem_check(
            cfg.predictor(), cfg.method.condition, N, int(m.get("n_trajectories", 500)),
            np.random.default_rng(seed), C=float(m.get("C", 2.0)), c=float(m.get("c", 0.5)),
            slack=float(m.get("slack", 0.1)), gamma=float(m.get("gamma", 1.0)),
            n_pairs=int(m.get("n_pairs", 200)),
        )
        report = _stamp(dict(bound_check_dict(check), N=N, T=cfg.T, seed=seed), h)
        text = bound_grid_csv(check, header_comment=header)
    else:
        p = _bound_params(cfg, sec, N)
        try:
            opt = optimal_beta(p)
        except AnalysisError as e:
            raise ConfigError("analysis.bound.N", str(e)) from None
        report = _stamp({
            "N": N, "T": cfg.T, "B": p.B, "L": p.L, "r": p.r, "C": p.C, "c": p.c,
            "beta_star": opt.beta, "g_star": opt.g, "relaxed_beta": opt.relaxed_beta,
            "relaxed_c1": opt.relaxed_c1,
            "grid": [v.__dict__ for v in opt.grid],
        }, h)
        text = bound_grid_csv(None, values=opt.grid, minimizer=int(round(1 / opt.beta)), header_comment=header)
    return [_write(out, "bound.json", report_json(report)), _write(out, "bound.csv", text)]


def cmd_golden(cfg: RunConfig, out: Path, workers: int):
    _golden_setup(cfg)
    res = _map_seeds("golden", cfg.raw, cfg.seeds, workers)
    report = _stamp({"seeds": cfg.seeds, "results": [dict(r, seed=s) for s, r in zip(cfg.seeds, res)]}, cfg.config_hash)
    return [_write(out, "golden.json", report_json(report))]


def cmd_sweep(cfg: RunConfig, out: Path, workers: int):
    sec = section(cfg, "sweep")
    command = sec.get("command", "sample")
    if command not in SWEEP_COMMANDS:
        raise ConfigError("analysis.sweep.command", f"must be one of {', '.join(SWEEP_COMMANDS)}")
    axis = sec.get("axis")
    if not isinstance(axis, str):
        raise ConfigError("analysis.sweep.axis", "must name a config field, e.g. method.lambda")
    try:
        current = get_path(cfg.raw, axis)
    except KeyError:
        raise ConfigError("analysis.sweep.axis", f"unknown axis {axis!r}") from None
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ConfigError("analysis.sweep.axis", f"{axis!r} is not a scalar numeric field")
    values = sec.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("analysis.sweep.values", "must be a nonempty list")
    rows = []
    if command in ("sample", "gap"):
        cols = ["axis", "value", "seed", "nfe_total", "loss", "late_third_loss"]
    elif command == "contraction":
        cols = ["axis", "value", "seed", "t", "dt", "rate", "stderr"]
    else:
        cols = ["axis", "value", "seed", "mean_difference", "sign_test_p", "match_mean_gap", "mismatch_mean_gap"]
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("analysis.sweep.values", f"entries must be numbers, got {v!r}")
        sub = validate(set_path(cfg.raw, axis, v))
        if command == "contraction":
            _contraction_setup(sub)
        if command == "golden":
            _golden_setup(sub)
        res = _map_seeds("gap" if command in ("sample", "gap") else command, sub.raw, sub.seeds, workers)
        for seed, r in zip(sub.seeds, res):
            if command in ("sample", "gap"):
                rows.append((axis, v, seed, r["nfe_total"], r["loss"], r["late_third_loss"]))
            elif command == "contraction":
                for c in r["rows"]:
                    rows.append((axis, v, seed, c["t"], c["dt"], c["rate"], c["stderr"]))
            else:
                rows.append((axis, v, seed, r["mean_difference"], r["sign_test_p"],
                             r["match_mean_gap"], r["mismatch_mean_gap"]))
    return [_write(out, "sweep.csv", _csv(_header(cfg.config_hash), cols, rows))]


def cmd_schedule_dump(cfg: RunConfig, out: Path, workers: int):
    return [_write(out, "schedule.csv", schedule_csv(cfg.schedule(), _header(cfg.config_hash)))]


HANDLERS = {
    "sample": cmd_sample,
    "gap": cmd_gap,
    "contraction": cmd_contraction,
    "bound": cmd_bound,
    "golden": cmd_golden,
    "sweep": cmd_sweep,
    "schedule-dump": cmd_schedule_dump,
}


def _parse_seeds(text: str):
    try:
        seeds = [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError("--seed-override", f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seed-override", "must list at least one seed")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpguide", description="Fixed-point guidance experiments on analytic mixtures.")
    ap.add_argument("--version", action="version", version=f"fpguide {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and output.dir)")
    ap.add_argument("--workers", type=int, default=1, help="seed-level worker processes; 1 runs sequentially")
    ap.add_argument("--seed-override", help="comma-separated seeds replacing the config's list")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg = load_config(args.config)
        if args.seed_override:
            raw = dict(cfg.raw, seeds=_parse_seeds(args.seed_override))
            cfg = validate(raw)
        out = Path(args.out or os.environ.get(OUT_ENV) or cfg.output_dir)
        paths = HANDLERS[args.command](cfg, out, args.workers)
    except ConfigError as e:
        print(f"fpguide: config error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"fpguide: numerical error: {e}", file=sys.stderr)
        return 3
    except (AnalysisError, ValueError) as e:
        print(f"fpguide: config error: {e}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
