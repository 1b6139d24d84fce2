"""Guidance as fixed-point calibration followed by an unconditional denoise.

Each reverse step ``t -> t-1`` first calibrates ``x_t`` towards a point whose
conditional and unconditional predictions agree, then denoises with the
unconditional noise.  CFG, CFG++, Z-sampling, Resampling and foresight
guidance (FSG) differ only in the calibration operator, the interval it
looks across and how many times it is applied.

NFE accounting charges one evaluation per query point (a paired
conditional/unconditional call counts once).  The closed forms are

=================  ==========================
CFG x K, CFG++ x K  ``K * T``
Z-sampling          ``T + 2 R``
Resampling          ``T + repeats * R``
FSG                 ``T + 2 * inner * sum(K_i)``
=================  ==========================

where ``R`` is the number of reflective steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Latent, NoisePredictor
from .sampler import (
    GuidedNoiseSpec,
    IntervalSolverConfig,
    SamplerError,
    ddim_transfer,
    guided_eps,
    sampler_update,
    solve_interval,
)
from .schedule import NoiseSchedule, xi, xi_tilde

KINDS = ("identity", "linear_cfg", "linear_cfgpp", "zsampling", "resampling", "foresight")
STAGE_FRACTIONS = (0.06, 0.04, 0.02)
INTERVAL_BAND = (0.02, 0.125)


class GuidanceError(ValueError):
    pass


class NumericalError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, t: int, what: str = "state"):
        super().__init__(f"non-finite {what} at timestep {t}")
        self.t = t


@dataclass(frozen=True)
class FixedPointOperatorSpec:
    """A calibration operator acting on the time-``t`` slice.

    ``foresight`` applies ``f^u_{t-dt -> t} o f^gamma_{t -> t-dt}`` and, when
    ``calibrate`` is true, the trailing CFG++ linear update.  ``zsampling`` and
    ``resampling`` always end with the CFG linear update.  ``identity`` exists
    for diagnostics.
    """

    kind: str
    condition: str | None = None
    w: float = 0.0
    lam: float = 0.0
    gamma: float = 1.0
    dt: int = 1
    calibrate: bool = True
    reverse_strength: float = 0.0
    solver: IntervalSolverConfig = IntervalSolverConfig()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GuidanceError(f"unknown operator kind {self.kind!r}")
        if self.kind != "identity" and self.condition is None:
            raise GuidanceError(f"{self.kind} needs a condition label")
        if min(self.w, self.lam, self.gamma, self.reverse_strength) < 0:
            raise GuidanceError("operator strengths must be nonnegative")
        if self.kind == "foresight" and self.dt < 1:
            raise GuidanceError("foresight needs dt >= 1")


def _delta_eps(pred, x, t, condition):
    e_c, e_u = pred.eps_pair(x, t, condition)
    return e_c - e_u, e_u


def _reflect_z(pred, spec, x: np.ndarray, t: int) -> np.ndarray:
    """``f^gamma_{t+1 -> t} o f^{rev}_{t -> t+1}`` with DDIM on both legs."""
    s = pred.schedule
    if spec.reverse_strength == 0.0:
        e_back = pred.eps(x, t, None)
    else:
        e_back = guided_eps(pred, GuidedNoiseSpec.mix(spec.condition, spec.reverse_strength), x, t)
    y = ddim_transfer(s, x, t, t + 1, e_back)
    e_fwd = guided_eps(pred, GuidedNoiseSpec.mix(spec.condition, spec.gamma), y, t + 1)
    return ddim_transfer(s, y, t + 1, t, e_fwd)


def _reflect_resample(pred, spec, x: np.ndarray, t: int, rng) -> np.ndarray:
    """``f^gamma_{t+1 -> t} o n_{t -> t+1}``; the noising leg is model-free."""
    s = pred.schedule
    a = s.alpha_at(t + 1)
    y = np.sqrt(a) * x + np.sqrt(1.0 - a) * rng.standard_normal(np.shape(x))
    e_fwd = guided_eps(pred, GuidedNoiseSpec.mix(spec.condition, spec.gamma), y, t + 1)
    return ddim_transfer(s, y, t + 1, t, e_fwd)


def foresight_leg(pred, spec: FixedPointOperatorSpec, x: Latent) -> Latent:
    """``f^u_{t-dt -> t} o f^gamma_{t -> t-dt}`` without the linear calibration."""
    down = solve_interval(pred, GuidedNoiseSpec.mix(spec.condition, spec.gamma), x, x.t - spec.dt, spec.solver)
    return solve_interval(pred, GuidedNoiseSpec.uncond(), down, x.t, spec.solver)


def apply_operator(spec: FixedPointOperatorSpec, pred: NoisePredictor, x: Latent, rng=None) -> Latent:
    """One application ``F(x_t)``; the result stays at timestep ``x.t``."""
    s = pred.schedule
    t = x.t
    if t < 1:
        raise GuidanceError("operators act on t >= 1")
    if spec.kind == "identity":
        return x
    if spec.kind == "linear_cfg":
        d_eps, _ = _delta_eps(pred, x.x, t, spec.condition)
        return x.with_x(x.x - spec.w * xi(s, t) * d_eps)
    if spec.kind == "linear_cfgpp":
        d_eps, _ = _delta_eps(pred, x.x, t, spec.condition)
        return x.with_x(x.x - spec.lam * xi_tilde(s, t) * d_eps)
    if spec.kind in ("zsampling", "resampling"):
        if t + 1 > s.T:
            raise GuidanceError(f"{spec.kind} at t={t} needs t+1 <= T={s.T}")
        if spec.kind == "zsampling":
            x_tilde = _reflect_z(pred, spec, x.x, t)
        else:
            if rng is None:
                raise GuidanceError("resampling needs a random generator")
            x_tilde = _reflect_resample(pred, spec, x.x, t, rng)
        d_eps, _ = _delta_eps(pred, x_tilde, t, spec.condition)
        return x.with_x(x_tilde - spec.w * xi(s, t) * d_eps)
    # foresight
    if t - spec.dt < 0:
        raise GuidanceError(f"foresight interval dt={spec.dt} exceeds t={t}")
    x_tilde = foresight_leg(pred, spec, x)
    if not spec.calibrate:
        return x_tilde
    d_eps, _ = _delta_eps(pred, x_tilde.x, t, spec.condition)
    return x.with_x(x_tilde.x - spec.lam * xi_tilde(s, t) * d_eps)


def iterate(spec: FixedPointOperatorSpec, pred: NoisePredictor, x: Latent, K: int, rng=None):
    """``K`` fixed-point applications; returns ``(x_hat, distances)``.

    ``distances[k-1] = ||x^(k) - x^(k-1)||`` (per trajectory for batched input).
    """
    if K < 1:
        raise GuidanceError("K must be >= 1")
    dists = []
    for _ in range(K):
        nxt = apply_operator(spec, pred, x, rng)
        dists.append(np.linalg.norm(nxt.x - x.x, axis=-1))
        x = nxt
    return x, dists


@dataclass(frozen=True)
class IterationSchedule:
    """Foresight iteration set ``{(t_i, K_i, dt_i)}`` plus the strengths it runs with."""

    entries: tuple
    T: int
    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        entries = tuple((int(t), int(k), int(dt)) for t, k, dt in self.entries)
        object.__setattr__(self, "entries", entries)
        ts = [e[0] for e in entries]
        if ts != sorted(ts, reverse=True) or len(set(ts)) != len(ts):
            raise GuidanceError("entries must have strictly descending t_i")
        for t, k, dt in entries:
            if not 1 <= t <= self.T:
                raise GuidanceError(f"entry t={t} outside 1..{self.T}")
            if k < 1:
                raise GuidanceError(f"entry at t={t} has K={k} < 1")
            if not 1 <= dt <= t:
                raise GuidanceError(f"entry at t={t} has dt={dt} outside 1..t")

    @property
    def M(self) -> int:
        return len(self.entries)

    def lookup(self) -> dict:
        return {t: (k, dt) for t, k, dt in self.entries}

    def total_iterations(self) -> int:
        return sum(k for _, k, _ in self.entries)

    def nfe(self, inner_steps: int = 1) -> int:
        legs = sum(k * (min(inner_steps, dt) + min(inner_steps, dt)) for _, k, dt in self.entries)
        return self.T + legs


def uniform_partition(T: int, N: int, M: int, lam: float = 0.0, gamma: float = 1.0) -> IterationSchedule:
    """``M`` equal intervals of width ``W = T/M`` with ``K = N/M`` iterations each."""
    if M < 1 or T % M or N % M:
        raise GuidanceError(f"M={M} must divide both T={T} and N={N}")
    W, K = T // M, N // M
    return IterationSchedule(tuple((i * W, K, W) for i in range(M, 0, -1)), T, lam, gamma)


@dataclass
class TrajectoryRecord:
    """Outcome of one guided sampling run.

    ``timesteps`` runs ``T..1``; ``gaps[i]`` is ``||eps^c - eps^u||^2`` at the
    calibrated point of step ``timesteps[i]`` and ``nfe_per_step[i]`` the
    evaluations that step charged.  ``nfe_denoise`` is the one evaluation per
    step every method pays; ``nfe_calibration`` the rest.
    """

    method: str
    seed: int | None
    x0: np.ndarray
    timesteps: np.ndarray
    gaps: np.ndarray
    nfe_per_step: np.ndarray
    nfe_total: int
    nfe_calibration: int
    nfe_denoise: int
    params: dict = field(default_factory=dict)
    latents: dict | None = None
    config_hash: str | None = None

    def late_gap(self, fraction: float = 1.0 / 3.0) -> np.ndarray:
        """Mean gap over ``t <= fraction * T``."""
        T = int(self.timesteps[0])
        mask = self.timesteps <= fraction * T
        return self.gaps[mask].mean(axis=0)

    def mean_gap(self) -> np.ndarray:
        return self.gaps.mean(axis=0)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "params": self.params,
            "nfe_total": int(self.nfe_total),
            "nfe_calibration": int(self.nfe_calibration),
            "nfe_denoise": int(self.nfe_denoise),
            "timesteps": [int(t) for t in self.timesteps],
            "nfe_per_step": [int(n) for n in self.nfe_per_step],
            "gaps": np.asarray(self.gaps).tolist(),
            "x0": np.asarray(self.x0).tolist(),
        }
        if self.latents is not None:
            out["latents"] = {k: np.asarray(v).tolist() for k, v in self.latents.items()}
        return out


def _step_rng(seed, stream: int, t: int, k: int = 0) -> np.random.Generator:
    """Independent generator per (stream, step, iteration) so runs are order-free."""
    return np.random.default_rng(np.random.SeedSequence(0 if seed is None else seed, spawn_key=(stream, t, k)))


_DDPM_STREAM = 1
_RESAMPLE_STREAM = 2


def _run(method, pred, x_T: Latent, condition, calibrate, sampler, seed, snapshots, params):
    """Shared outer loop: calibrate, record the gap, denoise with ``eps^u``."""
    s = pred.schedule
    if x_T.t != s.T:
        raise GuidanceError(f"x_T must sit at t=T={s.T}, got t={x_T.t}")
    if sampler not in ("ddim", "ddpm"):
        raise SamplerError(f"unknown sampler {sampler!r}")
    x = x_T.x
    start = pred.nfe
    steps = np.arange(s.T, 0, -1)
    gaps, nfe_steps = [], []
    xs, xhats = [], []
    for t in steps:
        t = int(t)
        before = pred.nfe
        x_hat, e_u = calibrate(x, t)
        if not np.all(np.isfinite(x_hat)):
            raise NumericalError(t, "calibrated latent")
        gaps.append(pred.gap(x_hat, t, condition))
        if snapshots:
            xs.append(x)
            xhats.append(x_hat)
        rng = _step_rng(seed, _DDPM_STREAM, t) if sampler == "ddpm" else None
        x = sampler_update(sampler, s, x_hat, t, e_u, rng)
        if not np.all(np.isfinite(x)):
            raise NumericalError(t)
        nfe_steps.append(pred.nfe - before)
    total = pred.nfe - start
    latents = None
    if snapshots:
        latents = {"x": np.stack(xs), "x_hat": np.stack(xhats)}
    return TrajectoryRecord(
        method=method,
        seed=seed,
        x0=x,
        timesteps=steps,
        gaps=np.stack(gaps),
        nfe_per_step=np.array(nfe_steps, dtype=int),
        nfe_total=total,
        nfe_calibration=total - s.T,
        nfe_denoise=s.T,
        params=params,
        latents=latents,
    )


def _linear_xk(pred, condition, strength_fn, K):
    def calibrate(x, t):
        strength = strength_fn(t)
        e_u = None
        for _ in range(K):
            d_eps, e_u = _delta_eps(pred, x, t, condition)
            x = x - strength * d_eps
        # e_u was evaluated at x^(K-1), as the denoise step requires
        return x, e_u

    return calibrate


def run_cfg_xk(pred, condition, w, K, x_T: Latent, seed=None, sampler="ddim", snapshots=False) -> TrajectoryRecord:
    """CFG x K: ``K`` linear updates with strength ``w xi_t`` per step."""
    if K < 1:
        raise GuidanceError("K must be >= 1")
    s = pred.schedule
    cal = _linear_xk(pred, condition, lambda t: w * xi(s, t), K)
    return _run("cfg", pred, x_T, condition, cal, sampler, seed, snapshots, {"w": w, "K": K})


def run_cfgpp_xk(pred, condition, lam, K, x_T: Latent, seed=None, sampler="ddim", snapshots=False) -> TrajectoryRecord:
    """CFG++ x K: ``K`` linear updates with strength ``lambda xi~_t`` per step."""
    if K < 1:
        raise GuidanceError("K must be >= 1")
    s = pred.schedule
    cal = _linear_xk(pred, condition, lambda t: lam * xi_tilde(s, t), K)
    return _run("cfgpp", pred, x_T, condition, cal, sampler, seed, snapshots, {"lambda": lam, "K": K})


def _check_active(active_steps, T):
    active = {int(t) for t in active_steps}
    bad = [t for t in active if not 1 <= t <= T - 1]
    if bad:
        raise GuidanceError(f"reflective steps must lie in 1..T-1, got {sorted(bad)}")
    return active


def run_zsampling(
    pred, condition, w, gamma, x_T: Latent, active_steps, seed=None, sampler="ddim",
    reverse_strength=0.0, snapshots=False,
) -> TrajectoryRecord:
    """Z-sampling: DDIM inversion then guided DDIM back, then CFG calibration."""
    s = pred.schedule
    active = _check_active(active_steps, s.T)
    spec = FixedPointOperatorSpec("zsampling", condition, w=w, gamma=gamma, reverse_strength=reverse_strength)

    def calibrate(x, t):
        if t in active:
            x = _reflect_z(pred, spec, x, t)
        d_eps, e_u = _delta_eps(pred, x, t, condition)
        return x - w * xi(s, t) * d_eps, e_u

    params = {"w": w, "gamma": gamma, "active_steps": sorted(active), "reverse_strength": reverse_strength}
    return _run("zsampling", pred, x_T, condition, calibrate, sampler, seed, snapshots, params)


def run_resampling(
    pred, condition, w, gamma, x_T: Latent, active_steps, seed=None, sampler="ddim",
    repeats=1, snapshots=False,
) -> TrajectoryRecord:
    """Resampling: re-noise with fresh Gaussian noise, guided DDIM back, CFG calibration."""
    s = pred.schedule
    active = _check_active(active_steps, s.T)
    if repeats < 1:
        raise GuidanceError("repeats must be >= 1")
    spec = FixedPointOperatorSpec("resampling", condition, w=w, gamma=gamma)

    def calibrate(x, t):
        if t in active:
            for k in range(repeats):
                x = _reflect_resample(pred, spec, x, t, _step_rng(seed, _RESAMPLE_STREAM, t, k))
        d_eps, e_u = _delta_eps(pred, x, t, condition)
        return x - w * xi(s, t) * d_eps, e_u

    params = {"w": w, "gamma": gamma, "active_steps": sorted(active), "repeats": repeats}
    return _run("resampling", pred, x_T, condition, calibrate, sampler, seed, snapshots, params)


def run_fsg(
    pred, condition, iteration_schedule: IterationSchedule, x_T: Latent, seed=None, sampler="ddim",
    solver: IntervalSolverConfig = IntervalSolverConfig(), snapshots=False,
) -> TrajectoryRecord:
    """Foresight guidance.

    At each scheduled ``(t, K, dt)`` the state is pushed ``K`` times through
    ``f^gamma_{t -> t-dt}`` and back with ``f^u_{t-dt -> t}``; every step then
    applies the CFG++ linear calibration and denoises with ``eps^u(x_t)``.
    """
    s = pred.schedule
    sched = iteration_schedule
    if sched.T != s.T:
        raise GuidanceError(f"iteration schedule built for T={sched.T}, schedule has T={s.T}")
    table = sched.lookup()
    lam = sched.lam

    def calibrate(x, t):
        if t in table:
            k_iter, dt = table[t]
            spec = FixedPointOperatorSpec(
                "foresight", condition, lam=lam, gamma=sched.gamma, dt=dt, calibrate=False, solver=solver
            )
            lat = Latent(x, t)
            for _ in range(k_iter):
                lat = foresight_leg(pred, spec, lat)
            x = lat.x
        d_eps, e_u = _delta_eps(pred, x, t, condition)
        return x - lam * xi_tilde(s, t) * d_eps, e_u

    params = {
        "lambda": lam,
        "gamma": sched.gamma,
        "entries": [list(e) for e in sched.entries],
        "inner_steps": solver.inner_steps,
    }
    return _run("fsg", pred, x_T, condition, calibrate, sampler, seed, snapshots, params)


def run_uniform_partition(pred, condition, sched: IterationSchedule, x_T: Latent, solver=IntervalSolverConfig()):
    """Interval procedure behind the allocation bound.

    At every scheduled ``t`` the backward-forward operator is applied ``K``
    times with no linear calibration; all other steps pass ``x_t`` through.
    Each step then denoises with ``f^u_{t -> t-1}``.
    """
    s = pred.schedule
    table = sched.lookup()

    def calibrate(x, t):
        if t in table:
            k_iter, dt = table[t]
            spec = FixedPointOperatorSpec("foresight", condition, gamma=sched.gamma, dt=dt, calibrate=False, solver=solver)
            lat = Latent(x, t)
            for _ in range(k_iter):
                lat = foresight_leg(pred, spec, lat)
            x = lat.x
        return x, pred.eps(x, t, None)

    params = {"gamma": sched.gamma, "entries": [list(e) for e in sched.entries]}
    return _run("uniform_partition", pred, x_T, condition, calibrate, "ddim", None, True, params)


def _stage_bounds(T: int):
    """Timesteps of the (early, mid, late) stages: (2T/3, T], (T/3, 2T/3], (0, T/3]."""
    cuts = [T, 2.0 * T / 3.0, T / 3.0, 0.0]
    stages = []
    for hi, lo in zip(cuts[:-1], cuts[1:]):
        stages.append([t for t in range(T, 0, -1) if lo < t <= hi])
    return stages


def plan_stage_allocation(T: int, total_nfe_budget: int, ratio=(3, 2, 1), fractions=STAGE_FRACTIONS,
                          lam: float = 1.0, gamma: float = 1.0) -> IterationSchedule:
    """Spread foresight iterations over the early/mid/late stages.

    Every iteration costs two NFE on top of the ``T`` baseline, so
    ``(budget - T) / 2`` iterations are split by ``ratio``: each stage gets the
    floor of its share and the late stage takes the remainder.  Interval
    lengths come from ``fractions * T`` clipped to ``[0.02 T, 0.125 T]``; within
    a stage iterations are placed on non-overlapping intervals, earliest
    timesteps first.
    """
    extra = total_nfe_budget - T
    if extra < 0 or extra % 2:
        raise GuidanceError(f"budget {total_nfe_budget} infeasible for T={T}: need budget >= T and budget - T even")
    ratio = np.asarray(ratio, dtype=float)
    if ratio.shape != (3,) or np.any(ratio < 0) or ratio.sum() <= 0:
        raise GuidanceError("ratio must be three nonnegative numbers with a positive sum")
    n_iter = extra // 2
    counts = np.floor(n_iter * ratio / ratio.sum()).astype(int)
    counts[2] += n_iter - counts.sum()
    if counts[2] > 0 and ratio[2] == 0:
        # a zero-weight late stage must not absorb iterations
        last = int(np.nonzero(ratio)[0][-1])
        counts[last] += counts[2]
        counts[2] = 0

    lo_dt = max(1, int(np.ceil(INTERVAL_BAND[0] * T)))
    hi_dt = max(lo_dt, int(np.floor(INTERVAL_BAND[1] * T)))
    entries = []
    for stage, n, frac in zip(_stage_bounds(T), counts, fractions):
        if n == 0:
            continue
        if not stage:
            raise GuidanceError(f"T={T} too small for three stages")
        dt = int(np.clip(round(frac * T), lo_dt, hi_dt))
        slots = int(min(n, max(1, len(stage) // dt)))
        idx = np.rint(np.linspace(0, len(stage) - 1, slots)).astype(int) if slots > 1 else [0]
        ks = np.full(slots, n // slots)
        ks[: n % slots] += 1
        for i, k in zip(idx, ks):
            t = stage[i]
            entries.append((t, int(k), min(dt, t)))
    entries.sort(key=lambda e: -e[0])
    return IterationSchedule(tuple(entries), T, lam, gamma)
