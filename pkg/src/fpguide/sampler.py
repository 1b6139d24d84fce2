"""Reverse samplers, DDIM inversion and interval solvers.

All updates work on the integer timestep grid of a :class:`NoiseSchedule`.
The noise a step uses is selected by a :class:`GuidedNoiseSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Latent, NoisePredictor
from .schedule import NoiseSchedule

MODES = ("unconditional", "conditional", "cfg", "mix")


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class GuidedNoiseSpec:
    """Which noise prediction a step uses.

    ``cfg`` and ``mix`` both evaluate ``eps^u + s (eps^c - eps^u)``; they differ
    only in the name of the strength (``w`` for guidance, ``gamma`` for the
    forward leg of a reflective operator).
    """

    mode: str = "unconditional"
    condition: str | None = None
    strength: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise SamplerError(f"unknown noise mode {self.mode!r}")
        if self.mode != "unconditional" and self.condition is None:
            raise SamplerError(f"mode {self.mode!r} needs a condition label")
        if self.mode in ("cfg", "mix"):
            if self.strength is None or self.strength < 0:
                raise SamplerError(f"mode {self.mode!r} needs a strength >= 0")

    @classmethod
    def uncond(cls) -> "GuidedNoiseSpec":
        return cls("unconditional")

    @classmethod
    def cond(cls, condition: str) -> "GuidedNoiseSpec":
        return cls("conditional", condition)

    @classmethod
    def cfg(cls, condition: str, w: float) -> "GuidedNoiseSpec":
        return cls("cfg", condition, float(w))

    @classmethod
    def mix(cls, condition: str, gamma: float) -> "GuidedNoiseSpec":
        return cls("mix", condition, float(gamma))


@dataclass(frozen=True)
class IntervalSolverConfig:
    inner_steps: int = 1

    def __post_init__(self):
        if int(self.inner_steps) < 1:
            raise SamplerError("inner_steps must be >= 1")


def guided_eps(pred: NoisePredictor, spec: GuidedNoiseSpec, x: np.ndarray, t: int) -> np.ndarray:
    """Noise prediction at ``(x, t)`` under ``spec``; one NFE."""
    if spec.mode == "unconditional":
        return pred.eps(x, t, None)
    if spec.mode == "conditional":
        return pred.eps(x, t, spec.condition)
    e_c, e_u = pred.eps_pair(x, t, spec.condition)
    return e_u + spec.strength * (e_c - e_u)


def ddim_transfer(s: NoiseSchedule, x: np.ndarray, t_from: int, t_to: int, eps: np.ndarray) -> np.ndarray:
    """Move ``x`` from ``t_from`` to ``t_to`` along the DDIM update with a fixed noise.

    ``phi = (x - sqrt(1 - abar_from) eps) / sqrt(abar_from)`` and the result is
    ``sqrt(abar_to) phi + sqrt(1 - abar_to) eps``.  Works in both directions.
    """
    ab_f = s.abar(t_from)
    ab_t = s.abar(t_to)
    phi = (x - np.sqrt(1.0 - ab_f) * eps) / np.sqrt(ab_f)
    return np.sqrt(ab_t) * phi + np.sqrt(1.0 - ab_t) * eps


def ddim_step(pred: NoisePredictor, spec: GuidedNoiseSpec, x: Latent, t_next: int) -> Latent:
    """Deterministic DDIM denoising from ``x.t`` down to ``t_next``."""
    s = pred.schedule
    s.check_t(t_next)
    if t_next >= x.t:
        raise SamplerError(f"ddim_step needs t_next < t, got {t_next} >= {x.t}")
    e = guided_eps(pred, spec, x.x, x.t)
    return Latent(ddim_transfer(s, x.x, x.t, t_next, e), t_next)


def ddim_invert_step(pred: NoisePredictor, spec: GuidedNoiseSpec, x: Latent, t_next: int) -> Latent:
    """DDIM inversion from ``x.t`` up to ``t_next`` using the noise at the current point.

    Starting from ``t = 0`` the predictor is queried at ``t = 1``, the first
    grid point where it is defined; ``phi`` is independent of the noise there
    because ``abar_0 = 1``.
    """
    s = pred.schedule
    s.check_t(t_next)
    if t_next <= x.t:
        raise SamplerError(f"ddim_invert_step needs t_next > t, got {t_next} <= {x.t}")
    e = guided_eps(pred, spec, x.x, max(x.t, 1))
    return Latent(ddim_transfer(s, x.x, x.t, t_next, e), t_next)


def interval_grid(t_start: int, t_target: int, inner_steps: int) -> list[int]:
    """Sub-step boundaries from ``t_start`` to ``t_target``, both included.

    Uses ``min(inner_steps, |t_target - t_start|)`` sub-steps whose lengths
    differ by at most one grid unit.
    """
    n = min(int(inner_steps), abs(t_target - t_start))
    pts = np.rint(np.linspace(t_start, t_target, n + 1)).astype(int)
    return [int(p) for p in pts]


def solve_interval(
    pred: NoisePredictor,
    spec: GuidedNoiseSpec,
    x: Latent,
    t_target: int,
    cfg: IntervalSolverConfig = IntervalSolverConfig(),
) -> Latent:
    """Chain DDIM (or inversion) sub-steps from ``x.t`` to ``t_target``."""
    s = pred.schedule
    if not 0 <= t_target <= s.T:
        raise SamplerError(f"t_target {t_target} outside 0..{s.T}")
    if t_target == x.t:
        raise SamplerError("solve_interval needs t_target != x.t")
    step = ddim_step if t_target < x.t else ddim_invert_step
    grid = interval_grid(x.t, t_target, cfg.inner_steps)
    for t_next in grid[1:]:
        x = step(pred, spec, x, t_next)
    return x


def ddpm_posterior(s: NoiseSchedule, x: np.ndarray, t: int, eps: np.ndarray):
    """Mean and standard deviation of the ancestral step ``t -> t-1``."""
    a = s.alpha_at(t)
    ab = s.abar(t)
    ab_prev = s.abar(t - 1)
    mean = (x - (1.0 - a) / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)
    var = 0.0 if t == 1 else (1.0 - a) * (1.0 - ab_prev) / (1.0 - ab)
    return mean, np.sqrt(var)


def ddpm_step(pred: NoisePredictor, spec: GuidedNoiseSpec, x: Latent, rng: np.random.Generator) -> Latent:
    """Ancestral DDPM step ``t -> t-1``; the final step adds no noise."""
    if x.t < 1:
        raise SamplerError("ddpm_step needs t >= 1")
    e = guided_eps(pred, spec, x.x, x.t)
    return Latent(_ddpm_update(pred.schedule, x.x, x.t, e, rng), x.t - 1)


def _ddpm_update(s, x, t, eps, rng):
    mean, std = ddpm_posterior(s, x, t, eps)
    if std == 0.0:
        return mean
    return mean + std * rng.standard_normal(np.shape(x))


def sampler_update(kind: str, s: NoiseSchedule, x_hat: np.ndarray, t: int, eps: np.ndarray, rng=None) -> np.ndarray:
    """``Sampler(x_hat, eps)``: one reverse step ``t -> t-1`` with a supplied noise."""
    if kind == "ddim":
        return ddim_transfer(s, x_hat, t, t - 1, eps)
    if kind == "ddpm":
        if rng is None:
            raise SamplerError("the ddpm sampler needs a random generator")
        return _ddpm_update(s, x_hat, t, eps, rng)
    raise SamplerError(f"unknown sampler {kind!r}")


def unconditional_update(s: NoiseSchedule, x_hat: np.ndarray, t: int, eps_u: np.ndarray) -> np.ndarray:
    """DDIM step written with the noise isolated from the state.

    ``x_{t-1} = sqrt(abar_{t-1}/abar_t) x_hat
    + (sqrt(1 - abar_{t-1}) - sqrt(1 - abar_t)/sqrt(alpha_t)) eps_u``.
    """
    ab = s.abar(t)
    ab_prev = s.abar(t - 1)
    coef = np.sqrt(1.0 - ab_prev) - np.sqrt(1.0 - ab) / np.sqrt(s.alpha_at(t))
    return np.sqrt(ab_prev / ab) * x_hat + coef * eps_u


def cfgpp_denoise_step(pred: NoisePredictor, condition: str, lam: float, x: Latent) -> Latent:
    """CFG++ step: guided noise inside the clean estimate, unconditional noise outside."""
    if x.t < 1:
        raise SamplerError("cfgpp_denoise_step needs t >= 1")
    if lam < 0:
        raise SamplerError("lambda must be >= 0")
    s = pred.schedule
    e_c, e_u = pred.eps_pair(x.x, x.t, condition)
    e_lam = e_u + lam * (e_c - e_u)
    ab = s.abar(x.t)
    ab_prev = s.abar(x.t - 1)
    phi = (x.x - np.sqrt(1.0 - ab) * e_lam) / np.sqrt(ab)
    return Latent(np.sqrt(ab_prev) * phi + np.sqrt(1.0 - ab_prev) * e_u, x.t - 1)
