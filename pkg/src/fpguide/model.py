"""Gaussian-mixture data with exact conditional and unconditional noise predictors.

A condition is a reweighting of the mixture components, so ``eps^c - eps^u``
is available in closed form.  Every function accepts latents with arbitrary
leading batch axes; the last axis is the data dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule

WEIGHT_TOL = 1e-12
# responsibilities more than this many nats below the largest are dropped
LOG_CUTOFF = 700.0


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Latent:
    """A state ``x_t``: array of shape ``(d,)`` or ``(n, d)`` tagged with its timestep."""

    x: np.ndarray
    t: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 0:
            x = x.reshape(1)
        object.__setattr__(self, "x", x)
        if self.t < 0:
            raise ModelError(f"negative timestep {self.t}")

    @property
    def d(self) -> int:
        return int(self.x.shape[-1])

    def with_x(self, x) -> "Latent":
        return Latent(x, self.t)


@dataclass(frozen=True)
class ConditionalGMM:
    """Isotropic Gaussian mixture with named component reweightings.

    Args:
        weights: unconditional component weights, shape ``(K,)``.
        means: component means, shape ``(K, d)``.
        variances: per-component isotropic variances, shape ``(K,)``.
        conditions: label -> conditional weight vector of shape ``(K,)``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    conditions: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        var = np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        if mu.ndim != 2 or mu.shape[0] != w.size or var.size != w.size:
            raise ModelError("weights, means and variances disagree on the component count")
        if mu.shape[1] < 1:
            raise ModelError("dimension must be >= 1")
        if np.any(var <= 0.0) or not np.all(np.isfinite(var)):
            raise ModelError("all component variances must be > 0")
        _check_weights(w, "unconditional weights")
        conds = {}
        for label, cw in dict(self.conditions).items():
            cw = np.atleast_1d(np.asarray(cw, dtype=np.float64))
            if cw.size != w.size:
                raise ModelError(f"condition {label!r} has {cw.size} weights, expected {w.size}")
            _check_weights(cw, f"condition {label!r}")
            cw.setflags(write=False)
            conds[str(label)] = cw
        for arr in (w, mu, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "conditions", conds)

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    def weights_for(self, condition: str | None) -> np.ndarray:
        if condition is None:
            return self.weights
        try:
            return self.conditions[condition]
        except KeyError:
            raise ModelError(f"unknown condition {condition!r}") from None

    def with_condition(self, label: str, weights) -> "ConditionalGMM":
        conds = dict(self.conditions)
        conds[label] = weights
        return ConditionalGMM(self.weights, self.means, self.variances, conds)


def _check_weights(w: np.ndarray, what: str) -> None:
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ModelError(f"{what} must be nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ModelError(f"{what} sum to {w.sum():.15g}, not 1")


def marginal_params(m: ConditionalGMM, s: NoiseSchedule, t: int, condition: str | None = None):
    """Exact mixture parameters of ``p_t(x_t | condition)``.

    Returns ``(weights, means, variances)`` arrays; component ``i`` has mean
    ``sqrt(abar_t) mu_i`` and variance ``abar_t sigma_i^2 + 1 - abar_t``.
    """
    ab = s.abar(t)
    w = m.weights_for(condition)
    return w.copy(), np.sqrt(ab) * m.means, ab * m.variances + (1.0 - ab)


def _log_resp(m: ConditionalGMM, s: NoiseSchedule, x: np.ndarray, t: int, condition):
    """Component log-densities and normalized log-responsibilities at ``x``."""
    w, means, var = marginal_params(m, s, t, condition)
    diff = x[..., None, :] - means  # (..., K, d)
    sq = np.einsum("...kd,...kd->...k", diff, diff)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    log_comp = logw - 0.5 * m.d * np.log(2.0 * np.pi * var) - 0.5 * sq / var
    log_norm = logsumexp(log_comp, axis=-1, keepdims=True)
    log_r = log_comp - log_norm
    return log_r, log_norm[..., 0], diff, var


def responsibilities(m, s, x, t, condition=None) -> np.ndarray:
    log_r, _, _, _ = _log_resp(m, s, np.asarray(x, dtype=np.float64), t, condition)
    r = np.exp(log_r)
    r[log_r < -LOG_CUTOFF] = 0.0
    return r


def log_density(m: ConditionalGMM, s: NoiseSchedule, x, t: int, condition=None) -> np.ndarray:
    """``log p_t(x | condition)``; ``t = 0`` gives the data log-likelihood."""
    _, log_norm, _, _ = _log_resp(m, s, np.asarray(x, dtype=np.float64), t, condition)
    return log_norm


def score(m: ConditionalGMM, s: NoiseSchedule, x, t: int, condition=None) -> np.ndarray:
    """``grad_x log p_t(x | condition)``."""
    x = np.asarray(x, dtype=np.float64)
    log_r, _, diff, var = _log_resp(m, s, x, t, condition)
    r = np.exp(log_r)
    r[log_r < -LOG_CUTOFF] = 0.0
    return -np.einsum("...k,...kd->...d", r / var, diff)


def eps_array(m: ConditionalGMM, s: NoiseSchedule, x, t: int, condition=None) -> np.ndarray:
    if not 1 <= t <= s.T:
        raise ModelError(f"noise prediction needs 1 <= t <= {s.T}, got t={t}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.d:
        raise ModelError(f"latent dimension {x.shape[-1]} != model dimension {m.d}")
    return -np.sqrt(1.0 - s.abar(t)) * score(m, s, x, t, condition)


def eps(m: ConditionalGMM, s: NoiseSchedule, x: Latent, condition: str | None = None) -> np.ndarray:
    """Exact MMSE noise prediction ``-sqrt(1 - abar_t) grad log p_t(x_t | condition)``."""
    return eps_array(m, s, x.x, x.t, condition)


def posterior_mean(m, s, x, t, condition=None) -> np.ndarray:
    """``E[x_0 | x_t]`` through the noise prediction (the DDIM ``phi``)."""
    ab = s.abar(t)
    return (np.asarray(x) - np.sqrt(1.0 - ab) * eps_array(m, s, x, t, condition)) / np.sqrt(ab)


class NoisePredictor:
    """Deterministic noise predictor with an NFE counter.

    A paired conditional/unconditional evaluation at one point costs one NFE,
    as does a lone unconditional evaluation.  Batched inputs count once: a
    batch is a set of trajectories advancing in lockstep.  Subclasses
    implement :meth:`_eps`.
    """

    def __init__(self, schedule: NoiseSchedule, d: int):
        self.schedule = schedule
        self.d = d
        self.nfe = 0

    def _eps(self, x: np.ndarray, t: int, condition: str | None) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> None:
        self.nfe = 0

    def eps(self, x, t: int, condition: str | None = None, count: bool = True) -> np.ndarray:
        if not 1 <= t <= self.schedule.T:
            raise ModelError(f"noise prediction needs 1 <= t <= {self.schedule.T}, got t={t}")
        if count:
            self.nfe += 1
        return self._eps(np.asarray(x, dtype=np.float64), t, condition)

    def eps_pair(self, x, t: int, condition: str, count: bool = True):
        """``(eps^c, eps^u)`` at ``x``, charged as a single evaluation."""
        e_c = self.eps(x, t, condition, count=count)
        e_u = self.eps(x, t, None, count=False)
        return e_c, e_u

    def gap(self, x, t: int, condition: str) -> np.ndarray:
        """Squared prediction gap ``||eps^c - eps^u||^2``; diagnostic, never counted."""
        e_c, e_u = self.eps_pair(x, t, condition, count=False)
        diff = e_c - e_u
        return np.einsum("...d,...d->...", diff, diff)


class GMMPredictor(NoisePredictor):
    """Exact predictor for a :class:`ConditionalGMM`."""

    def __init__(self, model: ConditionalGMM, schedule: NoiseSchedule):
        super().__init__(schedule, model.d)
        self.model = model

    def _eps(self, x, t, condition):
        return eps_array(self.model, self.schedule, x, t, condition)


class CallablePredictor(NoisePredictor):
    """Predictor backed by ``fn(x, t, condition)``; used for stubs and custom models."""

    def __init__(self, fn, schedule: NoiseSchedule, d: int):
        super().__init__(schedule, d)
        self.fn = fn

    def _eps(self, x, t, condition):
        return np.broadcast_to(np.asarray(self.fn(x, t, condition), dtype=np.float64), x.shape).copy()


def forward_noise(s: NoiseSchedule, x: Latent, rng: np.random.Generator) -> Latent:
    """One forward corruption step ``x_{t+1} = sqrt(alpha_{t+1}) x_t + sqrt(1 - alpha_{t+1}) z``."""
    if x.t >= s.T:
        raise ModelError(f"cannot noise past T={s.T}")
    a = s.alpha_at(x.t + 1)
    z = rng.standard_normal(x.x.shape)
    return Latent(np.sqrt(a) * x.x + np.sqrt(1.0 - a) * z, x.t + 1)


def sample_x0(m: ConditionalGMM, condition: str | None, rng: np.random.Generator, n: int | None = None) -> Latent:
    """Draw from the (conditional) data mixture; ``n=None`` gives a single ``(d,)`` draw."""
    w = m.weights_for(condition)
    size = 1 if n is None else n
    z = rng.standard_normal((size, m.d))
    comp = rng.choice(m.n_components, size=size, p=w)
    x = m.means[comp] + np.sqrt(m.variances[comp])[:, None] * z
    return Latent(x[0] if n is None else x, 0)


def sample_xT(d: int, T: int, rng: np.random.Generator, n: int | None = None) -> Latent:
    shape = (d,) if n is None else (n, d)
    return Latent(rng.standard_normal(shape), T)
