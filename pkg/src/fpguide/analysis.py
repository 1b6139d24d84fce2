"""Diagnostics and theory for guided sampling.

Covers the prediction-gap loss, Monte-Carlo contraction rates, empirical
smoothness constants, the interval-allocation bound ``g(beta, L, r)`` and its
minimizer, the per-interval iteration error bound, and the golden-path
match/mismatch experiment.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binomtest

from .guidance import (
    FixedPointOperatorSpec,
    TrajectoryRecord,
    apply_operator,
    run_uniform_partition,
    uniform_partition,
)
from .model import GMMPredictor, Latent, NoisePredictor, log_density, marginal_params
from .sampler import GuidedNoiseSpec, IntervalSolverConfig, ddim_step, solve_interval
from .schedule import NoiseSchedule, OdeCoefficients, ode_coefficients

DEGENERATE_TOL = 1e-12
MAX_RESAMPLE = 100


class AnalysisError(ValueError):
    pass


# --------------------------------------------------------------------------- gap


@dataclass(frozen=True)
class GapSeries:
    """Per-step squared gaps ``||eps^c(x_hat_t) - eps^u(x_hat_t)||^2``.

    ``values`` has shape ``(T,)`` or ``(T, n)`` for ``n`` trajectories, ordered
    ``t = T..1``.
    """

    timesteps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape[0] != len(self.timesteps):
            raise AnalysisError("one gap value per timestep is required")
        if np.any(v < 0):
            raise AnalysisError("gap values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def loss(self):
        """``(1/T) sum_t gap_t``, per trajectory."""
        return self.values.mean(axis=0)


def prediction_gap(pred: NoisePredictor, condition: str, record: TrajectoryRecord) -> GapSeries:
    """Recompute the gap series from the calibrated latents stored in ``record``."""
    if record.latents is None or "x_hat" not in record.latents:
        raise AnalysisError("record has no calibrated latent snapshots; rerun with snapshots=True")
    x_hat = np.asarray(record.latents["x_hat"])
    vals = [pred.gap(x_hat[i], int(t), condition) for i, t in enumerate(record.timesteps)]
    return GapSeries(np.asarray(record.timesteps), np.stack(vals))


# --------------------------------------------------------------- contraction


@dataclass(frozen=True)
class ContractionEstimate:
    rate: float
    stderr: float
    n_pairs: int
    t: int
    perturbation_scale: float


def contraction_rate(
    spec: FixedPointOperatorSpec,
    pred: NoisePredictor,
    x0_sampler,
    t: int,
    n_pairs: int,
    perturbation_scale: float,
    rng: np.random.Generator,
) -> ContractionEstimate:
    """Monte-Carlo ``E ||F(x) - F(x')||^2 / ||x - x'||^2`` over nearby pairs.

    Each pair mixes the same ``x0 = x0_sampler(rng, n)`` with two noises that
    differ by ``perturbation_scale`` times a Gaussian direction.  Stochastic
    operators see identical randomness on both members of a pair.
    """
    if n_pairs < 1:
        raise AnalysisError("n_pairs must be >= 1")
    if not perturbation_scale > 0:
        raise AnalysisError("perturbation_scale must be > 0")
    s = pred.schedule
    s.check_t(t, allow_zero=False)
    x0 = np.asarray(x0_sampler(rng, n_pairs), dtype=np.float64).reshape(n_pairs, -1)
    ab = s.abar(t)
    z = rng.standard_normal(x0.shape)
    dz = rng.standard_normal(x0.shape)
    # degenerate pairs get a fresh perturbation direction
    for _ in range(MAX_RESAMPLE):
        denom = (1.0 - ab) * perturbation_scale**2 * np.sum(dz**2, axis=-1)
        bad = np.sqrt(denom) < DEGENERATE_TOL
        if not bad.any():
            break
        dz[bad] = rng.standard_normal((int(bad.sum()), x0.shape[1]))
    else:
        raise AnalysisError(f"perturbation scale {perturbation_scale} gives degenerate pairs at t={t}")
    xa = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z
    xb = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * (z + perturbation_scale * dz)
    denom = np.sum((xa - xb) ** 2, axis=-1)
    op_seed = int(rng.integers(2**63))
    fa = apply_operator(spec, pred, Latent(xa, t), np.random.default_rng(op_seed)).x
    fb = apply_operator(spec, pred, Latent(xb, t), np.random.default_rng(op_seed)).x
    ratio = np.sum((fa - fb) ** 2, axis=-1) / denom
    se = float(ratio.std(ddof=1) / np.sqrt(n_pairs)) if n_pairs > 1 else 0.0
    return ContractionEstimate(float(ratio.mean()), se, n_pairs, int(t), float(perturbation_scale))


# ---------------------------------------------------------------- smoothness


def default_region(pred: NoisePredictor, t: int, width: float = 6.0):
    """Box ``[lo, hi]`` covering ``width`` standard deviations around every marginal mean at ``t``."""
    if not isinstance(pred, GMMPredictor):
        raise AnalysisError("a sample region is required for predictors without a mixture model")
    _, means, var = marginal_params(pred.model, pred.schedule, t)
    sd = np.sqrt(var)[:, None]
    return (means - width * sd).min(axis=0), (means + width * sd).max(axis=0)


def estimate_smoothness(
    pred: NoisePredictor,
    condition: str | None,
    sample_region,
    n_pairs: int,
    rng: np.random.Generator,
    timesteps=None,
    rel_step: float = 1e-4,
) -> float:
    """Largest observed ``||eps(x1, t) - eps(x2, t)|| / ||x1 - x2||``.

    Pairs are local: ``x1`` uniform in the region, ``x2 = x1 + h u`` with ``u``
    a random unit direction and ``h`` a ``rel_step`` fraction of the region
    width.  Both the conditional (if given) and unconditional predictions are
    probed; timesteps are drawn uniformly from ``timesteps`` (default ``1..T``).

    Args:
        sample_region: ``(lo, hi)`` arrays, or ``None`` for a 6-sigma box
            around the mixture marginals at each sampled timestep.
    """
    if n_pairs < 1:
        raise AnalysisError("n_pairs must be >= 1")
    s = pred.schedule
    ts = np.arange(1, s.T + 1) if timesteps is None else np.asarray(timesteps, dtype=int)
    draws = rng.choice(ts, size=n_pairs)
    conds = [None] if condition is None else [None, condition]
    best = 0.0
    for t in np.unique(draws):
        t = int(t)
        n = int(np.sum(draws == t))
        lo, hi = default_region(pred, t) if sample_region is None else map(np.asarray, sample_region)
        lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (pred.d,))
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (pred.d,))
        x1 = lo + (hi - lo) * rng.random((n, pred.d))
        u = rng.standard_normal((n, pred.d))
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
        for _ in range(MAX_RESAMPLE):
            bad = norms[:, 0] < DEGENERATE_TOL
            if not bad.any():
                break
            u[bad] = rng.standard_normal((int(bad.sum()), pred.d))
            norms = np.linalg.norm(u, axis=-1, keepdims=True)
        h = rel_step * float(np.max(hi - lo))
        x2 = x1 + h * u / norms
        dx = np.linalg.norm(x1 - x2, axis=-1)
        for c in conds:
            de = np.linalg.norm(pred.eps(x1, t, c, count=False) - pred.eps(x2, t, c, count=False), axis=-1)
            best = max(best, float(np.max(de / dx)))
    return best


# -------------------------------------------------------------------- bounds


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the interval-allocation bound.

    ``lambda_grid`` / ``mu_grid`` hold the ODE coefficients at ``t = 1..T``.
    ``C`` and ``c`` are the declared slack constants of the smooth-ODE
    assumption.
    """

    N: int
    T: int
    B: float
    L: float
    r: float
    lambda_grid: np.ndarray
    mu_grid: np.ndarray
    C: float = 2.0
    c: float = 0.5

    def __post_init__(self):
        if int(self.N) < 1 or int(self.T) < 1:
            raise AnalysisError("N and T must be positive integers")
        if not 0.0 < self.r < 1.0:
            raise AnalysisError(f"r={self.r} must lie in (0, 1)")
        if not 0.0 < self.c < 1.0:
            raise AnalysisError(f"c={self.c} must lie in (0, 1)")
        if not self.C > 1.0:
            raise AnalysisError(f"C={self.C} must exceed 1")
        if not (self.B > 0 and self.L > 0):
            raise AnalysisError("B and L must be positive")
        lam = np.asarray(self.lambda_grid, dtype=np.float64)
        mu = np.asarray(self.mu_grid, dtype=np.float64)
        if lam.shape != (self.T,) or mu.shape != (self.T,):
            raise AnalysisError(f"lambda_grid and mu_grid need length T={self.T}")
        object.__setattr__(self, "lambda_grid", lam)
        object.__setattr__(self, "mu_grid", mu)

    @classmethod
    def from_schedule(cls, s: NoiseSchedule, N, B, L, r, C=2.0, c=0.5) -> "BoundParams":
        ode = ode_coefficients(s)
        return cls(N, s.T, B, L, r, ode.lambda_t, ode.mu_t, C, c)

    @classmethod
    def constant(cls, N, T, B, L, r, lam=1.0, mu=0.1, C=2.0, c=0.5) -> "BoundParams":
        return cls(N, T, B, L, r, np.full(T, lam), np.full(T, mu), C, c)

    def replace(self, **kw) -> "BoundParams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return BoundParams(**d)


def feasible_betas(N: int, T: int) -> list:
    """``(beta, M, W, K)`` for every ``M`` dividing both ``N`` and ``T``, largest ``beta`` first."""
    out = []
    for M in range(1, min(N, T) + 1):
        if N % M == 0 and T % M == 0:
            out.append((1.0 / M, M, T // M, N // M))
    return out


def _resolve_beta(p: BoundParams, beta: float):
    if not 0.0 < beta <= 1.0:
        raise AnalysisError(f"beta={beta} must lie in (0, 1]")
    M = int(round(1.0 / beta))
    if abs(M * beta - 1.0) > 1e-9:
        raise AnalysisError(f"beta={beta} is not 1/M for an integer M")
    if p.N % M:
        raise AnalysisError(f"M={M} does not divide N={p.N}")
    if p.T % M:
        near = [b for b, *_ in feasible_betas(p.N, p.T)]
        raise AnalysisError(f"W = T/M = {p.T}/{M} is not integral; feasible betas: {near}")
    return M, p.T // M, p.N // M


def interval_slack(p: BoundParams, a: int, b: int, L: float | None = None) -> float:
    """``S_{a,b}(L) = (|lambda_a| L + |mu_a|) |b - a| + 1``."""
    L = p.L if L is None else L
    if not 1 <= a <= p.T or not 0 <= b <= p.T:
        raise AnalysisError(f"interval ({a}, {b}) outside the 0..{p.T} grid")
    return (abs(p.lambda_grid[a - 1]) * L + abs(p.mu_grid[a - 1])) * abs(b - a) + 1.0


def _c1(lambda_grid, mu_grid, T, L, C, c, W) -> float:
    if W < 1 or T % W:
        raise AnalysisError(f"W={W} must divide T={T}")
    total = 0.0
    for i in range(1, T // W + 1):
        lam = lambda_grid[i * W - 1]
        if lam == 0.0:
            raise AnalysisError(f"lambda vanishes at interval endpoint t={i * W}; the bound divides by it")
        S = (abs(lam) * L + abs(mu_grid[i * W - 1])) * W + 1.0
        total += S**2 * C**2 * (3 * W - 2) / (c**2 * lam**2 * W**2)
    return 16.0 * total / T


def c1_constant(p: BoundParams, W: int, L: float | None = None) -> float:
    """Leading constant ``16 sum_i S_i^2 C^2 (3W - 2) / (c^2 lambda_{iW}^2 W^2) / T``."""
    return _c1(p.lambda_grid, p.mu_grid, p.T, p.L if L is None else L, p.C, p.c, W)


def g_closed_form(c1: float, L: float, r: float, K: int, M: int) -> float:
    """``c1 r^{2K} + 2 L^2 / M^2``, i.e. ``g`` with ``K = beta N`` and ``beta = 1/M``.

    No domain checks: :func:`theorem_bound` is the validated entry point.
    """
    return c1 * r ** (2.0 * K) + 2.0 * L**2 / M**2


@dataclass(frozen=True)
class BoundValue:
    beta: float
    M: int
    W: int
    K: int
    c1: float
    g: float
    mean_bound: float  # B^2 g, bounds the per-step average gap
    sum_bound: float  # B^2 T g, bounds the summed gap


def theorem_bound(p: BoundParams, beta: float) -> BoundValue:
    """``g = C1 r^{2 beta N} + 2 L^2 beta^2`` at a feasible ``beta``."""
    M, W, K = _resolve_beta(p, beta)
    c1 = c1_constant(p, W)
    g = g_closed_form(c1, p.L, p.r, K, M)
    return BoundValue(1.0 / M, M, W, K, c1, g, p.B**2 * g, p.B**2 * p.T * g)


def relaxed_derivative(beta, c1: float, L: float, r: float, N: int):
    """``d/dbeta [c1 r^{2 beta N} + 2 L^2 beta^2]`` with ``c1`` held fixed."""
    beta = np.asarray(beta, dtype=np.float64)
    return 4.0 * L**2 * beta - c1 * 2.0 * N * np.log(1.0 / r) * r ** (2.0 * beta * N)


def relaxed_beta(c1: float, L: float, r: float, N: int, tol: float = 1e-13) -> float:
    """Root of :func:`relaxed_derivative` on ``(0, 1]``; 1 when the derivative stays negative.

    The derivative is strictly increasing, so bisection finds the unique root.
    """
    f = lambda b: float(relaxed_derivative(b, c1, L, r, N))  # noqa: E731
    if f(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class OptimalBeta:
    beta: float
    g: float
    grid: tuple
    relaxed_beta: float
    relaxed_c1: float


def optimal_beta(p: BoundParams) -> OptimalBeta:
    """Exact minimizer of :func:`theorem_bound` over the feasible grid.

    The continuous relaxation freezes ``C1`` at its ``W = 1`` value and solves
    the stationarity condition by bisection; it is reported for diagnostics.
    """
    grid = feasible_betas(p.N, p.T)
    if not grid:
        raise AnalysisError(f"no beta = 1/M with M dividing N={p.N} and T={p.T}")
    values = tuple(theorem_bound(p, b) for b, *_ in grid)
    best = min(values, key=lambda v: (v.g, -v.beta))
    c1_ref = c1_constant(p, 1)
    return OptimalBeta(best.beta, best.g, values, relaxed_beta(c1_ref, p.L, p.r, p.N), c1_ref)


def lemma1_bound(p: BoundParams, k: int, interval) -> float:
    """``4 C S_{a,b}(L) r^k B`` for ``interval = (a, b)``."""
    if k < 0:
        raise AnalysisError("k must be >= 0")
    a, b = (int(v) for v in interval)
    return 4.0 * p.C * interval_slack(p, a, b) * p.r**k * p.B


# --------------------------------------------------- uniform-partition check


@dataclass
class BoundCheckRow:
    beta: float
    M: int
    W: int
    K: int
    g_value: float
    measured_loss: float
    bound: float
    r_hat: float
    r_used: float

    @property
    def applicable(self) -> bool:
        """Whether the contraction premise ``r < 1`` is met on this partition."""
        return self.r_used < 1.0

    @property
    def holds(self) -> bool:
        return self.measured_loss <= self.bound


@dataclass
class BoundCheck:
    B_hat: float
    L_hat: float
    slack: float
    C: float
    c: float
    rows: list = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(r.holds for r in self.rows)

    @property
    def all_applicable(self) -> bool:
        return all(r.applicable for r in self.rows)


def uniform_partition_loss(pred, condition, N, M, x_T: Latent, gamma=1.0, solver=IntervalSolverConfig()):
    """Run the uniform-partition procedure; returns ``(mean loss, record)``."""
    sched = uniform_partition(pred.schedule.T, N, M, gamma=gamma)
    rec = run_uniform_partition(pred, condition, sched, x_T, solver)
    return float(np.mean(rec.gaps.mean(axis=0))), rec


def interval_contraction(pred, condition, a, b, gamma, n_pairs, scale, rng, x0_sampler):
    spec = FixedPointOperatorSpec("foresight", condition, gamma=gamma, dt=a - b, calibrate=False)
    return contraction_rate(spec, pred, x0_sampler, a, n_pairs, scale, rng)


def theorem_check(
    pred: GMMPredictor,
    condition: str,
    N: int,
    n_trajectories: int,
    rng: np.random.Generator,
    C: float = 2.0,
    c: float = 0.5,
    slack: float = 0.1,
    gamma: float = 1.0,
    n_pairs: int = 200,
    perturbation_scale: float = 1e-2,
    n_smooth: int = 20000,
    b_quantile: float = 0.9999,
) -> BoundCheck:
    """Compare the measured uniform-partition loss with ``B^2 g`` on every feasible ``beta``.

    ``B`` is the ``b_quantile`` norm over all calibrated latents and their
    noise predictions, ``L`` the empirical smoothness and, per ``beta``, ``r``
    is the square root of the largest mean squared contraction ratio over its
    intervals plus ``slack``.  Rows whose ``r`` is not below 1 violate the
    contraction premise and are flagged through ``applicable``.
    """
    s = pred.schedule
    T = s.T
    x_T = Latent(rng.standard_normal((n_trajectories, pred.d)), T)
    L_hat = estimate_smoothness(pred, condition, None, n_smooth, rng)
    x0_sampler = lambda g, n: g.standard_normal((n, pred.d))  # noqa: E731
    runs = []
    norms = []
    for beta, M, W, K in feasible_betas(N, T):
        loss, rec = uniform_partition_loss(pred, condition, N, M, x_T, gamma)
        x_hat = rec.latents["x_hat"]
        norms.append(np.linalg.norm(x_hat, axis=-1).ravel())
        for i, t in enumerate(rec.timesteps):
            for cond in (condition, None):
                norms.append(np.linalg.norm(pred.eps(x_hat[i], int(t), cond, count=False), axis=-1))
        r_hat = max(
            interval_contraction(
                pred, condition, i * W, (i - 1) * W, gamma, n_pairs, perturbation_scale, rng, x0_sampler
            ).rate
            for i in range(1, M + 1)
        )
        runs.append((beta, M, W, K, loss, r_hat))
    B_hat = float(np.quantile(np.concatenate(norms), b_quantile))
    out = BoundCheck(B_hat, L_hat, slack, C, c)
    ode = ode_coefficients(s)
    for beta, M, W, K, loss, r_hat in runs:
        r_used = float(np.sqrt(r_hat) + slack)
        # evaluated even when r_used >= 1; the row then reports applicable=False
        c1 = _c1(ode.lambda_t, ode.mu_t, T, L_hat, C, c, W)
        g = g_closed_form(c1, L_hat, r_used, K, M)
        out.rows.append(BoundCheckRow(beta, M, W, K, g, loss, B_hat**2 * g, r_hat, r_used))
    return out


# ----------------------------------------------------------------- golden path


@dataclass
class GoldenReport:
    t_star: int
    w: float
    n_trials: int
    match_loglik: np.ndarray
    mismatch_loglik: np.ndarray
    match_gap: np.ndarray
    mismatch_gap: np.ndarray

    @property
    def mean_difference(self) -> float:
        return float(np.mean(self.match_loglik - self.mismatch_loglik))

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.match_loglik > self.mismatch_loglik))

    @property
    def sign_test_p(self) -> float:
        """One-sided sign test that match beats mismatch; ties are dropped."""
        d = self.match_loglik - self.mismatch_loglik
        n = int(np.sum(d != 0))
        if n == 0:
            return 1.0
        return float(binomtest(self.n_positive, n, 0.5, alternative="greater").pvalue)

    def summary(self) -> dict:
        return {
            "t_star": self.t_star,
            "w": self.w,
            "n_trials": self.n_trials,
            "match_mean_loglik": float(np.mean(self.match_loglik)),
            "mismatch_mean_loglik": float(np.mean(self.mismatch_loglik)),
            "mean_difference": self.mean_difference,
            "n_positive": self.n_positive,
            "sign_test_p": self.sign_test_p,
            "match_mean_gap": float(np.mean(self.match_gap)),
            "mismatch_mean_gap": float(np.mean(self.mismatch_gap)),
        }


def _guided_descent(pred, condition, w, x: Latent):
    """CFG DDIM from ``x.t`` to 0; returns the sample and the mean gap along the way."""
    spec = GuidedNoiseSpec.cfg(condition, w)
    gaps = []
    while x.t > 0:
        gaps.append(pred.gap(x.x, x.t, condition))
        x = ddim_step(pred, spec, x, x.t - 1)
    return x.x, np.mean(gaps, axis=0)


def golden_path_experiment(
    pred: GMMPredictor,
    conditions,
    t_star: int,
    w: float,
    n_trials: int,
    rng: np.random.Generator,
) -> GoldenReport:
    """Match vs mismatch generation from inverted latents.

    A sample ``x^c`` is generated with CFG (strength ``w``) under ``c`` from
    fresh noise, then mapped to ``t_star`` by unconditional DDIM inversion.
    From that latent the match case denoises under ``c`` and the mismatch case
    under ``c'``; each final sample is scored by the exact log-likelihood under
    the condition it was generated with.
    """
    c, c_mis = conditions
    m = pred.model
    if np.allclose(m.weights_for(c), m.weights_for(c_mis)):
        raise AnalysisError(f"conditions {c!r} and {c_mis!r} have identical reweightings")
    s = pred.schedule
    s.check_t(t_star, allow_zero=False)
    if n_trials < 1:
        raise AnalysisError("n_trials must be >= 1")
    x_T = Latent(rng.standard_normal((n_trials, pred.d)), s.T)
    x_c, _ = _guided_descent(pred, c, w, x_T)
    x_t = solve_interval(pred, GuidedNoiseSpec.uncond(), Latent(x_c, 0), t_star, IntervalSolverConfig(t_star))
    out_match, gap_match = _guided_descent(pred, c, w, x_t)
    out_mis, gap_mis = _guided_descent(pred, c_mis, w, x_t)
    return GoldenReport(
        t_star,
        float(w),
        n_trials,
        log_density(m, s, out_match, 0, c),
        log_density(m, s, out_mis, 0, c_mis),
        gap_match,
        gap_mis,
    )


# ------------------------------------------------------------------- writers


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    return obj


def report_json(payload: dict) -> str:
    """Deterministic JSON: sorted keys, floats at full precision."""
    return json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n"


def bound_grid_csv(check: BoundCheck | None, values=None, minimizer=None, header_comment=None) -> str:
    """CSV with columns ``beta, M, W, K, g_value, measured_loss`` plus a minimizer flag.

    Either a :class:`BoundCheck` (measured losses filled in) or a list of
    :class:`BoundValue` (measured loss left empty).
    """
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "M", "W", "K", "g_value", "measured_loss", "is_minimizer"])
    rows = []
    if check is not None:
        rows = [(r.beta, r.M, r.W, r.K, r.g_value, r.measured_loss) for r in check.rows]
    else:
        rows = [(v.beta, v.M, v.W, v.K, v.g, None) for v in values]
    best = minimizer if minimizer is not None else min(rows, key=lambda r: (r[4], -r[0]))[1]
    for beta, M, W, K, g, loss in rows:
        w.writerow(
            [f"{beta:.17g}", M, W, K, f"{g:.17g}", "" if loss is None else f"{loss:.17g}", int(M == best)]
        )
    return buf.getvalue()


def bound_check_dict(check: BoundCheck) -> dict:
    return {
        "B_hat": check.B_hat,
        "L_hat": check.L_hat,
        "slack": check.slack,
        "C": check.C,
        "c": check.c,
        "all_hold": check.all_hold,
        "all_applicable": check.all_applicable,
        "rows": [dict(asdict(r), holds=r.holds, applicable=r.applicable) for r in check.rows],
    }


__all__ = [
    "AnalysisError",
    "BoundCheck",
    "BoundCheckRow",
    "BoundParams",
    "BoundValue",
    "ContractionEstimate",
    "GapSeries",
    "GoldenReport",
    "OdeCoefficients",
    "OptimalBeta",
    "bound_check_dict",
    "bound_grid_csv",
    "c1_constant",
    "contraction_rate",
    "estimate_smoothness",
    "feasible_betas",
    "g_closed_form",
    "golden_path_experiment",
    "interval_slack",
    "lemma1_bound",
    "optimal_beta",
    "prediction_gap",
    "relaxed_beta",
    "relaxed_derivative",
    "report_json",
    "theorem_bound",
    "theorem_check",
    "uniform_partition_loss",
]
