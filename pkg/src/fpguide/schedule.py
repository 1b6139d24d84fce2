"""Discrete noise schedules and the coefficients derived from them.

Timesteps are integers ``0..T``.  ``alpha_bar(0)`` is 1 by convention so the
final DDIM update onto ``t = 0`` is well defined.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

INVARIANT_TOL = 1e-12


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class OdeCoefficients:
    """Coefficients of the probability-flow ODE ``dx/dt = mu_t x + lambda_t eps``.

    Both arrays have length ``T``; entry ``i`` belongs to timestep ``i + 1``.
    """

    lambda_t: np.ndarray
    mu_t: np.ndarray

    def lam(self, t: int) -> float:
        return float(self.lambda_t[t - 1])

    def mu(self, t: int) -> float:
        return float(self.mu_t[t - 1])


@dataclass(frozen=True)
class NoiseSchedule:
    """A discrete VP noise schedule ``alpha_1..alpha_T``.

    Attributes:
        alpha: per-step retention factors, shape ``(T,)``.
        alpha_bar_full: cumulative products with the ``t = 0`` entry, shape
            ``(T + 1,)``; ``alpha_bar_full[0] == 1``.
    """

    alpha: np.ndarray
    alpha_bar_full: np.ndarray = field(repr=False)

    def __init__(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.ndim != 1 or alpha.size < 2:
            raise ScheduleError("a schedule needs at least T = 2 steps")
        if not np.all((alpha > 0.0) & (alpha < 1.0)):
            raise ScheduleError("every alpha_t must lie strictly inside (0, 1)")
        alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
        if not np.all(np.isfinite(alpha_bar)) or alpha_bar[-1] <= 0.0:
            raise ScheduleError("alpha_bar underflows to zero")
        alpha.setflags(write=False)
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar_full", alpha_bar)
        ode = ode_coefficients_from_alpha_bar(alpha_bar[1:])
        if not (np.all(np.isfinite(ode.lambda_t)) and np.all(np.isfinite(ode.mu_t))):
            raise ScheduleError("ODE coefficients overflow for this schedule")

    @classmethod
    def from_alpha_bar(cls, alpha_bar) -> "NoiseSchedule":
        """Build a schedule from a strictly decreasing ``alpha_bar_1..alpha_bar_T``."""
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        return cls(alpha_bar / prev)

    @property
    def T(self) -> int:
        return int(self.alpha.size)

    @property
    def alpha_bar(self) -> np.ndarray:
        """``alpha_bar_1..alpha_bar_T``."""
        return self.alpha_bar_full[1:]

    def check_t(self, t: int, allow_zero: bool = True) -> int:
        lo = 0 if allow_zero else 1
        if not isinstance(t, (int, np.integer)) or not lo <= t <= self.T:
            raise ScheduleError(f"timestep {t!r} outside {lo}..{self.T}")
        return int(t)

    def abar(self, t: int) -> float:
        return float(self.alpha_bar_full[self.check_t(t)])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self.check_t(t, allow_zero=False) - 1])

    def normalized(self, t: int) -> float:
        """Timestep on the unit interval, as used in reporting."""
        return self.check_t(t) / self.T


def build_linear_beta_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """DDPM schedule with ``beta`` linearly spaced and ``alpha_t = 1 - beta_t``."""
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ScheduleError(f"T must be an integer >= 2, got {T!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule(1.0 - betas)


def scaled_linear_schedule(T: int) -> NoiseSchedule:
    """Linear-beta schedule whose endpoints are the 1000-step DDPM values scaled by 1000/T.

    Keeps ``alpha_bar_T`` near zero for short grids (T = 50 gives ~6e-5).
    """
    scale = 1000.0 / T
    return build_linear_beta_schedule(T, 1e-4 * scale, min(0.02 * scale, 0.999))


def xi(s: NoiseSchedule, t: int) -> float:
    """CFG calibration strength ``sqrt(1 - abar_t) - sqrt(alpha_t - abar_t)``."""
    a_t = s.alpha_at(t)
    ab = s.abar(t)
    return float(np.sqrt(1.0 - ab) - np.sqrt(max(a_t - ab, 0.0)))


def xi_tilde(s: NoiseSchedule, t: int) -> float:
    """CFG++ calibration strength ``sqrt(1 - abar_t)``; accepts ``t = 0``."""
    return float(np.sqrt(1.0 - s.abar(t)))


def ode_coefficients_from_alpha_bar(alpha_bar) -> OdeCoefficients:
    """Finite-difference ``lambda_t``, ``mu_t`` on a raw ``alpha_bar`` table.

    Central differences with unit step in the interior, one-sided at both ends.
    """
    ab = np.asarray(alpha_bar, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        snr_root = np.sqrt((1.0 - ab) / ab)
        inv_root = 1.0 / np.sqrt(ab)
        lam = np.sqrt(ab) * np.gradient(snr_root, edge_order=1)
        mu = -np.sqrt(ab) * np.gradient(inv_root, edge_order=1)
    return OdeCoefficients(lambda_t=lam, mu_t=mu)


def ode_coefficients(s: NoiseSchedule) -> OdeCoefficients:
    return ode_coefficients_from_alpha_bar(s.alpha_bar)


def schedule_table(s: NoiseSchedule) -> list[dict]:
    ode = ode_coefficients(s)
    rows = []
    for t in range(1, s.T + 1):
        rows.append(
            {
                "t": t,
                "alpha": s.alpha_at(t),
                "alpha_bar": s.abar(t),
                "xi": xi(s, t),
                "xi_tilde": xi_tilde(s, t),
                "lambda": ode.lam(t),
                "mu": ode.mu(t),
            }
        )
    return rows


def schedule_csv(s: NoiseSchedule, header_comment: str | None = None) -> str:
    """CSV dump with columns ``t, alpha, alpha_bar, xi, xi_tilde, lambda, mu``."""
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    cols = ["t", "alpha", "alpha_bar", "xi", "xi_tilde", "lambda", "mu"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in schedule_table(s):
        writer.writerow([row["t"]] + [f"{row[c]:.17g}" for c in cols[1:]])
    return buf.getvalue()
