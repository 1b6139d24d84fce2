"""Classifier-free guidance variants as fixed-point iterations on analytic mixtures."""

__version__ = "0.1.0"

from .schedule import NoiseSchedule, build_linear_beta_schedule, scaled_linear_schedule, xi, xi_tilde  # noqa: E402
from .model import ConditionalGMM, GMMPredictor, Latent  # noqa: E402
from .guidance import (  # noqa: E402
    FixedPointOperatorSpec,
    IterationSchedule,
    plan_stage_allocation,
    run_cfg_xk,
    run_cfgpp_xk,
    run_fsg,
    run_resampling,
    run_zsampling,
)

__all__ = [
    "ConditionalGMM",
    "FixedPointOperatorSpec",
    "GMMPredictor",
    "IterationSchedule",
    "Latent",
    "NoiseSchedule",
    "build_linear_beta_schedule",
    "plan_stage_allocation",
    "run_cfg_xk",
    "run_cfgpp_xk",
    "run_fsg",
    "run_resampling",
    "run_zsampling",
    "scaled_linear_schedule",
    "xi",
    "xi_tilde",
]
