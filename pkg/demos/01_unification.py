"""
Guidance as calibrate-then-denoise
==================================

A vanilla CFG step and a CFG++ step can both be split into two halves: a
calibration that moves the latent along the prediction gap, then one plain
unconditional sampler step.  This script checks the split numerically on the
two-component mixture and shows that a latent with zero gap is left alone.
"""

# %%
import numpy as np

from fpguide import ConditionalGMM, FixedPointOperatorSpec, GMMPredictor, Latent, scaled_linear_schedule, xi, xi_tilde
from fpguide.guidance import apply_operator
from fpguide.sampler import GuidedNoiseSpec, ddim_step, unconditional_update

s = scaled_linear_schedule(50)
model = ConditionalGMM([0.5, 0.5], [[-2.0], [2.0]], [0.5, 0.5], {"c0": [1, 0], "c1": [0, 1], "same": [0.5, 0.5]})
pred = GMMPredictor(model, s)
x = Latent(np.linspace(-3, 3, 7)[:, None], 30)

# %%
# CFG at scale w: one DDIM step with the extrapolated noise ...
w = 4.0
direct = ddim_step(pred, GuidedNoiseSpec.cfg("c0", w), x, 29).x

# ... equals the linear calibration x - w xi_t (eps^c - eps^u) followed by an
# unconditional step that reuses eps^u from the original point.
e_u = pred.eps(x.x, 30, count=False)
cal = apply_operator(FixedPointOperatorSpec("linear_cfg", "c0", w=w), pred, x).x
split = unconditional_update(s, cal, 30, e_u)
print("xi_30 =", xi(s, 30), " xi~_30 =", xi_tilde(s, 30))
print("CFG   direct vs split, max |diff| =", np.abs(direct - split).max())

# %%
# CFG++ uses xi~_t = sqrt(1 - abar_t) in place of xi_t.
lam = 0.8
e_c = pred.eps(x.x, 30, "c0", count=False)
ab, ab_prev = s.abar(30), s.abar(29)
x0_hat = (x.x - np.sqrt(1 - ab) * (e_u + lam * (e_c - e_u))) / np.sqrt(ab)
direct_pp = np.sqrt(ab_prev) * x0_hat + np.sqrt(1 - ab_prev) * e_u
cal_pp = apply_operator(FixedPointOperatorSpec("linear_cfgpp", "c0", lam=lam), pred, x).x
print("CFG++ direct vs split, max |diff| =", np.abs(direct_pp - unconditional_update(s, cal_pp, 30, e_u)).max())

# %%
# Fixed points: under a condition whose reweighting equals the prior, the
# gap is zero everywhere and every linear operator is the identity.
for kind, kw in (("linear_cfg", {"w": 7.5}), ("linear_cfgpp", {"lam": 1.0})):
    y = apply_operator(FixedPointOperatorSpec(kind, "same", **kw), pred, x).x
    print(f"{kind:13s} moves a zero-gap latent by", np.abs(y - x.x).max())
