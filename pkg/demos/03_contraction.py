"""
Contraction rates of the calibration operators
==============================================

The empirical rate is the mean of ||F(x) - F(x')||^2 / ||x - x'||^2 over
nearby pairs drawn from the forward marginal.  Longer backward-forward
intervals contract more than short ones, and both contract more than the
one-step linear calibration.
"""

# %%
import numpy as np

from fpguide import ConditionalGMM, FixedPointOperatorSpec, GMMPredictor, scaled_linear_schedule
from fpguide.analysis import contraction_rate
from fpguide.model import sample_x0

T = 50
model = ConditionalGMM([0.5, 0.5], [[-2.0], [2.0]], [0.5, 0.5], {"c0": [1, 0], "c1": [0, 1]})
pred = GMMPredictor(model, scaled_linear_schedule(T))
x0 = lambda g, n: sample_x0(model, None, g, n).x  # noqa: E731

# %%
print(f"{'t':>3s} {'identity':>9s} {'linear++':>9s} {'dt=t/4':>9s} {'dt=t':>9s}")
for t in (10, 20, 30, 40):
    ops = [
        FixedPointOperatorSpec("identity"),
        FixedPointOperatorSpec("linear_cfgpp", "c0", lam=1.0),
        FixedPointOperatorSpec("foresight", "c0", gamma=2.0, dt=max(1, t // 4), calibrate=False),
        FixedPointOperatorSpec("foresight", "c0", gamma=2.0, dt=t, calibrate=False),
    ]
    rates = [contraction_rate(op, pred, x0, t, 2000, 1e-2, np.random.default_rng(t)) for op in ops]
    print(f"{t:3d} " + " ".join(f"{e.rate:9.3f}" for e in rates))

# %%
# The estimate does not depend on the perturbation size when the operator is
# affine.  The single-Gaussian pair has affine noise predictions.
pair = GMMPredictor(ConditionalGMM([0.0, 1.0], [[1.0], [0.0]], [0.5, 1.0], {"c": [1, 0]}), scaled_linear_schedule(T))
normal = lambda g, n: g.standard_normal((n, 1))  # noqa: E731
spec = FixedPointOperatorSpec("linear_cfg", "c", w=4.0)
for scale in (1e-3, 1e-2, 1e-1):
    e = contraction_rate(spec, pair, normal, 30, 1000, scale, np.random.default_rng(0))
    print(f"scale {scale:g}: rate {e.rate:.6f} +- {e.stderr:.1e}")
