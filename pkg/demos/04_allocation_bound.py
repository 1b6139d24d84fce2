"""
Splitting a budget into intervals
=================================

With N calibration iterations over T steps, the uniform-partition procedure
uses M intervals of W = T / M steps and K = N / M iterations each.  The bound
g(beta) with beta = 1 / M trades a contraction term that prefers few long
intervals against a discretisation term that prefers many short ones.
"""

# %%
import numpy as np

from fpguide import ConditionalGMM, GMMPredictor, scaled_linear_schedule
from fpguide.analysis import BoundParams, optimal_beta, theorem_check

s = scaled_linear_schedule(60)
p = BoundParams.from_schedule(s, N=120, B=1.0, L=0.5, r=0.8)
print(f"{'M':>3s} {'W':>3s} {'K':>4s} {'g(beta)':>12s}")
for v in optimal_beta(p).grid:
    print(f"{v.M:3d} {v.W:3d} {v.K:4d} {v.g:12.4e}")
opt = optimal_beta(p)
print("beta* =", opt.beta, " relaxed beta* =", round(opt.relaxed_beta, 4))

# %%
# Smoother predictors (smaller L) and larger budgets both favour longer
# intervals at first; with a very large budget the minimiser moves to 1/T.
for L in (0.1, 0.5, 1.0, 2.0):
    print(f"L={L}: beta* = {optimal_beta(BoundParams.from_schedule(s, 120, 1.0, L, 0.8)).beta:.4f}")
for N in (60, 600, 6000):
    print(f"N={N}: beta* = {optimal_beta(BoundParams.from_schedule(s, N, 1.0, 0.5, 0.8)).beta:.4f}")

# %%
# Measured check on a single Gaussian pair.  The inequality holds for every
# beta, but the contraction premise r < 1 is met only for the single full
# interval: a round trip over a short interval is close to the identity, so
# its measured rate is close to 1 and the bound becomes vacuous.
pair = GMMPredictor(ConditionalGMM([0.0, 1.0], [[1.0], [0.0]], [0.5, 1.0], {"c": [1, 0]}), s)
chk = theorem_check(pair, "c", 60, 500, np.random.default_rng(0))
print(f"B = {chk.B_hat:.3f}, L = {chk.L_hat:.3f}")
for r in chk.rows:
    print(f"M={r.M:2d} loss {r.measured_loss:.3e} <= {r.bound:.3e}: {r.holds}   r = {r.r_used:.3f} applicable: {r.applicable}")
