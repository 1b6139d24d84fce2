"""
Five guidance methods at a fixed evaluation budget
==================================================

Runs CFG, CFG++, Z-sampling, Resampling and the foresight method on the
two-component mixture and reports the evaluation count and the average
prediction gap over the last third of the trajectory.
"""

# %%
import numpy as np

from fpguide import (
    ConditionalGMM,
    GMMPredictor,
    Latent,
    plan_stage_allocation,
    run_cfg_xk,
    run_cfgpp_xk,
    run_fsg,
    run_resampling,
    run_zsampling,
    scaled_linear_schedule,
)

T = 50
model = ConditionalGMM([0.5, 0.5], [[-2.0], [2.0]], [0.5, 0.5], {"c0": [1, 0], "c1": [0, 1]})
pred = GMMPredictor(model, scaled_linear_schedule(T))
x_T = Latent(np.random.default_rng(0).standard_normal((200, 1)), T)

# %%
# The planner spreads (budget - T) / 2 foresight iterations over the early,
# middle and late stages in a 3:2:1 ratio, with longer intervals early.
sched = plan_stage_allocation(T, 100, (3, 2, 1), lam=1.0, gamma=2.0)
print("foresight schedule (t, K, dt):", sched.entries[:6], "...")
print("foresight iterations:", sched.total_iterations(), "-> NFE", sched.nfe())

# %%
active = list(range(T - 25, T))  # 25 reflective steps: T + 2 * 25 = 100 NFE for Z-sampling
runs = {
    "CFG x1 (w=3)": run_cfg_xk(pred, "c0", 3.0, 1, x_T),
    "CFG x2 (w=3)": run_cfg_xk(pred, "c0", 3.0, 2, x_T),
    "CFG++ x2 (lam=1)": run_cfgpp_xk(pred, "c0", 1.0, 2, x_T),
    "Z-sampling": run_zsampling(pred, "c0", 3.0, 2.0, x_T, active),
    "Resampling": run_resampling(pred, "c0", 3.0, 2.0, x_T, active, seed=0, repeats=2),
    "foresight": run_fsg(pred, "c0", sched, x_T),
}
print(f"\n{'method':18s} {'NFE':>5s} {'late gap':>10s} {'P(x0 < 0)':>10s}")
for name, rec in runs.items():
    print(f"{name:18s} {rec.nfe_total:5d} {rec.late_gap().mean():10.3e} {np.mean(rec.x0 < 0):10.3f}")
