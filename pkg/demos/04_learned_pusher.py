"""
Learning pushing dynamics with a variance head
==============================================

Synthetic pushes: sides 1 and 3 roll the object and are five times noisier.
A network trained with the Gaussian NLL learns that; one trained with MSE
only learns the mean.  The learned model then drives the belief planner.
"""

import numpy as np

from kite import bench
from kite import learning as lrn
from kite.planner import PlannerConfig, kite_plan
from kite.systems import pusher as push
from kite.systems.pusher import pushing_scene

data = lrn.generate_pusher_dataset(1000, seed=0)
print(len(data), "pushes; first target", np.round(data.targets[0], 4))

# the settings used by the benchmarks (about 20 s on one core)
model, curve = lrn.train_pusher_model(data, "nll", seed=0)
mse_model, _ = lrn.train_pusher_model(data, "mse", seed=0)
print(f"NLL model: {len(curve)} epochs, final training loss {curve[-1]:.3f}")

controls = push.sample_push(np.random.default_rng(1), 1000)
report = lrn.calibration_report(model, controls)
for side, ratio in report["sigma_ratio"].items():
    kind = "rolling" if side in push.ROLLING_SIDES else "stable"
    print(f"  side {side} ({kind}): sigma_hat / sigma_true = {ratio:.2f}")
print(f"  mean RMSE {report['mean_rmse']:.4f} (MSE model: "
      f"{lrn.calibration_report(mse_model, controls)['mean_rmse']:.4f})")

# %%
# Plan with the learned belief model; execute with the synthetic truth.
system = lrn.LearnedPusherSystem(pushing_scene(), model)
plan = kite_plan(system, PlannerConfig(mode="belief", metric="W2", terminal_weight=20, max_iters=3000,
                                       rng_seed=0, heuristic="euclidean_over_vmax"))
if plan.solved:
    sides = [int(s.control[0]) % 4 for s in plan.segments]
    mc = bench.monte_carlo_execute(plan, system, n=500, seed=0)
    print(f"plan uses sides {sides}; success {mc.success_rate:.2f}")
else:
    print("no plan within the budget")
