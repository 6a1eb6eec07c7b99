"""
Parking a noisy car
===================

Two parking regions: g2 (preferred, open space further ahead) and g1 (a
closer bay between parked cars).  A state-space planner happily takes the
closer bay; the belief planner with a W2 terminal cost toward g2 does not.
Both plans are then executed open loop through the noisy car.
"""

import numpy as np

from kite import bench
from kite.planner import PlannerConfig, kite_plan
from kite.systems import CarSystem
from kite.systems.car import parking_scene

system = CarSystem(parking_scene())
names = [g.name for g in system.goals]

configs = {
    "Base-L2": PlannerConfig(max_iters=3000, rng_seed=1, heuristic="euclidean_over_vmax"),
    "KiTe-W2-20": PlannerConfig(mode="belief", metric="W2", terminal_weight=20, max_iters=3000, rng_seed=1,
                                heuristic="euclidean_over_vmax"),
}

for name, cfg in configs.items():
    plan = kite_plan(system, cfg)
    if not plan.solved:
        print(name, "found no plan")
        continue
    run, term = bench.unify_cost(plan, system)
    mc = bench.monte_carlo_execute(plan, system, n=500, seed=7)
    print(f"{name:>11}: goal {names[plan.goal_index]}, {len(plan.segments)} segments, "
          f"unified running {run:.3f}, terminal W2 {term:.3f}, "
          f"bound {bench.plan_bound(plan, system):+.2f}, success {mc.success_rate:.2f}, "
          f"collisions {mc.collision_rate:.2f}")

# %%
# Where the executions end: spread of the terminal states around the mean.
end = mc.terminal_states
print("terminal mean", np.round(end.mean(axis=0), 3), "std", np.round(end.std(axis=0), 3))
