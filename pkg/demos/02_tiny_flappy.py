"""
Terminal cost on a tiny Flappy instance
=======================================

The tiny screen is small enough to enumerate every flap/no-flap sequence,
so the planner's answer can be checked against the true optimum.
"""

import sys
from pathlib import Path

from kite.planner import PlannerConfig, kite_plan
from kite.systems import FlappySystem, tiny_flappy_scene

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import flappy_brute_force  # noqa: E402

system = FlappySystem(tiny_flappy_scene())

# exhaustive search over 2^20 sequences (a few seconds)
best, bits, frames = flappy_brute_force(system, horizon=20, terminal_weight=20.0)
print(f"optimum with w_g = 20: {best:.4f} after {frames} frames")

# %%
# Without a terminal weight any crossing of the finish line is as good as
# another.  With w_g = 20 the planner also pays for ending away from the gap
# center, and it keeps improving until the budget runs out.
for w in (0.0, 20.0):
    cfg = PlannerConfig(terminal_weight=w, max_iters=20_000, rng_seed=0, heuristic="euclidean_over_vmax")
    r = kite_plan(system, cfg)
    print(f"w_g = {w:>4}: running {r.running_cost:.4f}  terminal distance "
          f"{system.terminal_distance(r.trajectory[-1]):.4f}  total {r.total_cost:.4f}")
    for it, t, run, term, total in r.best_cost_history:
        print(f"    iter {it:>6}  {t:6.2f} s  total {total:.6f}")
