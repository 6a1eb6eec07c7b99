"""
A miniature benchmark with CSV and SVG output
=============================================

Same problems for every method (seeds fan out from one master seed), Monte
Carlo execution of every solved plan, a bound audit, and the report files.
"""

import tempfile
from pathlib import Path

from kite import bench, report

spec = bench.ExperimentSpec(
    system="car",
    methods=["Base-L2", "KiTe-W2-20", "GBT-W2"],
    problems=3,
    repeats=1,
    max_iters=1500,
    mc_rollouts=100,
)
records = bench.run_experiment(spec)

for row in bench.aggregate(records, spec.methods):
    print(f"{row['method']:>11}: solved {row['solved']}/{row['runs']}, success {row['success_all']:.2f}, "
          f"terminal W2 {row['terminal_solved']:.3f}, preferred goal {row['preferred_goal_frac']:.2f}")

print("bound violations:", bench.verify_bound(records))

out = Path(tempfile.mkdtemp(prefix="kite-demo-"))
for kind, path in report.emit_outputs(records, out).items():
    print(f"{kind:>13}: {path}")
