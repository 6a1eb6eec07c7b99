"""
Gaussian beliefs, W2 and the goal-reaching bound
=================================================

Two beliefs with the same mean but different spread are far apart in W2.
The same distance, measured to a point goal, gives a cheap lower bound on
the probability of ending up inside a ball around it.
"""

import math

import numpy as np

from kite import belief as bl

# same mean, different covariance: only the Bures term contributes
a = bl.GaussianBelief([0.0, 0.0], np.diag([0.04, 0.01]))
b = bl.GaussianBelief([0.0, 0.0], np.diag([0.01, 0.04]))
print("W2(a, b) =", round(bl.w2_gaussian(a, b), 4))  # 0.1 * sqrt(2)

# shifting the mean adds in quadrature
c = bl.GaussianBelief([0.3, 0.4], a.cov)
print("W2(a, c) =", round(bl.w2_gaussian(a, c), 4))  # 0.5

# %%
# A ball goal of radius 0.3 around the origin and an isotropic belief with
# sigma = 0.1.  The bound is 1 - W2^2 / r^2; the true probability has a
# closed form because |x|^2 / sigma^2 is chi-square with two dof.
goal = bl.GoalSpec([0.0, 0.0], 0.3)
iso = bl.GaussianBelief([0.0, 0.0], 0.01 * np.eye(2))
bound = bl.goal_reach_lower_bound(iso, goal)
exact = 1 - math.exp(-0.3**2 / (2 * 0.01))
rng = np.random.default_rng(0)
mc = goal.contains(rng.multivariate_normal(iso.mean, iso.cov, 200_000)).mean()
print(f"bound {bound:.4f}  exact {exact:.4f}  monte carlo {mc:.4f}")

# %%
# The bound is loose but never wrong.  It goes negative (vacuous) as soon as
# the belief drifts or spreads too much; it is not clamped.
for shift in (0.0, 0.1, 0.2, 0.3):
    moved = bl.GaussianBelief([shift, 0.0], iso.cov)
    p = goal.contains(rng.multivariate_normal(moved.mean, moved.cov, 100_000)).mean()
    print(f"shift {shift:.1f}: bound {bl.goal_reach_lower_bound(moved, goal):+.3f}  mc {p:.3f}")

# %%
# On SE(2) the mean difference is taken in the tangent space of the goal and
# the heading axis can be rescaled with a shape matrix E.
pose_goal = bl.GoalSpec([1.0, 0.5, 0.0], 0.25, np.diag([1.0, 1.0, 4.0]), chart="se2")
pose = bl.GaussianBelief([1.05, 0.5, 0.05], np.diag([1e-3, 1e-3, 4e-3]), "se2")
print("W2 to goal", round(bl.w2_to_goal(pose, pose_goal), 4),
      "bound", round(bl.goal_reach_lower_bound_ellipsoid(pose, pose_goal), 4))
