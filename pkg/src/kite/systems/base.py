"""The system contract consumed by the planner and the benchmark harness."""

from __future__ import annotations

import abc

import numpy as np

from .. import belief as bl
from ..belief import GaussianBelief, GoalSpec

# Strictly positive floor on every segment's running cost (needed by pruning).
EPS_COST = 1e-6


class System(abc.ABC):
    """A planning problem: dynamics, costs, validity and goals.

    States are 1-D numpy arrays.  Subclasses implement the deterministic
    propagation and, when they support belief planning, the belief
    propagation; shared goal and validity logic lives here.
    """

    name = "system"
    chart = "euclidean"
    dim = 0
    control_dim = 0
    max_duration = 1.0
    supports_belief = False

    def __init__(self, scene):
        self.scene = scene
        self.goals: list[GoalSpec] = [
            g if g.chart == self.chart
            else GoalSpec(g.center, g.radius, g.shape_matrix, chart=self.chart, name=g.name)
            for g in scene.goals
        ]
        self.start = None if scene.start is None else np.asarray(scene.start, dtype=float)
        if scene.start_cov is None:
            self.start_cov = np.zeros((self.dim, self.dim))
        else:
            self.start_cov = np.asarray(scene.start_cov, dtype=float)

    # -- sampling ---------------------------------------------------------

    @abc.abstractmethod
    def sample_state(self, rng: np.random.Generator) -> np.ndarray: ...

    @abc.abstractmethod
    def sample_control(self, rng: np.random.Generator) -> np.ndarray: ...

    def sample_duration(self, rng: np.random.Generator) -> float:
        # uniform on (0, T_p]
        return float(self.max_duration * (1.0 - rng.random()))

    # -- deterministic dynamics ------------------------------------------

    @abc.abstractmethod
    def propagate(self, x: np.ndarray, u: np.ndarray, tau: float) -> np.ndarray:
        """Waypoints ``(k + 1, dim)`` of the segment, start included."""

    def running_cost(self, waypoints: np.ndarray, u: np.ndarray, tau: float) -> float:
        d = bl.chart_diff(waypoints[:-1], waypoints[1:], self.chart)
        return max(float(np.sqrt(np.einsum("ki,ki->k", d, d)).sum()), EPS_COST)

    def state_distance_many(self, X: np.ndarray, x: np.ndarray) -> np.ndarray:
        d = bl.chart_diff(X, x, self.chart)
        return np.sqrt(np.einsum("ni,ni->n", d, d))

    def embed(self, X: np.ndarray):
        """Euclidean embedding whose L2 equals the state metric, or ``None``."""
        if self.chart == "euclidean":
            return np.asarray(X, dtype=float)
        return None

    def valid_states(self, waypoints: np.ndarray) -> bool:
        return bool(np.all(self.scene.collision_free(waypoints)))

    # -- belief dynamics -------------------------------------------------

    def propagate_belief(self, mean, cov, u, tau):
        """Belief waypoints ``(means (k+1, d), covs (k+1, d, d))``."""
        raise NotImplementedError(f"{self.name} has no belief model")

    def belief_running_cost(self, means: np.ndarray, covs: np.ndarray) -> float:
        if self.chart == "se2":
            w = bl.w2_lie_approx_many(means[:-1], covs[:-1], means[1:], covs[1:])
        else:
            w = bl.w2_gaussian_many(means[:-1], covs[:-1], means[1:], covs[1:], self.chart)
        return max(float(w.sum()), EPS_COST)

    def belief_distance_many(self, means, covs, x) -> np.ndarray:
        """W2 from each belief to the point mass at ``x``."""
        return np.sqrt(bl.w2_sq_to_dirac_many(means, covs, x, self.chart))

    def chance_valid(self, means, covs, p_free: float) -> bool:
        return self.scene.chance_free(means, covs, p_free)

    def belief(self, mean, cov) -> GaussianBelief:
        return GaussianBelief(mean, cov, self.chart)

    # -- goals -------------------------------------------------------------

    @property
    def preferred_goal(self) -> GoalSpec:
        return self.goals[0]

    def goal_index(self, x: np.ndarray) -> int:
        """Index of the first goal region containing ``x``, or -1."""
        for i, g in enumerate(self.goals):
            if g.contains(x):
                return i
        return -1

    def in_goal(self, x: np.ndarray) -> bool:
        return self.goal_index(x) >= 0

    def terminal_distance(self, x: np.ndarray) -> float:
        """Weighted distance from ``x`` to the preferred goal center."""
        return float(np.sqrt(self.preferred_goal.sq_distance(x)))

    def terminal_w2(self, mean, cov) -> float:
        g = self.preferred_goal
        return float(np.sqrt(bl.w2_sq_to_dirac_many(mean, cov, g.center, self.chart, g.e_inv)))

    def goal_bound(self, mean, cov) -> float:
        """Best goal-reaching lower bound over the goal regions."""
        return max(
            float(1.0 - bl.w2_sq_to_dirac_many(mean, cov, g.center, self.chart, g.e_inv) / g.radius**2)
            for g in self.goals
        )

    def heuristic(self, x: np.ndarray) -> float:
        """Admissible lower bound on the remaining running cost (0 by default)."""
        return 0.0

    # -- execution -------------------------------------------------------

    def execute(self, x0: np.ndarray, segments, rng: np.random.Generator) -> np.ndarray:
        """One noisy ground-truth rollout; returns all waypoints."""
        raise NotImplementedError(f"{self.name} has no stochastic executor")

    def execute_many(self, x0, segments, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` rollouts stacked as ``(n, k, dim)``."""
        return np.stack([self.execute(x0, segments, rng) for _ in range(n)])

    def rollout_outcomes(self, rollouts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-rollout ``(success, collided)`` boolean arrays for ``(n, k, dim)`` input."""
        n, k, d = rollouts.shape
        free = self.scene.collision_free(rollouts.reshape(n * k, d)).reshape(n, k)
        collided = ~free.all(axis=1)
        reached = np.array([self.in_goal(r[-1]) for r in rollouts], dtype=bool)
        return reached & ~collided, collided

