"""Synthetic stochastic planar pusher on SE(2).

A push ``u = (side, offset, distance)`` displaces the object by
``x <- x Exp(mu(u) + eta)`` with ``eta ~ N(0, diag(sigma(u)^2))`` in the object
frame.  Sides 1 and 3 "roll": their noise is ``ROLLING_FACTOR`` times larger.
This replaces a physics simulator; it is a displacement model only.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .. import geometry as geo
from ..belief import w2_lie_approx_many
from .base import EPS_COST, System
from .propagation import lie_cov_step
from .scene import Scene

D_MAX = 0.15
LATERAL_GAIN = 0.3
ROTATION_GAIN = 2.0
NOISE_FLOOR = np.array([0.002, 0.002, 0.005])
NOISE_GROWTH = np.array([0.04, 0.04, 0.2])
ROLLING_SIDES = (1, 3)
ROLLING_FACTOR = 5.0
N_SUB = 4


class PushControl(NamedTuple):
    side: int
    offset: float
    distance: float


def _split(u):
    u = np.asarray(u, dtype=float)
    side = np.rint(u[..., 0]).astype(int) % 4
    return side, u[..., 1], u[..., 2]


def push_mean(u) -> np.ndarray:
    """Mean tangent displacement ``mu(u)``; ``u`` may be ``(..., 3)``."""
    side, o, d = _split(u)
    ang = side * (0.5 * math.pi)
    along = d
    lateral = LATERAL_GAIN * o * d
    out = np.empty(np.shape(u)[:-1] + (3,))
    out[..., 0] = np.cos(ang) * along - np.sin(ang) * lateral
    out[..., 1] = np.sin(ang) * along + np.cos(ang) * lateral
    out[..., 2] = ROTATION_GAIN * o * d
    return out


def push_sigma(u) -> np.ndarray:
    """Per-dimension standard deviation of the push outcome."""
    side, o, d = _split(u)
    base = NOISE_FLOOR + NOISE_GROWTH * (d * (1.0 + np.abs(o)))[..., None]
    factor = np.where(np.isin(side, ROLLING_SIDES), ROLLING_FACTOR, 1.0)
    return base * factor[..., None]


def push_q(u) -> np.ndarray:
    s = push_sigma(u)
    return np.diag(s * s) if s.ndim == 1 else np.einsum("...i,ij->...ij", s * s, np.eye(3))


def pusher_truth_step(x, u, rng: np.random.Generator) -> np.ndarray:
    """One noisy push applied in the object frame; ``x`` is ``(3,)`` or ``(n, 3)``."""
    x = np.asarray(x, dtype=float)
    mu = push_mean(u)
    noise = push_sigma(u) * rng.standard_normal(x.shape)
    return geo.compose_many(x, geo.exp_many(mu + noise))


def control_features(u) -> np.ndarray:
    """Network input for a push: one-hot side, offset, distance / D_MAX."""
    side, o, d = _split(u)
    side = np.atleast_1d(side)
    feats = np.zeros((side.shape[0], 6))
    feats[np.arange(side.shape[0]), side] = 1.0
    feats[:, 4] = np.atleast_1d(o)
    feats[:, 5] = np.atleast_1d(d) / D_MAX
    return feats


def sample_push(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    size = 1 if n is None else n
    u = np.column_stack(
        [
            rng.integers(0, 4, size).astype(float),
            rng.uniform(-1.0, 1.0, size),
            rng.uniform(0.0, D_MAX, size),
        ]
    )
    return u[0] if n is None else u


class PusherSystem(System):
    """Pushing with the exact synthetic model used for both belief and truth."""

    name = "pusher"
    chart = "se2"
    dim = 3
    control_dim = 3
    supports_belief = True
    max_duration = 1

    def __init__(self, scene: Scene):
        super().__init__(scene)
        self.d_max = float(scene.constants.get("d_max", D_MAX))

    # the model; learned subclasses override these two
    def model_mean(self, u) -> np.ndarray:
        return push_mean(u)

    def model_q(self, u) -> np.ndarray:
        return push_q(u)

    def model_step(self, u) -> tuple[np.ndarray, np.ndarray]:
        return self.model_mean(u), self.model_q(u)

    def sample_state(self, rng):
        x0, x1, y0, y1 = self.scene.bounds
        return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi)])

    def sample_control(self, rng):
        u = sample_push(rng)
        u[2] *= self.d_max / D_MAX
        return u

    def sample_duration(self, rng):
        return 1

    def _sub_poses(self, x, mu):
        s = np.linspace(0.0, 1.0, N_SUB + 1)
        return geo.compose_many(x[None], geo.exp_many(s[:, None] * mu[None]))

    def propagate(self, x, u, tau=1):
        return self._sub_poses(np.asarray(x, dtype=float), self.model_mean(u))

    def running_cost(self, waypoints, u, tau=1):
        return max(float(geo.tangent_distance_many(waypoints[0], waypoints[-1])), EPS_COST)

    def propagate_belief(self, mean, cov, u, tau=1):
        mu, q = self.model_step(u)
        means = self._sub_poses(np.asarray(mean, dtype=float), mu)
        s = np.linspace(0.0, 1.0, N_SUB + 1)
        covs = lie_cov_step(np.asarray(cov)[None], s[:, None] * mu[None], s[:, None, None] * q[None])
        return means, covs

    def belief_running_cost(self, means, covs):
        # one push is one belief transition
        return max(float(w2_lie_approx_many(means[0], covs[0], means[-1], covs[-1])), EPS_COST)

    def heuristic(self, x):
        best = math.inf
        for g in self.goals:
            d = math.hypot(x[0] - g.center[0], x[1] - g.center[1]) - g.position_radius()
            best = min(best, d)
        return max(0.0, best)

    def execute(self, x0, segments, rng):
        return self.execute_many(x0, segments, 1, rng)[0]

    def execute_many(self, x0, segments, n: int, rng) -> np.ndarray:
        x = np.repeat(np.asarray(x0, dtype=float)[None], n, axis=0)
        pts = [x]
        s = np.linspace(0.0, 1.0, N_SUB + 1)[1:]
        for seg in segments:
            u = np.asarray(seg.control, dtype=float)
            dx = push_mean(u) + push_sigma(u) * rng.standard_normal((n, 3))
            for si in s:
                pts.append(geo.compose_many(x, geo.exp_many(si * dx)))
            x = pts[-1]
        return np.stack(pts, axis=1)


def pushing_scene(start=None) -> Scene:
    """Default table: push the object from the left edge into a disk on the right.

    The start heading of 45 degrees makes the geometrically short routes mix
    stable and rolling sides, while a stable-only route has to rotate first.
    The goal ignores orientation (its heading axis is scaled out through E).
    """
    from ..belief import GoalSpec
    from .scene import Circle

    r = 0.08
    e = np.diag([1.0, 1.0, (math.pi / r) ** 2])
    return Scene(
        system="pusher",
        bounds=(0.0, 1.0, 0.0, 1.0),
        obstacles=[Circle(0.5, 0.9, 0.12), Circle(0.5, 0.1, 0.12)],
        goals=[GoalSpec([0.8, 0.5, 0.0], r, e, chart="se2", name="target")],
        start=np.array([0.2, 0.5, math.pi / 4] if start is None else start, dtype=float),
        start_cov=np.diag([1e-5, 1e-5, 1e-4]),
        robot_radius=0.04,
        constants={"d_max": D_MAX},
    )
