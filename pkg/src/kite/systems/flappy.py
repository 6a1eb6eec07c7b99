"""Frame-based Flappy Bird with pillar obstacles (deterministic)."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .base import EPS_COST, System
from .scene import Rect, Scene

V_X = 5.0
GRAVITY = -1.0
FLAP = 9.0
VY_MAX = 10.0
CLEARANCE_EPS = 1.0


class FlappyState(NamedTuple):
    p_x: float
    p_y: float
    v_y: float


def flappy_step(x, u: int) -> np.ndarray:
    """One frame: position uses the pre-update velocity, then gravity/flap and clip."""
    px, py, vy = float(x[0]), float(x[1]), float(x[2])
    vy_next = min(max(vy + GRAVITY + FLAP * (1 if u else 0), -VY_MAX), VY_MAX)
    return np.array([px + V_X, py + vy, vy_next])


def flappy_running_cost(clearance) -> np.ndarray | float:
    """Per-frame cost ``1 / (clearance + 1)``; clearance in px."""
    return 1.0 / (np.asarray(clearance, dtype=float) + CLEARANCE_EPS)


def pillar_rects(x: float, width: float, gap_center: float, gap: float, height: float) -> list[Rect]:
    lo = gap_center - 0.5 * gap
    hi = gap_center + 0.5 * gap
    return [Rect(x, 0.0, width, lo), Rect(x, hi, width, height - hi)]


def flappy_scene(
    pillars: list[tuple[float, float]],
    width: float = 720.0,
    height: float = 480.0,
    gap: float = 120.0,
    pillar_width: float = 40.0,
    start=None,
    goal_margin: float = 0.0,
) -> Scene:
    """Scene with pillars given as ``(x_left, gap_center)`` pairs.

    The goal is the band right of the last pillar, vertically aligned with its
    gap.
    """
    obstacles = []
    for px, gc in pillars:
        obstacles += pillar_rects(px, pillar_width, gc, gap, height)
    last_x, last_gc = max(pillars)
    constants = {
        "goal_x": last_x + pillar_width + goal_margin,
        "goal_center_y": last_gc,
        "goal_half_height": 0.5 * gap,
        "gap": gap,
        "pillar_width": pillar_width,
        "pillars": [list(p) for p in pillars],
    }
    if start is None:
        start = [0.0, 0.5 * height, 0.0]
    return Scene(
        system="flappy",
        bounds=(0.0, width, 0.0, height),
        obstacles=obstacles,
        start=np.asarray(start, dtype=float),
        constants=constants,
    )


def random_flappy_scene(
    rng: np.random.Generator,
    n_pillars: int = 4,
    width: float = 720.0,
    height: float = 480.0,
    gap: float = 120.0,
    pillar_width: float = 40.0,
) -> Scene:
    spacing = width / (n_pillars + 1)
    margin = 0.5 * gap + 20.0
    pillars = [
        (spacing * (i + 1) - 0.5 * pillar_width, float(rng.uniform(margin, height - margin)))
        for i in range(n_pillars)
    ]
    return flappy_scene(pillars, width, height, gap, pillar_width)


class FlappySystem(System):
    name = "flappy"
    chart = "euclidean"
    dim = 3
    control_dim = 1

    def __init__(self, scene: Scene, max_frames: int = 10):
        super().__init__(scene)
        self.max_duration = int(max_frames)
        c = scene.constants
        self.goal_x = float(c["goal_x"])
        self.goal_center_y = float(c["goal_center_y"])
        self.goal_half_height = float(c["goal_half_height"])
        x0, x1, y0, y1 = scene.bounds
        self.width = x1 - x0
        self.height = y1 - y0
        self._scale = np.array([1.0 / self.width, 1.0 / self.height, 1.0 / (2.0 * VY_MAX)])
        self._min_rate = 1.0 / (math.hypot(self.width, self.height) + CLEARANCE_EPS)

    def sample_state(self, rng):
        x0, x1, y0, y1 = self.scene.bounds
        return np.array(
            [rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-VY_MAX, VY_MAX)]
        )

    def sample_control(self, rng):
        return np.array([float(rng.integers(0, 2))])

    def sample_duration(self, rng):
        return int(rng.integers(1, self.max_duration + 1))

    def propagate(self, x, u, tau):
        k = int(round(tau))
        if k < 1:
            raise ValueError("Flappy segments last at least one frame")
        out = np.empty((k + 1, 3))
        out[0] = x
        flap = int(u[0]) if np.ndim(u) else int(u)
        for i in range(k):
            out[i + 1] = flappy_step(out[i], flap)
        return out

    def running_cost(self, waypoints, u, tau):
        clearance = np.minimum(self.scene.obstacle_clearance(waypoints[1:]), 1e9)
        return max(float(flappy_running_cost(clearance).sum()), EPS_COST)

    def state_distance_many(self, X, x):
        d = (np.asarray(X) - x) * self._scale
        return np.sqrt(np.einsum("ni,ni->n", d, d))

    def embed(self, X):
        return np.asarray(X, dtype=float) * self._scale

    def valid_states(self, waypoints):
        return bool(np.all(self.scene.collision_free(waypoints)))

    def in_goal(self, x):
        return bool(
            x[0] >= self.goal_x and abs(x[1] - self.goal_center_y) <= self.goal_half_height
        )

    def goal_index(self, x):
        return 0 if self.in_goal(x) else -1

    def terminal_distance(self, x):
        """Vertical offset from the final gap center, as a fraction of screen height."""
        return abs(float(x[1]) - self.goal_center_y) / self.height

    def terminal_offset_px(self, x) -> float:
        return abs(float(x[1]) - self.goal_center_y)

    def heuristic(self, x):
        frames = max(0.0, math.ceil((self.goal_x - float(x[0])) / V_X))
        return frames * self._min_rate

    def execute(self, x0, segments, rng):
        pts = [np.asarray(x0, dtype=float)[None]]
        x = np.asarray(x0, dtype=float)
        for seg in segments:
            w = self.propagate(x, seg.control, seg.duration)
            pts.append(w[1:])
            x = w[-1]
        return np.concatenate(pts)


def tiny_flappy_scene() -> Scene:
    """A 100 x 150 px screen with three narrow pillars.

    Twenty frames cross the whole screen, so every flap sequence can be
    enumerated (about a million of them).
    """
    pillars = [(20.0, 70.0), (45.0, 85.0), (70.0, 65.0)]
    return flappy_scene(pillars, width=100.0, height=150.0, gap=45.0, pillar_width=10.0, start=[0.0, 75.0, 0.0])
