"""Planar scenes: workspace bounds, circular/rectangular obstacles, goals, start.

Scene files are JSON; field names are listed in ``SCHEMA.md`` at the repo
root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ..belief import GoalSpec


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float

    def to_json(self) -> dict:
        return {"type": "circle", "cx": self.cx, "cy": self.cy, "radius": self.radius}


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    def to_json(self) -> dict:
        return {"type": "rect", "x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass
class Scene:
    system: str
    bounds: tuple[float, float, float, float]
    obstacles: list = field(default_factory=list)
    goals: list[GoalSpec] = field(default_factory=list)
    start: np.ndarray | None = None
    start_cov: np.ndarray | None = None
    robot_radius: float = 0.0
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self._circles = np.array(
            [[o.cx, o.cy, o.radius] for o in self.obstacles if isinstance(o, Circle)]
        ).reshape(-1, 3)
        self._rects = np.array(
            [[o.x, o.y, o.x + o.w, o.y + o.h] for o in self.obstacles if isinstance(o, Rect)]
        ).reshape(-1, 4)

    # -- geometry -------------------------------------------------------

    def obstacle_clearance(self, pts: np.ndarray) -> np.ndarray:
        """Signed distance from each point to the nearest obstacle (negative inside).

        Workspace walls are not obstacles here. ``robot_radius`` is subtracted.
        Returns ``inf`` when the scene has no obstacles.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))[:, :2]
        best = np.full(pts.shape[0], np.inf)
        if len(self._circles):
            d = pts[:, None, :] - self._circles[None, :, :2]
            dist = np.sqrt(np.einsum("nki,nki->nk", d, d)) - self._circles[None, :, 2]
            best = np.minimum(best, dist.min(axis=1))
        if len(self._rects):
            best = np.minimum(best, _rect_signed_distance(pts, self._rects).min(axis=1))
        return best - self.robot_radius

    def in_bounds(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, x1, y0, y1 = self.bounds
        r = self.robot_radius
        return (
            (pts[:, 0] >= x0 + r)
            & (pts[:, 0] <= x1 - r)
            & (pts[:, 1] >= y0 + r)
            & (pts[:, 1] <= y1 - r)
        )

    def collision_free(self, pts: np.ndarray) -> np.ndarray:
        return self.in_bounds(pts) & (self.obstacle_clearance(pts) > 0.0)

    def halfspace_margins(self, pts: np.ndarray):
        """Linearised constraints tangent to every obstacle and wall.

        Returns ``(margin, normal)`` with shapes ``(n, m)`` and ``(n, m, 2)``: the
        halfspace ``{p : normal . (p - pts) <= margin}`` is collision free and
        contains ``pts``.  A negative margin means the point itself collides.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))[:, :2]
        margins = []
        normals = []
        if len(self._circles):
            d = pts[:, None, :] - self._circles[None, :, :2]
            dist = np.sqrt(np.einsum("nki,nki->nk", d, d))
            n = d / np.maximum(dist, 1e-12)[..., None]
            margins.append(dist - self._circles[None, :, 2] - self.robot_radius)
            normals.append(n)
        if len(self._rects):
            q = np.clip(pts[:, None, :], self._rects[None, :, :2], self._rects[None, :, 2:])
            d = pts[:, None, :] - q
            dist = np.sqrt(np.einsum("nki,nki->nk", d, d))
            inside = dist == 0.0
            n = d / np.maximum(dist, 1e-12)[..., None]
            sd = np.where(inside, _rect_signed_distance(pts, self._rects), dist)
            margins.append(sd - self.robot_radius)
            normals.append(n)
        x0, x1, y0, y1 = self.bounds
        r = self.robot_radius
        walls_m = np.stack(
            [pts[:, 0] - x0 - r, x1 - r - pts[:, 0], pts[:, 1] - y0 - r, y1 - r - pts[:, 1]], axis=1
        )
        walls_n = np.broadcast_to(
            np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]), (pts.shape[0], 4, 2)
        )
        margins.append(walls_m)
        normals.append(walls_n)
        return np.concatenate(margins, axis=1), np.concatenate(normals, axis=1)

    def chance_free(self, means: np.ndarray, covs: np.ndarray, p_free: float) -> bool:
        """Per-constraint Gaussian chance check on the planar marginal.

        For each obstacle and wall, the probability mass on the safe side of
        the tangent halfspace must be at least ``p_free``.
        """
        margin, normal = self.halfspace_margins(means)
        if np.any(margin <= 0.0):
            return False
        pcov = np.asarray(covs)[:, :2, :2]
        var = np.einsum("nki,nij,nkj->nk", normal, pcov, normal)
        sigma = np.sqrt(np.maximum(var, 0.0))
        with np.errstate(divide="ignore"):
            z = np.where(sigma > 0, margin / np.where(sigma > 0, sigma, 1.0), np.inf)
        return bool(np.all(ndtr(z) >= p_free))

    # -- serialisation --------------------------------------------------

    def to_json(self) -> dict:
        out = {
            "system": self.system,
            "bounds": list(self.bounds),
            "robot_radius": self.robot_radius,
            "obstacles": [o.to_json() for o in self.obstacles],
            "goals": [
                {
                    "name": g.name,
                    "center": g.center.tolist(),
                    "radius": g.radius,
                    "shape_matrix": g.shape_matrix.tolist(),
                }
                for g in self.goals
            ],
            "constants": self.constants,
        }
        if self.start is not None:
            out["start"] = np.asarray(self.start).tolist()
        if self.start_cov is not None:
            out["start_cov"] = np.asarray(self.start_cov).tolist()
        return out

    @classmethod
    def from_json(cls, data: dict, chart: str = "euclidean") -> "Scene":
        obstacles = []
        for o in data.get("obstacles", []):
            if o["type"] == "circle":
                obstacles.append(Circle(o["cx"], o["cy"], o["radius"]))
            elif o["type"] == "rect":
                obstacles.append(Rect(o["x"], o["y"], o["w"], o["h"]))
            else:
                raise ValueError(f"unknown obstacle type {o['type']!r}")
        goals = [
            GoalSpec(
                g["center"], g["radius"], g.get("shape_matrix"), chart=chart, name=g.get("name", "")
            )
            for g in data.get("goals", [])
        ]
        return cls(
            system=data["system"],
            bounds=tuple(data["bounds"]),
            obstacles=obstacles,
            goals=goals,
            start=None if data.get("start") is None else np.asarray(data["start"], dtype=float),
            start_cov=None
            if data.get("start_cov") is None
            else np.asarray(data["start_cov"], dtype=float),
            robot_radius=float(data.get("robot_radius", 0.0)),
            constants=dict(data.get("constants", {})),
        )


def load_scene(path, chart: str = "euclidean") -> Scene:
    return Scene.from_json(json.loads(Path(path).read_text()), chart=chart)


def _rect_signed_distance(pts: np.ndarray, rects: np.ndarray) -> np.ndarray:
    center = 0.5 * (rects[:, :2] + rects[:, 2:])
    half = 0.5 * (rects[:, 2:] - rects[:, :2])
    q = np.abs(pts[:, None, :] - center[None]) - half[None]
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside
