"""SE(2) Lie-group primitives.

Poses are stored as ``(x, y, theta)`` and tangent vectors as
``(rho_x, rho_y, omega)``.  The scalar API works on :class:`Pose2` /
:class:`Tangent2` values; the ``*_many`` helpers operate on ``(n, 3)`` arrays
and are what the planner uses in its inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-9


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    # pi - mod(pi - t, 2 pi) lands in (-pi, pi] directly
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def as_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Tangent2:
    rho_x: float = 0.0
    rho_y: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        for name in ("rho_x", "rho_y", "omega"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"non-finite tangent component {name}={v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, a) -> "Tangent2":
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.rho_x, self.rho_y, self.omega])

    def hat(self) -> np.ndarray:
        """3x3 twist matrix of the Lie-algebra element."""
        return np.array(
            [
                [0.0, -self.omega, self.rho_x],
                [self.omega, 0.0, self.rho_y],
                [0.0, 0.0, 0.0],
            ]
        )


def _v_coeffs(omega):
    # V(w) = [[a, -b], [b, a]], a = sin(w)/w, b = (1 - cos(w))/w
    omega = np.asarray(omega, dtype=float)
    small = np.abs(omega) < SMALL_ANGLE
    safe = np.where(small, 1.0, omega)
    a = np.where(small, 1.0 - omega**2 / 6.0, np.sin(safe) / safe)
    half = np.sin(0.5 * safe)
    b = np.where(small, 0.5 * omega, 2.0 * half * half / safe)
    return a, b


def exp_many(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    a, b = _v_coeffs(xi[..., 2])
    out = np.empty(xi.shape)
    out[..., 0] = a * xi[..., 0] - b * xi[..., 1]
    out[..., 1] = b * xi[..., 0] + a * xi[..., 1]
    out[..., 2] = wrap_angle(xi[..., 2])
    return out


def log_many(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    theta = wrap_angle(p[..., 2])
    a, b = _v_coeffs(theta)
    det = a * a + b * b
    out = np.empty(p.shape)
    out[..., 0] = (a * p[..., 0] + b * p[..., 1]) / det
    out[..., 1] = (-b * p[..., 0] + a * p[..., 1]) / det
    out[..., 2] = theta
    return out


def compose_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.empty(shape)
    out[..., 0] = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    out[..., 1] = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    out[..., 2] = wrap_angle(a[..., 2] + b[..., 2])
    return out


def inverse_many(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(a.shape)
    out[..., 0] = -(c * a[..., 0] + s * a[..., 1])
    out[..., 1] = s * a[..., 0] - c * a[..., 1]
    out[..., 2] = wrap_angle(-a[..., 2])
    return out


def between_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Relative pose ``a^-1 b`` (broadcasting)."""
    return compose_many(inverse_many(a), b)


def adjoint_many(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    c, s = np.cos(p[..., 2]), np.sin(p[..., 2])
    out = np.zeros(p.shape[:-1] + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 0, 2] = p[..., 1]
    out[..., 1, 2] = -p[..., 0]
    out[..., 2, 2] = 1.0
    return out


def se2_exp(xi: Tangent2) -> Pose2:
    """Exponential map se(2) -> SE(2)."""
    return Pose2.from_array(exp_many(xi.as_array()))


def se2_log(p: Pose2) -> Tangent2:
    """Logarithm map SE(2) -> se(2), principal branch (theta = pi kept as pi)."""
    return Tangent2.from_array(log_many(p.as_array()))


def se2_adjoint(p: Pose2) -> np.ndarray:
    """Adjoint matrix ``Ad_p`` acting on ``(rho_x, rho_y, omega)``."""
    return adjoint_many(p.as_array())


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    return Pose2.from_array(compose_many(a.as_array(), b.as_array()))


def se2_inverse(a: Pose2) -> Pose2:
    return Pose2.from_array(inverse_many(a.as_array()))


def double_geodesic_distance(a: Pose2, b: Pose2, w_r: float = 1.0) -> float:
    """Translation distance plus ``w_r`` times the absolute heading difference."""
    if w_r < 0:
        raise ValueError("w_r must be non-negative")
    dpos = math.hypot(b.x - a.x, b.y - a.y)
    # |wrapped difference| computed from |dtheta| so that swapping a and b is exact
    dth = abs(b.theta - a.theta) % (2.0 * math.pi)
    return dpos + w_r * min(dth, 2.0 * math.pi - dth)


def tangent_distance(a: Pose2, b: Pose2) -> float:
    """Norm of ``Log(a^-1 b)``; a local approximation of the geodesic distance."""
    if a == b:
        return 0.0
    return float(np.linalg.norm(log_many(between_many(a.as_array(), b.as_array()))))


def tangent_distance_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(log_many(between_many(a, b)), axis=-1)
