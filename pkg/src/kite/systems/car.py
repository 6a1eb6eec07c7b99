"""Kinematic bicycle car on SE(2) with control-dependent process noise."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.optimize import nnls

from .. import geometry as geo
from .base import System
from .scene import Scene

L_CAR = 0.3
MAX_DT = 0.05
FD_STEP = 1e-6


class CarControl(NamedTuple):
    u_v: float
    u_phi: float


def _check_steer(u_phi: float):
    if abs(u_phi) >= 0.5 * math.pi:
        raise ValueError("steering angle must satisfy |u_phi| < pi/2")


def bicycle_derivative(x, u, wheelbase: float = L_CAR) -> np.ndarray:
    """State rate ``(v cos th, v sin th, v tan(phi) / L)``; ``x`` may be ``(..., 3)``."""
    _check_steer(u[1])
    x = np.asarray(x, dtype=float)
    v = float(u[0])
    out = np.empty(x.shape)
    out[..., 0] = v * np.cos(x[..., 2])
    out[..., 1] = v * np.sin(x[..., 2])
    out[..., 2] = v * math.tan(float(u[1])) / wheelbase
    return out


def _rk4_step(x, u, dt, wheelbase):
    k1 = bicycle_derivative(x, u, wheelbase)
    k2 = bicycle_derivative(x + 0.5 * dt * k1, u, wheelbase)
    k3 = bicycle_derivative(x + 0.5 * dt * k2, u, wheelbase)
    k4 = bicycle_derivative(x + dt * k3, u, wheelbase)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def substeps(tau: float, max_dt: float = MAX_DT) -> tuple[int, float]:
    n = max(1, math.ceil(tau / max_dt - 1e-9))
    return n, tau / n


def rk4_propagate(x, u, tau: float, dt: float | None = None, wheelbase: float = L_CAR) -> np.ndarray:
    """Fixed-step RK4; returns ``(n + 1, 3)`` states including the start.

    Headings are left unwrapped inside the integration and wrapped on output.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    _check_steer(u[1])
    if dt is None:
        n, dt = substeps(tau)
    else:
        n = max(1, int(round(tau / dt)))
        dt = tau / n
    out = np.empty((n + 1, 3))
    out[0] = x
    for i in range(n):
        out[i + 1] = _rk4_step(out[i], u, dt, wheelbase)
    out[:, 2] = geo.wrap_angle(out[:, 2])
    return out


def _endpoint_jacobians(x, u, dt, wheelbase, h=FD_STEP):
    # central differences of one RK4 step, all 6 perturbations in one batch
    pert = np.repeat(np.asarray(x, dtype=float)[None], 6, axis=0)
    for j in range(3):
        pert[2 * j, j] += h
        pert[2 * j + 1, j] -= h
    y = _rk4_step(pert, u, dt, wheelbase)
    return ((y[0::2] - y[1::2]) / (2.0 * h)).T


def linearize_bicycle(x, u, tau: float, wheelbase: float = L_CAR, h: float = FD_STEP) -> np.ndarray:
    """Jacobian of the RK4 endpoint map w.r.t. the start state (central differences)."""
    n, dt = substeps(tau)
    pert = np.repeat(np.asarray(x, dtype=float)[None], 6, axis=0)
    for j in range(3):
        pert[2 * j, j] += h
        pert[2 * j + 1, j] -= h
    for _ in range(n):
        pert = _rk4_step(pert, u, dt, wheelbase)
    return ((pert[0::2] - pert[1::2]) / (2.0 * h)).T


def car_process_q(u, tau: float, alpha, beta) -> np.ndarray:
    """Diagonal noise from translation (``alpha``) and turning (``beta``) over ``tau``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha < 0) or np.any(beta < 0):
        raise ValueError("noise coefficients must be non-negative")
    v, phi = float(u[0]), float(u[1])
    return np.diag(abs(v) * tau * alpha + abs(v * math.tan(phi)) * tau * beta)


def fit_car_noise(controls, durations, variances) -> tuple[np.ndarray, np.ndarray]:
    """Non-negative least squares fit of ``(alpha, beta)`` to per-segment variances.

    ``variances`` is ``(n, 3)``: empirical per-dimension transition variances.
    """
    controls = np.asarray(controls, dtype=float)
    durations = np.asarray(durations, dtype=float)
    variances = np.asarray(variances, dtype=float)
    a = np.abs(controls[:, 0]) * durations
    b = np.abs(controls[:, 0] * np.tan(controls[:, 1])) * durations
    design = np.column_stack([a, b])
    alpha = np.empty(3)
    beta = np.empty(3)
    for k in range(3):
        coef, _ = nnls(design, variances[:, k])
        alpha[k], beta[k] = coef
    return alpha, beta


class CarSystem(System):
    """Bicycle car in the global ``(x, y, theta)`` chart with additive noise."""

    name = "car"
    chart = "pose"
    dim = 3
    control_dim = 2
    supports_belief = True

    def __init__(self, scene: Scene):
        super().__init__(scene)
        c = scene.constants
        self.wheelbase = float(c.get("wheelbase", L_CAR))
        self.v_bounds = tuple(c.get("v_bounds", (-1.0, 1.0)))
        self.phi_max = float(c.get("phi_max", 0.6))
        self.max_duration = float(c.get("max_duration", 2.0))
        self.alpha = np.asarray(c.get("alpha", (0.004, 0.004, 0.002)), dtype=float)
        self.beta = np.asarray(c.get("beta", (0.002, 0.002, 0.004)), dtype=float)
        self.noise_enabled = bool(c.get("noise", True))

    def sample_state(self, rng):
        x0, x1, y0, y1 = self.scene.bounds
        return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi)])

    def sample_control(self, rng):
        return np.array([rng.uniform(*self.v_bounds), rng.uniform(-self.phi_max, self.phi_max)])

    def propagate(self, x, u, tau):
        return rk4_propagate(x, u, tau, wheelbase=self.wheelbase)

    def process_q(self, u, tau):
        if not self.noise_enabled:
            return np.zeros((3, 3))
        return car_process_q(u, tau, self.alpha, self.beta)

    def propagate_belief(self, mean, cov, u, tau):
        n, dt = substeps(tau)
        q = self.process_q(u, dt)
        means = np.empty((n + 1, 3))
        covs = np.empty((n + 1, 3, 3))
        means[0] = mean
        covs[0] = cov
        for i in range(n):
            x = means[i]
            A = _endpoint_jacobians(x, u, dt, self.wheelbase)
            means[i + 1] = _rk4_step(x, u, dt, self.wheelbase)
            P = A @ covs[i] @ A.T + q
            covs[i + 1] = 0.5 * (P + P.T)
        means[:, 2] = geo.wrap_angle(means[:, 2])
        return means, covs

    def heuristic(self, x):
        # remaining planar path length to the closest goal region
        best = math.inf
        for g in self.goals:
            d = math.hypot(x[0] - g.center[0], x[1] - g.center[1]) - g.position_radius()
            best = min(best, d)
        return max(0.0, best)

    def execute(self, x0, segments, rng):
        pts = [np.asarray(x0, dtype=float)[None]]
        x = np.asarray(x0, dtype=float).copy()
        for seg in segments:
            n, dt = substeps(seg.duration)
            std = np.sqrt(np.diag(self.process_q(seg.control, dt)))
            w = np.empty((n, 3))
            for i in range(n):
                x = _rk4_step(x, seg.control, dt, self.wheelbase) + std * rng.standard_normal(3)
                x[2] = geo.wrap_angle(x[2])
                w[i] = x
            pts.append(w)
        return np.concatenate(pts)

    def execute_many(self, x0, segments, n: int, rng) -> np.ndarray:
        """``n`` rollouts at once; returns ``(n, k, 3)`` waypoints."""
        x = np.repeat(np.asarray(x0, dtype=float)[None], n, axis=0)
        pts = [x.copy()]
        for seg in segments:
            k, dt = substeps(seg.duration)
            std = np.sqrt(np.diag(self.process_q(seg.control, dt)))
            for _ in range(k):
                x = _rk4_step(x, seg.control, dt, self.wheelbase) + std * rng.standard_normal((n, 3))
                x[:, 2] = geo.wrap_angle(x[:, 2])
                pts.append(x.copy())
        return np.stack(pts, axis=1)



def parking_scene(noise: bool = True) -> Scene:
    """Default two-bay parking lot.

    ``g2`` (listed first, the preferred region) is open space further ahead;
    ``g1`` is a closer bay between parked cars.  Both require a forward heading.
    """
    from ..belief import GoalSpec
    from .scene import Rect

    heading_scale = 4.0  # 0.25 m radius <-> 0.5 rad heading tolerance
    e = np.diag([1.0, 1.0, heading_scale])
    goals = [
        GoalSpec([3.3, 0.9, 0.0], 0.25, e, chart="pose", name="g2"),
        GoalSpec([2.0, 2.3, 0.0], 0.25, e, chart="pose", name="g1"),
    ]
    obstacles = [
        Rect(1.4, 2.6, 1.2, 0.4),
        Rect(1.4, 1.65, 1.2, 0.35),
        Rect(2.75, 1.65, 0.5, 0.8),
    ]
    return Scene(
        system="car",
        bounds=(0.0, 4.0, 0.0, 3.0),
        obstacles=obstacles,
        goals=goals,
        start=np.array([0.4, 1.5, 0.0]),
        start_cov=np.diag([1e-4, 1e-4, 1e-4]),
        robot_radius=0.1,
        constants={"max_duration": 1.0, "noise": noise, "alpha": [0.001, 0.001, 0.0005], "beta": [0.0005, 0.0005, 0.001]},
    )
