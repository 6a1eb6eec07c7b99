"""Gaussian beliefs, 2-Wasserstein distances and goal-reaching lower bounds.

A belief lives in one of three charts:

``"euclidean"``
    plain vector space.
``"pose"``
    global ``(x, y, theta)`` coordinates with additive noise; differences wrap
    the heading.
``"se2"``
    Lie-Gaussian ``x Exp(N(0, P))``; the covariance lives in the tangent space at
    the mean and differences are ``Log(a^-1 b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo

CHARTS = ("euclidean", "pose", "se2")

SYM_TOL = 1e-6
PSD_TOL = 1e-10


def chart_diff(a: np.ndarray, b: np.ndarray, chart: str) -> np.ndarray:
    """Difference ``b - a`` expressed in the chart (broadcasts over leading axes)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if chart == "euclidean":
        return b - a
    if chart == "pose":
        d = b - a
        d[..., 2] = geo.wrap_angle(d[..., 2])
        return d
    if chart == "se2":
        return geo.log_many(geo.between_many(a, b))
    raise ValueError(f"unknown chart {chart!r}")


def _clean_cov(cov: np.ndarray) -> np.ndarray:
    cov = np.array(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be a square matrix")
    cov = 0.5 * (cov + cov.T)
    w = np.linalg.eigvalsh(cov)
    if w[0] < -PSD_TOL:
        raise ValueError(f"covariance is not PSD (min eigenvalue {w[0]:.3g})")
    if w[0] < 0:
        w, v = np.linalg.eigh(cov)
        cov = (v * np.clip(w, 0.0, None)) @ v.T
        cov = 0.5 * (cov + cov.T)
    return cov


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    chart: str = "euclidean"

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise ValueError(f"unknown chart {self.chart!r}")
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if self.chart == "se2" or self.chart == "pose":
            if mean.shape != (3,):
                raise ValueError("SE(2) beliefs need a 3-vector mean")
            mean[2] = geo.wrap_angle(mean[2])
        cov = _clean_cov(self.cov)
        if cov.shape[0] != mean.shape[0]:
            raise ValueError("mean/covariance dimension mismatch")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def pose(self) -> geo.Pose2:
        return geo.Pose2.from_array(self.mean)

    @classmethod
    def dirac(cls, mean, chart: str = "euclidean") -> "GaussianBelief":
        mean = np.asarray(mean, dtype=float)
        return cls(mean, np.zeros((mean.size, mean.size)), chart)


@dataclass(frozen=True, eq=False)
class GoalSpec:
    """Ball or ellipsoid ``{x : diff^T E^-1 diff <= r^2}`` around ``center``."""

    center: np.ndarray
    radius: float
    shape_matrix: np.ndarray | None = None
    chart: str = "euclidean"
    name: str = ""
    _e_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise ValueError("goal radius must be positive")
        d = center.shape[0]
        if self.shape_matrix is None:
            e = np.eye(d)
        else:
            e = np.array(self.shape_matrix, dtype=float)
            if e.shape != (d, d):
                raise ValueError("shape matrix dimension mismatch")
            if np.max(np.abs(e - e.T)) > SYM_TOL:
                raise ValueError("shape matrix must be symmetric")
            if np.linalg.eigvalsh(e)[0] <= 0:
                raise ValueError("shape matrix must be positive definite")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "shape_matrix", e)
        object.__setattr__(self, "_e_inv", np.linalg.inv(e))

    @property
    def is_ball(self) -> bool:
        return bool(np.allclose(self.shape_matrix, np.eye(self.center.size)))

    @property
    def e_inv(self) -> np.ndarray:
        return self._e_inv

    def sq_distance(self, x: np.ndarray) -> np.ndarray:
        """Weighted squared distance ``diff^T E^-1 diff`` from the center (vectorised)."""
        d = chart_diff(self.center, x, self.chart)
        return np.einsum("...i,ij,...j->...", d, self._e_inv, d)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.sq_distance(x) <= self.radius**2

    def position_radius(self) -> float:
        """Largest planar offset (first two coordinates) still inside the region."""
        return float(self.radius * np.sqrt(np.max(np.linalg.eigvalsh(self.shape_matrix[:2, :2]))))


def sqrtm_spd(P: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition."""
    P = np.asarray(P, dtype=float)
    if np.max(np.abs(P - P.T), initial=0.0) > SYM_TOL:
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (P + P.T))
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (s + s.T)


def _sqrtm_many(P: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(P)
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(np.clip(w, 0.0, None)), v)


def bures_sq_many(P: np.ndarray, P2: np.ndarray) -> np.ndarray:
    """Squared Bures distance ``Tr(P + P2 - 2 (P2^1/2 P P2^1/2)^1/2)``, batched.

    Clamped at zero; round-off drives it slightly negative for near-equal
    inputs.
    """
    P = np.asarray(P, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    S2 = _sqrtm_many(P2)
    M = S2 @ P @ S2
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    root_tr = np.sqrt(np.clip(np.linalg.eigvalsh(M), 0.0, None)).sum(axis=-1)
    tr = np.trace(P, axis1=-2, axis2=-1) + np.trace(P2, axis1=-2, axis2=-1)
    return np.clip(tr - 2.0 * root_tr, 0.0, None)


def _key(b: GaussianBelief) -> bytes:
    return b.mean.tobytes() + b.cov.tobytes()


def w2_gaussian(b: GaussianBelief, b2: GaussianBelief) -> float:
    """Closed-form 2-Wasserstein distance between two Gaussians (vector-space charts)."""
    if b.dim != b2.dim:
        raise ValueError("dimension mismatch")
    if b.chart == "se2" or b2.chart == "se2":
        raise ValueError("use w2_lie_approx for Lie-Gaussian beliefs")
    # evaluate in a canonical argument order so swapping is bit-exact
    if _key(b2) < _key(b):
        b, b2 = b2, b
    d = chart_diff(b.mean, b2.mean, b.chart)
    return float(np.sqrt(d @ d + bures_sq_many(b.cov, b2.cov)))


def w2_gaussian_many(means, covs, means2, covs2, chart: str = "euclidean") -> np.ndarray:
    d = chart_diff(means, means2, chart)
    return np.sqrt(np.einsum("...i,...i->...", d, d) + bures_sq_many(covs, covs2))


def w2_lie_approx_many(means, covs, means2, covs2) -> np.ndarray:
    """Tangent-space W2 approximation linearised at the first belief's mean."""
    rel = geo.between_many(means, means2)
    xi = geo.log_many(rel)
    ad = geo.adjoint_many(rel)
    covs2_hat = ad @ covs2 @ np.swapaxes(ad, -1, -2)
    covs2_hat = 0.5 * (covs2_hat + np.swapaxes(covs2_hat, -1, -2))
    return np.sqrt(np.einsum("...i,...i->...", xi, xi) + bures_sq_many(covs, covs2_hat))


def w2_lie_approx(b: GaussianBelief, b2: GaussianBelief) -> float:
    """Approximate W2 between two Lie-Gaussian beliefs on SE(2)."""
    if b.chart != "se2" or b2.chart != "se2":
        raise ValueError("w2_lie_approx needs SE(2) beliefs")
    return float(w2_lie_approx_many(b.mean, b.cov, b2.mean, b2.cov))


def belief_distance(b: GaussianBelief, b2: GaussianBelief) -> float:
    """W2 in whichever form suits the chart."""
    if b.chart == "se2":
        return w2_lie_approx(b, b2)
    return w2_gaussian(b, b2)


def w2_sq_to_dirac_many(means, covs, g, chart: str = "euclidean", e_inv=None) -> np.ndarray:
    d = chart_diff(means, g, chart)
    if e_inv is None:
        return np.einsum("...i,...i->...", d, d) + np.trace(covs, axis1=-2, axis2=-1)
    mean_term = np.einsum("...i,ij,...j->...", d, e_inv, d)
    return mean_term + np.einsum("ij,...ji->...", e_inv, covs)


def w2_to_dirac(b: GaussianBelief, g) -> float:
    """W2 between ``b`` and the point mass at ``g``: sqrt(dist(mean, g)^2 + Tr P)."""
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.shape != b.mean.shape:
        raise ValueError("dimension mismatch")
    return float(np.sqrt(w2_sq_to_dirac_many(b.mean, b.cov, g, b.chart)))


def w2_to_goal(b: GaussianBelief, goal: GoalSpec) -> float:
    """E-weighted W2 to the goal center's point mass."""
    return float(np.sqrt(w2_sq_to_dirac_many(b.mean, b.cov, goal.center, b.chart, goal.e_inv)))


def goal_reach_lower_bound(b: GaussianBelief, goal: GoalSpec) -> float:
    """``1 - W2^2(b, delta_g) / r^2`` for a ball goal; may be negative (vacuous)."""
    if not goal.is_ball:
        raise ValueError("ball-shaped goal required; use goal_reach_lower_bound_ellipsoid")
    w2sq = w2_sq_to_dirac_many(b.mean, b.cov, goal.center, b.chart)
    return float(1.0 - w2sq / goal.radius**2)


def goal_reach_lower_bound_ellipsoid(b: GaussianBelief, goal: GoalSpec) -> float:
    w2sq = w2_sq_to_dirac_many(b.mean, b.cov, goal.center, b.chart, goal.e_inv)
    return float(1.0 - w2sq / goal.radius**2)
