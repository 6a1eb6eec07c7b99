"""Gaussian belief propagation in a vector-space chart and on SE(2)."""

from __future__ import annotations

import numpy as np

from .. import geometry as geo
from ..belief import GaussianBelief


def euclidean_belief_propagate(b: GaussianBelief, A, Q, new_mean) -> GaussianBelief:
    """Linear(ised) update: mean replaced by ``new_mean``, ``P <- A P A^T + Q``."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    P = A @ b.cov @ A.T + Q
    return GaussianBelief(new_mean, 0.5 * (P + P.T), b.chart)


def lie_cov_step(P: np.ndarray, xi: np.ndarray, Q: np.ndarray) -> np.ndarray:
    ad = geo.adjoint_many(geo.exp_many(-np.asarray(xi, dtype=float)))
    out = ad @ P @ np.swapaxes(ad, -1, -2) + Q
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def lie_belief_propagate(b: GaussianBelief, xi, Q) -> GaussianBelief:
    """Lie-Gaussian update for ``x_next = x Exp(xi)`` with tangent noise ``Q``.

    The covariance is transported by ``Ad_{Exp(-xi)}`` into the tangent space
    at the new mean before the process noise is added.
    """
    if b.chart != "se2":
        raise ValueError("lie_belief_propagate needs an SE(2) belief")
    xi = xi.as_array() if isinstance(xi, geo.Tangent2) else np.asarray(xi, dtype=float)
    mean = geo.compose_many(b.mean, geo.exp_many(xi))
    return GaussianBelief(mean, lie_cov_step(b.cov, xi, np.asarray(Q, dtype=float)), "se2")
