"""Least-squares rigid alignment of corresponded 3D point sets (Arun et al.)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import math

import numpy as np

from .errors import (DegenerateConfigurationError, InsufficientCorrespondencesError,
                     ValidationError)
from .geometry import RigidTransform

JACOBI_SWEEPS = 32
JACOBI_TOL = 1e-14
RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Correspondences:
    model_pts: np.ndarray
    camera_pts: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.model_pts, dtype=np.float64)
        b = np.asarray(self.camera_pts, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 3 or a.shape != b.shape:
            raise ValidationError(f"point arrays must both be N×3, got {a.shape} and {b.shape}")
        if len(a) < 3:
            raise InsufficientCorrespondencesError(f"need at least 3 correspondences, got {len(a)}")
        object.__setattr__(self, "model_pts", a)
        object.__setattr__(self, "camera_pts", b)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if len(w) != len(a) or np.any(w < 0) or not w.sum() > 0:
                raise ValidationError("weights must be N non-negative values with a positive sum")
            object.__setattr__(self, "weights", w)

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.full(len(self.model_pts), 1.0 / len(self.model_pts))
        return self.weights / self.weights.sum()


def jacobi_svd3(a: np.ndarray, sweeps: int = JACOBI_SWEEPS, tol: float = JACOBI_TOL):
    """SVD of a 3×3 matrix by one-sided (Hestenes) Jacobi rotations.

    Returns ``u, s, v`` with ``a = u @ diag(s) @ v.T``, singular values in
    descending order and ``u``, ``v`` orthogonal. Columns of ``u`` belonging to
    zero singular values are completed to an orthonormal basis.
    """
    work = np.array(a, dtype=np.float64).reshape(3, 3)
    v = np.eye(3)
    for _ in range(sweeps):
        rotated = False
        for p, q in ((0, 1), (0, 2), (1, 2)):
            alpha = work[:, p] @ work[:, p]
            beta = work[:, q] @ work[:, q]
            gamma = work[:, p] @ work[:, q]
            if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                continue
            rotated = True
            if abs(gamma) < 1e-100 * abs(beta - alpha):
                t = gamma / (beta - alpha)  # tan of a vanishing angle, avoids overflow in zeta
            else:
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for m in (work, v):
                mp = m[:, p].copy()
                m[:, p] = c * mp - s * m[:, q]
                m[:, q] = s * mp + c * m[:, q]
        if not rotated:
            break

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[:, order], v[:, order]
    u = np.zeros((3, 3))
    scale = sigma[0] if sigma[0] > 0 else 1.0
    for i in range(3):
        if sigma[i] > RANK_TOL * scale:
            u[:, i] = work[:, i] / sigma[i]
    # complete the basis for rank-deficient inputs
    if sigma[1] <= RANK_TOL * scale:
        if sigma[0] <= 0:
            u[:, 0] = (1.0, 0.0, 0.0)
        helper = np.eye(3)[np.argmin(np.abs(u[:, 0]))]
        u[:, 1] = np.cross(u[:, 0], helper)
        u[:, 1] /= np.linalg.norm(u[:, 1])
    if sigma[2] <= RANK_TOL * scale:
        u[:, 2] = np.cross(u[:, 0], u[:, 1])
    return u, sigma, v


def cross_covariance(corr: Correspondences):
    w = corr.weight_vector()
    mu_model = w @ corr.model_pts
    mu_cam = w @ corr.camera_pts
    h = (corr.model_pts - mu_model).T @ ((corr.camera_pts - mu_cam) * w[:, None])
    return h, mu_model, mu_cam


def fit_pose(corr: Correspondences) -> RigidTransform:
    """Pose minimizing the weighted sum of squared residuals ``|q_i - (R p_i + T)|²``."""
    h, mu_model, mu_cam = cross_covariance(corr)
    u, s, v = jacobi_svd3(h)
    if s[0] <= 0 or s[1] <= RANK_TOL * s[0]:
        raise DegenerateConfigurationError(
            f"cross-covariance rank < 2 (singular values {s[0]:.3g}, {s[1]:.3g}); points collinear?"
        )
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    r = _reorthonormalize(r)
    return RigidTransform(r, mu_cam - r @ mu_model)


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    # one Newton step of the polar iteration removes accumulated rounding
    return 0.5 * (r + np.linalg.inv(r).T)


def residual_rmse(corr: Correspondences, pose: RigidTransform) -> float:
    res = corr.camera_pts - pose.apply(corr.model_pts)
    return float(np.sqrt(corr.weight_vector() @ np.einsum("ij,ij->i", res, res)))
