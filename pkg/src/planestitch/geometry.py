"""Projective and similarity estimation primitives.

Point correspondences are (N, 4) float arrays with columns x1 y1 x2 y2,
endpoint 1 in the first image and endpoint 2 in the second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, InputError


def split_matches(matches) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(matches, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != 4:
        raise InputError(f"match array must have shape (N, 4), got {m.shape}")
    if not np.isfinite(m).all():
        raise InputError("match coordinates must be finite")
    return m[:, :2], m[:, 2:]


def apply_homography(H, pts) -> np.ndarray:
    """Project (N, 2) points through a 3x3 homography."""
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.column_stack([pts, np.ones(len(pts))])
    proj = ph @ np.asarray(H, dtype=np.float64).T
    w = proj[:, 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return proj[:, :2] / w[:, None]


def _normalization(pts: np.ndarray) -> np.ndarray:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / max(dist, 1e-12)
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def _dlt_rows(p: np.ndarray, q: np.ndarray, weights=None) -> np.ndarray:
    n = len(p)
    x, y = p[:, 0], p[:, 1]
    u, v = q[:, 0], q[:, 1]
    zero = np.zeros(n)
    one = np.ones(n)
    rows_u = np.column_stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u])
    rows_v = np.column_stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v])
    a = np.empty((2 * n, 9))
    a[0::2] = rows_u
    a[1::2] = rows_v
    if weights is not None:
        w = np.repeat(np.asarray(weights, dtype=np.float64), 2)
        a *= w[:, None]
    return a


def _solve_dlt(p: np.ndarray, q: np.ndarray, weights=None) -> np.ndarray:
    tp = _normalization(p)
    tq = _normalization(q)
    pn = apply_homography(tp, p)
    qn = apply_homography(tq, q)
    a = _dlt_rows(pn, qn, weights)
    _, s, vt = np.linalg.svd(a)
    # rank 8 is required for a well-posed nullspace solution
    if s[7] <= 1e-9 * s[0]:
        raise EstimationError("degenerate point configuration for homography estimation")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tq) @ hn @ tp
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= 1e-12:
        raise EstimationError("estimated homography is singular")
    return h


def estimate_homography_dlt(matches, weights=None) -> np.ndarray:
    """Least-squares homography via the normalized direct linear transform.

    Exact for four consistent pairs. Optional per-pair weights scale the
    linear system rows (used by the moving DLT).
    """
    p, q = split_matches(matches)
    if len(p) < 4:
        raise EstimationError(f"homography needs at least 4 pairs, got {len(p)}")
    return _solve_dlt(p, q, weights)


def symmetric_transfer_error(H, matches) -> np.ndarray:
    """Per-pair forward plus backward reprojection distance in pixels."""
    p, q = split_matches(matches)
    h = np.asarray(H, dtype=np.float64)
    fwd = np.sqrt(((apply_homography(h, p) - q) ** 2).sum(axis=1))
    bwd = np.sqrt(((apply_homography(np.linalg.inv(h), q) - p) ** 2).sum(axis=1))
    return fwd + bwd


def ransac_homography(
    matches,
    inlier_threshold: float = 3.0,
    iterations: int = 2000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Consensus homography and the indices of its inliers.

    Inliers are pairs with symmetric transfer error below the threshold;
    the best consensus set is refit with the DLT. Deterministic for a
    fixed seed.
    """
    m = np.asarray(matches, dtype=np.float64)
    p, q = split_matches(m)
    n = len(p)
    if n < 4:
        raise EstimationError(f"RANSAC needs at least 4 pairs, got {n}")
    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask = None
    for _ in range(iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = _solve_dlt(p[idx], q[idx])
        except EstimationError:
            continue
        mask = symmetric_transfer_error(h, m) < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 4:
        raise EstimationError("no homography with at least 4 inliers found")
    h = _solve_dlt(p[best_mask], q[best_mask])
    refined = symmetric_transfer_error(h, m) < inlier_threshold
    if refined.sum() >= 4:
        try:
            h = _solve_dlt(p[refined], q[refined])
            best_mask = refined
        except EstimationError:
            pass
    return h, np.flatnonzero(best_mask)


@dataclass(frozen=True)
class SimilarityParams:
    """Similarity transform q = S p + t with S = [[c, s], [-s, c]]."""

    c: float
    s: float
    tx: float = 0.0
    ty: float = 0.0

    @property
    def scale(self) -> float:
        return math.hypot(self.c, self.s)

    @property
    def angle(self) -> float:
        return math.atan2(self.s, self.c)

    def matrix(self) -> np.ndarray:
        return np.array([[self.c, self.s], [-self.s, self.c]])

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.matrix().T + np.array([self.tx, self.ty])

    def inverse(self) -> "SimilarityParams":
        n = self.c * self.c + self.s * self.s
        if n < 1e-24:
            raise EstimationError("similarity with zero scale is not invertible")
        ci, si = self.c / n, -self.s / n
        inv = np.array([[ci, si], [-si, ci]])
        ti = -(inv @ np.array([self.tx, self.ty]))
        return SimilarityParams(ci, si, float(ti[0]), float(ti[1]))


def estimate_similarity(matches) -> SimilarityParams:
    """Least-squares similarity (c, s, tx, ty) minimizing sum ||S p + t - q||^2."""
    p, q = split_matches(matches)
    if len(p) < 2:
        raise EstimationError(f"similarity needs at least 2 pairs, got {len(p)}")
    if np.allclose(p, p[0], atol=1e-12):
        raise EstimationError("source points are coincident")
    n = len(p)
    a = np.zeros((2 * n, 4))
    a[0::2, 0] = p[:, 0]
    a[0::2, 1] = p[:, 1]
    a[0::2, 2] = 1.0
    a[1::2, 0] = p[:, 1]
    a[1::2, 1] = -p[:, 0]
    a[1::2, 3] = 1.0
    b = q.reshape(-1)
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 4:
        raise EstimationError("degenerate configuration for similarity estimation")
    c, s, tx, ty = (float(v) for v in sol)
    if math.hypot(c, s) < 1e-12:
        raise EstimationError("estimated similarity has zero scale")
    return SimilarityParams(c, s, tx, ty)
