"""Dense mesh-vertex correspondences and the per-vertex similarity field.

Each accepted region pair induces matched positions for the mesh vertices
it covers (through a spatially weighted DLT) and one similarity transform.
Vertices outside every dominant region receive inverse-distance-weighted
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import EstimationError, InputError
from .geometry import (
    SimilarityParams,
    _dlt_rows,
    _normalization,
    apply_homography,
    split_matches,
)

DEFAULT_GAMMA = 0.01
IDW_EPSILON = 1.0  # px, keeps weights finite on region boundaries


@dataclass
class WarpMesh:
    """Regular quad mesh over one image: rest grid plus solved positions.

    Vertex grids have shape (rows + 1, cols + 1, 2) with x in [..., 0] and
    y in [..., 1]; vertex ids run row-major.
    """

    width: int
    height: int
    cols: int
    rows: int
    rest: np.ndarray
    deformed: Optional[np.ndarray] = None

    @classmethod
    def regular(cls, width: int, height: int, cols: int, rows: int) -> "WarpMesh":
        if cols < 2 or rows < 2:
            raise InputError("mesh needs at least 2x2 cells")
        xs = np.linspace(0.0, width - 1.0, cols + 1)
        ys = np.linspace(0.0, height - 1.0, rows + 1)
        gx, gy = np.meshgrid(xs, ys)
        return cls(width, height, cols, rows, np.stack([gx, gy], axis=-1))

    @property
    def cell_width(self) -> float:
        return (self.width - 1.0) / self.cols

    @property
    def cell_height(self) -> float:
        return (self.height - 1.0) / self.rows

    @property
    def vertex_count(self) -> int:
        return (self.rows + 1) * (self.cols + 1)

    def vertex_id(self, row: int, col: int) -> int:
        return row * (self.cols + 1) + col

    def flat_rest(self) -> np.ndarray:
        return self.rest.reshape(-1, 2)


@dataclass
class DenseCorrespondence:
    """Matched positions for mesh vertices of one dominant region pair."""

    source: str  # "a" if the vertices belong to image a's mesh, else "b"
    region_a: int
    region_b: int
    vertex_ids: np.ndarray  # (N,) ids into the source mesh
    targets: np.ndarray  # (N, 2) matched positions in the other image


class _MovingDltSolver:
    """Weighted DLT solves sharing one normalization across many query points.

    The Hartley normalization and the unweighted system rows depend only on
    the match set, so they are built once; each query point then costs one
    row scaling plus one (batched) SVD.
    """

    def __init__(self, matches):
        p, q = split_matches(matches)
        if len(p) < 4:
            raise EstimationError(f"moving DLT needs at least 4 pairs, got {len(p)}")
        self.p = p
        tp = _normalization(p)
        tq = _normalization(q)
        self.base = _dlt_rows(apply_homography(tp, p), apply_homography(tq, q))
        self.tp = tp
        self.tq_inv = np.linalg.inv(tq)

    def solve_many(self, points, sigma: float, gamma: float) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        d2 = ((pts[:, None, :] - self.p[None, :, :]) ** 2).sum(axis=-1)
        w = np.maximum(np.exp(-d2 / (sigma * sigma)), gamma)
        weights = np.repeat(w, 2, axis=1)
        n = len(pts)
        rows = self.base.shape[0]
        out = np.empty((n, 3, 3))
        # with 8 rows the null vector only appears in the full V matrix
        full = rows < 10
        chunk = max(1, int(4e6 // (rows * 9)))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            a = self.base[None, :, :] * weights[lo:hi, :, None]
            _, s, vt = np.linalg.svd(a, full_matrices=full)
            if np.any(s[:, 7] <= 1e-9 * s[:, 0]):
                raise EstimationError("degenerate weighted system in moving DLT")
            hn = vt[:, -1, :].reshape(-1, 3, 3)
            h = self.tq_inv[None] @ hn @ self.tp[None]
            w22 = h[:, 2, 2]
            scale = np.where(np.abs(w22) > 1e-12, w22, 1.0)
            h = h / scale[:, None, None]
            if np.any(np.abs(np.linalg.det(h)) <= 1e-12):
                raise EstimationError("moving DLT produced a singular homography")
            out[lo:hi] = h
        return out


def moving_dlt(vertex, inliers, sigma: float, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Locally weighted homography at one point.

    Pair k is weighted by max(exp(-||vertex - p_k||^2 / sigma^2), gamma);
    gamma = 1 degenerates to the global DLT on the same pairs.
    """
    solver = _MovingDltSolver(inliers)
    return solver.solve_many(np.asarray(vertex, dtype=np.float64)[None, :], sigma, gamma)[0]


def _vertex_blocks(mesh: WarpMesh) -> list[tuple[int, slice, slice]]:
    """Pixel block spanned by the cells incident to each vertex."""
    xs = mesh.rest[0, :, 0]
    ys = mesh.rest[:, 0, 1]
    blocks = []
    for r in range(mesh.rows + 1):
        y0 = int(np.floor(ys[max(r - 1, 0)]))
        y1 = int(np.ceil(ys[min(r + 1, mesh.rows)])) + 1
        for c in range(mesh.cols + 1):
            x0 = int(np.floor(xs[max(c - 1, 0)]))
            x1 = int(np.ceil(xs[min(c + 1, mesh.cols)])) + 1
            blocks.append((mesh.vertex_id(r, c), slice(y0, y1), slice(x0, x1)))
    return blocks


def densify(
    mesh: WarpMesh,
    corr,
    mask: np.ndarray,
    overlap: np.ndarray,
    sigma: Optional[float] = None,
    gamma: float = DEFAULT_GAMMA,
    side: str = "a",
) -> DenseCorrespondence:
    """Matched position for every mesh vertex covered by one region pair.

    A vertex participates when the cells around it touch pixels lying in
    the region and the overlap at once; its target is the moving-DLT
    homography applied to the vertex itself. side selects which endpoint
    of the inlier pairs lives on this mesh.
    """
    mask = np.asarray(mask)
    overlap = np.asarray(overlap, dtype=bool)
    if mask.shape != overlap.shape:
        raise InputError("mask and overlap shapes differ")
    if side == "a":
        label, inliers = corr.region_a, np.asarray(corr.inliers, dtype=np.float64)
    elif side == "b":
        label = corr.region_b
        m = np.asarray(corr.inliers, dtype=np.float64)
        inliers = np.column_stack([m[:, 2:], m[:, :2]])
    else:
        raise InputError(f"side must be 'a' or 'b', got {side!r}")

    if sigma is None:
        sigma = 0.1 * max(mesh.width, mesh.height)
    covered = (mask == label) & overlap
    flat = mesh.flat_rest()
    ids = []
    for vid, rows, cols in _vertex_blocks(mesh):
        if covered[rows, cols].any():
            ids.append(vid)
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return DenseCorrespondence(side, corr.region_a, corr.region_b, ids, np.empty((0, 2)))
    solver = _MovingDltSolver(inliers)
    hs = solver.solve_many(flat[ids], sigma, gamma)
    ph = np.column_stack([flat[ids], np.ones(len(ids))])
    proj = np.einsum("nij,nj->ni", hs, ph)
    denom = np.where(np.abs(proj[:, 2]) < 1e-12, 1e-12, proj[:, 2])
    targets = proj[:, :2] / denom[:, None]
    return DenseCorrespondence(side, corr.region_a, corr.region_b, ids, targets)


def constant_field(mesh: WarpMesh, c: float = 1.0, s: float = 0.0) -> np.ndarray:
    """Uniform (c, s) parameters for every vertex."""
    out = np.empty((mesh.vertex_count, 2))
    out[:, 0] = c
    out[:, 1] = s
    return out


def similarity_field(
    mesh: WarpMesh,
    corrs,
    mask: np.ndarray,
    use_region_b: bool = False,
    invert: bool = False,
    epsilon: float = IDW_EPSILON,
) -> np.ndarray:
    """Per-vertex (c, s) similarity parameters, shape (vertex_count, 2).

    Vertices inside a dominant region copy that region's parameters; all
    other vertices blend the regions by inverse squared distance to the
    nearest pixel of each region. With use_region_b/invert the field is
    built for the second image using the inverted transforms.
    """
    if not corrs:
        raise EstimationError("similarity field needs at least one region correspondence")
    mask = np.asarray(mask)
    anchors = []
    for corr in corrs:
        sim: SimilarityParams = corr.similarity.inverse() if invert else corr.similarity
        label = corr.region_b if use_region_b else corr.region_a
        anchors.append((int(label), np.array([sim.c, sim.s])))

    vx = np.rint(mesh.flat_rest()[:, 0]).astype(np.int64)
    vy = np.rint(mesh.flat_rest()[:, 1]).astype(np.int64)
    vx = np.clip(vx, 0, mask.shape[1] - 1)
    vy = np.clip(vy, 0, mask.shape[0] - 1)
    labels_at_vertex = mask[vy, vx]

    params = np.stack([p for _, p in anchors])  # (R, 2)
    dists = np.stack(
        [distance_transform_edt(mask != label)[vy, vx] for label, _ in anchors]
    )  # (R, V)
    weights = 1.0 / (dists + epsilon) ** 2
    field = (weights.T @ params) / weights.sum(axis=0)[:, None]
    for label, p in anchors:
        field[labels_at_vertex == label] = p
    return field
