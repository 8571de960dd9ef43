"""Quadratic mesh-deformation energy: assembly and sparse solve.

The energy couples both images' meshes through four residual blocks:
alignment of densified correspondences, per-edge similarity against the
estimated field, per-quad local similarity, and straightness of sampled
line keypoints. All residuals are linear in the deformed vertex
coordinates, so the minimizer comes from one sparse least-squares solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import AssemblyError, InputError, SolverError
from .field import WarpMesh

DEFAULT_LAMBDA_ALIGN = 0.12
DEFAULT_LAMBDA_SIMILARITY = 0.08
DEFAULT_LAMBDA_LINE = 0.3
ANCHOR_WEIGHT = 1e3
LINE_SAMPLE_SPACING = 20.0
MIN_LINE_SAMPLES = 3


def bilinear_coeffs(point, corners) -> np.ndarray:
    """Bilinear weights of a point inside one rectangular rest-pose quad.

    corners are ordered [top-left, top-right, bottom-left, bottom-right];
    the weights sum to one and reproduce the point as a combination of the
    corners.
    """
    p = np.asarray(point, dtype=np.float64)
    c = np.asarray(corners, dtype=np.float64)
    if c.shape != (4, 2):
        raise InputError(f"expected 4 corner points, got shape {c.shape}")
    x0, y0 = c[0]
    x1, y1 = c[3]
    if x1 <= x0 or y1 <= y0:
        raise InputError("quad corners must span a positive-area rectangle")
    u = (p[0] - x0) / (x1 - x0)
    v = (p[1] - y0) / (y1 - y0)
    eps = 1e-9
    if not (-eps <= u <= 1 + eps and -eps <= v <= 1 + eps):
        raise InputError(f"point {p} lies outside the quad")
    u = min(max(u, 0.0), 1.0)
    v = min(max(v, 0.0), 1.0)
    return np.array([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v])


def phi_coefficients(mesh: WarpMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Anchor (N, 4) vertex ids and bilinear weights for points in rest pose."""
    pts = np.asarray(points, dtype=np.float64)
    x0, y0 = mesh.rest[0, 0]
    eps = 1e-9
    if (
        pts[:, 0].min() < x0 - eps
        or pts[:, 1].min() < y0 - eps
        or pts[:, 0].max() > x0 + mesh.width - 1 + eps
        or pts[:, 1].max() > y0 + mesh.height - 1 + eps
    ):
        raise InputError("points lie outside the mesh span")
    tx = np.clip((pts[:, 0] - x0) * mesh.cols / (mesh.width - 1.0), 0.0, mesh.cols)
    ty = np.clip((pts[:, 1] - y0) * mesh.rows / (mesh.height - 1.0), 0.0, mesh.rows)
    col = np.minimum(tx.astype(np.int64), mesh.cols - 1)
    row = np.minimum(ty.astype(np.int64), mesh.rows - 1)
    u = tx - col
    v = ty - row
    stride = mesh.cols + 1
    tl = row * stride + col
    vids = np.column_stack([tl, tl + 1, tl + stride, tl + stride + 1])
    weights = np.column_stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v])
    return vids, weights


def edge_similarity_rows(rest_edge) -> np.ndarray:
    """Linear expressions for c(e), s(e) of one edge, as a (2, 4) matrix.

    Multiplying by the deformed coordinates [xj, yj, xk, yk] yields the
    least-squares similarity parameters of the edge: c scales along the
    rest edge, s along its +90 degree rotation (the [[c, s], [-s, c]]
    convention used throughout).
    """
    e = np.asarray(rest_edge, dtype=np.float64)
    n2 = float(e @ e)
    if n2 <= 0.0:
        raise AssemblyError("zero-length edge in similarity rows")
    ex, ey = e
    return np.array(
        [
            [-ex, -ey, ex, ey],
            [-ey, ex, ey, -ex],
        ]
    ) / n2


def _quad_template(cw: float, ch: float) -> np.ndarray:
    """Local-similarity residual rows of one rectangular quad, (8, 8).

    Quad unknowns are ordered [TLx, TLy, TRx, TRy, BLx, BLy, BRx, BRy].
    The quad's (c, s) is pooled over its four edges; each edge contributes
    the residual of its deformed vector against that pooled similarity.
    """
    pos = {"TL": 0, "TR": 1, "BL": 2, "BR": 3}
    edges = [
        ("TL", "TR", (cw, 0.0)),
        ("BL", "BR", (cw, 0.0)),
        ("TL", "BL", (0.0, ch)),
        ("TR", "BR", (0.0, ch)),
    ]
    denom = sum(ex * ex + ey * ey for _, _, (ex, ey) in edges)
    c_vec = np.zeros(8)
    s_vec = np.zeros(8)
    selectors = []
    for a, b, (ex, ey) in edges:
        dx = np.zeros(8)
        dy = np.zeros(8)
        dx[2 * pos[b]] = 1.0
        dx[2 * pos[a]] = -1.0
        dy[2 * pos[b] + 1] = 1.0
        dy[2 * pos[a] + 1] = -1.0
        selectors.append((dx, dy, ex, ey))
        c_vec += ex * dx + ey * dy
        s_vec += ey * dx - ex * dy
    c_vec /= denom
    s_vec /= denom
    rows = []
    for dx, dy, ex, ey in selectors:
        rows.append(dx - ex * c_vec - ey * s_vec)
        rows.append(dy - ey * c_vec + ex * s_vec)
    return np.asarray(rows)


def sample_line_keypoints(segments, spacing: float = LINE_SAMPLE_SPACING):
    """Interior sample fractions per segment: list of (a values) arrays.

    Every segment gets at least MIN_LINE_SAMPLES uniformly spaced samples
    (endpoints included); only the interior ones are returned since the
    endpoint residuals vanish identically.
    """
    segs = np.asarray(segments, dtype=np.float64).reshape(-1, 4)
    out = []
    for x1, y1, x2, y2 in segs:
        length = float(np.hypot(x2 - x1, y2 - y1))
        n = max(MIN_LINE_SAMPLES, int(round(length / spacing)) + 1)
        out.append(np.arange(1, n - 1, dtype=np.float64) / (n - 1))
    return out


class _RowBuilder:
    """Accumulates weighted sparse residual rows."""

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []
        self.count = 0

    def add_block(self, row_local, cols, vals, rhs, weight):
        """row_local: (K,) row ids within the block; appends K' = max+1 rows."""
        n_rows = int(row_local.max()) + 1 if len(row_local) else 0
        self.rows.append(np.asarray(row_local, dtype=np.int64) + self.count)
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=np.float64) * weight)
        self.rhs.append(np.asarray(rhs, dtype=np.float64) * weight)
        self.count += n_rows

    def build(self, n_unknowns):
        if self.count == 0:
            return sp.csr_matrix((0, n_unknowns)), np.empty(0)
        mat = sp.coo_matrix(
            (
                np.concatenate(self.vals),
                (np.concatenate(self.rows), np.concatenate(self.cols)),
            ),
            shape=(self.count, n_unknowns),
        ).tocsr()
        return mat, np.concatenate(self.rhs)


@dataclass
class EnergySystem:
    """Sparse weighted residual rows plus gauge anchors over both meshes."""

    meshes: list[WarpMesh]
    offsets: list[int]  # first unknown index of each mesh
    terms: sp.csr_matrix
    rhs: np.ndarray
    anchors: sp.csr_matrix
    anchor_rhs: np.ndarray
    term_rows: dict = dataclass_field(default_factory=dict)
    dropped_targets: int = 0

    @property
    def n_unknowns(self) -> int:
        return self.terms.shape[1]

    def rest_vector(self) -> np.ndarray:
        return np.concatenate([m.flat_rest().ravel() for m in self.meshes])

    def objective(self, x) -> float:
        r = self.terms @ x - self.rhs
        ra = self.anchors @ x - self.anchor_rhs
        return float(r @ r + ra @ ra)

    def gradient(self, x) -> np.ndarray:
        r = self.terms @ x - self.rhs
        ra = self.anchors @ x - self.anchor_rhs
        return 2.0 * (self.terms.T @ r) + 2.0 * (self.anchors.T @ ra)

    def split(self, x) -> list[np.ndarray]:
        grids = []
        for mesh, off in zip(self.meshes, self.offsets):
            n = 2 * mesh.vertex_count
            grids.append(x[off : off + n].reshape(mesh.rows + 1, mesh.cols + 1, 2))
        return grids


def _unknown_ids(offset: int, vids: np.ndarray, coord: int) -> np.ndarray:
    return offset + 2 * vids + coord


def assemble(
    meshes: list[WarpMesh],
    dense,
    fields,
    lines=None,
    lambda_align: float = DEFAULT_LAMBDA_ALIGN,
    lambda_similarity: float = DEFAULT_LAMBDA_SIMILARITY,
    lambda_line: float = DEFAULT_LAMBDA_LINE,
    anchor_weight: float = ANCHOR_WEIGHT,
    anchor_mesh: int = 0,
) -> EnergySystem:
    """Build the sparse residual system for a two-mesh stitch.

    dense is a list of DenseCorrespondence (source 'a' = mesh 0, 'b' =
    mesh 1); fields holds the per-vertex (c, s) array of each mesh; lines
    optionally holds an (S, 4) segment array per mesh. Row weights are the
    square roots of the term multipliers.
    """
    if len(meshes) != 2:
        raise AssemblyError(f"expected two meshes, got {len(meshes)}")
    if len(fields) != len(meshes):
        raise AssemblyError("one similarity field per mesh is required")
    dense = list(dense)
    if not dense or all(len(d.vertex_ids) == 0 for d in dense):
        raise AssemblyError("no dense correspondences to align")
    for mesh, f in zip(meshes, fields):
        if np.asarray(f).shape != (mesh.vertex_count, 2):
            raise AssemblyError("field shape does not match mesh vertices")
        if not np.isfinite(f).all():
            raise AssemblyError("similarity field contains non-finite values")

    offsets = [0, 2 * meshes[0].vertex_count]
    n_unknowns = offsets[1] + 2 * meshes[1].vertex_count
    builder = _RowBuilder()
    term_rows = {}
    dropped = 0

    # alignment rows: vertex of the source mesh against the bilinear anchor
    # of its target point in the other mesh
    w_align = np.sqrt(lambda_align)
    start = builder.count
    for d in dense:
        if len(d.vertex_ids) == 0:
            continue
        src = 0 if d.source == "a" else 1
        dst = 1 - src
        mesh_dst = meshes[dst]
        targets = np.asarray(d.targets, dtype=np.float64)
        dx0, dy0 = mesh_dst.rest[0, 0]
        eps = 1e-9
        inside = (
            (targets[:, 0] >= dx0 - eps)
            & (targets[:, 0] <= dx0 + mesh_dst.width - 1 + eps)
            & (targets[:, 1] >= dy0 - eps)
            & (targets[:, 1] <= dy0 + mesh_dst.height - 1 + eps)
        )
        dropped += int((~inside).sum())
        if not inside.any():
            continue
        vids_src = np.asarray(d.vertex_ids, dtype=np.int64)[inside]
        anchors_v, anchors_w = phi_coefficients(mesh_dst, targets[inside])
        n = len(vids_src)
        for coord in range(2):
            rows_local = np.repeat(np.arange(n), 5)
            cols = np.column_stack(
                [
                    _unknown_ids(offsets[src], vids_src, coord),
                    _unknown_ids(offsets[dst], anchors_v[:, 0], coord),
                    _unknown_ids(offsets[dst], anchors_v[:, 1], coord),
                    _unknown_ids(offsets[dst], anchors_v[:, 2], coord),
                    _unknown_ids(offsets[dst], anchors_v[:, 3], coord),
                ]
            ).ravel()
            vals = np.column_stack([np.ones(n), -anchors_w]).ravel()
            builder.add_block(rows_local, cols, vals, np.zeros(n), w_align)
    term_rows["align"] = builder.count - start
    if term_rows["align"] == 0:
        raise AssemblyError("every dense target fell outside the destination mesh")

    # field similarity rows: every grid edge's (c, s) against the field at
    # its lower-id endpoint
    start = builder.count
    for mesh, off, fld in zip(meshes, offsets, fields):
        fld = np.asarray(fld, dtype=np.float64)
        stride = mesh.cols + 1
        for horizontal in (True, False):
            if horizontal:
                r, c = np.mgrid[0 : mesh.rows + 1, 0 : mesh.cols]
                vj = r * stride + c
                vk = vj + 1
                coef = edge_similarity_rows([mesh.cell_width, 0.0])
            else:
                r, c = np.mgrid[0 : mesh.rows, 0 : mesh.cols + 1]
                vj = r * stride + c
                vk = vj + stride
                coef = edge_similarity_rows([0.0, mesh.cell_height])
            vj = vj.ravel()
            vk = vk.ravel()
            n = len(vj)
            cols4 = np.column_stack(
                [
                    _unknown_ids(off, vj, 0),
                    _unknown_ids(off, vj, 1),
                    _unknown_ids(off, vk, 0),
                    _unknown_ids(off, vk, 1),
                ]
            )
            for row_idx in range(2):  # c rows, then s rows
                rows_local = np.repeat(np.arange(n), 4)
                vals = np.broadcast_to(coef[row_idx], (n, 4)).ravel()
                builder.add_block(rows_local, cols4.ravel(), vals, fld[vj, row_idx], 1.0)
    term_rows["field"] = builder.count - start

    # local similarity rows: quad template applied to every cell
    w_local = np.sqrt(lambda_similarity)
    start = builder.count
    if lambda_similarity > 0:
        for mesh, off in zip(meshes, offsets):
            template = _quad_template(mesh.cell_width, mesh.cell_height)
            stride = mesh.cols + 1
            r, c = np.mgrid[0 : mesh.rows, 0 : mesh.cols]
            tl = (r * stride + c).ravel()
            quads = np.column_stack([tl, tl + 1, tl + stride, tl + stride + 1])
            n = len(tl)
            cols8 = np.empty((n, 8), dtype=np.int64)
            cols8[:, 0::2] = off + 2 * quads
            cols8[:, 1::2] = off + 2 * quads + 1
            rows_local = np.repeat(np.arange(n * 8), 8)
            cols = np.repeat(cols8, 8, axis=0).ravel()
            vals = np.tile(template.ravel(), n)
            builder.add_block(rows_local, cols, vals, np.zeros(n * 8), w_local)
    term_rows["local"] = builder.count - start

    # line straightness rows for every interior sample of every segment
    w_line = np.sqrt(lambda_line)
    start = builder.count
    if lines is not None and lambda_line > 0:
        for mesh, off, segs in zip(meshes, offsets, lines):
            if segs is None or len(segs) == 0:
                continue
            segs = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
            fractions = sample_line_keypoints(segs)
            for (x1, y1, x2, y2), a_vals in zip(segs, fractions):
                if len(a_vals) == 0:
                    continue
                endpoints = np.array([[x1, y1], [x2, y2]])
                keypoints = endpoints[0] + a_vals[:, None] * (endpoints[1] - endpoints[0])
                kv, kw = phi_coefficients(mesh, keypoints)
                uv, uw = phi_coefficients(mesh, endpoints[0][None, :])
                vv, vw = phi_coefficients(mesh, endpoints[1][None, :])
                n = len(a_vals)
                for coord in range(2):
                    rows_local = np.repeat(np.arange(n), 12)
                    cols = np.column_stack(
                        [
                            _unknown_ids(off, kv, coord),
                            _unknown_ids(off, np.broadcast_to(uv, (n, 4)), coord),
                            _unknown_ids(off, np.broadcast_to(vv, (n, 4)), coord),
                        ]
                    ).ravel()
                    vals = np.column_stack(
                        [
                            kw,
                            -(1 - a_vals)[:, None] * uw,
                            -a_vals[:, None] * vw,
                        ]
                    ).ravel()
                    builder.add_block(rows_local, cols, vals, np.zeros(n), w_line)
    term_rows["line"] = builder.count - start

    terms, rhs = builder.build(n_unknowns)

    # gauge: soft-pin the reference mesh centroid to its rest position
    mesh0 = meshes[anchor_mesh]
    off0 = offsets[anchor_mesh]
    v = mesh0.vertex_count
    anchor = sp.lil_matrix((2, n_unknowns))
    for coord in range(2):
        anchor[coord, off0 + 2 * np.arange(v) + coord] = 1.0 / v
    centroid = mesh0.flat_rest().mean(axis=0)
    w_anchor = np.sqrt(anchor_weight)
    anchors = (anchor * w_anchor).tocsr()
    anchor_rhs = centroid * w_anchor

    return EnergySystem(
        meshes=list(meshes),
        offsets=offsets,
        terms=terms,
        rhs=rhs,
        anchors=anchors,
        anchor_rhs=anchor_rhs,
        term_rows=term_rows,
        dropped_targets=dropped,
    )


def solve(system: EnergySystem) -> list[np.ndarray]:
    """Minimize the weighted residual system; returns deformed vertex grids.

    The normal equations are solved through an augmented sparse system so
    the dense centroid-anchor rows never form a dense block: with
    y = C x - d the stationarity conditions become
    [[A^T A, C^T], [C, -I]] [x, y] = [A^T b, d].
    """
    a = system.terms
    ata = (a.T @ a).tocsr()
    atb = a.T @ system.rhs
    c = system.anchors
    k = sp.bmat(
        [[ata, c.T], [c, -sp.identity(c.shape[0], format="csr")]], format="csc"
    )
    rhs = np.concatenate([atb, system.anchor_rhs])
    try:
        # the system is structurally symmetric; the AT_PLUS_A ordering keeps
        # LU fill-in far below the default column ordering
        sol = splu(k, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    except Exception as exc:  # singular factorization
        raise SolverError(f"sparse solve failed: {exc}") from exc
    x = sol[: system.n_unknowns]
    if not np.isfinite(x).all():
        raise SolverError("solution contains non-finite vertex coordinates")
    grad = system.gradient(x)
    scale = max(1.0, float(np.abs(atb).max()))
    if np.abs(grad).max() > 1e-6 * scale:
        raise SolverError(
            f"solver did not reach stationarity (|grad|={np.abs(grad).max():.3e})"
        )
    return system.split(x)
