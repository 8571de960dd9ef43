"""Mosaic rendering: canvas fitting, mesh-guided warping, and blending.

Each quad of a solved mesh is split into two triangles along the top-left
to bottom-right diagonal; output pixels inside a deformed triangle are
backward-mapped to rest-pose coordinates by barycentric interpolation and
sampled bilinearly from the source image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import InputError
from .field import WarpMesh

CANVAS_PADDING = 1


@dataclass
class Canvas:
    width: int
    height: int
    offset: np.ndarray  # translation making all deformed vertices non-negative


def compute_canvas(meshes, padding: int = CANVAS_PADDING) -> Canvas:
    """Tight bounding box of every deformed vertex, padded on all sides."""
    pts = []
    for mesh in meshes:
        if mesh.deformed is None:
            raise InputError("mesh has no deformed vertices; solve it first")
        pts.append(np.asarray(mesh.deformed, dtype=np.float64).reshape(-1, 2))
    allpts = np.vstack(pts)
    if not np.isfinite(allpts).all():
        raise InputError("deformed vertices contain non-finite values")
    lo = np.floor(allpts.min(axis=0)).astype(np.int64) - padding
    hi = np.ceil(allpts.max(axis=0)).astype(np.int64) + padding
    return Canvas(
        width=int(hi[0] - lo[0] + 1),
        height=int(hi[1] - lo[1] + 1),
        offset=-lo.astype(np.float64),
    )


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample at float coordinates, clamping to the nearest edge pixel."""
    h, w = image.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(xs.astype(np.int64), w - 2) if w > 1 else np.zeros_like(xs, np.int64)
    y0 = np.minimum(ys.astype(np.int64), h - 2) if h > 1 else np.zeros_like(ys, np.int64)
    u = xs - x0
    v = ys - y0
    if image.ndim == 3:
        u = u[:, None]
        v = v[:, None]
    tl = image[y0, x0].astype(np.float64)
    tr = image[y0, x0 + 1].astype(np.float64)
    bl = image[y0 + 1, x0].astype(np.float64)
    br = image[y0 + 1, x0 + 1].astype(np.float64)
    return (1 - u) * (1 - v) * tl + u * (1 - v) * tr + (1 - u) * v * bl + u * v * br


def warp_image(image, mesh: WarpMesh, canvas: Canvas) -> tuple[np.ndarray, np.ndarray, int]:
    """Render one image under its solved mesh onto the canvas.

    Returns (warped uint8 image, boolean coverage mask, skipped triangle
    count). Triangles whose deformed area is not positive are skipped and
    counted.
    """
    img = np.asarray(image)
    if img.shape[0] != mesh.height or img.shape[1] != mesh.width:
        raise InputError(
            f"image {img.shape[1]}x{img.shape[0]} does not match mesh span "
            f"{mesh.width}x{mesh.height}"
        )
    if mesh.deformed is None:
        raise InputError("mesh has no deformed vertices; solve it first")

    rest = mesh.rest.reshape(-1, 2)
    deformed = mesh.deformed.reshape(-1, 2) + canvas.offset
    out_shape = (canvas.height, canvas.width) + img.shape[2:]
    out = np.zeros(out_shape, dtype=np.float64)
    coverage = np.zeros((canvas.height, canvas.width), dtype=bool)
    stride = mesh.cols + 1
    skipped = 0
    eps = 1e-9

    for r in range(mesh.rows):
        base = r * stride
        for c in range(mesh.cols):
            tl = base + c
            corners = (tl, tl + 1, tl + stride, tl + stride + 1)
            for tri in ((0, 1, 3), (0, 3, 2)):  # diagonal TL-BR
                ia, ib, ic = (corners[t] for t in tri)
                a, b, ccr = deformed[ia], deformed[ib], deformed[ic]
                v0 = b - a
                v1 = ccr - a
                den = v0[0] * v1[1] - v0[1] * v1[0]
                if den <= eps:
                    skipped += 1
                    continue
                x0 = max(int(np.floor(min(a[0], b[0], ccr[0]))), 0)
                x1 = min(int(np.ceil(max(a[0], b[0], ccr[0]))), canvas.width - 1)
                y0 = max(int(np.floor(min(a[1], b[1], ccr[1]))), 0)
                y1 = min(int(np.ceil(max(a[1], b[1], ccr[1]))), canvas.height - 1)
                if x1 < x0 or y1 < y0:
                    continue
                gx, gy = np.meshgrid(
                    np.arange(x0, x1 + 1, dtype=np.float64),
                    np.arange(y0, y1 + 1, dtype=np.float64),
                )
                px = gx.ravel() - a[0]
                py = gy.ravel() - a[1]
                w1 = (px * v1[1] - py * v1[0]) / den
                w2 = (v0[0] * py - v0[1] * px) / den
                inside = (w1 >= -eps) & (w2 >= -eps) & (w1 + w2 <= 1 + eps)
                if not inside.any():
                    continue
                w1 = w1[inside]
                w2 = w2[inside]
                ra, rb, rc = rest[ia], rest[ib], rest[ic]
                sx = ra[0] + w1 * (rb[0] - ra[0]) + w2 * (rc[0] - ra[0])
                sy = ra[1] + w1 * (rb[1] - ra[1]) + w2 * (rc[1] - ra[1])
                values = _bilinear_sample(img, sx, sy)
                ys = gy.ravel()[inside].astype(np.int64)
                xs = gx.ravel()[inside].astype(np.int64)
                out[ys, xs] = values
                coverage[ys, xs] = True

    warped = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return warped, coverage, skipped


def blend(
    warped_a,
    mask_a,
    warped_b,
    mask_b,
    mode: str = "feather",
) -> tuple[np.ndarray, np.ndarray]:
    """Composite two warped layers; returns (mosaic, overlap mask).

    Exclusive coverage is copied through; overlap pixels are mixed either
    by feathering (weights are each layer's distance to its own coverage
    boundary) or by plain averaging.
    """
    a = np.asarray(warped_a, dtype=np.float64)
    b = np.asarray(warped_b, dtype=np.float64)
    ma = np.asarray(mask_a, dtype=bool)
    mb = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape or ma.shape != mb.shape or a.shape[:2] != ma.shape:
        raise InputError("warped layers and masks must share one canvas")
    if mode not in ("feather", "average"):
        raise InputError(f"unknown blend mode {mode!r}")

    overlap = ma & mb
    out = np.zeros_like(a)
    out[ma & ~mb] = a[ma & ~mb]
    out[mb & ~ma] = b[mb & ~ma]
    if overlap.any():
        if mode == "feather":
            da = distance_transform_edt(ma)
            db = distance_transform_edt(mb)
            wa = da[overlap] / (da[overlap] + db[overlap])
        else:
            wa = np.full(int(overlap.sum()), 0.5)
        if a.ndim == 3:
            wa = wa[:, None]
        out[overlap] = wa * a[overlap] + (1 - wa) * b[overlap]
    mosaic = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return mosaic, overlap
