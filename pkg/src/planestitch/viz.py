"""Diagnostic renderings: region overlays, field maps, correspondence plots.

All functions write PNG files and are only wired up behind the CLI's
--dump-intermediates flag; nothing here affects the pipeline results.
"""

from __future__ import annotations

import colorsys

import numpy as np
from PIL import Image, ImageDraw

TINT_COLORS = [
    (230, 80, 80),
    (80, 170, 230),
    (90, 200, 110),
    (230, 180, 70),
    (180, 100, 220),
    (90, 210, 200),
]


def _to_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    return img


def region_overlay(image_a, mask_a, image_b, mask_b, corr, max_lines: int = 80) -> Image.Image:
    """Side-by-side pair with the matched regions tinted and inliers drawn."""
    a = _to_rgb(image_a).astype(np.float64)
    b = _to_rgb(image_b).astype(np.float64)
    color = np.array(TINT_COLORS[corr.region_a % len(TINT_COLORS)], dtype=np.float64)
    sel_a = np.asarray(mask_a) == corr.region_a
    sel_b = np.asarray(mask_b) == corr.region_b
    a[sel_a] = 0.55 * a[sel_a] + 0.45 * color
    b[sel_b] = 0.55 * b[sel_b] + 0.45 * color

    h = max(a.shape[0], b.shape[0])
    canvas = np.zeros((h, a.shape[1] + b.shape[1], 3), dtype=np.uint8)
    canvas[: a.shape[0], : a.shape[1]] = np.clip(a, 0, 255).astype(np.uint8)
    canvas[: b.shape[0], a.shape[1] :] = np.clip(b, 0, 255).astype(np.uint8)
    img = Image.fromarray(canvas)
    draw = ImageDraw.Draw(img)
    shift = a.shape[1]
    step = max(1, len(corr.inliers) // max_lines)
    for x1, y1, x2, y2 in corr.inliers[::step]:
        draw.line((x1, y1, x2 + shift, y2), fill=(255, 255, 0), width=1)
    return img


def field_map(mesh, field, upscale: int = 6) -> Image.Image:
    """Per-vertex similarity parameters as color: hue = angle, value = scale."""
    grid = np.asarray(field).reshape(mesh.rows + 1, mesh.cols + 1, 2)
    c = grid[..., 0]
    s = grid[..., 1]
    scale = np.hypot(c, s)
    angle = np.arctan2(s, c)
    ref = max(scale.max(), 1e-9)
    rgb = np.zeros(grid.shape[:2] + (3,), dtype=np.uint8)
    for r in range(grid.shape[0]):
        for col in range(grid.shape[1]):
            hue = (angle[r, col] / (2 * np.pi)) % 1.0
            val = 0.35 + 0.65 * scale[r, col] / ref
            rgb[r, col] = tuple(
                int(255 * v) for v in colorsys.hsv_to_rgb(hue, 0.85, min(val, 1.0))
            )
    img = Image.fromarray(rgb)
    return img.resize((rgb.shape[1] * upscale, rgb.shape[0] * upscale), Image.NEAREST)


def dense_plot(image, mesh, dense_list) -> Image.Image:
    """Vertex-to-target displacements drawn over the source image."""
    img = Image.fromarray(_to_rgb(image).astype(np.uint8).copy())
    draw = ImageDraw.Draw(img)
    flat = mesh.flat_rest()
    for k, dense in enumerate(dense_list):
        color = TINT_COLORS[k % len(TINT_COLORS)]
        for vid, target in zip(dense.vertex_ids[::5], dense.targets[::5]):
            x, y = flat[vid]
            draw.line((x, y, target[0], target[1]), fill=color, width=1)
            draw.ellipse((x - 1, y - 1, x + 1, y + 1), fill=color)
    return img


def coverage_image(mask) -> Image.Image:
    return Image.fromarray(np.where(np.asarray(mask), 255, 0).astype(np.uint8))
