"""Input loading, validation, configuration, and synthetic fixtures.

File formats: images and label masks are 8-bit PNG (masks single channel,
pixel value = label id); matches and line segments are plain text with one
`x1 y1 x2 y2` row per line and `#` comments; configuration is flat
`key = value` text.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import InputError
from .geometry import apply_homography


@dataclass
class StitchConfig:
    lambda_align: float = 0.12
    lambda_similarity: float = 0.08
    lambda_line: float = 0.3
    mesh_cols: int = 100
    mesh_rows: int = 100
    ransac_threshold: float = 3.0
    ransac_iterations: int = 2000
    seed: int = 0
    sigma: Optional[float] = None  # moving-DLT radius; None = 0.1 * max image dim
    gamma: float = 0.01
    min_matches: int = 8
    min_inliers: int = 12
    blend_mode: str = "feather"

    def validate(self) -> "StitchConfig":
        if min(self.lambda_align, self.lambda_similarity, self.lambda_line) < 0:
            raise InputError("energy weights must be non-negative")
        if self.mesh_cols < 2 or self.mesh_rows < 2:
            raise InputError("mesh dimensions must be at least 2")
        if self.ransac_threshold <= 0 or self.ransac_iterations < 1:
            raise InputError("invalid RANSAC settings")
        if self.sigma is not None and self.sigma <= 0:
            raise InputError("sigma must be positive")
        if not 0 < self.gamma <= 1:
            raise InputError("gamma must lie in (0, 1]")
        if self.blend_mode not in ("feather", "average"):
            raise InputError(f"unknown blend mode {self.blend_mode!r}")
        return self


def parse_config(text: str, source: str = "<config>") -> StitchConfig:
    """Parse flat key = value text; unknown keys are rejected, missing keys default."""
    known = {f.name: f for f in dataclasses.fields(StitchConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise InputError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            if key == "sigma" and val.lower() in ("none", ""):
                values[key] = None
            elif known[key].type in ("int", int):
                values[key] = int(val)
            elif known[key].type in ("float", float, "Optional[float]"):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise InputError(f"{source}:{lineno}: bad value for {key}: {val!r}") from exc
    return StitchConfig(**values).validate()


def load_config(path) -> StitchConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def save_config(config: StitchConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(StitchConfig):
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {'none' if value is None else value}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_image(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except Exception as exc:
        raise InputError(f"{path}: cannot read image: {exc}") from exc
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8)
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise InputError("images are written as 8-bit data")
    Image.fromarray(arr).save(path)


def load_mask(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except Exception as exc:
        raise InputError(f"{path}: cannot read mask: {exc}") from exc
    if img.mode != "L":
        raise InputError(f"{path}: label masks must be single-channel 8-bit PNG")
    return np.asarray(img, dtype=np.uint8)


def save_mask(path, mask) -> None:
    m = np.asarray(mask)
    if m.ndim != 2 or m.min() < 0 or m.max() > 255:
        raise InputError("label mask must be 2-D with ids in [0, 255]")
    Image.fromarray(m.astype(np.uint8), mode="L").save(path)


def _load_rows(path, what: str) -> np.ndarray:
    path = Path(path)
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InputError(f"{path}:{lineno}: {what} rows need 4 numbers, got {raw!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: bad number in {raw!r}") from exc
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def _check_bounds(rows, shape_1, shape_2, path, what: str) -> None:
    path = Path(path)
    lineno = 0
    content = [
        ln
        for ln in enumerate(path.read_text().splitlines(), start=1)
        if ln[1].split("#", 1)[0].strip()
    ]
    for (lineno, _), row in zip(content, rows):
        for k, (value, dims) in enumerate(
            [((row[0], row[1]), shape_1), ((row[2], row[3]), shape_2)]
        ):
            w, h = dims
            x, y = value
            if not (0 <= x < w and 0 <= y < h):
                side = "first" if k == 0 else "second"
                raise InputError(
                    f"{path}:{lineno}: {what} point ({x:g}, {y:g}) outside the "
                    f"{side} image ({w}x{h})"
                )


def load_matches(path, size_a=None, size_b=None) -> np.ndarray:
    """size_a/size_b are (width, height); when given, endpoints are validated."""
    rows = _load_rows(path, "match")
    if size_a is not None and size_b is not None and len(rows):
        _check_bounds(rows, size_a, size_b, path, "match")
    return rows


def save_matches(path, matches) -> None:
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    with open(path, "w") as fh:
        fh.write("# x1 y1 x2 y2\n")
        for row in m:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_lines(path, size=None) -> np.ndarray:
    rows = _load_rows(path, "segment")
    if size is not None and len(rows):
        _check_bounds(rows, size, size, path, "segment")
    return rows


def save_lines(path, segments) -> None:
    save_matches(path, segments)


def save_mesh(path, grid) -> None:
    """Text dump of a vertex grid: header `rows cols`, then one x y per line."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 3 or g.shape[2] != 2:
        raise InputError("mesh grid must have shape (rows, cols, 2)")
    with open(path, "w") as fh:
        fh.write(f"{g.shape[0]} {g.shape[1]}\n")
        for row in g.reshape(-1, 2):
            fh.write(f"{float(row[0])!r} {float(row[1])!r}\n")


def load_mesh(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    try:
        rows, cols = (int(v) for v in lines[0].split())
        flat = np.asarray(
            [[float(a) for a in ln.split()] for ln in lines[1 : 1 + rows * cols]]
        )
        return flat.reshape(rows, cols, 2)
    except Exception as exc:
        raise InputError(f"{path}: malformed mesh dump: {exc}") from exc


@dataclass
class StitchBundle:
    image_a: np.ndarray
    image_b: np.ndarray
    mask_a: np.ndarray
    mask_b: np.ndarray
    matches: np.ndarray
    lines_a: Optional[np.ndarray]
    lines_b: Optional[np.ndarray]
    config: StitchConfig


def load_inputs(
    image_a,
    image_b,
    mask_a,
    mask_b,
    matches,
    lines_a=None,
    lines_b=None,
    config=None,
) -> StitchBundle:
    """Load and cross-validate all pipeline inputs from file paths."""
    img_a = load_image(image_a)
    img_b = load_image(image_b)
    m_a = load_mask(mask_a)
    m_b = load_mask(mask_b)
    if m_a.shape != img_a.shape[:2]:
        raise InputError(
            f"{mask_a}: mask {m_a.shape} does not match image {img_a.shape[:2]}"
        )
    if m_b.shape != img_b.shape[:2]:
        raise InputError(
            f"{mask_b}: mask {m_b.shape} does not match image {img_b.shape[:2]}"
        )
    size_a = (img_a.shape[1], img_a.shape[0])
    size_b = (img_b.shape[1], img_b.shape[0])
    match_rows = load_matches(matches, size_a, size_b)
    seg_a = load_lines(lines_a, size_a) if lines_a else None
    seg_b = load_lines(lines_b, size_b) if lines_b else None
    if config is None:
        cfg = StitchConfig()
    elif isinstance(config, StitchConfig):
        cfg = config.validate()
    else:
        cfg = load_config(config)
    return StitchBundle(img_a, img_b, m_a, m_b, match_rows, seg_a, seg_b, cfg)


# ---------------------------------------------------------------------------
# synthetic scenes


def translation_homography(dx: float, dy: float) -> np.ndarray:
    return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])


@dataclass
class RegionSpec:
    rect: tuple[int, int, int, int]  # row0, row1, col0, col1 in image a
    homography: np.ndarray  # maps image-a pixels to image-b pixels


@dataclass
class ScenePlan:
    width: int
    height: int
    regions: list[RegionSpec]
    matches_per_region: int = 60
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    relabel_b: Optional[dict[int, int]] = None  # region label in a -> label in b
    config: Optional[StitchConfig] = None

    def validate(self) -> "ScenePlan":
        if not 1 <= len(self.regions) <= 4:
            raise InputError("a planted scene uses between 1 and 4 regions")
        boxes = []
        for spec in self.regions:
            r0, r1, c0, c1 = spec.rect
            if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
                raise InputError(f"region rect {spec.rect} outside the image")
            for other in boxes:
                o0, o1, p0, p1 = other
                if r0 < o1 and o0 < r1 and c0 < p1 and p0 < c1:
                    raise InputError("region definitions overlap")
            boxes.append(spec.rect)
        if not 0 <= self.outlier_fraction < 1:
            raise InputError("outlier fraction must lie in [0, 1)")
        return self


@dataclass
class SceneTruth:
    homographies: dict[int, np.ndarray]  # label in image a -> planted transform
    label_map: dict[int, int]  # label in image a -> label in image b
    outlier_indices: np.ndarray
    noise_sigma: float


def _texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    coarse = gaussian_filter(rng.normal(size=(height, width)), 6.0)
    fine = gaussian_filter(rng.normal(size=(height, width)), 1.5)
    img = coarse / (np.abs(coarse).max() + 1e-12) + 0.6 * fine / (
        np.abs(fine).max() + 1e-12
    )
    img = (img - img.min()) / (img.max() - img.min())
    return np.clip(np.rint(img * 215 + 20), 0, 255).astype(np.uint8)


def synth_scene(plan: ScenePlan, seed: int = 0) -> tuple[StitchBundle, SceneTruth]:
    """Render a planted two-image scene plus its ground truth.

    Image a is a textured field with axis-aligned labeled regions; image b
    shows each region under its planted homography over an independent
    background. Matches are sampled per region (with optional noise and
    uniform outliers) and shuffled. Fixed seeds give byte-identical output.
    """
    plan.validate()
    rng = np.random.default_rng(seed)
    h, w = plan.height, plan.width
    image_a = _texture(rng, h, w)
    mask_a = np.zeros((h, w), dtype=np.uint8)
    label_map = dict(plan.relabel_b or {})
    for i, spec in enumerate(plan.regions, start=1):
        r0, r1, c0, c1 = spec.rect
        mask_a[r0:r1, c0:c1] = i
        label_map.setdefault(i, i)

    image_b = _texture(rng, h, w)  # independent background
    mask_b = np.zeros((h, w), dtype=np.uint8)
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pix_b = np.column_stack([gx.ravel(), gy.ravel()])
    assigned = np.zeros(h * w, dtype=bool)
    for i, spec in enumerate(plan.regions, start=1):
        r0, r1, c0, c1 = spec.rect
        back = apply_homography(np.linalg.inv(spec.homography), pix_b)
        inside = (
            (back[:, 0] >= c0)
            & (back[:, 0] <= c1 - 1)
            & (back[:, 1] >= r0)
            & (back[:, 1] <= r1 - 1)
            & ~assigned
        )
        idx = np.flatnonzero(inside)
        if len(idx) == 0:
            continue
        sx = back[idx, 0]
        sy = back[idx, 1]
        x0 = np.minimum(sx.astype(np.int64), w - 2)
        y0 = np.minimum(sy.astype(np.int64), h - 2)
        u = sx - x0
        v = sy - y0
        src = image_a.astype(np.float64)
        vals = (
            (1 - u) * (1 - v) * src[y0, x0]
            + u * (1 - v) * src[y0, x0 + 1]
            + (1 - u) * v * src[y0 + 1, x0]
            + u * v * src[y0 + 1, x0 + 1]
        )
        flat_b = image_b.reshape(-1)
        flat_b[idx] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
        mask_b.reshape(-1)[idx] = label_map[i]
        assigned[idx] = True

    rows = []
    truth_h = {}
    for i, spec in enumerate(plan.regions, start=1):
        truth_h[i] = spec.homography.copy()
        r0, r1, c0, c1 = spec.rect
        need = plan.matches_per_region
        got = []
        for _ in range(20):  # rejection-sample until enough pairs land in b
            p = np.column_stack(
                [
                    rng.uniform(c0, c1 - 1, 4 * need),
                    rng.uniform(r0, r1 - 1, 4 * need),
                ]
            )
            q = apply_homography(spec.homography, p)
            if plan.noise_sigma > 0:
                q = q + rng.normal(0, plan.noise_sigma, q.shape)
            ok = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
            got.append(np.column_stack([p[ok], q[ok]]))
            if sum(len(g) for g in got) >= need:
                break
        pairs = np.vstack(got)
        if len(pairs) < need:
            raise InputError(
                f"region {i}: planted transform pushes matches outside image b"
            )
        rows.append(pairs[:need])

    good = np.vstack(rows)
    f = plan.outlier_fraction
    n_out = int(round(len(good) * f / (1 - f))) if f > 0 else 0
    outliers = np.column_stack(
        [
            rng.uniform(0, w - 1, n_out),
            rng.uniform(0, h - 1, n_out),
            rng.uniform(0, w - 1, n_out),
            rng.uniform(0, h - 1, n_out),
        ]
    )
    matches = np.vstack([good, outliers]) if n_out else good
    order = rng.permutation(len(matches))
    matches = matches[order]
    outlier_flags = np.zeros(len(matches), dtype=bool)
    if n_out:
        outlier_flags[order >= len(good)] = True

    config = plan.config or StitchConfig()
    config = dataclasses.replace(config, seed=seed)
    bundle = StitchBundle(
        image_a, image_b, mask_a, mask_b, matches, None, None, config.validate()
    )
    truth = SceneTruth(
        homographies=truth_h,
        label_map=dict(label_map),
        outlier_indices=np.flatnonzero(outlier_flags),
        noise_sigma=plan.noise_sigma,
    )
    return bundle, truth


def two_plane_plan(
    width: int = 640,
    height: int = 480,
    shifts=((20.0, 0.0), (0.0, 15.0)),
    matches_per_region: int = 60,
    noise_sigma: float = 0.3,
    outlier_fraction: float = 0.3,
    config: Optional[StitchConfig] = None,
) -> ScenePlan:
    """Two side-by-side planes under different translations, labels swapped in b."""
    half = width // 2
    margin = 16
    return ScenePlan(
        width=width,
        height=height,
        regions=[
            RegionSpec(
                (margin, height - margin, margin, half - margin),
                translation_homography(*shifts[0]),
            ),
            RegionSpec(
                (margin, height - margin, half + margin, width - margin),
                translation_homography(*shifts[1]),
            ),
        ],
        matches_per_region=matches_per_region,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        relabel_b={1: 2, 2: 1},
        config=config,
    )


def single_plane_plan(
    width: int = 480,
    height: int = 360,
    shift=(25.0, 10.0),
    matches_per_region: int = 80,
    noise_sigma: float = 0.3,
    outlier_fraction: float = 0.1,
    config: Optional[StitchConfig] = None,
) -> ScenePlan:
    """One dominant plane under a pure translation."""
    return ScenePlan(
        width=width,
        height=height,
        regions=[
            RegionSpec((0, height, 0, width), translation_homography(*shift))
        ],
        matches_per_region=matches_per_region,
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        config=config,
    )


def write_fixture(directory, bundle: StitchBundle, truth: Optional[SceneTruth] = None) -> None:
    """Write a complete input directory (plus truth.json when available)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_image(d / "image_a.png", bundle.image_a)
    save_image(d / "image_b.png", bundle.image_b)
    save_mask(d / "mask_a.png", bundle.mask_a)
    save_mask(d / "mask_b.png", bundle.mask_b)
    save_matches(d / "matches.txt", bundle.matches)
    if bundle.lines_a is not None:
        save_lines(d / "lines_a.txt", bundle.lines_a)
    if bundle.lines_b is not None:
        save_lines(d / "lines_b.txt", bundle.lines_b)
    save_config(bundle.config, d / "config.txt")
    if truth is not None:
        payload = {
            "homographies": {str(k): v.tolist() for k, v in truth.homographies.items()},
            "label_map": {str(k): v for k, v in truth.label_map.items()},
            "outlier_indices": truth.outlier_indices.tolist(),
            "noise_sigma": truth.noise_sigma,
        }
        (d / "truth.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_fixture(directory) -> StitchBundle:
    """Load a fixture directory written by write_fixture (or hand-assembled)."""
    d = Path(directory)
    lines_a = d / "lines_a.txt"
    lines_b = d / "lines_b.txt"
    config = d / "config.txt"
    return load_inputs(
        d / "image_a.png",
        d / "image_b.png",
        d / "mask_a.png",
        d / "mask_b.png",
        d / "matches.txt",
        lines_a=lines_a if lines_a.exists() else None,
        lines_b=lines_b if lines_b.exists() else None,
        config=config if config.exists() else None,
    )
