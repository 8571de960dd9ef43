"""Full stitching pipeline: consensus, densification, field, solve, mosaic.

The first image is the reference: its mesh is anchored near rest pose and
its field is the identity, while the target mesh carries the inverted
regional similarities so the target content deforms onto the reference
frame. On consensus failure the pipeline falls back to one global RANSAC
homography treated as a single region covering both images.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np

from scipy.ndimage import binary_erosion

from .compositor import blend, compute_canvas, warp_image
from .errors import ConsensusError, EstimationError, MetricError
from .evalmetrics import NCC_WINDOW, OverlapScore, rmse_ncc
from .field import WarpMesh, constant_field, densify, similarity_field
from .geometry import apply_homography, estimate_similarity, ransac_homography
from .ingest import StitchBundle
from .meshopt import assemble, solve
from .region_consensus import RegionCorrespondence, group_matches_by_region, regional_ransac


@dataclass
class PipelineReport:
    method: str = "regional_consensus"
    fallback_global: bool = False
    correspondences: list = dataclass_field(default_factory=list)  # (a, b, inliers)
    energy_before: float = 0.0
    energy_after: float = 0.0
    score: Optional[OverlapScore] = None
    dropped_targets: int = 0
    skipped_triangles: tuple = (0, 0)
    warnings: list = dataclass_field(default_factory=list)
    timings: dict = dataclass_field(default_factory=dict)  # log-only, not in to_text

    def to_text(self) -> str:
        """Deterministic key=value report (timings stay out on purpose)."""
        lines = [
            f"method={self.method}",
            f"fallback_global={str(self.fallback_global).lower()}",
            f"correspondences={len(self.correspondences)}",
        ]
        for i, (a, b, n) in enumerate(self.correspondences):
            lines.append(f"correspondence_{i}=region_a:{a} region_b:{b} inliers:{n}")
        lines.append(f"energy_before={self.energy_before!r}")
        lines.append(f"energy_after={self.energy_after!r}")
        if self.score is not None:
            lines.append(f"rmse_ncc={self.score.score!r}")
            lines.append(f"rmse_ncc_x100={self.score.scaled!r}")
            lines.append(f"evaluated={self.score.evaluated}")
            lines.append(f"skipped={self.score.skipped}")
        lines.append(f"dropped_targets={self.dropped_targets}")
        lines.append(f"skipped_triangles_a={self.skipped_triangles[0]}")
        lines.append(f"skipped_triangles_b={self.skipped_triangles[1]}")
        lines.append(f"warnings={len(self.warnings)}")
        for i, w in enumerate(self.warnings):
            lines.append(f"warning_{i}={w}")
        return "\n".join(lines) + "\n"


@dataclass
class StitchResult:
    mosaic: np.ndarray
    report: PipelineReport
    meshes: list
    correspondences: list
    warped: tuple  # (layer_a, layer_b)
    coverage: tuple  # (mask_a, mask_b)
    overlap: np.ndarray
    dense: list = dataclass_field(default_factory=list)
    fields: list = dataclass_field(default_factory=list)


def score_mask(overlap: np.ndarray, window: int = NCC_WINDOW) -> np.ndarray:
    """Overlap pixels whose whole NCC window lies inside both coverages.

    Windows straddling a coverage border mix content with background and
    would dominate the score, so the overlap is shrunk by the window
    radius before evaluation.
    """
    return binary_erosion(overlap, structure=np.ones((window, window), dtype=bool))


def _overlap_masks(shape_a, shape_b, corrs) -> tuple[np.ndarray, np.ndarray]:
    """Pixels of each image that land inside the other under any region model."""

    def coverage(shape_src, shape_dst, transforms):
        h, w = shape_src
        hd, wd = shape_dst
        gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        hit = np.zeros(h * w, dtype=bool)
        for t in transforms:
            proj = apply_homography(t, pts)
            hit |= (
                (proj[:, 0] >= 0)
                & (proj[:, 0] <= wd - 1)
                & (proj[:, 1] >= 0)
                & (proj[:, 1] <= hd - 1)
            )
        return hit.reshape(h, w)

    fwd = [c.homography for c in corrs]
    bwd = [np.linalg.inv(c.homography) for c in corrs]
    return coverage(shape_a, shape_b, fwd), coverage(shape_b, shape_a, bwd)


def _global_fallback(bundle: StitchBundle, report: PipelineReport):
    cfg = bundle.config
    if len(bundle.matches) < 4:
        raise ConsensusError(
            "regional consensus failed and too few matches remain for a global model"
        )
    try:
        h, inl = ransac_homography(
            bundle.matches, cfg.ransac_threshold, cfg.ransac_iterations, seed=cfg.seed
        )
        sim = estimate_similarity(bundle.matches[inl])
    except EstimationError as exc:
        raise ConsensusError(f"global RANSAC fallback failed: {exc}") from exc
    report.fallback_global = True
    report.method = "global_fallback"
    report.warnings.append("regional consensus failed; using one global homography")
    corr = RegionCorrespondence(
        region_a=0,
        region_b=0,
        homography=h,
        inliers=bundle.matches[inl],
        inlier_indices=np.asarray(inl),
        similarity=sim,
    )
    zero_a = np.zeros_like(bundle.mask_a)
    zero_b = np.zeros_like(bundle.mask_b)
    return [corr], zero_a, zero_b


def run_stitch(bundle: StitchBundle) -> StitchResult:
    """Execute the full pipeline on a validated bundle."""
    cfg = bundle.config.validate()
    report = PipelineReport()
    timings = report.timings

    t0 = time.perf_counter()
    candidates = group_matches_by_region(
        bundle.matches, bundle.mask_a, bundle.mask_b, cfg.min_matches
    )
    mask_a, mask_b = bundle.mask_a, bundle.mask_b
    try:
        corrs = regional_ransac(
            candidates,
            seed=cfg.seed,
            inlier_threshold=cfg.ransac_threshold,
            iterations=cfg.ransac_iterations,
            min_inliers=cfg.min_inliers,
        )
    except ConsensusError:
        corrs, mask_a, mask_b = _global_fallback(bundle, report)
    report.correspondences = [(c.region_a, c.region_b, c.weight) for c in corrs]
    timings["consensus"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ha, wa = bundle.image_a.shape[:2]
    hb, wb = bundle.image_b.shape[:2]
    mesh_a = WarpMesh.regular(wa, ha, cfg.mesh_cols, cfg.mesh_rows)
    mesh_b = WarpMesh.regular(wb, hb, cfg.mesh_cols, cfg.mesh_rows)
    overlap_a, overlap_b = _overlap_masks((ha, wa), (hb, wb), corrs)
    dense = []
    for corr in corrs:
        dense.append(
            densify(mesh_a, corr, mask_a, overlap_a, cfg.sigma, cfg.gamma, side="a")
        )
        dense.append(
            densify(mesh_b, corr, mask_b, overlap_b, cfg.sigma, cfg.gamma, side="b")
        )
    timings["densify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    field_a = constant_field(mesh_a)
    field_b = similarity_field(mesh_b, corrs, mask_b, use_region_b=True, invert=True)
    timings["field"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    system = assemble(
        [mesh_a, mesh_b],
        dense,
        [field_a, field_b],
        lines=[bundle.lines_a, bundle.lines_b],
        lambda_align=cfg.lambda_align,
        lambda_similarity=cfg.lambda_similarity,
        lambda_line=cfg.lambda_line,
    )
    report.dropped_targets = system.dropped_targets
    if system.dropped_targets:
        report.warnings.append(
            f"{system.dropped_targets} dense targets fell outside the other image"
        )
    report.energy_before = system.objective(system.rest_vector())
    grids = solve(system)
    x = np.concatenate([g.ravel() for g in grids])
    report.energy_after = system.objective(x)
    mesh_a.deformed, mesh_b.deformed = grids
    timings["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    canvas = compute_canvas([mesh_a, mesh_b])
    warped_a, cover_a, skip_a = warp_image(bundle.image_a, mesh_a, canvas)
    warped_b, cover_b, skip_b = warp_image(bundle.image_b, mesh_b, canvas)
    report.skipped_triangles = (skip_a, skip_b)
    if skip_a or skip_b:
        report.warnings.append(
            f"skipped inverted triangles: {skip_a} (reference), {skip_b} (target)"
        )
    mosaic, overlap = blend(warped_a, cover_a, warped_b, cover_b, mode=cfg.blend_mode)
    timings["composite"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        report.score = rmse_ncc(warped_a, warped_b, score_mask(overlap))
    except MetricError:
        report.warnings.append("warped layers do not overlap; no score computed")
    timings["score"] = time.perf_counter() - t0

    return StitchResult(
        mosaic=mosaic,
        report=report,
        meshes=[mesh_a, mesh_b],
        correspondences=corrs,
        warped=(warped_a, warped_b),
        coverage=(cover_a, cover_b),
        overlap=overlap,
        dense=dense,
        fields=[field_a, field_b],
    )


def stitch_with_global_homography(bundle: StitchBundle) -> StitchResult:
    """Baseline: warp the target by one global RANSAC homography.

    Uses the same mesh machinery (target mesh vertices mapped through the
    inverse homography) so canvas, sampling, and scoring are directly
    comparable with the full pipeline.
    """
    cfg = bundle.config.validate()
    report = PipelineReport(method="global_homography")
    h, inl = ransac_homography(
        bundle.matches, cfg.ransac_threshold, cfg.ransac_iterations, seed=cfg.seed
    )
    report.correspondences = [(0, 0, len(inl))]

    ha, wa = bundle.image_a.shape[:2]
    hb, wb = bundle.image_b.shape[:2]
    mesh_a = WarpMesh.regular(wa, ha, cfg.mesh_cols, cfg.mesh_rows)
    mesh_b = WarpMesh.regular(wb, hb, cfg.mesh_cols, cfg.mesh_rows)
    mesh_a.deformed = mesh_a.rest.copy()
    flat = apply_homography(np.linalg.inv(h), mesh_b.flat_rest())
    mesh_b.deformed = flat.reshape(mesh_b.rows + 1, mesh_b.cols + 1, 2)

    canvas = compute_canvas([mesh_a, mesh_b])
    warped_a, cover_a, skip_a = warp_image(bundle.image_a, mesh_a, canvas)
    warped_b, cover_b, skip_b = warp_image(bundle.image_b, mesh_b, canvas)
    report.skipped_triangles = (skip_a, skip_b)
    mosaic, overlap = blend(warped_a, cover_a, warped_b, cover_b, mode=cfg.blend_mode)
    try:
        report.score = rmse_ncc(warped_a, warped_b, score_mask(overlap))
    except MetricError:
        report.warnings.append("warped layers do not overlap; no score computed")
    return StitchResult(
        mosaic=mosaic,
        report=report,
        meshes=[mesh_a, mesh_b],
        correspondences=[],
        warped=(warped_a, warped_b),
        coverage=(cover_a, cover_b),
        overlap=overlap,
    )
