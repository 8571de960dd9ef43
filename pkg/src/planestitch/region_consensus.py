"""Regional RANSAC: per region-pair consensus plus one-to-one pair selection.

Matches are grouped by the label pair under their endpoints, each group is
verified with RANSAC, and the surviving region pairs are made one-to-one by
a maximum-weight matching on inlier counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsensusError, EstimationError
from .geometry import SimilarityParams, estimate_similarity, ransac_homography
from .segmetrics import max_weight_matching

DEFAULT_MIN_MATCHES = 8
DEFAULT_MIN_INLIERS = 12
DEFAULT_MIN_REGION_SHARE = 0.005


@dataclass
class RegionPairCandidate:
    region_a: int
    region_b: int
    matches: np.ndarray  # (M, 4) rows restricted to this label pair
    indices: np.ndarray  # rows into the original match set


@dataclass
class RegionCorrespondence:
    region_a: int
    region_b: int
    homography: np.ndarray
    inliers: np.ndarray  # (K, 4)
    inlier_indices: np.ndarray  # rows into the original match set
    similarity: SimilarityParams

    @property
    def weight(self) -> int:
        return len(self.inliers)


def dominant_labels(mask: np.ndarray, min_share: float = DEFAULT_MIN_REGION_SHARE) -> np.ndarray:
    """Labels whose pixel share is at least min_share of the mask."""
    counts = np.bincount(np.asarray(mask).ravel())
    share = counts / counts.sum()
    return np.flatnonzero(share >= min_share)


def _labels_at(mask: np.ndarray, pts: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    cols = np.clip(np.rint(pts[:, 0]).astype(np.int64), 0, w - 1)
    rows = np.clip(np.rint(pts[:, 1]).astype(np.int64), 0, h - 1)
    return mask[rows, cols]


def group_matches_by_region(
    matches,
    mask_a: np.ndarray,
    mask_b: np.ndarray,
    min_matches: int = DEFAULT_MIN_MATCHES,
    min_region_share: float = DEFAULT_MIN_REGION_SHARE,
) -> list[RegionPairCandidate]:
    """Split matches into per-(region_a, region_b) candidates.

    Pairs touching non-dominant regions are ignored, and candidates with
    fewer than min_matches pairs are dropped. The result is sorted by
    (region_a, region_b).
    """
    m = np.asarray(matches, dtype=np.float64)
    if m.size == 0:
        return []
    la = _labels_at(np.asarray(mask_a), m[:, :2])
    lb = _labels_at(np.asarray(mask_b), m[:, 2:])
    keep_a = np.isin(la, dominant_labels(mask_a, min_region_share))
    keep_b = np.isin(lb, dominant_labels(mask_b, min_region_share))
    valid = keep_a & keep_b

    candidates = []
    pairs = np.unique(np.column_stack([la[valid], lb[valid]]), axis=0)
    for a, b in pairs:
        sel = np.flatnonzero(valid & (la == a) & (lb == b))
        if len(sel) < min_matches:
            continue
        candidates.append(RegionPairCandidate(int(a), int(b), m[sel], sel))
    candidates.sort(key=lambda c: (c.region_a, c.region_b))
    return candidates


def regional_ransac(
    candidates: list[RegionPairCandidate],
    seed: int = 0,
    inlier_threshold: float = 3.0,
    iterations: int = 2000,
    min_inliers: int = DEFAULT_MIN_INLIERS,
) -> list[RegionCorrespondence]:
    """Run RANSAC per candidate and keep a one-to-one set of region pairs.

    Each surviving candidate is weighted by its inlier count and region
    pairs are selected by maximum-weight bipartite matching, so no region
    label on either side is used twice. Candidate i uses seed + i, which
    keeps parallel runs reproducible.
    """
    survivors = []
    for idx, cand in enumerate(candidates):
        if len(cand.matches) < 4:
            continue
        try:
            h, inl = ransac_homography(
                cand.matches, inlier_threshold, iterations, seed=seed + idx
            )
        except EstimationError:
            continue
        if len(inl) < min_inliers:
            continue
        survivors.append((cand, h, inl))
    if not survivors:
        raise ConsensusError("no region pair produced enough RANSAC inliers")

    labels_a = sorted({c.region_a for c, _, _ in survivors})
    labels_b = sorted({c.region_b for c, _, _ in survivors})
    index_a = {lab: i for i, lab in enumerate(labels_a)}
    index_b = {lab: i for i, lab in enumerate(labels_b)}
    weights = np.zeros((len(labels_a), len(labels_b)), dtype=np.int64)
    table = {}
    for cand, h, inl in survivors:
        weights[index_a[cand.region_a], index_b[cand.region_b]] = len(inl)
        table[(cand.region_a, cand.region_b)] = (cand, h, inl)

    perm = max_weight_matching(weights)  # column (b) -> row (a)
    selected = []
    for j, lab_b in enumerate(labels_b):
        i = int(perm[j])
        if i >= len(labels_a) or weights[i, j] == 0:
            continue
        lab_a = labels_a[i]
        cand, h, inl = table[(lab_a, lab_b)]
        inlier_matches = cand.matches[inl]
        try:
            sim = estimate_similarity(inlier_matches)
        except EstimationError:
            continue
        selected.append(
            RegionCorrespondence(
                region_a=lab_a,
                region_b=lab_b,
                homography=h,
                inliers=inlier_matches,
                inlier_indices=cand.indices[inl],
                similarity=sim,
            )
        )
    if not selected:
        raise ConsensusError("region-pair matching left no usable correspondence")
    selected.sort(key=lambda c: c.region_a)
    return selected
