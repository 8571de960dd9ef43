"""Stitch quality in the overlap: RMSE of one minus windowed NCC.

Every overlap pixel contributes the normalized cross correlation of the
5x5 neighborhoods around it in the two warped layers; the score is the
root mean square of (1 - NCC) over the pixels where the correlation is
defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InputError, MetricError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
NCC_WINDOW = 5
VARIANCE_FLOOR = 1e-8  # below this a window counts as textureless


def to_gray(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        w = np.asarray(GRAY_WEIGHTS)
        return img @ w
    raise InputError(f"expected a gray or RGB image, got shape {img.shape}")


@dataclass(frozen=True)
class OverlapScore:
    score: float  # in [0, 2]
    evaluated: int
    skipped: int

    @property
    def scaled(self) -> float:
        """Score times 100, the magnitude commonly used for reporting."""
        return 100.0 * self.score


def rmse_ncc(warped_ref, warped_tar, overlap_mask, window: int = NCC_WINDOW) -> OverlapScore:
    """Score two warped layers over their overlap; lower is better.

    Windows with (numerically) zero variance in either image are skipped
    and reported, since their correlation is undefined.
    """
    ga = to_gray(warped_ref)
    gb = to_gray(warped_tar)
    mask = np.asarray(overlap_mask, dtype=bool)
    if ga.shape != gb.shape or ga.shape != mask.shape:
        raise InputError("images and overlap mask must share one canvas")
    if not mask.any():
        raise MetricError("empty overlap")

    def win(x):
        return uniform_filter(x, size=window, mode="nearest")

    mean_a = win(ga)
    mean_b = win(gb)
    var_a = win(ga * ga) - mean_a * mean_a
    var_b = win(gb * gb) - mean_b * mean_b
    cov = win(ga * gb) - mean_a * mean_b

    textured = (var_a > VARIANCE_FLOOR) & (var_b > VARIANCE_FLOOR)
    valid = mask & textured
    skipped = int(mask.sum() - valid.sum())
    if not valid.any():
        return OverlapScore(0.0, 0, skipped)

    num = cov[valid]
    den2 = var_a[valid] * var_b[valid]
    ncc = np.empty_like(num)
    # exact Cauchy-Schwarz equality (identical windows up to sign) must give
    # exactly +-1 so that identical inputs score exactly zero
    exact = num * num == den2
    ncc[exact] = np.sign(num[exact])
    ncc[~exact] = num[~exact] / np.sqrt(den2[~exact])
    ncc = np.clip(ncc, -1.0, 1.0)

    contrib = (1.0 - ncc) ** 2
    score = float(np.sqrt(contrib.sum() / len(contrib)))
    return OverlapScore(score, int(valid.sum()), skipped)
