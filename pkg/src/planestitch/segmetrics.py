"""Permutation-invariant scoring of clustering-style label masks.

A predicted mask and a ground-truth mask are compared by relabeling the
ground truth with the label assignment that maximizes pixel agreement
(maximum-weight bipartite matching on the confusion matrix), then scoring
pixel accuracy and mean IoU against the relabeled mask.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError

__all__ = [
    "confusion_matrix",
    "max_weight_matching",
    "permute_mask",
    "permuted_scores",
]

MAX_LABEL = 255


def _as_mask(arr, name: str) -> np.ndarray:
    m = np.asarray(arr)
    if m.ndim != 2 or m.size == 0:
        raise InputError(f"{name}: expected a non-empty 2-D label mask, got shape {m.shape}")
    if not np.issubdtype(m.dtype, np.integer):
        raise InputError(f"{name}: label mask must have an integer dtype, got {m.dtype}")
    if m.min() < 0 or m.max() > MAX_LABEL:
        raise InputError(f"{name}: labels must lie in [0, {MAX_LABEL}]")
    return m


def confusion_matrix(pred, gt) -> np.ndarray:
    """Count matrix C with C[i, j] = number of pixels where pred == i and gt == j.

    Rows are prediction labels, columns ground-truth labels; the matrix is
    sized by the largest label present on each side.
    """
    p = _as_mask(pred, "pred")
    g = _as_mask(gt, "gt")
    if p.shape != g.shape:
        raise InputError(f"mask dimensions differ: pred {p.shape} vs gt {g.shape}")
    n_pred = int(p.max()) + 1
    n_gt = int(g.max()) + 1
    flat = p.ravel().astype(np.int64) * n_gt + g.ravel()
    counts = np.bincount(flat, minlength=n_pred * n_gt)
    return counts.reshape(n_pred, n_gt)


def _optimal_value(weights: np.ndarray) -> float:
    if weights.size == 0:
        return 0.0
    r, c = linear_sum_assignment(weights, maximize=True)
    return float(weights[r, c].sum())


def _lex_assignment(weights: np.ndarray) -> np.ndarray:
    """Column -> row assignment on a square matrix, maximizing total weight.

    Among all maximum-weight assignments, returns the one that maps the
    lowest column to the lowest feasible row, then the next column, and so
    on (sequential lexicographic refinement of the optimum).
    """
    s = weights.shape[0]
    if s == 0:
        return np.empty(0, dtype=np.int64)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    total = float(weights[rows, cols].sum())
    current = np.empty(s, dtype=np.int64)  # provisional optimal completion
    current[cols] = rows

    assign = np.full(s, -1, dtype=np.int64)
    free_rows = list(range(s))
    fixed_sum = 0.0
    for j in range(s):
        best_known = current[j]
        for i in free_rows:
            if i == best_known:
                assign[j] = i
                break
            # test whether fixing (i, j) still admits an optimal completion
            sub_rows = [r for r in free_rows if r != i]
            sub = weights[np.ix_(sub_rows, range(j + 1, s))]
            value = fixed_sum + float(weights[i, j]) + _optimal_value(sub)
            if np.isclose(value, total, rtol=1e-12, atol=1e-9):
                assign[j] = i
                if sub.size:
                    rr, cc = linear_sum_assignment(sub, maximize=True)
                    for a, b in zip(rr, cc):
                        current[j + 1 + b] = sub_rows[a]
                break
        if assign[j] < 0:  # unreachable: best_known is always feasible
            assign[j] = best_known
        free_rows.remove(assign[j])
        fixed_sum += float(weights[assign[j], j])
    return assign


def _complete_permutation(assign: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Turn a padded square assignment into the final label permutation.

    Columns whose assigned weight is zero (including padding) are treated as
    unmatched and relabeled deterministically: a column keeps its own id when
    that id is unclaimed, otherwise it receives the lowest free id.
    """
    n_pred, n_gt = counts.shape
    perm = np.full(n_gt, -1, dtype=np.int64)
    used: set[int] = set()
    for j in range(n_gt):
        i = int(assign[j])
        if i < n_pred and counts[i, j] > 0:
            perm[j] = i
            used.add(i)
    next_free = 0
    for j in range(n_gt):
        if perm[j] >= 0:
            continue
        if j not in used:
            perm[j] = j
            used.add(j)
            continue
        while next_free in used:
            next_free += 1
        perm[j] = next_free
        used.add(next_free)
    return perm


def max_weight_matching(weights) -> np.ndarray:
    """Injective map from ground-truth labels (columns) to prediction labels (rows).

    Maximizes the total matched weight; ties are broken toward the lowest
    ground-truth label then the lowest prediction label. Rectangular inputs
    are padded with zero-weight entries, and zero-weight columns fall back
    to their own id (or the lowest free id) so the result is deterministic.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise InputError(f"weight matrix must be 2-D, got shape {w.shape}")
    if w.size == 0:
        # no prediction labels at all: every column keeps its own id
        return np.arange(w.shape[1], dtype=np.int64)
    if w.min() < 0:
        raise InputError("weights must be non-negative")
    n_pred, n_gt = w.shape
    s = max(n_pred, n_gt)
    padded = np.zeros((s, s), dtype=np.float64)
    padded[:n_pred, :n_gt] = w
    assign = _lex_assignment(padded)
    return _complete_permutation(assign[:n_gt], w)


def permute_mask(gt, perm) -> np.ndarray:
    """Relabel a ground-truth mask pointwise through a label permutation."""
    g = _as_mask(gt, "gt")
    if isinstance(perm, dict):
        table = np.full(int(max(perm.keys(), default=-1)) + 1, -1, dtype=np.int64)
        for k, v in perm.items():
            table[k] = v
    else:
        table = np.asarray(perm, dtype=np.int64)
    top = int(g.max())
    if top >= table.shape[0] or np.any(table[: top + 1] < 0):
        raise InputError("permutation does not cover every label present in the mask")
    return table[g]


def _pair_iou(counts: np.ndarray) -> np.ndarray:
    """IoU of every (prediction label, ground-truth label) pair, in [0, 1]."""
    row = counts.sum(axis=1, keepdims=True)
    col = counts.sum(axis=0, keepdims=True)
    union = row + col - counts
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, counts / union, 0.0)
    return iou


def permuted_scores(pred, gt) -> tuple[float, float]:
    """Pixel accuracy and mean IoU against the best relabeling of the ground truth.

    The relabeling maximizes matched pixels; among weight ties it prefers the
    assignment with the larger summed pair IoU, which makes both returned
    scores exactly invariant to any relabeling of the prediction.
    """
    p = _as_mask(pred, "pred")
    g = _as_mask(gt, "gt")
    if p.shape != g.shape:
        raise InputError(f"mask dimensions differ: pred {p.shape} vs gt {g.shape}")
    counts = confusion_matrix(p, g)
    n_pred, n_gt = counts.shape
    s = max(n_pred, n_gt)
    augmented = np.zeros((s, s), dtype=np.float64)
    augmented[:n_pred, :n_gt] = counts * float(s + 1) + _pair_iou(counts)
    assign = _lex_assignment(augmented)
    perm = _complete_permutation(assign[:n_gt], counts)

    permuted = perm[g]
    accuracy = float(np.mean(p == permuted))
    ious = []
    for label in np.unique(permuted):
        inter = int(np.sum((p == label) & (permuted == label)))
        union = int(np.sum((p == label) | (permuted == label)))
        ious.append(inter / union)
    # summing in sorted order keeps the mean bit-identical across relabelings
    mean_iou = math.fsum(sorted(ious)) / len(ious)
    return accuracy, mean_iou
