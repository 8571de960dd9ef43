import itertools

import numpy as np
import pytest

from planestitch.errors import ConsensusError
from planestitch.region_consensus import (
    RegionPairCandidate,
    group_matches_by_region,
    regional_ransac,
)


def rect_mask(h, w, rects, background=0):
    """rects: list of (label, row0, row1, col0, col1)."""
    mask = np.full((h, w), background, dtype=np.uint8)
    for label, r0, r1, c0, c1 in rects:
        mask[r0:r1, c0:c1] = label
    return mask


def sample_in(rng, n, row0, row1, col0, col1):
    x = rng.uniform(col0 + 1, col1 - 2, n)
    y = rng.uniform(row0 + 1, row1 - 2, n)
    return np.column_stack([x, y])


def translated(p, dx, dy, rng=None, noise=0.0):
    q = p + np.array([dx, dy])
    if noise and rng is not None:
        q = q + rng.normal(0, noise, q.shape)
    return np.column_stack([p, q])


class TestGrouping:
    def test_single_region_pair_holds_everything(self):
        rng = np.random.default_rng(0)
        mask_a = np.full((60, 80), 2, dtype=np.uint8)
        mask_b = np.full((60, 80), 5, dtype=np.uint8)
        p = sample_in(rng, 20, 0, 60, 0, 80)
        cands = group_matches_by_region(translated(p, 0, 0), mask_a, mask_b)
        assert len(cands) == 1
        assert (cands[0].region_a, cands[0].region_b) == (2, 5)
        assert len(cands[0].matches) == 20

    def test_two_planes_split_sixty_forty(self):
        rng = np.random.default_rng(1)
        mask = rect_mask(100, 200, [(1, 0, 100, 0, 100), (2, 0, 100, 100, 200)])
        p1 = sample_in(rng, 60, 0, 100, 0, 100)
        p2 = sample_in(rng, 40, 0, 100, 100, 200)
        m = np.vstack([translated(p1, 0, 0), translated(p2, 0, 0)])
        cands = group_matches_by_region(m, mask, mask)
        sizes = {(c.region_a, c.region_b): len(c.matches) for c in cands}
        assert sizes == {(1, 1): 60, (2, 2): 40}

    def test_empty_match_set(self):
        mask = np.zeros((10, 10), dtype=np.uint8)
        assert group_matches_by_region(np.empty((0, 4)), mask, mask) == []

    def test_min_matches_filter(self):
        rng = np.random.default_rng(2)
        mask = np.full((50, 50), 1, dtype=np.uint8)
        p = sample_in(rng, 5, 0, 50, 0, 50)
        assert group_matches_by_region(translated(p, 0, 0), mask, mask, min_matches=8) == []

    def test_non_dominant_regions_ignored(self):
        rng = np.random.default_rng(3)
        # label 7 covers only 4 pixels of 10000: below the 0.5% share cut
        mask = rect_mask(100, 100, [(1, 0, 100, 0, 100), (7, 0, 2, 0, 2)])
        p = sample_in(rng, 30, 10, 90, 10, 90)
        cands = group_matches_by_region(translated(p, 0, 0), mask, mask)
        assert {(c.region_a, c.region_b) for c in cands} == {(1, 1)}


class TestRegionalRansac:
    def test_single_plane_recovers_most_inliers(self):
        rng = np.random.default_rng(4)
        mask = np.full((200, 300), 1, dtype=np.uint8)
        p = sample_in(rng, 80, 0, 200, 0, 300)
        m = translated(p, 15.0, -4.0, rng, noise=0.3)
        cands = group_matches_by_region(m, mask, mask)
        corrs = regional_ransac(cands, seed=0)
        assert len(corrs) == 1
        assert len(corrs[0].inliers) >= 0.9 * len(m)

    def test_two_planes_with_spurious_cross_matches(self):
        rng = np.random.default_rng(5)
        mask = rect_mask(200, 400, [(1, 0, 200, 0, 200), (2, 0, 200, 200, 400)])
        p1 = sample_in(rng, 60, 0, 200, 0, 200)
        p2 = sample_in(rng, 60, 0, 200, 200, 400)
        good = np.vstack(
            [
                translated(p1, 20.0, 0.0, rng, noise=0.3),
                translated(p2, 0.0, 15.0, rng, noise=0.3),
            ]
        )
        # ~10% spurious matches crossing regions
        pc = sample_in(rng, 12, 0, 200, 0, 200)
        cross = np.column_stack([pc, sample_in(rng, 12, 0, 200, 200, 400)])
        m = np.vstack([good, cross])

        cands = group_matches_by_region(m, mask, mask)
        corrs = regional_ransac(cands, seed=0)
        assert {(c.region_a, c.region_b) for c in corrs} == {(1, 1), (2, 2)}

        # selected pairing maximizes total inlier weight (exhaustive oracle)
        weights = {}
        for idx, cand in enumerate(cands):
            try:
                from planestitch.geometry import ransac_homography

                _, inl = ransac_homography(cand.matches, seed=idx)
                weights[(cand.region_a, cand.region_b)] = len(inl)
            except Exception:
                weights[(cand.region_a, cand.region_b)] = 0
        best = 0
        labels_a = sorted({a for a, _ in weights})
        labels_b = sorted({b for _, b in weights})
        for perm in itertools.permutations(labels_b):
            if len(labels_a) > len(perm):
                continue
            total = sum(
                weights.get((a, b), 0) for a, b in zip(labels_a, perm)
            )
            best = max(best, total)
        assert sum(c.weight for c in corrs) >= best

    def test_competing_pairs_keep_heavier(self):
        rng = np.random.default_rng(6)
        mask_a = np.full((200, 200), 3, dtype=np.uint8)
        mask_b = rect_mask(200, 200, [(1, 0, 100, 0, 200), (2, 100, 200, 0, 200)])
        p_big = sample_in(rng, 50, 10, 90, 0, 200)
        p_small = sample_in(rng, 15, 110, 190, 0, 200)
        m = np.vstack([translated(p_big, 0, 0), translated(p_small, 0, 0)])
        corrs = regional_ransac(group_matches_by_region(m, mask_a, mask_b), seed=0)
        assert [(c.region_a, c.region_b) for c in corrs] == [(3, 1)]

    def test_pairing_injective_and_inliers_disjoint(self):
        rng = np.random.default_rng(7)
        mask = rect_mask(150, 300, [(1, 0, 150, 0, 150), (2, 0, 150, 150, 300)])
        p1 = sample_in(rng, 40, 0, 150, 0, 150)
        p2 = sample_in(rng, 40, 0, 150, 150, 300)
        m = np.vstack([translated(p1, 5, 3, rng, 0.2), translated(p2, -4, 8, rng, 0.2)])
        corrs = regional_ransac(group_matches_by_region(m, mask, mask), seed=1)
        assert len({c.region_a for c in corrs}) == len(corrs)
        assert len({c.region_b for c in corrs}) == len(corrs)
        all_idx = np.concatenate([c.inlier_indices for c in corrs])
        assert len(all_idx) == len(np.unique(all_idx))

    def test_no_survivor_raises_consensus_error(self):
        rng = np.random.default_rng(8)
        # pure noise: no model reaches min_inliers
        m = np.column_stack(
            [rng.uniform(0, 100, (20, 2)), rng.uniform(0, 100, (20, 2))]
        )
        cand = RegionPairCandidate(0, 0, m, np.arange(20))
        with pytest.raises(ConsensusError):
            regional_ransac([cand], seed=0, min_inliers=12)

    def test_similarity_fitted_on_inliers(self):
        rng = np.random.default_rng(9)
        mask = np.full((200, 200), 1, dtype=np.uint8)
        p = sample_in(rng, 50, 0, 200, 0, 200)
        m = translated(p, 12.0, 7.0)
        corrs = regional_ransac(group_matches_by_region(m, mask, mask), seed=0)
        sim = corrs[0].similarity
        assert np.allclose([sim.c, sim.s, sim.tx, sim.ty], [1, 0, 12, 7], atol=1e-6)
