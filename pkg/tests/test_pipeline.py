import dataclasses

import numpy as np
import pytest

from planestitch.errors import ConsensusError
from planestitch.ingest import (
    StitchConfig,
    single_plane_plan,
    synth_scene,
    two_plane_plan,
)
from planestitch.pipeline import run_stitch, score_mask, stitch_with_global_homography

SMALL = StitchConfig(mesh_cols=24, mesh_rows=24)


@pytest.fixture(scope="module")
def two_plane():
    bundle, truth = synth_scene(two_plane_plan(480, 360, config=SMALL), seed=7)
    return bundle, truth


class TestRunStitch:
    def test_two_plane_selects_planted_pairs(self, two_plane):
        bundle, truth = two_plane
        result = run_stitch(bundle)
        got = {(a, b) for a, b, _ in result.report.correspondences}
        expected = {(a, truth.label_map[a]) for a in truth.homographies}
        assert got == expected
        assert not result.report.fallback_global

    def test_two_plane_recovers_translations(self, two_plane):
        bundle, truth = two_plane
        result = run_stitch(bundle)
        for corr in result.correspondences:
            h = truth.homographies[corr.region_a]
            planted = (h[0, 2], h[1, 2])
            sim = corr.similarity
            assert abs(sim.tx - planted[0]) < 0.5
            assert abs(sim.ty - planted[1]) < 0.5
            assert abs(sim.c - 1.0) < 0.01
            assert abs(sim.s) < 0.01

    def test_beats_global_homography_baseline(self, two_plane):
        bundle, _ = two_plane
        ours = run_stitch(bundle).report.score.score
        base = stitch_with_global_homography(bundle).report.score.score
        assert ours < base

    def test_single_plane_alignment_quality(self):
        bundle, _ = synth_scene(single_plane_plan(config=SMALL), seed=3)
        result = run_stitch(bundle)
        assert result.report.score.score < 0.05

    def test_deterministic_given_seed(self, two_plane):
        bundle, _ = two_plane
        r1 = run_stitch(bundle)
        r2 = run_stitch(bundle)
        assert np.array_equal(r1.mosaic, r2.mosaic)
        assert r1.report.to_text() == r2.report.to_text()

    def test_energy_decreases(self, two_plane):
        bundle, _ = two_plane
        report = run_stitch(bundle).report
        assert report.energy_after < report.energy_before

    def test_fallback_to_global_ransac(self):
        bundle, _ = synth_scene(single_plane_plan(config=SMALL), seed=4)
        strict = dataclasses.replace(bundle.config, min_inliers=10_000)
        bundle = dataclasses.replace(bundle, config=strict)
        result = run_stitch(bundle)
        assert result.report.fallback_global
        assert result.report.method == "global_fallback"
        assert result.report.correspondences[0][:2] == (0, 0)
        assert result.report.score is not None

    def test_zero_matches_raises_consensus_error(self):
        bundle, _ = synth_scene(single_plane_plan(config=SMALL), seed=5)
        empty = dataclasses.replace(bundle, matches=np.empty((0, 4)))
        with pytest.raises(ConsensusError):
            run_stitch(empty)

    def test_report_text_roundtrips_keys(self, two_plane):
        bundle, _ = two_plane
        text = run_stitch(bundle).report.to_text()
        keys = {line.split("=", 1)[0] for line in text.strip().splitlines()}
        for expected in (
            "method",
            "fallback_global",
            "correspondences",
            "energy_before",
            "energy_after",
            "rmse_ncc",
            "evaluated",
            "dropped_targets",
        ):
            assert expected in keys
        assert not any(k.startswith("timing") for k in keys)

    def test_mosaic_covers_union(self, two_plane):
        bundle, _ = two_plane
        result = run_stitch(bundle)
        union = result.coverage[0] | result.coverage[1]
        assert (result.mosaic[~union] == 0).all()
        assert result.mosaic[union].mean() > 10


def test_score_mask_erodes_by_window_radius():
    overlap = np.zeros((11, 11), dtype=bool)
    overlap[2:9, 2:9] = True
    eroded = score_mask(overlap, window=5)
    expected = np.zeros_like(overlap)
    expected[4:7, 4:7] = True
    assert np.array_equal(eroded, expected)
