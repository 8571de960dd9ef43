import hashlib

import numpy as np
import pytest

from planestitch.errors import InputError
from planestitch.geometry import apply_homography
from planestitch.ingest import (
    RegionSpec,
    ScenePlan,
    StitchConfig,
    load_fixture,
    load_inputs,
    load_matches,
    load_mesh,
    parse_config,
    save_config,
    save_image,
    save_mask,
    save_matches,
    save_mesh,
    single_plane_plan,
    synth_scene,
    translation_homography,
    two_plane_plan,
    write_fixture,
)


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.lambda_align == 0.12
        assert cfg.lambda_similarity == 0.08
        assert cfg.lambda_line == 0.3
        assert cfg.mesh_cols == cfg.mesh_rows == 100
        assert cfg.sigma is None

    def test_override_single_key(self):
        cfg = parse_config("lambda_align = 0.5")
        assert cfg.lambda_align == 0.5
        assert cfg.lambda_similarity == 0.08

    def test_comments_and_blanks(self):
        cfg = parse_config("# comment\n\nseed = 7  # trailing\n")
        assert cfg.seed == 7

    def test_unknown_key_rejected(self):
        with pytest.raises(InputError, match="unknown config key"):
            parse_config("warp_speed = 9")

    def test_bad_value_cites_line(self):
        with pytest.raises(InputError, match=":2:"):
            parse_config("seed = 1\nmesh_cols = many")

    def test_invariants_enforced(self):
        with pytest.raises(InputError):
            parse_config("gamma = 0")
        with pytest.raises(InputError):
            parse_config("mesh_cols = 1")
        with pytest.raises(InputError):
            parse_config("blend_mode = pyramid")

    def test_round_trip(self, tmp_path):
        cfg = StitchConfig(lambda_align=0.4, mesh_cols=20, mesh_rows=10, seed=3)
        save_config(cfg, tmp_path / "c.txt")
        from planestitch.ingest import load_config

        assert load_config(tmp_path / "c.txt") == cfg


class TestFiles:
    def test_match_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        m = rng.uniform(0, 100, (12, 4))
        save_matches(tmp_path / "m.txt", m)
        back = load_matches(tmp_path / "m.txt")
        assert np.array_equal(back, m)

    def test_match_bounds_cite_line_number(self, tmp_path):
        (tmp_path / "m.txt").write_text("1 2 3 4\n105 2 3 4\n")
        with pytest.raises(InputError, match="m.txt:2"):
            load_matches(tmp_path / "m.txt", (100, 100), (100, 100))

    def test_match_wrong_arity(self, tmp_path):
        (tmp_path / "m.txt").write_text("1 2 3\n")
        with pytest.raises(InputError, match="4 numbers"):
            load_matches(tmp_path / "m.txt")

    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = rng.integers(0, 16, (30, 40)).astype(np.uint8)
        save_mask(tmp_path / "m.png", mask)
        from planestitch.ingest import load_mask

        assert np.array_equal(load_mask(tmp_path / "m.png"), mask)

    def test_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        for shape in ((20, 30), (20, 30, 3)):
            img = rng.integers(0, 256, shape).astype(np.uint8)
            save_image(tmp_path / "i.png", img)
            from planestitch.ingest import load_image

            assert np.array_equal(load_image(tmp_path / "i.png"), img)

    def test_mesh_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        grid = rng.normal(0, 100, (5, 7, 2))
        save_mesh(tmp_path / "mesh.txt", grid)
        assert np.array_equal(load_mesh(tmp_path / "mesh.txt"), grid)

    def test_load_inputs_validates_mask_size(self, tmp_path):
        rng = np.random.default_rng(4)
        save_image(tmp_path / "a.png", rng.integers(0, 255, (20, 30)).astype(np.uint8))
        save_image(tmp_path / "b.png", rng.integers(0, 255, (20, 30)).astype(np.uint8))
        save_mask(tmp_path / "ma.png", np.zeros((20, 30), dtype=np.uint8))
        save_mask(tmp_path / "mb.png", np.zeros((10, 10), dtype=np.uint8))
        save_matches(tmp_path / "m.txt", np.array([[1.0, 1, 1, 1]] * 4))
        with pytest.raises(InputError, match="does not match image"):
            load_inputs(
                tmp_path / "a.png",
                tmp_path / "b.png",
                tmp_path / "ma.png",
                tmp_path / "mb.png",
                tmp_path / "m.txt",
            )


class TestSynth:
    def test_identity_region_yields_exact_matches(self):
        plan = ScenePlan(
            width=200,
            height=150,
            regions=[RegionSpec((0, 150, 0, 200), translation_homography(0, 0))],
            matches_per_region=30,
        )
        bundle, truth = synth_scene(plan, seed=1)
        assert np.array_equal(bundle.matches[:, :2], bundle.matches[:, 2:])
        assert len(truth.outlier_indices) == 0

    def test_planted_transform_is_exact_without_noise(self):
        plan = single_plane_plan(noise_sigma=0.0, outlier_fraction=0.0)
        bundle, truth = synth_scene(plan, seed=2)
        h = truth.homographies[1]
        proj = apply_homography(h, bundle.matches[:, :2])
        assert np.abs(proj - bundle.matches[:, 2:]).max() < 1e-9

    def test_outlier_fraction(self):
        plan = two_plane_plan(outlier_fraction=0.3)
        bundle, truth = synth_scene(plan, seed=3)
        frac = len(truth.outlier_indices) / len(bundle.matches)
        assert abs(frac - 0.3) < 0.02

    def test_labels_follow_relabeling(self):
        bundle, truth = synth_scene(two_plane_plan(), seed=4)
        assert truth.label_map == {1: 2, 2: 1}
        assert set(np.unique(bundle.mask_a)) == {0, 1, 2}
        assert set(np.unique(bundle.mask_b)) == {0, 1, 2}

    def test_seed_determinism_in_memory(self):
        plan = two_plane_plan()
        b1, _ = synth_scene(plan, seed=5)
        b2, _ = synth_scene(plan, seed=5)
        assert np.array_equal(b1.image_a, b2.image_a)
        assert np.array_equal(b1.image_b, b2.image_b)
        assert np.array_equal(b1.matches, b2.matches)

    def test_fixture_write_is_byte_identical(self, tmp_path):
        plan = single_plane_plan()
        digests = []
        for name in ("one", "two"):
            bundle, truth = synth_scene(plan, seed=6)
            d = tmp_path / name
            write_fixture(d, bundle, truth)
            digest = hashlib.sha256()
            for f in sorted(p.name for p in d.iterdir()):
                digest.update(f.encode())
                digest.update((d / f).read_bytes())
            digests.append(digest.hexdigest())
        assert digests[0] == digests[1]

    def test_fixture_round_trip(self, tmp_path):
        bundle, truth = synth_scene(single_plane_plan(), seed=7)
        write_fixture(tmp_path / "fix", bundle, truth)
        back = load_fixture(tmp_path / "fix")
        assert np.array_equal(back.image_a, bundle.image_a)
        assert np.array_equal(back.mask_b, bundle.mask_b)
        assert np.array_equal(back.matches, bundle.matches)
        assert back.config == bundle.config

    def test_overlapping_regions_rejected(self):
        plan = ScenePlan(
            width=100,
            height=100,
            regions=[
                RegionSpec((0, 60, 0, 60), translation_homography(1, 0)),
                RegionSpec((40, 100, 40, 100), translation_homography(0, 1)),
            ],
        )
        with pytest.raises(InputError, match="overlap"):
            synth_scene(plan, seed=0)

    def test_region_count_limits(self):
        with pytest.raises(InputError):
            ScenePlan(width=100, height=100, regions=[]).validate()

    def test_mask_matches_rendered_content(self):
        bundle, truth = synth_scene(two_plane_plan(noise_sigma=0.0), seed=8)
        # pixels labeled r in image b must equal image a warped from region r
        for label_a, label_b in truth.label_map.items():
            h = truth.homographies[label_a]
            ys, xs = np.nonzero(bundle.mask_b == label_b)
            pts = np.column_stack([xs, ys]).astype(float)
            back = apply_homography(np.linalg.inv(h), pts)
            # stay away from region borders where bilinear mixes labels
            inner = (
                (back[:, 0] > 12)
                & (back[:, 0] < bundle.image_a.shape[1] - 12)
                & (back[:, 1] > 12)
                & (back[:, 1] < bundle.image_a.shape[0] - 12)
            )
            assert inner.sum() > 1000
            sample = np.flatnonzero(inner)[:500]
            src = back[sample].round().astype(int)
            got = bundle.image_b[ys[sample], xs[sample]].astype(float)
            ref = bundle.image_a[src[:, 1], src[:, 0]].astype(float)
            # integer translations: rounding error only
            assert np.abs(got - ref).max() <= 1.0
