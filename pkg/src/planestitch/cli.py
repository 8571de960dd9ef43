"""Command-line interface: segscore | stitch | eval | synth."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConsensusError, InputError, SolverError, StitchError
from .evalmetrics import rmse_ncc
from .ingest import (
    RegionSpec,
    ScenePlan,
    StitchConfig,
    load_image,
    load_inputs,
    load_mask,
    save_image,
    save_mesh,
    single_plane_plan,
    synth_scene,
    translation_homography,
    two_plane_plan,
    write_fixture,
)
from .pipeline import run_stitch, stitch_with_global_homography
from .segmetrics import permuted_scores


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def cmd_segscore(args) -> int:
    acc, miou = permuted_scores(load_mask(args.pred), load_mask(args.gt))
    print(f"accuracy={acc!r} mean_iou={miou!r}")
    return 0


def cmd_eval(args) -> int:
    ref = load_image(args.ref)
    tar = load_image(args.tar)
    overlap = np.asarray(load_mask(args.overlap)) > 0
    score = rmse_ncc(ref, tar, overlap)
    print(
        f"rmse_ncc={score.score!r} evaluated={score.evaluated} "
        f"skipped={score.skipped} rmse_ncc_x100={score.scaled!r}"
    )
    return 0


STRIP_SHIFTS = [(20.0, 0.0), (0.0, 15.0), (-15.0, 8.0), (12.0, -12.0)]


def _plan_for(args) -> ScenePlan:
    config = StitchConfig(mesh_cols=args.mesh, mesh_rows=args.mesh)
    if args.planes == 1:
        return single_plane_plan(
            args.width, args.height, noise_sigma=args.noise,
            outlier_fraction=args.outliers, config=config,
        )
    if args.planes == 2:
        return two_plane_plan(
            args.width, args.height, noise_sigma=args.noise,
            outlier_fraction=args.outliers, config=config,
        )
    # vertical strips, one translation each
    margin, n = 12, args.planes
    strip = (args.width - 2 * margin * n) // n
    regions = []
    for i in range(n):
        c0 = margin + i * (strip + 2 * margin)
        regions.append(
            RegionSpec(
                (margin, args.height - margin, c0, c0 + strip),
                translation_homography(*STRIP_SHIFTS[i]),
            )
        )
    return ScenePlan(
        width=args.width,
        height=args.height,
        regions=regions,
        noise_sigma=args.noise,
        outlier_fraction=args.outliers,
        config=config,
    )


def cmd_synth(args) -> int:
    bundle, truth = synth_scene(_plan_for(args), seed=args.seed)
    write_fixture(args.out, bundle, truth)
    _log(f"fixture with {args.planes} plane(s) written to {args.out}")
    return 0


def _resolve_stitch_inputs(args):
    d = Path(args.input_dir)

    def pick(flag_value, name, required=True):
        if flag_value:
            return flag_value
        candidate = d / name
        if candidate.exists():
            return candidate
        if required:
            raise InputError(f"missing input: pass --{name.split('.')[0].replace('_', '-')} "
                             f"or place {name} in {d}")
        return None

    config = args.config or pick(None, "config.txt", required=False)
    return load_inputs(
        pick(args.image_a, "image_a.png"),
        pick(args.image_b, "image_b.png"),
        pick(args.mask_a, "mask_a.png"),
        pick(args.mask_b, "mask_b.png"),
        pick(args.matches, "matches.txt"),
        lines_a=pick(args.lines_a, "lines_a.txt", required=False),
        lines_b=pick(args.lines_b, "lines_b.txt", required=False),
        config=config,
    )


def _dump_intermediates(directory, bundle, result) -> None:
    from . import viz

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mesh_a, mesh_b = result.meshes
    for i, corr in enumerate(result.correspondences):
        img = viz.region_overlay(
            bundle.image_a, bundle.mask_a, bundle.image_b, bundle.mask_b, corr
        )
        img.save(d / f"region_overlay_{i}_{corr.region_a}_{corr.region_b}.png")
    if result.fields:
        viz.field_map(mesh_a, result.fields[0]).save(d / "field_a.png")
        viz.field_map(mesh_b, result.fields[1]).save(d / "field_b.png")
    if result.dense:
        viz.dense_plot(
            bundle.image_a, mesh_a, [x for x in result.dense if x.source == "a"]
        ).save(d / "dense_a.png")
        viz.dense_plot(
            bundle.image_b, mesh_b, [x for x in result.dense if x.source == "b"]
        ).save(d / "dense_b.png")
    save_mesh(d / "mesh_a.txt", mesh_a.deformed)
    save_mesh(d / "mesh_b.txt", mesh_b.deformed)
    save_image(d / "warped_a.png", result.warped[0])
    save_image(d / "warped_b.png", result.warped[1])
    viz.coverage_image(result.coverage[0]).save(d / "coverage_a.png")
    viz.coverage_image(result.coverage[1]).save(d / "coverage_b.png")
    viz.coverage_image(result.overlap).save(d / "overlap.png")


def cmd_stitch(args) -> int:
    bundle = _resolve_stitch_inputs(args)
    if args.method == "global":
        result = stitch_with_global_homography(bundle)
    else:
        result = run_stitch(bundle)
    save_image(args.out, result.mosaic)
    report_path = args.report or f"{args.out}.report.txt"
    Path(report_path).write_text(result.report.to_text())
    for name, seconds in result.report.timings.items():
        _log(f"stage {name}: {seconds:.2f}s")
    for w in result.report.warnings:
        _log(f"warning: {w}")
    if result.report.score is not None:
        _log(f"overlap rmse_ncc={result.report.score.score:.6f}")
    _log(f"mosaic written to {args.out}, report to {report_path}")
    if args.dump_intermediates:
        _dump_intermediates(args.dump_intermediates, bundle, result)
        _log(f"intermediates written to {args.dump_intermediates}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planestitch",
        description="Two-image stitching by planar region consensus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segscore", help="score a predicted label mask against ground truth")
    p.add_argument("--pred", required=True, help="predicted mask PNG")
    p.add_argument("--gt", required=True, help="ground-truth mask PNG")
    p.set_defaults(func=cmd_segscore)

    p = sub.add_parser("stitch", help="stitch an image pair")
    p.add_argument("--input-dir", default=".", help="directory with conventional input names")
    p.add_argument("--image-a", help="reference image (overrides input-dir)")
    p.add_argument("--image-b", help="target image")
    p.add_argument("--mask-a", help="reference label mask")
    p.add_argument("--mask-b", help="target label mask")
    p.add_argument("--matches", help="match file")
    p.add_argument("--lines-a", help="line segments of the reference image")
    p.add_argument("--lines-b", help="line segments of the target image")
    p.add_argument("--config", help="configuration file")
    p.add_argument("--out", required=True, help="output mosaic PNG")
    p.add_argument("--report", help="report path (default: <out>.report.txt)")
    p.add_argument(
        "--method",
        choices=("regional", "global"),
        default="regional",
        help="regional consensus pipeline or single-homography baseline",
    )
    p.add_argument("--dump-intermediates", metavar="DIR", help="write stage diagnostics")
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("eval", help="score overlap alignment of two warped layers")
    p.add_argument("--ref", required=True)
    p.add_argument("--tar", required=True)
    p.add_argument("--overlap", required=True, help="mask PNG, nonzero = overlap")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic fixture directory")
    p.add_argument("--planes", type=int, choices=(1, 2, 3, 4), default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="fixture directory")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--noise", type=float, default=0.3, help="match noise sigma in px")
    p.add_argument("--outliers", type=float, default=0.3, help="outlier fraction")
    p.add_argument("--mesh", type=int, default=100, help="mesh cells per axis")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConsensusError as exc:
        _log(f"consensus error: {exc}")
        return 3
    except SolverError as exc:
        _log(f"solver error: {exc}")
        return 4
    except StitchError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
