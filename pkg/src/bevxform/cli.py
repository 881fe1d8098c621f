"""Command-line tools: BEV sparsity reports, depth-consistency maps, pooling
and refinement benchmarks, and full pipeline runs.

Configuration precedence is flags, then an optional JSON config file, then the
built-in defaults (118 bins from 1 m every 0.5 m, threshold 0.4, 128x128 BEV
over a +-51.2 m square, stride 16).  Every failure prints a single line
"error: <code>: <detail>" on stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .backward import DeformableParams, HeightSampling, refine
from .depth import DepthBins, DepthDistMap, consistency_on_map, oracle_dist_map
from .formats import FormatError, load_rig, load_scene, save_tensor, write_pgm
from .forward import (
    BevSpec,
    LiftedPoints,
    camera_hit_counts,
    lift,
    occupancy_stats,
    splat_naive,
    splat_pooled,
)
from .foreground import mask_from_binary, rasterize_gt_mask, select_queries
from .geometry import Rig, build_frustum, project_points
from .pipeline import Scene, render_depth, render_features, run_pipeline
from .rigs import reference_rig

DEFAULTS = {
    "bins": "1,0.5,118",
    "bev": "128",
    "extent": 51.2,
    "tf": 0.4,
    "reps": 5,
    "stride": None,
    "sigma": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # Route argparse failures through the single-line error protocol.
    def error(self, message):
        raise UsageError(message)


def _parse_sizes(value) -> list[int]:
    if isinstance(value, (list, tuple)):
        sizes = [int(v) for v in value]
    else:
        sizes = [int(v) for v in str(value).split(",") if v.strip()]
    if not sizes or any(s < 1 for s in sizes):
        raise UsageError(f"bad BEV size list {value!r}")
    return sizes


def _parse_bins(value) -> DepthBins:
    parts = list(value) if isinstance(value, (list, tuple)) else str(value).split(",")
    if len(parts) != 3:
        raise UsageError(f"bins must be d0,delta,count, got {value!r}")
    try:
        return DepthBins(d0=float(parts[0]), delta=float(parts[1]), count=int(parts[2]))
    except ValueError as exc:
        raise UsageError(f"bad bins {value!r}: {exc}") from exc


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise FormatError("config-io", f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError("config-parse", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("config-schema", "config must be a JSON object")
    return doc


def _resolve(args, config: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _rig_from_args(args, config) -> Rig:
    rig = load_rig(args.rig) if args.rig else reference_rig()
    stride = _resolve(args, config, "stride")
    if stride is not None:
        stride = int(stride)
        rig = Rig(
            cameras=tuple(dataclasses.replace(c, feature_stride=stride) for c in rig)
        )
    return rig


def _write_report(out, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _uniform_lift(rig: Rig, bins: DepthBins) -> list[LiftedPoints]:
    """Per-camera geometric point fans: uniform depth weights, one all-ones channel."""
    parts = []
    for cam in rig:
        h_f, w_f = cam.feature_height, cam.feature_width
        frustum = build_frustum(cam, bins)
        dmap = DepthDistMap(bins=bins, grid=np.full((h_f, w_f, bins.count), 1.0 / bins.count))
        parts.append(lift(np.ones((h_f, w_f, 1)), dmap, frustum))
    return parts


def cmd_sparsity(args) -> int:
    config = _load_config(args.config)
    rig = _rig_from_args(args, config)
    bins = _parse_bins(_resolve(args, config, "bins"))
    sizes = _parse_sizes(_resolve(args, config, "bev"))
    extent = float(_resolve(args, config, "extent"))
    parts = _uniform_lift(rig, bins)
    points = LiftedPoints.concat(parts)
    lines = ["bev_size,total_cells,occupied_cells,occupancy_rate,blank_rate"]
    for size in sizes:
        spec = BevSpec.square(extent, size, 1)
        grid = splat_pooled(points, spec)
        report = occupancy_stats(grid, camera_hit_counts(rig, parts, spec))
        lines.append(
            f"{size},{report.total_cells},{report.occupied_cells},"
            f"{report.occupancy_rate:.6f},{report.blank_rate:.6f}"
        )
    _write_report(args.out, lines)
    return 0


def cmd_consistency_map(args) -> int:
    config = _load_config(args.config)
    scene = load_scene(args.scene, default_rig=reference_rig())
    bins = _parse_bins(_resolve(args, config, "bins"))
    size = _parse_sizes(_resolve(args, config, "bev"))[0]
    extent = float(_resolve(args, config, "extent"))
    sigma = _resolve(args, config, "sigma")
    sigma = scene.depth_sigma if sigma is None else float(sigma)
    hs = HeightSampling()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = BevSpec.square(extent, size, 1)
    xs = spec.x_min + (np.arange(spec.grid_w) + 0.5) * spec.cell_w
    ys = spec.y_min + (np.arange(spec.grid_h) + 0.5) * spec.cell_h
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    heights = hs.heights()
    n_cells = size * size

    best = np.zeros((heights.size, n_cells))
    for cam in scene.rig:
        dmap = oracle_dist_map(render_depth(scene, cam), bins, sigma=sigma)
        for k, z in enumerate(heights):
            pts = np.stack([xx.ravel(), yy.ravel(), np.full(n_cells, z)], axis=1)
            u, v, d, valid = project_points(cam, pts)
            w_c = np.zeros(n_cells)
            if np.any(valid):
                w_c[valid] = consistency_on_map(
                    dmap,
                    u[valid] / cam.feature_stride,
                    v[valid] / cam.feature_stride,
                    d[valid],
                )
            best[k] = np.maximum(best[k], w_c)

    summed = best.sum(axis=0).reshape(size, size) / hs.n_ref
    write_pgm(out_dir / "consistency_map.pgm", summed)
    if args.per_height:
        for k, z in enumerate(heights):
            write_pgm(out_dir / f"consistency_h{k}.pgm", best[k].reshape(size, size))
    return 0


def cmd_bench(args) -> int:
    config = _load_config(args.config)
    rig = _rig_from_args(args, config)
    bins = _parse_bins(_resolve(args, config, "bins"))
    sizes = _parse_sizes(_resolve(args, config, "bev"))
    extent = float(_resolve(args, config, "extent"))
    reps = int(_resolve(args, config, "reps"))
    if reps < 1:
        raise UsageError("reps must be >= 1")

    points = LiftedPoints.concat(_uniform_lift(rig, bins))
    channels = 4
    scene = Scene.random(rig, seed=0, n_boxes=4, channels=channels)
    feats = [render_features(scene, cam) for cam in scene.rig]
    dist_maps = [
        oracle_dist_map(render_depth(scene, cam), bins, sigma=scene.depth_sigma)
        for cam in scene.rig
    ]
    params = DeformableParams.identity(channels)

    def timed(fn):
        samples = []
        for _ in range(reps):
            start = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - start) * 1000.0)
        return statistics.median(samples), float(np.percentile(samples, 95))

    lines = ["kernel,bev_size,points,median_ms,p95_ms"]
    for size in sizes:
        spec = BevSpec.square(extent, size, 1)
        reference = splat_naive(points, spec)
        pooled = splat_pooled(points, spec)
        if not (
            np.array_equal(reference.features, pooled.features)
            and np.array_equal(reference.occupied, pooled.occupied)
        ):
            raise FormatError("bench-mismatch", f"pooled != naive at size {size}")
        for kernel, fn in (
            ("splat_naive", lambda: splat_naive(points, spec)),
            ("splat_pooled", lambda: splat_pooled(points, spec)),
        ):
            med, p95 = timed(fn)
            lines.append(f"{kernel},{size},{len(points)},{med:.3f},{p95:.3f}")

        scene_spec = BevSpec.square(extent, size, channels)
        bev = splat_pooled(
            LiftedPoints.concat(
                [
                    lift(f, m, build_frustum(c, bins))
                    for c, f, m in zip(rig, feats, dist_maps)
                ]
            ),
            scene_spec,
        )
        mask = mask_from_binary(rasterize_gt_mask(list(scene.boxes), scene_spec))
        queries = select_queries(bev, mask, t_f=0.4)
        med, p95 = timed(
            lambda: refine(bev, queries, scene.rig, feats, dist_maps, params)
        )
        lines.append(f"refine,{size},{len(queries)},{med:.3f},{p95:.3f}")
    _write_report(args.out, lines)
    return 0


def cmd_pipeline(args) -> int:
    config = _load_config(args.config)
    scene = load_scene(args.scene, default_rig=reference_rig())
    bins = _parse_bins(_resolve(args, config, "bins"))
    size = _parse_sizes(_resolve(args, config, "bev"))[0]
    extent = float(_resolve(args, config, "extent"))
    t_f = float(_resolve(args, config, "tf"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = BevSpec.square(extent, size, scene.channels)
    result = run_pipeline(scene, spec, bins=bins, t_f=t_f)

    save_tensor(out_dir / "bev_forward.fbbt", result.bev.features)
    save_tensor(out_dir / "foreground_mask.fbbt", result.mask.probabilities)
    save_tensor(out_dir / "bev_refined.fbbt", result.refined.features)
    write_pgm(out_dir / "occupancy_forward.pgm", result.bev.occupied.astype(np.float64))
    write_pgm(out_dir / "occupancy_refined.pgm", result.refined.occupied.astype(np.float64))

    gt = rasterize_gt_mask(list(scene.boxes), spec) > 0.5
    lines = ["stage,total_cells,occupied_cells,occupancy_rate,blank_rate,blank_cells_in_foreground"]
    for stage, grid in (("forward", result.bev), ("refined", result.refined)):
        report = occupancy_stats(grid)
        blank_fg = int(np.count_nonzero(gt & ~grid.occupied))
        lines.append(
            f"{stage},{report.total_cells},{report.occupied_cells},"
            f"{report.occupancy_rate:.6f},{report.blank_rate:.6f},{blank_fg}"
        )
    _write_report(str(out_dir / "sparsity.csv"), lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bevxform", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file merged below flags")
        p.add_argument("--bins", help="depth bins as d0,delta,count")
        p.add_argument("--extent", type=float, help="half extent of the square BEV in meters")
        p.add_argument("--out", help="output file (reports) or directory (maps, artifacts)")

    p = sub.add_parser("sparsity", help="occupancy/blank rates of the lifted point fan")
    common(p)
    p.add_argument("--rig", help="rig JSON path (default: bundled reference rig)")
    p.add_argument("--bev", help="comma-separated BEV sizes, e.g. 128,256,400")
    p.add_argument("--stride", type=int, help="override every camera's feature stride")
    p.set_defaults(fn=cmd_sparsity)

    p = sub.add_parser("consistency-map", help="render depth-consistency maps as PGM")
    common(p)
    p.add_argument("--scene", required=True, help="scene JSON path")
    p.add_argument("--bev", help="BEV size (first entry used)")
    p.add_argument("--sigma", type=float, help="depth spread override for the oracle")
    p.add_argument("--per-height", action="store_true", dest="per_height")
    p.set_defaults(fn=cmd_consistency_map)

    p = sub.add_parser("bench", help="time splat kernels and backward refinement")
    common(p)
    p.add_argument("--rig", help="rig JSON path (default: bundled reference rig)")
    p.add_argument("--bev", help="comma-separated BEV sizes")
    p.add_argument("--stride", type=int, help="override every camera's feature stride")
    p.add_argument("--reps", type=int, help="timing repetitions per kernel")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("pipeline", help="run forward, foreground, backward end to end")
    common(p)
    p.add_argument("--scene", required=True, help="scene JSON path")
    p.add_argument("--bev", help="BEV size (first entry used)")
    p.add_argument("--tf", type=float, help="foreground threshold")
    p.set_defaults(fn=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "fn", None) in (cmd_consistency_map, cmd_pipeline) and not args.out:
            raise UsageError("--out directory is required")
        return args.fn(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: invalid-value: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
