"""Command-line surface: simulate | image | roads | detect | bench.

Exit codes: 0 ok, 1 domain error (bad parameters, validation), 2 IO or
parse error.  The worker-thread cap comes from ``--threads`` or the
``SARMOVER_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time

import numpy as np

from . import mldd, pipeline, roaddet
from .backproj import direct_static
from .echo import FormatError, RangeProfile, simulate
from .geometry import ImagingGrid, RadarConfig
from .scene import PointTarget, SceneParseError, SceneValidationError, load_scene_file

_DEFAULT_DYN_RANGE = 40.0


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------


def write_pgm16(path, values01: np.ndarray) -> None:
    """16-bit binary PGM (P5, big-endian samples per the format spec)."""
    arr = np.clip(np.asarray(values01, dtype=float), 0.0, 1.0)
    data = np.round(arr * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode())
        fh.write(data.tobytes())


def magnitude_to_db01(magnitude: np.ndarray, dyn_range: float) -> tuple[np.ndarray, float]:
    """Map |image| to [0, 1] in dB, clipped ``dyn_range`` below the peak.

    Returns the scaled raster and the peak level in dB (0 of the scale's
    top); an all-zero image maps to uniform black.
    """
    peak = magnitude.max()
    if peak <= 0:
        return np.zeros_like(magnitude), -math.inf
    db = 20.0 * np.log10(np.maximum(magnitude, peak * 10.0 ** (-dyn_range / 10.0)) / peak)
    return np.clip(1.0 + db / dyn_range, 0.0, 1.0), float(20.0 * math.log10(peak))


def _raster(image_values: np.ndarray) -> np.ndarray:
    """[ix, iy] complex image -> raster rows top-down."""
    return np.abs(image_values).T[::-1]


def _write_image(path, magnitude_raster: np.ndarray, dyn_range: float) -> None:
    scaled, peak_db = magnitude_to_db01(magnitude_raster, dyn_range)
    write_pgm16(path, scaled)
    with open(str(path) + ".scale.txt", "w", encoding="utf-8") as fh:
        fh.write(
            f"white_db {peak_db:.6f}\nblack_db {peak_db - dyn_range:.6f}\n"
            f"dyn_range_db {dyn_range:.6f}\n"
        )


def rasterize_indicators(shape, x_coords, y_coords, detections, scale: float = 40.0):
    """Boolean overlay with a cross at each detection and an arrow along
    its velocity (length = speed * scale pixels)."""
    n_rows, n_cols = shape
    mask = np.zeros(shape, dtype=bool)
    pitch = float(x_coords[1] - x_coords[0])

    def to_rc(x, y):
        c = (x - x_coords[0]) / pitch
        r = (y_coords[-1] - y) / pitch
        return r, c

    def plot(r, c):
        ri, ci = int(round(r)), int(round(c))
        if 0 <= ri < n_rows and 0 <= ci < n_cols:
            mask[ri, ci] = True

    def line(r0, c0, r1, c1):
        steps = int(max(abs(r1 - r0), abs(c1 - c0))) + 1
        for s in range(steps + 1):
            f = s / max(steps, 1)
            plot(r0 + f * (r1 - r0), c0 + f * (c1 - c0))

    for det in detections:
        r0, c0 = to_rc(*det.position)
        for dr, dc in ((0, -2), (0, -1), (0, 0), (0, 1), (0, 2), (-2, 0), (-1, 0), (1, 0), (2, 0)):
            plot(r0 + dr, c0 + dc)
        speed = det.speed
        if speed <= 0:
            continue
        vx, vy = det.velocity
        length = speed * scale
        r1 = r0 - (vy / speed) * length
        c1 = c0 + (vx / speed) * length
        line(r0, c0, r1, c1)
        # Arrowhead: two short back-swept barbs.
        ang = math.atan2(r1 - r0, c1 - c0)
        for barb in (ang + 2.6, ang - 2.6):
            line(r1, c1, r1 + 4 * math.sin(barb), c1 + 4 * math.cos(barb))
    return mask


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    scene = load_scene_file(args.scene)
    if scene.radar is None:
        raise SceneValidationError("scene file must define a radar section")
    grid = scene.grid if scene.grid is not None else ImagingGrid.from_radar(scene.radar)
    targets = scene.materialize_targets(grid)
    profile = simulate(targets, scene.radar, noise_power=args.noise_power)
    profile.save(args.out)
    print(f"wrote {args.out}: N={scene.radar.n}, {len(targets)} scatterers")
    return 0


def _load_profile(path) -> RangeProfile:
    return RangeProfile.load(path)


def _grid_for(profile: RangeProfile, args) -> ImagingGrid:
    return ImagingGrid.from_radar(
        profile.radar,
        oversample=getattr(args, "oversample", 2.0),
        velocity_halfspan=getattr(args, "velocity_halfspan", 0.5),
    )


def cmd_image(args) -> int:
    profile = _load_profile(args.profile)
    grid = _grid_for(profile, args)
    if args.mode == "direct":
        image = direct_static(profile, grid)
    else:
        image = pipeline.static_image(profile, grid, args.nc, args.threads)
    _write_image(args.out, _raster(image.values), args.dyn_range)
    print(f"wrote {args.out} ({args.mode}, {image.values.shape[0]}x{image.values.shape[1]})")
    return 0


def cmd_roads(args) -> int:
    profile = _load_profile(args.profile)
    grid = _grid_for(profile, args)
    image = pipeline.static_image(profile, grid, args.nc, args.threads)
    gray = roaddet.GrayImage.from_magnitude(
        np.abs(image.values), image.axes[0].coords, image.axes[1].coords
    )
    stages = roaddet.RoadDetectionStages() if args.dump_stages else None
    roads = roaddet.detect_roads(gray, stages=stages)
    for i, road in enumerate(roads):
        print(
            f"road {i}: rho={road.rho:.3f} m alpha={math.degrees(road.alpha):.3f} deg "
            f"support={road.support} width={road.width:.2f} m"
        )
    if not roads:
        print("no roads found")
    if args.dump_stages:
        os.makedirs(args.dump_stages, exist_ok=True)
        for name, arr in (
            ("gray", stages.gray),
            ("edges", stages.edges),
            ("dilated", stages.dilated),
            ("components", stages.components),
        ):
            write_pgm16(os.path.join(args.dump_stages, f"{name}.pgm"), arr.astype(float))
        acc = stages.accumulator
        write_pgm16(
            os.path.join(args.dump_stages, "hough.pgm"),
            acc / acc.max() if acc.size and acc.max() > 0 else acc.astype(float),
        )
    return 0


def _parse_roads_arg(value):
    if value == "auto":
        return "auto"
    import json

    with open(value, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        roaddet.RoadLine(
            rho=float(r["rho"]),
            alpha=math.radians(float(r["alpha_deg"])) if "alpha_deg" in r else float(r["alpha"]),
            width=float(r.get("width", 0.0)),
        )
        for r in raw
    ]


def cmd_detect(args) -> int:
    profile = _load_profile(args.profile)
    grid = _grid_for(profile, args)
    cfg = pipeline.PipelineConfig(
        block_size=args.nc,
        detection_level=args.ld,
        kappa=args.kappa,
        roads=_parse_roads_arg(args.roads),
        polish=not args.no_polish,
        do_clean=not args.no_clean,
        threads=args.threads,
    )
    final, report = pipeline.full_run(profile, grid, cfg)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    movers = report.diagnostics.get("mover_count", 0)
    print(f"{len(report.detections)} detection(s), {movers} mover(s); report: {args.report}")
    for det in report.detections:
        print(
            f"  x={det.position[0]:+9.3f} y={det.position[1]:+9.3f} "
            f"vx={det.velocity[0]:+8.5f} vy={det.velocity[1]:+8.5f} "
            f"|a|={abs(det.amplitude):.4g}"
        )
    if args.image:
        raster, _ = magnitude_to_db01(_raster(final.values), args.dyn_range)
        overlay = rasterize_indicators(
            raster.shape,
            final.axes[0].coords,
            final.axes[1].coords,
            report.detections,
            args.arrow_scale,
        )
        write_pgm16(args.image, np.where(overlay, 1.0, raster))
        print(f"annotated image: {args.image}")
    return 0


_BENCH_CAPPED = {"direct", "mldd_full4d"}


def _bench_once(alg: str, profile: RangeProfile, grid: ImagingGrid, threads: int):
    cfg = profile.radar
    n = cfg.n
    lmax = int(math.log2(n))
    ld_mid = (lmax + 1) // 2
    if alg == "direct":
        t0 = time.perf_counter()
        direct_static(profile, grid)
        return time.perf_counter() - t0, n * n * (n + 1) * (n + 1)

    if alg == "static2d":
        axes, nc, ld = mldd.RunAxes.static(grid), min(8, n), None
    elif alg == "mldd_full4d":
        axes, nc, ld = mldd.RunAxes.full(grid), 2, None
    elif alg == "adaptive4d":
        axes, nc, ld = mldd.RunAxes.full(grid), 2, max(1, ld_mid)
    elif alg == "road_based":
        axes, nc, ld = mldd.RunAxes.road(grid, 0.0), min(8, n), max(3, ld_mid)
    else:
        raise ValueError(f"unknown algorithm {alg!r}")
    mcfg = mldd.MlddConfig(block_size=nc, detection_level=ld, threads=threads)
    t0 = time.perf_counter()
    res = mldd.run(
        profile.values, cfg.wavenumbers, cfg.times, cfg.positions, axes, mcfg
    )
    if alg in ("adaptive4d", "road_based"):
        mldd.find_local_maxima(res.detection, max_peaks=8, min_peaks=1)
    return time.perf_counter() - t0, res.op_count


def run_bench(sizes, algorithms, repeats: int, threads: int = 1):
    """Median-of-repeats timings (one warm-up discarded) per (alg, N)."""
    records = []
    for n in sizes:
        if n & (n - 1):
            raise ValueError(f"bench sizes must be powers of two, got {n}")
        cfg = RadarConfig.from_resolution(200.0, 200.0, 3e9, 4.0, n=n)
        grid = ImagingGrid.from_radar(cfg)
        profile = simulate([PointTarget(position=(2 * grid.dx, 0.0))], cfg)
        for alg in algorithms:
            if alg in _BENCH_CAPPED and n > 64:
                continue
            times = []
            op_count = 0
            for rep in range(repeats + 1):
                elapsed, op_count = _bench_once(alg, profile, grid, threads)
                if rep > 0:  # discard the warm-up iteration
                    times.append(elapsed)
            records.append(
                {
                    "algorithm": alg,
                    "n": n,
                    "n_c": 2 if "4d" in alg else min(8, n),
                    "l_d": (int(math.log2(n)) + 1) // 2 if alg in ("adaptive4d", "road_based") else int(math.log2(n)),
                    "wall_time_s": float(np.median(times)),
                    "op_count": int(op_count),
                }
            )
    return records


def bench_slopes(records) -> dict[str, float]:
    """Least-squares slope of log2(time) vs log2(N) per algorithm."""
    slopes = {}
    for alg in sorted({r["algorithm"] for r in records}):
        rows = [r for r in records if r["algorithm"] == alg]
        if len(rows) < 2:
            continue
        x = np.log2([r["n"] for r in rows])
        y = np.log2([r["wall_time_s"] for r in rows])
        slopes[alg] = float(np.polyfit(x, y, 1)[0])
    return slopes


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    algorithms = args.algorithms.split(",")
    records = run_bench(sizes, algorithms, args.repeats, args.threads)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["algorithm", "n", "n_c", "l_d", "wall_time_s", "op_count"]
        )
        writer.writeheader()
        writer.writerows(records)
    print(f"wrote {args.out}")
    for alg, slope in bench_slopes(records).items():
        print(f"  {alg:12s} slope = {slope:+.2f}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarmover",
        description="Circular-trajectory SAR simulation and road-based moving-target detection",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("SARMOVER_THREADS", "1")),
        help="worker thread cap (default: SARMOVER_THREADS or 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scene file into a range-profile file")
    p.add_argument("scene")
    p.add_argument("out")
    p.add_argument("--noise-power", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("image", help="render a static image to 16-bit PGM")
    p.add_argument("profile")
    p.add_argument("out")
    p.add_argument("--mode", choices=("mldd", "direct"), default="mldd")
    p.add_argument("--dyn-range", type=float, default=_DEFAULT_DYN_RANGE)
    p.add_argument("--nc", type=int, default=8)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("roads", help="detect road lines in the static image")
    p.add_argument("profile")
    p.add_argument("--nc", type=int, default=8)
    p.add_argument("--dump-stages", default=None, metavar="DIR")
    p.set_defaults(func=cmd_roads)

    p = sub.add_parser("detect", help="full detection / cleaning pipeline")
    p.add_argument("profile")
    p.add_argument("--report", default="report.json")
    p.add_argument("--image", default=None, help="annotated PGM output")
    p.add_argument("--roads", default="auto", help='"auto" or a JSON road file')
    p.add_argument("--nc", type=int, default=8)
    p.add_argument("--ld", type=int, default=None)
    p.add_argument("--kappa", type=float, default=5.0)
    p.add_argument("--dyn-range", type=float, default=_DEFAULT_DYN_RANGE)
    p.add_argument("--arrow-scale", type=float, default=40.0)
    p.add_argument("--no-polish", action="store_true")
    p.add_argument("--no-clean", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="complexity benchmark, CSV + log-log slopes")
    p.add_argument("--sizes", default="16,32,64")
    p.add_argument(
        "--algorithms", default="direct,mldd_full4d,adaptive4d,road_based,static2d"
    )
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, SceneParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
