"""Full imaging procedure: static image, road detection, per-road 2-D
search, resolution upgrade, matched-filter polish, cleaning, re-imaging.

Sequence (one call to :func:`full_run`):

1. Form the static image with the 2-D multi-level engine at the final
   level (velocities pinned to zero).
2. Extract road lines from the magnitude image; if none are found the
   pipeline falls back to the full-grid 4-D adaptive search and flags it.
3. For each road, rotate the antenna track so the road lies along the
   x-axis and run the 2-D (x, v_x) detector at the detection level,
   repeating across the road's width; upgrade every local maximum of D
   to the final level inside a local window.
4. Polish each candidate with a hierarchical matched-filter ladder (see
   :func:`refine_matched`): block-incoherent correlation surfaces on
   shrinking local lattices with doubling coherent time spans.  The
   final coherent velocity lobe is far narrower than any practical grid
   cell, so grid argmaxes alone cannot support effective cleaning.
5. Subtract each moving target's matched signature from P (strongest
   first) and re-form the static image.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mldd, roaddet
from .backproj import ReflectivityImage
from .echo import ISOTROPIC, AntennaPattern, RangeProfile, simulate
from .geometry import AxisView, ImagingGrid, RoadFrame
from .scene import PointTarget


@dataclass(frozen=True)
class Detection:
    """One detected target in world coordinates."""

    position: tuple[float, float]
    velocity: tuple[float, float]
    amplitude: complex
    road_index: int | None = None
    level_history: tuple = ()
    correlation: float = 0.0  # matched-filter quality at the final estimate

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)

    @property
    def amplitude_db(self) -> float:
        mag = abs(self.amplitude)
        return 20.0 * math.log10(mag) if mag > 0 else -math.inf


@dataclass
class Report:
    """Run summary: detections, roads, per-stage timing, diagnostics."""

    detections: list[Detection] = field(default_factory=list)
    roads: list[roaddet.RoadLine] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "detections": [
                {
                    "x": d.position[0],
                    "y": d.position[1],
                    "vx": d.velocity[0],
                    "vy": d.velocity[1],
                    "amplitude_re": d.amplitude.real,
                    "amplitude_im": d.amplitude.imag,
                    "amplitude_db": d.amplitude_db,
                    "road": d.road_index,
                    "correlation": d.correlation,
                    "level_history": [list(map(float, h[1])) + [float(h[0])] for h in d.level_history],
                }
                for d in self.detections
            ],
            "roads": [
                {"rho": r.rho, "alpha": r.alpha, "support": r.support, "width": r.width}
                for r in self.roads
            ],
            "timings": self.timings,
            "config": self.config,
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        raw = json.loads(text)
        detections = [
            Detection(
                position=(d["x"], d["y"]),
                velocity=(d["vx"], d["vy"]),
                amplitude=complex(d["amplitude_re"], d["amplitude_im"]),
                road_index=d["road"],
                correlation=d["correlation"],
                level_history=tuple(
                    (int(h[-1]), tuple(h[:-1])) for h in d["level_history"]
                ),
            )
            for d in raw["detections"]
        ]
        roads = [
            roaddet.RoadLine(rho=r["rho"], alpha=r["alpha"], support=r["support"], width=r["width"])
            for r in raw["roads"]
        ]
        return cls(
            detections=detections,
            roads=roads,
            timings=raw["timings"],
            config=raw["config"],
            diagnostics=raw["diagnostics"],
            warnings=raw["warnings"],
        )


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the full imaging procedure."""

    block_size: int = 8
    detection_level: int | None = None  # None: ceil(log2(N) / 2)
    kappa: float = 5.0
    max_candidates: int = 16
    upgrade_window: int = 3
    roads: object = "auto"  # "auto" | iterable of RoadLine / (rho, alpha[, width])
    road_params: roaddet.RoadDetParams = field(default_factory=roaddet.RoadDetParams)
    max_offsets: int = 9
    polish: bool = True
    do_clean: bool = True
    mover_min_cells: float = 0.5  # speed threshold in fine velocity cells
    # Polished hypotheses weaker than this fraction of the strongest are
    # discarded as sidelobe/ridge junk.
    min_rel_amplitude: float = 0.3
    threads: int = 1

    def resolve_detection_level(self, n: int) -> int:
        lmax = int(math.log2(n))
        if self.detection_level is not None:
            return self.detection_level
        ld = max(int(math.log2(self.block_size)), (lmax + 1) // 2)
        return min(ld, lmax)

    def mldd_config(self, n: int) -> mldd.MlddConfig:
        return mldd.MlddConfig(
            block_size=min(self.block_size, n),
            detection_level=self.resolve_detection_level(n),
            threads=self.threads,
        )


def static_image(
    P: RangeProfile,
    grid: ImagingGrid,
    block_size: int = 8,
    threads: int = 1,
    pattern: AntennaPattern = ISOTROPIC,
) -> ReflectivityImage:
    """Static image via the 2-D multi-level engine at the final level."""
    cfg = P.radar
    axes = mldd.RunAxes.static(grid)
    res = mldd.run(
        P.values,
        cfg.wavenumbers,
        cfg.times,
        cfg.positions,
        axes,
        mldd.MlddConfig(block_size=min(block_size, cfg.n), threads=threads),
        pattern,
    )
    views = axes.views(grid.level_max)
    return ReflectivityImage(
        values=res.image[:, :, 0, 0], grid=grid, axes=(views[0], views[1])
    )


def _grayimage(image: ReflectivityImage) -> roaddet.GrayImage:
    return roaddet.GrayImage.from_magnitude(
        np.abs(image.values), image.axes[0].coords, image.axes[1].coords
    )


def _as_roadline(entry) -> roaddet.RoadLine:
    if isinstance(entry, roaddet.RoadLine):
        return entry
    seq = list(entry)
    width = seq[2] if len(seq) > 2 else 0.0
    return roaddet.RoadLine(rho=float(seq[0]), alpha=float(seq[1]), width=float(width))


def road_based_detect(
    P: RangeProfile,
    grid: ImagingGrid,
    road: roaddet.RoadLine,
    cfg: PipelineConfig = PipelineConfig(),
    pattern: AntennaPattern = ISOTROPIC,
    road_index: int | None = None,
) -> list[Detection]:
    """Detect targets on one road with the 2-D (x, v_x) engine.

    The antenna track is mapped into the road frame, the detector runs at
    the detection level for a row of y-offsets spanning the road width,
    and every detection-matrix maximum is upgraded to the final level and
    mapped back to world coordinates.
    """
    radar = P.radar
    frame = RoadFrame(road.rho, road.alpha)
    rotated = frame.forward(radar.positions)
    direction = frame.road_direction()
    mcfg = cfg.mldd_config(radar.n)

    n_off = max(1, min(cfg.max_offsets, int(math.ceil(road.width / grid.dy)) | 1))
    offsets = (np.arange(n_off) - n_off // 2) * grid.dy

    out = []
    for y_off in offsets:
        axes = mldd.RunAxes.road(grid, y_offset=float(y_off))
        res = mldd.run(
            P.values, radar.wavenumbers, radar.times, rotated, axes, mcfg, pattern
        )
        peaks = mldd.find_local_maxima(res.detection, cfg.kappa, cfg.max_candidates)
        if not peaks and isinstance(cfg.roads, (list, tuple)):
            # Explicitly supplied roads are trusted: always vet at least
            # the strongest hypotheses per pass.
            peaks = mldd.find_local_maxima(
                res.detection, cfg.kappa, cfg.max_candidates, min_peaks=4
            )
        for peak in peaks:
            refined = mldd.upgrade_resolution(res, peak, cfg.upgrade_window)
            x_road = refined.coords[0]
            vx_road = refined.coords[2]
            pos = frame.inverse(np.array([x_road, y_off]))
            vel = vx_road * direction
            out.append(
                Detection(
                    position=(float(pos[0]), float(pos[1])),
                    velocity=(float(vel[0]), float(vel[1])),
                    amplitude=refined.value,
                    road_index=road_index,
                    level_history=refined.level_history,
                )
            )
    return out


def detect_full_grid(
    P: RangeProfile,
    grid: ImagingGrid,
    cfg: PipelineConfig = PipelineConfig(),
    pattern: AntennaPattern = ISOTROPIC,
) -> list[Detection]:
    """Adaptive full-grid 4-D detection (no road restriction)."""
    radar = P.radar
    mcfg = cfg.mldd_config(radar.n)
    axes = mldd.RunAxes.full(grid)
    res = mldd.run(P.values, radar.wavenumbers, radar.times, radar.positions, axes, mcfg, pattern)
    # The fallback path always vets at least a handful of hypotheses; the
    # downstream polish and merge discard the spurious ones.
    peaks = mldd.find_local_maxima(
        res.detection, cfg.kappa, cfg.max_candidates, min_peaks=min(8, cfg.max_candidates)
    )
    out = []
    for peak in peaks:
        refined = mldd.upgrade_resolution(res, peak, cfg.upgrade_window)
        out.append(
            Detection(
                position=(float(refined.coords[0]), float(refined.coords[1])),
                velocity=(float(refined.coords[2]), float(refined.coords[3])),
                amplitude=refined.value,
                road_index=None,
                level_history=refined.level_history,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Matched-filter polish
# ---------------------------------------------------------------------------


def _adhoc_axis(center: float, pitch: float, n: int) -> AxisView:
    return AxisView(start=center - pitch * (n // 2), step=pitch, fine_lo=0, stride=1, n=n)


def _pinned(value: float) -> AxisView:
    return AxisView(start=value, step=0.0, fine_lo=0, stride=0, n=1)


def refine_matched(
    P: RangeProfile,
    position,
    velocity,
    pattern: AntennaPattern = ISOTROPIC,
    pos_span: float = 4.0,
    vel_span: float = 0.05,
) -> tuple[np.ndarray, np.ndarray, complex]:
    """Hierarchical matched-filter refinement of a (position, velocity)
    hypothesis.

    Each stage evaluates a block-incoherent correlation surface on a
    small lattice around the current estimate and re-centers on its
    argmax.  The velocity pitch halves from stage to stage while the
    coherent block length grows to keep the block velocity lobe a few
    pitches wide; the estimate therefore walks down into the full-data
    coherent peak, which is far too narrow to land on by grid search
    alone.  Returns the refined position, velocity, and the matched
    amplitude ``<H, P> / <H, H>`` at the estimate.
    """
    radar = P.radar
    k, t, positions = radar.wavenumbers, radar.times, radar.positions
    n = radar.n
    lam = 2.0 * math.pi / float(k.mean())
    dt = radar.pulse_interval
    proj = radar.radius / math.hypot(radar.radius, radar.altitude)

    r_est = np.array([float(position[0]), float(position[1])])
    v_est = np.array([float(velocity[0]), float(velocity[1])])

    final_pitch = lam / (4.0 * (n - 1) * dt * proj) / 6.0
    v_pitch = max(vel_span / 4.0, final_pitch)
    r_pitch = max(pos_span / 3.0, lam / 32.0)
    first = True
    while True:
        # Coherent block length whose velocity lobe spans ~3 lattice
        # pitches; single-pulse blocks give the velocity-flat
        # track-triangulation surface used by the coarsest stages.
        m = int(lam / (4.0 * dt * proj * 3.0 * v_pitch)) + 1
        m = max(1, min(n, m))
        n_r = 7 if first else 5
        # Pattern-search walk: while the stage argmax sits on the lattice
        # boundary, re-center and repeat, so the estimate can slide along
        # the position/velocity ridge before the pitch shrinks.
        for _ in range(10):
            views = (
                _adhoc_axis(r_est[0], r_pitch, n_r),
                _adhoc_axis(r_est[1], r_pitch, n_r),
                _adhoc_axis(v_est[0], v_pitch, 9),
                _adhoc_axis(v_est[1], v_pitch, 9),
            )
            surface = None
            for q0 in range(0, n, m):
                sl = slice(q0, min(q0 + m, n))
                img = mldd._partial_bp(
                    P.values[:, sl], k, t[sl], positions[sl], views, pattern, radar.carrier
                )
                mag2 = np.abs(img) ** 2
                surface = mag2 if surface is None else surface + mag2
            idx = np.unravel_index(int(np.argmax(surface)), surface.shape)
            r_est = np.array([views[0].coords[idx[0]], views[1].coords[idx[1]]])
            v_est = np.array([views[2].coords[idx[2]], views[3].coords[idx[3]]])
            shape = surface.shape
            interior = all(0 < j < s - 1 for j, s in zip(idx, shape) if s > 1)
            if interior:
                break
        if v_pitch <= final_pitch:
            break
        v_pitch = max(v_pitch / 2.0, final_pitch)
        r_pitch = max(r_pitch / 2.0, lam / 32.0)
        first = False

    target = PointTarget(position=(r_est[0], r_est[1]), velocity=(v_est[0], v_est[1]))
    H = simulate([target], radar, pattern).values
    hh = float(np.vdot(H, H).real)
    alpha = complex(np.vdot(H, P.values) / hh)
    return r_est, v_est, alpha


def clean(
    P: RangeProfile, position, velocity, pattern: AntennaPattern = ISOTROPIC
) -> tuple[RangeProfile, complex, float]:
    """Project the matched response of one target out of P.

    ``P <- P - (<H, P>/<H, H>) H`` with H the unit-amplitude forward
    signature at the estimate (amplitude factor included).  Returns the
    cleaned profile, the matched amplitude, and the removed energy
    ``|<H, P>|^2 / <H, H>``.
    """
    target = PointTarget(position=tuple(position), velocity=tuple(velocity))
    H = simulate([target], P.radar, pattern).values
    hh = float(np.vdot(H, H).real)
    alpha = complex(np.vdot(H, P.values) / hh)
    cleaned = P.values - alpha * H
    return RangeProfile(values=cleaned, radar=P.radar), alpha, abs(alpha) ** 2 * hh


def _dedupe(detections: list[Detection], pos_tol: float, vel_tol: float) -> list[Detection]:
    """Keep the strongest of any group within the given tolerances."""
    kept: list[Detection] = []
    for det in sorted(detections, key=lambda d: -abs(d.amplitude)):
        dup = False
        for ref in kept:
            if (
                abs(det.position[0] - ref.position[0]) <= pos_tol
                and abs(det.position[1] - ref.position[1]) <= pos_tol
                and abs(det.velocity[0] - ref.velocity[0]) <= vel_tol
                and abs(det.velocity[1] - ref.velocity[1]) <= vel_tol
            ):
                dup = True
                break
        if not dup:
            kept.append(det)
    return kept


def full_run(
    P: RangeProfile,
    grid: ImagingGrid,
    cfg: PipelineConfig = PipelineConfig(),
    pattern: AntennaPattern = ISOTROPIC,
) -> tuple[ReflectivityImage, Report]:
    """Run the complete procedure and return the cleaned, annotated-ready
    static image plus the report."""
    radar = P.radar
    report = Report(config={"n": radar.n, "block_size": cfg.block_size,
                            "detection_level": cfg.resolve_detection_level(radar.n),
                            "kappa": cfg.kappa, "polish": cfg.polish,
                            "clean": cfg.do_clean})
    t_start = time.perf_counter()

    first = static_image(P, grid, cfg.block_size, cfg.threads, pattern)
    report.timings["static_image"] = time.perf_counter() - t_start

    # Road detection (or explicit roads).
    t0 = time.perf_counter()
    fallback = False
    if isinstance(cfg.roads, str) and cfg.roads == "auto":
        try:
            roads = roaddet.detect_roads(_grayimage(first), cfg.road_params)
        except Exception as exc:  # noqa: BLE001 - carried into the report
            roads = []
            report.warnings.append(f"road detection error: {exc}")
        if not roads:
            fallback = True
            report.warnings.append("no roads found; falling back to full-grid adaptive search")
    else:
        roads = [_as_roadline(r) for r in cfg.roads]
    report.roads = roads
    report.timings["road_detection"] = time.perf_counter() - t0

    # Detection.
    t0 = time.perf_counter()
    raw: list[Detection] = []
    if not fallback:
        for i, road in enumerate(roads):
            raw.extend(road_based_detect(P, grid, road, cfg, pattern, road_index=i))
        if not raw and isinstance(cfg.roads, str):
            # Auto-detected roads that yield nothing are treated as a road
            # detection failure (typical for scenes whose static image has
            # no road-like structure at all).
            fallback = True
            report.warnings.append(
                "no road-based detections; falling back to full-grid adaptive search"
            )
    if fallback:
        raw = detect_full_grid(P, grid, cfg, pattern)
    report.diagnostics["fallback"] = fallback
    report.timings["detection"] = time.perf_counter() - t0
    report.diagnostics["raw_candidates"] = len(raw)

    # Consolidate, polish, classify.  Velocity hypotheses from the coarse
    # search bracket the true velocity along the position/velocity ridge,
    # so the pre-polish merge keeps them distinct (the polish pulls each
    # into a local optimum and the best survives the post-polish merge).
    t0 = time.perf_counter()
    ld = cfg.resolve_detection_level(radar.n)
    coarse_pos = grid.dx * (1 << (grid.level_max - ld))
    candidates = _dedupe(raw, coarse_pos, 2.0 * grid.dvx)[: cfg.max_candidates]

    coarse_vel = grid.dvx * (1 << (grid.level_max - ld))
    polished: list[Detection] = []
    for det in candidates:
        if cfg.polish:
            r_est, v_est, alpha = refine_matched(
                P, det.position, det.velocity, pattern,
                pos_span=coarse_pos, vel_span=coarse_vel + 2.0 * grid.dvx,
            )
            polished.append(
                replace(
                    det,
                    position=(float(r_est[0]), float(r_est[1])),
                    velocity=(float(v_est[0]), float(v_est[1])),
                    amplitude=alpha,
                    correlation=abs(alpha),
                )
            )
        else:
            polished.append(det)
    detections = _dedupe(
        polished, max(1.5 * grid.dx, 2.0 * radar.range_resolution), 3.0 * grid.dvx
    )
    if cfg.polish and detections:
        floor = cfg.min_rel_amplitude * max(abs(d.amplitude) for d in detections)
        detections = [d for d in detections if abs(d.amplitude) >= floor]
    report.timings["refinement"] = time.perf_counter() - t0

    movers = [
        d for d in detections if d.speed > cfg.mover_min_cells * grid.dvx
    ]
    report.detections = detections
    report.diagnostics["mover_count"] = len(movers)

    # Cleaning, strongest first; each subtraction re-estimates against the
    # current residual.
    t0 = time.perf_counter()
    cleaned = P
    removed = []
    if cfg.do_clean:
        for det in sorted(movers, key=lambda d: -abs(d.amplitude)):
            cleaned, alpha, energy = clean(cleaned, det.position, det.velocity, pattern)
            removed.append(energy)
    report.diagnostics["removed_energy"] = removed
    report.timings["cleaning"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    final = (
        static_image(cleaned, grid, cfg.block_size, cfg.threads, pattern)
        if (cfg.do_clean and movers)
        else first
    )
    report.timings["final_image"] = time.perf_counter() - t0
    report.timings["total"] = time.perf_counter() - t_start

    mag = np.abs(final.values)
    report.diagnostics["final_peak"] = float(mag.max())
    report.diagnostics["final_rms"] = float(np.sqrt(np.mean(mag**2)))
    return final, report
