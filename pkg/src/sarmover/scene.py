"""Ground-truth scene description: point targets, clutter fields, SCR.

A scene file is JSON with the following shape (all keys optional except
``targets`` being a list when present)::

    {
      "name": "demo",
      "radar": {"radius": 200.0, "altitude": 200.0, "carrier": 3.0e9,
                "range_resolution": 4.0,      # or "bandwidth": <Hz>
                "n": 64, "pulse_interval": 1.0, "aperture": 6.283185307179586},
      "grid":  {"oversample": 2.0, "velocity_halfspan": 0.5},
      "targets": [{"pos": [25.0, 25.0], "vel": [0.0, 0.0],
                   "rcs_db": 0.0, "phase": 0.0}],
      "clutter": [{"sigma0_db": -30.0, "cell": 4.0,
                   "region": "everywhere", "seed": 1}],
      "roads":  [{"rho": 0.0, "alpha_deg": -45.0, "width": 8.0}]
    }

Unknown keys are rejected.  ``roads`` lists ground-truth road lines in the
normal form ``x cos(a) + y sin(a) = rho``; they are used only to build the
inside/outside masks for region-restricted clutter.  Velocities are in
meters per pulse interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ImagingGrid, RadarConfig


class SceneParseError(Exception):
    """Scene file is not valid JSON."""


class SceneValidationError(ValueError):
    """Scene file parsed but violates the schema."""


class ZeroClutterError(ValueError):
    """SCR requested against zero clutter power."""


@dataclass(frozen=True)
class PointTarget:
    """Idealized point scatterer.

    ``amplitude`` is the linear RCS amplitude sqrt(sigma_t); a static
    target has zero velocity.
    """

    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: float = 1.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")

    @property
    def rcs(self) -> float:
        return self.amplitude**2

    @property
    def is_static(self) -> bool:
        return self.velocity == (0.0, 0.0)


@dataclass(frozen=True)
class ClutterSpec:
    """Homogeneous clutter: one random-phase scatterer per resolution cell.

    ``sigma0`` is the linear clutter scattering coefficient; each
    scatterer carries amplitude sqrt(sigma0 * dx * dy) so the RMS clutter
    RCS equals sigma0 * cell area exactly.
    """

    sigma0: float
    dx: float
    dy: float
    region: str = "everywhere"
    seed: int = 0

    REGIONS = ("everywhere", "inside-roads", "outside-roads")

    def __post_init__(self) -> None:
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be >= 0")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("clutter cell sizes must be positive")
        if self.region not in self.REGIONS:
            raise ValueError(f"region must be one of {self.REGIONS}, got {self.region!r}")

    @property
    def rms_rcs(self) -> float:
        """sigma_c = sigma0 * A_c."""
        return self.sigma0 * self.dx * self.dy


@dataclass(frozen=True)
class RoadSpec:
    """Ground-truth road line (normal form) with a physical width."""

    rho: float
    alpha: float
    width: float = 8.0


@dataclass
class Scene:
    targets: list[PointTarget] = field(default_factory=list)
    clutter: list[ClutterSpec] = field(default_factory=list)
    name: str = ""
    radar: RadarConfig | None = None
    grid: ImagingGrid | None = None
    roads: list[RoadSpec] = field(default_factory=list)

    def materialize_targets(self, grid: ImagingGrid | None = None) -> list[PointTarget]:
        """Explicit targets plus all clutter scatterers expanded on their lattices."""
        grid = grid if grid is not None else self.grid
        out = list(self.targets)
        for spec in self.clutter:
            if grid is None:
                raise SceneValidationError("clutter present but no grid defined for the scene")
            lattice = clutter_lattice(spec, grid)
            mask = None
            if spec.region != "everywhere":
                inside = road_mask(lattice, self.roads)
                mask = inside if spec.region == "inside-roads" else ~inside
            out.extend(generate_clutter(spec, lattice, mask))
        return out


def clutter_lattice(spec: ClutterSpec, grid: ImagingGrid) -> ImagingGrid:
    """Lattice with one point per clutter cell covering the imaging extent."""
    n = round(grid.extent_x / spec.dx)
    if not (n > 0 and n & (n - 1) == 0):
        raise ValueError(
            f"extent {grid.extent_x} / clutter cell {spec.dx} must give a power-of-two count"
        )
    if abs(n * spec.dx - grid.extent_x) > 1e-9 or abs(n * spec.dy - grid.extent_y) > 1e-9:
        raise ValueError("clutter cells must tile the imaging extent exactly")
    return ImagingGrid(grid.extent_x, grid.extent_y, grid.extent_vx, grid.extent_vy, n)


def road_mask(lattice: ImagingGrid, roads: list[RoadSpec]) -> np.ndarray:
    """Boolean (n, n) mask of lattice cells within width/2 of any road line."""
    x = lattice.cell_centers("x")
    y = lattice.cell_centers("y")
    xx, yy = np.meshgrid(x, y, indexing="ij")
    mask = np.zeros(xx.shape, dtype=bool)
    for road in roads:
        dist = np.abs(xx * math.cos(road.alpha) + yy * math.sin(road.alpha) - road.rho)
        mask |= dist <= 0.5 * road.width
    return mask


def generate_clutter(
    spec: ClutterSpec, grid: ImagingGrid, mask: np.ndarray | None = None
) -> list[PointTarget]:
    """One static scatterer per selected cell of ``grid``.

    Scatterers sit at cell centers with amplitude sqrt(sigma0 dx dy) and
    phases drawn uniformly from a generator seeded with ``spec.seed``;
    output is deterministic per seed.  ``mask`` (True = keep the cell)
    must match the lattice shape.
    """
    if abs(grid.dx - spec.dx) > 1e-9 or abs(grid.dy - spec.dy) > 1e-9:
        raise ValueError(
            f"grid cells ({grid.dx}, {grid.dy}) do not match clutter cells ({spec.dx}, {spec.dy})"
        )
    x = grid.cell_centers("x")
    y = grid.cell_centers("y")
    n = grid.points
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (n, n):
            raise ValueError(f"mask shape {mask.shape} does not match lattice ({n}, {n})")
    rng = np.random.default_rng(spec.seed)
    # Phases are drawn for every cell (row-major) before masking so the
    # same seed assigns the same phase to the same cell for any mask.
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(n, n))
    amp = math.sqrt(spec.sigma0 * spec.dx * spec.dy)
    out = []
    for ix in range(n):
        for iy in range(n):
            if mask is not None and not mask[ix, iy]:
                continue
            out.append(
                PointTarget(
                    position=(float(x[ix]), float(y[iy])),
                    velocity=(0.0, 0.0),
                    amplitude=amp,
                    phase=float(phases[ix, iy]),
                )
            )
    return out


def scr_static(target: PointTarget, spec: ClutterSpec) -> float:
    """Scene-specification SCR in dB: 10 log10(sigma_t / (sigma0 dx dy)).

    The 0 dB operating point on actual images is established by a
    calibration run (image peak vs clutter RMS); this formula only fixes
    scene amplitudes.
    """
    sigma_c = spec.rms_rcs
    if sigma_c <= 0:
        raise ZeroClutterError("clutter RMS RCS is zero")
    return 10.0 * math.log10(target.rcs / sigma_c)


# ---------------------------------------------------------------------------
# Scene file parsing
# ---------------------------------------------------------------------------


def _require_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SceneValidationError(f"{where}: unknown key(s) {sorted(unknown)}")


def _vec2(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise SceneValidationError(f"{where}: expected 2 numbers, got {value!r}")
    try:
        return float(value[0]), float(value[1])
    except (TypeError, ValueError) as exc:
        raise SceneValidationError(f"{where}: expected 2 numbers, got {value!r}") from exc


def _number(obj: dict, key: str, where: str, default=None):
    if key not in obj:
        if default is None:
            raise SceneValidationError(f"{where}: missing required key {key!r}")
        return default
    value = obj[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SceneValidationError(f"{where}.{key}: expected a number, got {value!r}")
    return float(value)


def _parse_radar(obj: dict) -> RadarConfig:
    _require_keys(
        obj,
        {"radius", "altitude", "carrier", "bandwidth", "range_resolution", "n",
         "pulse_interval", "aperture"},
        "radar",
    )
    n = obj.get("n")
    if not isinstance(n, int) or isinstance(n, bool):
        raise SceneValidationError("radar.n: expected an integer")
    if "bandwidth" in obj and "range_resolution" in obj:
        raise SceneValidationError("radar: give either bandwidth or range_resolution, not both")
    kwargs = dict(
        radius=_number(obj, "radius", "radar"),
        altitude=_number(obj, "altitude", "radar"),
        carrier=_number(obj, "carrier", "radar"),
        pulse_interval=_number(obj, "pulse_interval", "radar", default=1.0),
        aperture=_number(obj, "aperture", "radar", default=2.0 * math.pi),
    )
    try:
        if "range_resolution" in obj:
            return RadarConfig.from_resolution(
                kwargs["radius"], kwargs["altitude"], kwargs["carrier"],
                _number(obj, "range_resolution", "radar"), n,
                kwargs["pulse_interval"], kwargs["aperture"],
            )
        return RadarConfig(
            num_pulses=n, num_freqs=n, bandwidth=_number(obj, "bandwidth", "radar"), **kwargs
        )
    except ValueError as exc:
        raise SceneValidationError(f"radar: {exc}") from exc


def _parse_target(obj: dict, where: str) -> PointTarget:
    _require_keys(obj, {"pos", "vel", "rcs_db", "phase"}, where)
    pos = _vec2(obj.get("pos"), f"{where}.pos")
    vel = _vec2(obj.get("vel", [0.0, 0.0]), f"{where}.vel")
    rcs_db = _number(obj, "rcs_db", where, default=0.0)
    phase = _number(obj, "phase", where, default=0.0)
    return PointTarget(position=pos, velocity=vel, amplitude=10.0 ** (rcs_db / 20.0), phase=phase)


def _parse_clutter(obj: dict, where: str) -> ClutterSpec:
    _require_keys(obj, {"sigma0_db", "cell", "region", "seed"}, where)
    sigma0_db = _number(obj, "sigma0_db", where)
    cell = _number(obj, "cell", where)
    region = obj.get("region", "everywhere")
    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SceneValidationError(f"{where}.seed: expected an integer")
    try:
        return ClutterSpec(
            sigma0=10.0 ** (sigma0_db / 10.0), dx=cell, dy=cell, region=region, seed=seed
        )
    except ValueError as exc:
        raise SceneValidationError(f"{where}: {exc}") from exc


def _parse_road(obj: dict, where: str) -> RoadSpec:
    _require_keys(obj, {"rho", "alpha_deg", "width"}, where)
    return RoadSpec(
        rho=_number(obj, "rho", where),
        alpha=math.radians(_number(obj, "alpha_deg", where)),
        width=_number(obj, "width", where, default=8.0),
    )


def load_scene(text: str) -> Scene:
    """Parse and validate a scene config; unknown keys are rejected."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise SceneValidationError("top level must be a JSON object")
    _require_keys(raw, {"name", "radar", "grid", "targets", "clutter", "roads"}, "scene")

    radar = _parse_radar(raw["radar"]) if "radar" in raw else None

    grid = None
    if "grid" in raw:
        gobj = raw["grid"]
        _require_keys(gobj, {"oversample", "velocity_halfspan"}, "grid")
        if radar is None:
            raise SceneValidationError("grid: requires a radar section")
        grid = ImagingGrid.from_radar(
            radar,
            oversample=_number(gobj, "oversample", "grid", default=2.0),
            velocity_halfspan=_number(gobj, "velocity_halfspan", "grid", default=0.5),
        )

    targets = []
    for idx, tobj in enumerate(raw.get("targets", [])):
        if not isinstance(tobj, dict):
            raise SceneValidationError(f"targets[{idx}]: expected an object")
        targets.append(_parse_target(tobj, f"targets[{idx}]"))

    clutter = []
    for idx, cobj in enumerate(raw.get("clutter", [])):
        if not isinstance(cobj, dict):
            raise SceneValidationError(f"clutter[{idx}]: expected an object")
        clutter.append(_parse_clutter(cobj, f"clutter[{idx}]"))

    roads = []
    for idx, robj in enumerate(raw.get("roads", [])):
        if not isinstance(robj, dict):
            raise SceneValidationError(f"roads[{idx}]: expected an object")
        roads.append(_parse_road(robj, f"roads[{idx}]"))

    if grid is not None:
        half_x, half_y = 0.5 * grid.extent_x, 0.5 * grid.extent_y
        for idx, t in enumerate(targets):
            if abs(t.position[0]) > half_x or abs(t.position[1]) > half_y:
                raise SceneValidationError(
                    f"targets[{idx}].pos: {t.position} outside grid extent "
                    f"(+-{half_x}, +-{half_y})"
                )

    name = raw.get("name", "")
    if not isinstance(name, str):
        raise SceneValidationError("name: expected a string")
    return Scene(targets=targets, clutter=clutter, name=name, radar=radar, grid=grid, roads=roads)


def load_scene_file(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scene(fh.read())
