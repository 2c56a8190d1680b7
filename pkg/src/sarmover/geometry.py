"""Radar trajectory, imaging grids, and the road-alignment transform.

Conventions used throughout the package:

* World frame: right-handed, ``x``/``y`` on the ground plane, ``z`` up.
  The radar moves on a circle of radius ``R`` at height ``h`` centred on
  the origin; scene points sit on the ``z = 0`` plane.
* Pulse index ``i`` runs from 1 to ``N_p`` (1-based, matching slow time
  ``t_i = (i - 1) * dt``).  Frequencies are uniformly spaced over
  ``[f_c - B/2, f_c + B/2]`` inclusive.
* A road line is parameterised in normal form ``x cos(a) + y sin(a) = rho``
  with ``a`` in ``(-pi/2, pi/2]``.  The road-alignment transform first
  translates by the line's y-intercept ``(0, -rho/sin(a))`` and then
  rotates by ``pi/2 - a``, which maps the line onto the x-axis.  Note the
  rotation angle: rotating by ``a`` itself only aligns the ``a = +-45 deg``
  lines, so the normal-form angle must be complemented.  Near-vertical
  lines (``|sin a| <= EPS_ALPHA``) use the x-intercept ``(rho/cos(a), 0)``
  for the translation instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s

# Below this |sin(alpha)| the y-intercept rho/sin(alpha) blows up and the
# near-vertical fallback translation is used instead.
EPS_ALPHA = 1e-3


class DegenerateAngleError(ValueError):
    """Road-frame angle too close to a degenerate line orientation."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RadarConfig:
    """Circular-trajectory radar: geometry, frequency grid, pulse timing.

    Parameters
    ----------
    radius : float
        Trajectory radius R in meters.
    altitude : float
        Platform height h above the ground plane, meters.
    carrier : float
        Center frequency f_c in Hz.
    bandwidth : float
        Total swept bandwidth B in Hz; frequencies span
        ``[carrier - B/2, carrier + B/2]`` inclusive.
    num_pulses, num_freqs : int
        N_p and N_f.  Both must be equal and a power of two so that
        ``log2(N)`` pyramid levels are well defined.
    pulse_interval : float
        Slow-time spacing dt between pulses.  Defaults to 1, i.e. target
        velocities are interpreted per pulse.
    aperture : float
        Total azimuth span in radians (default full circle).  Pulse i sits
        at ``theta_i = (i - 1) * aperture / N_p``.
    """

    radius: float
    altitude: float
    carrier: float
    bandwidth: float
    num_pulses: int
    num_freqs: int
    pulse_interval: float = 1.0
    aperture: float = 2.0 * math.pi

    def __post_init__(self) -> None:
        if self.num_pulses != self.num_freqs:
            raise ValueError(
                f"num_pulses ({self.num_pulses}) must equal num_freqs ({self.num_freqs})"
            )
        if not _is_power_of_two(self.num_pulses):
            raise ValueError(f"num_pulses must be a power of two, got {self.num_pulses}")
        for name in ("radius", "altitude", "carrier", "bandwidth", "pulse_interval", "aperture"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.bandwidth >= 2.0 * self.carrier:
            raise ValueError("bandwidth must be smaller than twice the carrier")

    @classmethod
    def from_resolution(
        cls,
        radius: float,
        altitude: float,
        carrier: float,
        range_resolution: float,
        n: int,
        pulse_interval: float = 1.0,
        aperture: float = 2.0 * math.pi,
    ) -> "RadarConfig":
        """Build a config from a desired range resolution via B = c / (2 dr)."""
        bandwidth = SPEED_OF_LIGHT / (2.0 * range_resolution)
        return cls(radius, altitude, carrier, bandwidth, n, n, pulse_interval, aperture)

    @property
    def n(self) -> int:
        return self.num_pulses

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def elevation(self) -> float:
        """Elevation angle beta of the platform seen from the scene center."""
        return math.atan2(self.altitude, self.radius)

    @property
    def thetas(self) -> np.ndarray:
        """Azimuth angles theta_i, shape (N_p,)."""
        return np.arange(self.num_pulses) * (self.aperture / self.num_pulses)

    @property
    def freqs(self) -> np.ndarray:
        """Frequency samples f_l, shape (N_f,), endpoints inclusive."""
        return np.linspace(
            self.carrier - self.bandwidth / 2.0,
            self.carrier + self.bandwidth / 2.0,
            self.num_freqs,
        )

    @property
    def wavenumbers(self) -> np.ndarray:
        """k_l = 2 pi f_l / c, shape (N_f,)."""
        return 2.0 * math.pi * self.freqs / SPEED_OF_LIGHT

    @property
    def times(self) -> np.ndarray:
        """Slow times t_i = (i - 1) * dt, shape (N_p,)."""
        return np.arange(self.num_pulses) * self.pulse_interval

    @property
    def positions(self) -> np.ndarray:
        """Antenna phase centers (R cos theta_i, R sin theta_i, h), shape (N_p, 3)."""
        th = self.thetas
        return np.column_stack(
            (self.radius * np.cos(th), self.radius * np.sin(th), np.full_like(th, self.altitude))
        )


def antenna_position(cfg: RadarConfig, i: int) -> np.ndarray:
    """Antenna phase center for 1-based pulse index i.

    Raises IndexError if i is outside 1..N_p.
    """
    if not 1 <= i <= cfg.num_pulses:
        raise IndexError(f"pulse index {i} outside 1..{cfg.num_pulses}")
    return cfg.positions[i - 1]


def slant_range(r, v, i: int, cfg: RadarConfig) -> float:
    """Distance from the antenna at pulse i to a ground point moving at v.

    ``r`` is the (x, y) position at t = 0 and ``v`` the per-axis velocity;
    the point is evaluated at ``r + v * t_i``.  Always >= altitude.
    """
    pos = antenna_position(cfg, i)
    t = cfg.times[i - 1]
    rx, ry = float(r[0]), float(r[1])
    vx, vy = float(v[0]), float(v[1])
    dx = rx + vx * t - pos[0]
    dy = ry + vy * t - pos[1]
    return math.sqrt(dx * dx + dy * dy + pos[2] * pos[2])


# ---------------------------------------------------------------------------
# Road-alignment transform
# ---------------------------------------------------------------------------


def _frame_parameters(rho: float, alpha: float, allow_vertical: bool = True):
    """Shift vector and rotation angle for the line-to-x-axis map."""
    sa = math.sin(alpha)
    if abs(sa) > EPS_ALPHA:
        shift = (0.0, rho / sa)
    elif allow_vertical:
        shift = (rho / math.cos(alpha), 0.0)
    else:
        raise DegenerateAngleError(
            f"|sin(alpha)| = {abs(sa):.2e} <= {EPS_ALPHA} and vertical fallback disabled"
        )
    beta = 0.5 * math.pi - alpha
    return shift, beta


@dataclass(frozen=True)
class RoadFrame:
    """Rigid transform that maps the line ``x cos(a) + y sin(a) = rho``
    onto the x-axis.

    ``direction`` (+1/-1) selects which way along the road counts as the
    positive x direction of the rotated frame.
    """

    rho: float
    alpha: float
    direction: int = 1

    def __post_init__(self) -> None:
        if self.direction not in (-1, 1):
            raise ValueError("direction must be +1 or -1")

    def forward(self, points: np.ndarray, allow_vertical: bool = True) -> np.ndarray:
        """Map world points (..., 2) or (..., 3) into the road frame."""
        shift, beta = _frame_parameters(self.rho, self.alpha, allow_vertical)
        pts = np.asarray(points, dtype=float)
        out = pts.copy()
        x = pts[..., 0] - shift[0]
        y = pts[..., 1] - shift[1]
        c, s = math.cos(beta), math.sin(beta)
        out[..., 0] = c * x - s * y
        out[..., 1] = s * x + c * y
        return out

    def inverse(self, points: np.ndarray, allow_vertical: bool = True) -> np.ndarray:
        """Exact inverse of :meth:`forward`."""
        shift, beta = _frame_parameters(self.rho, self.alpha, allow_vertical)
        pts = np.asarray(points, dtype=float)
        out = pts.copy()
        c, s = math.cos(beta), math.sin(beta)
        x = c * pts[..., 0] + s * pts[..., 1]
        y = -s * pts[..., 0] + c * pts[..., 1]
        out[..., 0] = x + shift[0]
        out[..., 1] = y + shift[1]
        return out

    def road_direction(self) -> np.ndarray:
        """World-frame unit vector of the rotated frame's +x axis."""
        _, beta = _frame_parameters(self.rho, self.alpha)
        return self.direction * np.array([math.cos(beta), -math.sin(beta)])


def rotate_antenna(
    positions: np.ndarray, rho: float, alpha: float, allow_vertical: bool = True
) -> np.ndarray:
    """Transform antenna phase-center coordinates into the road frame.

    x/y are translated and rotated so that the world line
    ``x cos(alpha) + y sin(alpha) = rho`` becomes the x-axis; z is kept.
    Distances between antennas and scene points are preserved, so imaging
    in the rotated frame is equivalent to imaging the rotated scene.
    """
    return RoadFrame(rho, alpha).forward(np.asarray(positions, dtype=float), allow_vertical)


def unrotate_point(p, rho: float, alpha: float, allow_vertical: bool = True) -> np.ndarray:
    """Map a road-frame point back to world coordinates (inverse transform)."""
    return RoadFrame(rho, alpha).inverse(np.asarray(p, dtype=float), allow_vertical)


# ---------------------------------------------------------------------------
# Imaging grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AxisView:
    """Grid points of one axis at one pyramid level (possibly windowed).

    Point j sits at fine-grid index ``fine_lo + j * stride`` with
    world coordinate ``start + step * fine_index``, where ``start`` and
    ``step`` describe the finest-level lattice and
    ``stride = 2**(level_max - level)``.  Storing the lattice parameters
    instead of materialized coordinates keeps nested views bit-exact.  A
    pinned axis (single fixed coordinate, e.g. velocity locked to zero)
    has ``stride == 0`` and ``start`` equal to the pinned value.
    """

    start: float
    step: float
    fine_lo: int
    stride: int
    n: int

    @property
    def pinned(self) -> bool:
        return self.stride == 0

    @property
    def coords(self) -> np.ndarray:
        if self.pinned:
            return np.array([self.start])
        fine = self.fine_lo + self.stride * np.arange(self.n, dtype=np.int64)
        return self.start + fine * self.step

    def refined(self) -> "AxisView":
        """The same window one level finer (twice the points)."""
        if self.pinned:
            return self
        if self.stride % 2:
            raise ValueError("axis already at the finest level")
        return AxisView(self.start, self.step, self.fine_lo, self.stride // 2, 2 * self.n)


def pinned_axis(value: float) -> AxisView:
    """Singleton axis fixed at ``value`` (shared across all levels)."""
    return AxisView(start=float(value), step=0.0, fine_lo=0, stride=0, n=1)


@dataclass(frozen=True)
class ImagingGrid:
    """Uniform, centered, dyadic image/velocity grids.

    ``points`` is the cell count per axis (power of two).  A level-L axis
    carries ``2**L + 1`` samples spanning the extent inclusively:
    coordinates ``(j * 2**(level_max - L) - points/2) * step`` for
    ``j = 0..2**L``.  Inclusive endpoints make every level's samples a
    bit-exact subset of the next level's (decimation by two from index 0)
    while keeping the coverage symmetric, so lifting an image one level
    never extrapolates.  Clutter cells are the ``points`` intervals
    between samples; their centers come from :meth:`cell_centers`.
    """

    extent_x: float
    extent_y: float
    extent_vx: float
    extent_vy: float
    points: int

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.points):
            raise ValueError(f"points must be a power of two, got {self.points}")
        for name in ("extent_x", "extent_y", "extent_vx", "extent_vy"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_radar(
        cls,
        cfg: RadarConfig,
        oversample: float = 2.0,
        velocity_halfspan: float = 0.5,
    ) -> "ImagingGrid":
        """Default grid: dx = range_resolution / oversample, extent N*dx,
        velocity extent +-velocity_halfspan per axis."""
        dx = cfg.range_resolution / oversample
        extent = cfg.n * dx
        return cls(extent, extent, 2.0 * velocity_halfspan, 2.0 * velocity_halfspan, cfg.n)

    @property
    def level_max(self) -> int:
        return int(math.log2(self.points))

    @property
    def dx(self) -> float:
        return self.extent_x / self.points

    @property
    def dy(self) -> float:
        return self.extent_y / self.points

    @property
    def dvx(self) -> float:
        return self.extent_vx / self.points

    @property
    def dvy(self) -> float:
        return self.extent_vy / self.points

    def _start_step(self, dim: str) -> tuple[float, float]:
        step = {"x": self.dx, "y": self.dy, "vx": self.dvx, "vy": self.dvy}[dim]
        return -0.5 * self.points * step, step

    def axis(
        self,
        dim: str,
        level: int | None = None,
        window: tuple[int, int] | None = None,
    ) -> AxisView:
        """Axis view for ``dim`` at ``level`` (default finest).

        ``window`` restricts to level-unit indices ``lo..hi`` inclusive,
        clipped to the valid range.
        """
        if level is None:
            level = self.level_max
        if not 0 <= level <= self.level_max:
            raise ValueError(f"level {level} outside 0..{self.level_max}")
        start, step = self._start_step(dim)
        stride = 1 << (self.level_max - level)
        n_level = 1 << level  # sample indices run 0..n_level inclusive
        lo, hi = (0, n_level) if window is None else window
        lo = max(0, lo)
        hi = min(n_level, hi)
        if hi < lo:
            raise ValueError(f"empty axis window for {dim} at level {level}")
        return AxisView(start=start, step=step, fine_lo=lo * stride, stride=stride, n=hi - lo + 1)

    def cell_centers(self, dim: str) -> np.ndarray:
        """Centers of the ``points`` cells tiling the axis extent."""
        start, step = self._start_step(dim)
        return start + (np.arange(self.points) + 0.5) * step

    def fine_index(self, dim: str, value: float) -> int:
        """Index of the finest-level grid sample nearest to ``value``."""
        start, step = self._start_step(dim)
        return int(np.clip(round((value - start) / step), 0, self.points))
