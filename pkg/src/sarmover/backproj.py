"""Reference backprojection: brute force, no acceleration, no shortcuts.

This module is the oracle the fast imaging engine is tested against, so
it favors the most literal evaluation: one complex exponential per
(pulse, frequency, output cell), summed frequency-innermost with a fixed
pulse-major order so outputs are bit-reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .echo import ISOTROPIC, AntennaPattern, RangeProfile, observation_angles
from .geometry import AxisView, ImagingGrid, pinned_axis

# Skip terms whose amplitude factor underflows; geometry keeps ranges >= h
# so this never fires in practice.
_AMPLITUDE_FLOOR = 1e-30

# Largest output the dynamic oracle will materialize without an override
# (the grid for N = 64 cells carries 65 samples per axis).
_MAX_CELLS = 65**4


class OutputTooLargeError(ValueError):
    """Requested brute-force output grid exceeds the safety cap."""


@dataclass
class ReflectivityImage:
    """Complex reflectivity on an imaging grid.

    ``values`` is (nx, ny) for static images or (nx, ny, nvx, nvy) for
    joint position/velocity images; ``axes`` holds the coordinate view of
    each values dimension.
    """

    values: np.ndarray
    grid: ImagingGrid
    axes: tuple[AxisView, ...]

    def __post_init__(self) -> None:
        if self.values.ndim != len(self.axes):
            raise ValueError("values rank does not match axes")
        for dim, ax in zip(self.values.shape, self.axes):
            if dim != ax.n:
                raise ValueError("values shape does not match axis lengths")

    def peak_index(self) -> tuple[int, ...]:
        """Cell of maximum magnitude (ties: lowest linear index)."""
        return np.unravel_index(int(np.argmax(np.abs(self.values))), self.values.shape)

    def peak_coords(self) -> np.ndarray:
        idx = self.peak_index()
        return np.array([ax.coords[j] for ax, j in zip(self.axes, idx)])

    def peak_value(self) -> complex:
        return complex(self.values[self.peak_index()])


def amplitude_factor(r, r_a, f: float, pattern: AntennaPattern = ISOTROPIC) -> complex:
    """A = F^2(phi, f) / |r - r_a|^2 for one ground point and antenna."""
    r = np.asarray(r, dtype=float)
    r_a = np.asarray(r_a, dtype=float)
    point = np.array([r[0], r[1]])
    phi_el, phi_az = observation_angles(point, r_a)
    dx = r[0] - r_a[0]
    dy = r[1] - r_a[1]
    d2 = dx * dx + dy * dy + r_a[2] * r_a[2]
    return complex(np.asarray(pattern.gain(phi_el, phi_az, f)) ** 2 / d2)


def _inverse_amplitude(f2: np.ndarray, d2: np.ndarray) -> np.ndarray:
    amp = f2 / d2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(amp) < _AMPLITUDE_FLOOR, 0.0, 1.0 / amp)
    return inv


def _direct(P: RangeProfile, axes: tuple[AxisView, ...], pattern: AntennaPattern) -> np.ndarray:
    """Evaluate the dynamic backprojection sum on the given axis views."""
    cfg = P.radar
    x, y, vx, vy = (ax.coords for ax in axes)
    k = cfg.wavenumbers
    times = cfg.times
    positions = cfg.positions

    shape = (len(x), len(y), len(vx), len(vy))
    img = np.zeros(shape, dtype=complex)
    for i in range(cfg.num_pulses):
        ax_, ay_, az_ = positions[i]
        t = times[i]
        u = x[:, None] + vx[None, :] * t - ax_  # (nx, nvx)
        w = y[:, None] + vy[None, :] * t - ay_  # (ny, nvy)
        d = np.sqrt(
            (u * u)[:, None, :, None] + (w * w)[None, :, None, :] + az_ * az_
        )  # (nx, ny, nvx, nvy)

        sx = x[:, None] - ax_
        sy = y[None, :] - ay_
        d2_static = sx * sx + sy * sy + az_ * az_  # (nx, ny)
        phi_el = np.arcsin(az_ / np.sqrt(d2_static))
        phi_az = np.arctan2(sy, sx)

        if pattern.freq_dependent:
            acc = np.zeros(shape, dtype=complex)
            for l in range(cfg.num_freqs):
                f2 = np.asarray(pattern.gain(phi_el, phi_az, cfg.freqs[l])) ** 2
                ainv = _inverse_amplitude(f2, d2_static)[:, :, None, None]
                acc = acc + ainv * (P.values[l, i] * np.exp(2j * k[l] * d))
            img += acc
        else:
            f2 = np.asarray(pattern.gain(phi_el, phi_az, cfg.carrier)) ** 2
            ainv = _inverse_amplitude(f2, d2_static)[:, :, None, None]
            acc = np.zeros(shape, dtype=complex)
            for l in range(cfg.num_freqs):
                acc = acc + P.values[l, i] * np.exp(2j * k[l] * d)
            img += ainv * acc
    return img


def direct_static(
    P: RangeProfile, grid: ImagingGrid, pattern: AntennaPattern = ISOTROPIC
) -> ReflectivityImage:
    """Static image g(r) on the full grid; cost O(N^4) by construction."""
    axes = (grid.axis("x"), grid.axis("y"), pinned_axis(0.0), pinned_axis(0.0))
    values = _direct(P, axes, pattern)[:, :, 0, 0]
    return ReflectivityImage(values=values, grid=grid, axes=(axes[0], axes[1]))


def direct_dynamic(
    P: RangeProfile,
    grid: ImagingGrid,
    pattern: AntennaPattern = ISOTROPIC,
    spatial_level: int | None = None,
    velocity_level: int | None = None,
    allow_large: bool = False,
) -> ReflectivityImage:
    """Joint (r, v) image g(r, v) on the full 4-D grid.

    ``spatial_level`` / ``velocity_level`` optionally evaluate on the
    dyadic sub-lattice of that pyramid level instead of the finest grid
    (still brute force, just fewer output cells).  Refuses outputs larger
    than 64^4 cells unless ``allow_large``.
    """
    axes = (
        grid.axis("x", spatial_level),
        grid.axis("y", spatial_level),
        grid.axis("vx", velocity_level),
        grid.axis("vy", velocity_level),
    )
    cells = int(np.prod([ax.n for ax in axes]))
    if cells > _MAX_CELLS and not allow_large:
        raise OutputTooLargeError(
            f"{cells} output cells exceeds the {_MAX_CELLS} cap; pass allow_large=True"
        )
    values = _direct(P, axes, pattern)
    return ReflectivityImage(values=values, grid=grid, axes=axes)
