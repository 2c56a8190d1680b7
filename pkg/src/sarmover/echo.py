"""Forward model: simulate the normalized range-profile matrix P.

Phase-sign convention (important): the simulator emits
``exp(-1j * 2 * k_l * range)`` per scatterer so that the backprojection
kernel ``exp(+1j * 2 * k_l * range)`` compresses.  Mixing these signs is
the classic failure mode; every consumer in this package assumes the
convention above.

The amplitude factor A = F^2 / range^2 is evaluated at a target's nominal
(t = 0) position, matching the imaging operator, which divides by A at the
grid position rather than the instantaneous one.  This keeps the
simulate/backproject pair exactly adjoint and makes matched-filter
cleaning an exact projection.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import RadarConfig
from .scene import PointTarget, Scene

_MAGIC = b"SARP"
_HEADER = struct.Struct("<4sII7d")  # magic, N_f, N_p, f0, df, th0, dth, dt, R, h

# Targets-times-pulses work arrays are processed in chunks of at most this
# many elements to bound memory for large clutter fields.
_CHUNK_ELEMENTS = 1 << 23


class FormatError(Exception):
    """Range-profile file is malformed."""


@dataclass(frozen=True)
class AntennaPattern:
    """Field pattern F(phi_el, phi_az, f) of the radar antenna.

    ``gain`` must broadcast over ndarray angle arguments and return the
    complex (or real) field value; |F| is assumed bounded.  ``phi_el`` is
    the look-down angle from horizontal (asin(dz/range)) and ``phi_az``
    the azimuth of the antenna-to-point direction.  Patterns whose gain
    varies with frequency must set ``freq_dependent`` so the fast imaging
    path can reject them (it evaluates F once per data block).
    """

    gain: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    freq_dependent: bool = False

    @staticmethod
    def isotropic() -> "AntennaPattern":
        return AntennaPattern(gain=lambda el, az, f: np.ones_like(np.asarray(el, dtype=float)))


ISOTROPIC = AntennaPattern.isotropic()


def observation_angles(points_xy: np.ndarray, position: np.ndarray):
    """(phi_el, phi_az) of the direction from an antenna position to ground
    points; ``points_xy`` is (..., 2), ``position`` is (3,)."""
    dx = points_xy[..., 0] - position[0]
    dy = points_xy[..., 1] - position[1]
    dz = -position[2]
    rng = np.sqrt(dx * dx + dy * dy + dz * dz)
    phi_el = np.arcsin(-dz / rng)
    phi_az = np.arctan2(dy, dx)
    return phi_el, phi_az


@dataclass(frozen=True)
class RangeProfile:
    """N_f x N_p complex matrix P; element (l, i) is frequency f_l, pulse i."""

    values: np.ndarray
    radar: RadarConfig = field(repr=False)

    def __post_init__(self) -> None:
        expected = (self.radar.num_freqs, self.radar.num_pulses)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("range profile contains non-finite entries")

    @property
    def freqs(self) -> np.ndarray:
        return self.radar.freqs

    @property
    def thetas(self) -> np.ndarray:
        return self.radar.thetas

    def save(self, path) -> None:
        """Write the flat little-endian binary format (header + f64 re/im
        pairs, row-major over frequency then pulse)."""
        cfg = self.radar
        f = cfg.freqs
        th = cfg.thetas
        header = _HEADER.pack(
            _MAGIC,
            cfg.num_freqs,
            cfg.num_pulses,
            f[0],
            f[1] - f[0],
            th[0],
            th[1] - th[0],
            cfg.pulse_interval,
            cfg.radius,
            cfg.altitude,
        )
        body = np.empty((cfg.num_freqs, cfg.num_pulses, 2), dtype="<f8")
        body[..., 0] = self.values.real
        body[..., 1] = self.values.imag
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body.tobytes())

    @classmethod
    def load(cls, path) -> "RangeProfile":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size:
            raise FormatError("file shorter than header")
        magic, nf, npulse, f0, df, th0, dth, dt, radius, h = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if abs(th0) > 1e-12:
            raise FormatError(f"unsupported theta_start {th0}")
        expected = _HEADER.size + nf * npulse * 16
        if len(raw) != expected:
            raise FormatError(f"file size {len(raw)} != expected {expected}")
        try:
            cfg = RadarConfig(
                radius=radius,
                altitude=h,
                carrier=f0 + 0.5 * df * (nf - 1),
                bandwidth=df * (nf - 1),
                num_pulses=npulse,
                num_freqs=nf,
                pulse_interval=dt,
                aperture=dth * npulse,
            )
        except ValueError as exc:
            raise FormatError(f"inconsistent header: {exc}") from exc
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(nf, npulse, 2)
        values = body[..., 0] + 1j * body[..., 1]
        return cls(values=values, radar=cfg)


def _as_target_arrays(targets: Sequence[PointTarget]):
    pos = np.array([t.position for t in targets], dtype=float)
    vel = np.array([t.velocity for t in targets], dtype=float)
    w0 = np.array([t.amplitude * np.exp(1j * t.phase) for t in targets])
    return pos, vel, w0


def simulate(
    scene: Scene | Sequence[PointTarget],
    cfg: RadarConfig,
    pattern: AntennaPattern = ISOTROPIC,
    noise_power: float = 0.0,
    rng: np.random.Generator | None = None,
) -> RangeProfile:
    """Simulate P(theta_i, f_l) for every scatterer in the scene.

    Each target contributes ``A * amp * exp(j phase) * exp(-2j k_l d)``
    with ``d = |r + v t_i - r_i^a|`` and A evaluated at the nominal
    position.  ``noise_power`` adds complex Gaussian receiver noise of the
    given per-sample power (off by default: detection here is
    clutter-limited).
    """
    if isinstance(scene, Scene):
        targets = scene.materialize_targets()
    else:
        targets = list(scene)

    n_f, n_p = cfg.num_freqs, cfg.num_pulses
    values = np.zeros((n_f, n_p), dtype=complex)
    if targets:
        pos, vel, w0 = _as_target_arrays(targets)
        chunk = max(1, _CHUNK_ELEMENTS // n_p)
        for lo in range(0, len(targets), chunk):
            hi = min(lo + chunk, len(targets))
            values += _simulate_chunk(pos[lo:hi], vel[lo:hi], w0[lo:hi], cfg, pattern)

    if noise_power > 0.0:
        gen = rng if rng is not None else np.random.default_rng()
        scale = np.sqrt(noise_power / 2.0)
        values = values + scale * (
            gen.standard_normal((n_f, n_p)) + 1j * gen.standard_normal((n_f, n_p))
        )
    return RangeProfile(values=values, radar=cfg)


def _simulate_chunk(pos, vel, w0, cfg: RadarConfig, pattern: AntennaPattern) -> np.ndarray:
    apos = cfg.positions  # (N_p, 3)
    times = cfg.times
    k = cfg.wavenumbers
    n_f, n_p = cfg.num_freqs, cfg.num_pulses

    # Dynamic range |r + v t_i - r_i^a|, shape (targets, pulses).
    dx = pos[:, None, 0] + vel[:, None, 0] * times[None, :] - apos[None, :, 0]
    dy = pos[:, None, 1] + vel[:, None, 1] * times[None, :] - apos[None, :, 1]
    d_dyn = np.sqrt(dx * dx + dy * dy + apos[None, :, 2] ** 2)

    # Static range for the amplitude factor (nominal position).
    sx = pos[:, None, 0] - apos[None, :, 0]
    sy = pos[:, None, 1] - apos[None, :, 1]
    d_sta = np.sqrt(sx * sx + sy * sy + apos[None, :, 2] ** 2)

    phi_el = np.arcsin(apos[None, :, 2] / d_sta)
    phi_az = np.arctan2(sy, sx)

    out = np.empty((n_f, n_p), dtype=complex)
    if pattern.freq_dependent:
        for l in range(n_f):
            f2 = np.asarray(pattern.gain(phi_el, phi_az, cfg.freqs[l])) ** 2
            amp = f2 / (d_sta * d_sta)
            ph = np.exp(-2j * k[l] * d_dyn)
            out[l, :] = (w0[:, None] * amp * ph).sum(axis=0)
        return out

    f2 = np.asarray(pattern.gain(phi_el, phi_az, cfg.carrier)) ** 2
    w = w0[:, None] * f2 / (d_sta * d_sta)  # (targets, pulses)
    ph = w * np.exp(-2j * k[0] * d_dyn)
    step = np.exp(-2j * (k[1] - k[0]) * d_dyn) if n_f > 1 else None
    for l in range(n_f):
        out[l, :] = ph.sum(axis=0)
        if step is not None and l < n_f - 1:
            ph *= step
    return out
