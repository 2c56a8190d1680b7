"""Fast multi-level imaging engine.

The input N x N range-profile matrix is partitioned into N_c x N_c data
subdomains.  Each subdomain is backprojected onto a coarse grid whose
point count per dimension matches the subdomain bandwidth (level
L_1 = log2(N_c)).  Groups of 2x2 adjacent subdomain images are then
repeatedly lifted one level: each child image is demodulated by the
conjugate of its phase reference

    E_pq(r, v) = exp(2j * kbar_p * |r + v * tbar_q - rbar_q|),

interpolated onto the twice-finer nested grid, remodulated with E_pq on
that grid, and the four results summed into the parent image.  At the
detection level the surviving images are summed incoherently into the
detection matrix D; local maxima of D are target hypotheses that can be
refined to full resolution inside a small window.

The same engine serves every output geometry: axes may be active (dyadic
grid) or pinned to a fixed value, giving the 4-D (x, y, vx, vy) search,
the 2-D static (x, y) image, and the 2-D along-road (x, vx) search with
identical phase bookkeeping.

Antenna-pattern handling: the fast path evaluates the pattern once per
pulse at a reference frequency, which is exact for frequency-independent
patterns (including the default isotropic one); genuinely
frequency-dependent patterns are rejected and belong to the brute-force
oracle.

All heavy stages are vectorized across subdomains, so wall-clock cost is
proportional to the per-cell work the algorithm actually performs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .echo import ISOTROPIC, AntennaPattern
from .geometry import SPEED_OF_LIGHT, AxisView, ImagingGrid, pinned_axis

_DIMS = ("x", "y", "vx", "vy")

# Switch from whole-level batching to per-quadrant processing once the
# lifted tensor would exceed this many complex elements (256 MB).
_BATCH_BUDGET = 16 * 1024 * 1024

_AMPLITUDE_FLOOR = 1e-30


@dataclass(frozen=True)
class MlddConfig:
    """Engine knobs.

    ``block_size`` is the data-subdomain side N_c (power of two);
    ``detection_level`` is L_d with log2(N_c) <= L_d <= log2(N)
    (default: the final level, i.e. a single fully aggregated image).
    ``interpolation`` is "multilinear" or "exact" (re-evaluates each
    subdomain's partial sum on the fine grid; the correctness-harness
    mode).  ``threads`` caps worker threads for per-quadrant processing.
    """

    block_size: int = 8
    detection_level: int | None = None
    interpolation: str = "multilinear"
    threads: int = 1

    def __post_init__(self) -> None:
        if self.block_size < 1 or self.block_size & (self.block_size - 1):
            raise ValueError("block_size must be a power of two")
        if self.interpolation not in ("multilinear", "exact"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def resolve_levels(self, n: int) -> tuple[int, int, int]:
        """(L_1, L_d, L_max) for an N x N dataset, validating the ranges."""
        if n < 1 or n & (n - 1):
            raise ValueError("data size must be a power of two")
        if n % self.block_size:
            raise ValueError(f"data size {n} not divisible by block_size {self.block_size}")
        l1 = int(math.log2(self.block_size))
        lmax = int(math.log2(n))
        ld = lmax if self.detection_level is None else self.detection_level
        if not l1 <= ld <= lmax:
            raise ValueError(f"detection_level must satisfy {l1} <= L_d <= {lmax}, got {ld}")
        return l1, ld, lmax


@dataclass(frozen=True)
class SubdomainMeta:
    """Averaged sample parameters of one data subdomain."""

    p: int
    q: int
    kbar: float
    rbar: np.ndarray  # (3,) mean antenna position
    tbar: float
    freq_range: tuple[int, int]  # half-open row range into the frequency axis
    pulse_range: tuple[int, int]


@dataclass
class CoarseImage:
    """One subdomain's partial image at one pyramid level."""

    level: int
    meta: SubdomainMeta
    values: np.ndarray  # (nx, ny, nvx, nvy)
    axes: tuple[AxisView, AxisView, AxisView, AxisView]

    def __post_init__(self) -> None:
        if self.values.shape != tuple(ax.n for ax in self.axes):
            raise ValueError("values shape does not match axes")


@dataclass
class DetectionMatrix:
    """Incoherent sum of level-L_d image magnitudes."""

    values: np.ndarray  # (nx, ny, nvx, nvy), nonnegative
    level: int | None
    axes: tuple[AxisView, AxisView, AxisView, AxisView] | None


@dataclass(frozen=True)
class CoarsePeak:
    """Local maximum of D: a target hypothesis on the coarse grid."""

    cell: tuple[int, int, int, int]
    value: float
    coords: np.ndarray  # (x, y, vx, vy)


@dataclass(frozen=True)
class RefinedPeak:
    """Full-resolution estimate after the local upgrade."""

    cell: tuple[int, int, int, int]  # fine-grid indices
    coords: np.ndarray  # (x, y, vx, vy)
    value: complex
    level_history: tuple[tuple[int, tuple[float, ...]], ...]


@dataclass(frozen=True)
class RunAxes:
    """Which output dimensions are searched and which are pinned."""

    grid: ImagingGrid
    pinned: tuple[tuple[str, float], ...] = ()

    @classmethod
    def full(cls, grid: ImagingGrid) -> "RunAxes":
        return cls(grid)

    @classmethod
    def static(cls, grid: ImagingGrid) -> "RunAxes":
        return cls(grid, (("vx", 0.0), ("vy", 0.0)))

    @classmethod
    def road(cls, grid: ImagingGrid, y_offset: float = 0.0) -> "RunAxes":
        return cls(grid, (("y", float(y_offset)), ("vy", 0.0)))

    @property
    def active(self) -> tuple[str, ...]:
        pinned = dict(self.pinned)
        return tuple(d for d in _DIMS if d not in pinned)

    @property
    def level_max(self) -> int:
        return self.grid.level_max

    def views(
        self, level: int, windows: dict[str, tuple[int, int]] | None = None
    ) -> tuple[AxisView, AxisView, AxisView, AxisView]:
        pinned = dict(self.pinned)
        out = []
        for dim in _DIMS:
            if dim in pinned:
                out.append(pinned_axis(pinned[dim]))
            else:
                window = windows.get(dim) if windows else None
                out.append(self.grid.axis(dim, level, window))
        return tuple(out)


@dataclass
class MlddResult:
    """Detection matrix plus the retained level-L_d pyramid state."""

    config: MlddConfig
    axes: RunAxes
    level: int
    images: np.ndarray  # (n_p, n_q, nx, ny, nvx, nvy)
    kbar: np.ndarray
    rbar: np.ndarray
    tbar: np.ndarray
    detection: DetectionMatrix
    op_count: int = 0

    @property
    def image(self) -> np.ndarray:
        """Fully aggregated image; only meaningful when L_d == L_max."""
        if self.images.shape[:2] != (1, 1):
            raise ValueError("pyramid was stopped before full aggregation")
        return self.images[0, 0]


# ---------------------------------------------------------------------------
# Partitioning and metas
# ---------------------------------------------------------------------------


def _block_means(k: np.ndarray, t: np.ndarray, positions: np.ndarray, nc: int):
    nb = len(k) // nc
    kbar = k.reshape(nb, nc).mean(axis=1)
    tbar = t.reshape(nb, nc).mean(axis=1)
    rbar = positions.reshape(nb, nc, 3).mean(axis=1)
    return kbar, rbar, tbar


def partition(values: np.ndarray, k: np.ndarray, t: np.ndarray, positions: np.ndarray, nc: int):
    """Split P into contiguous N_c x N_c subdomains with their metas.

    Returns a (N/N_c, N/N_c) nested list; entry [p][q] is
    ``(block_view, SubdomainMeta)`` with p indexing frequency blocks and q
    pulse blocks.  Every sample of P lands in exactly one block.
    """
    n = values.shape[0]
    if values.shape != (n, n):
        raise ValueError("P must be square")
    if n % nc:
        raise ValueError(f"N = {n} not divisible by N_c = {nc}")
    kbar, rbar, tbar = _block_means(k, t, positions, nc)
    nb = n // nc
    out = []
    for p in range(nb):
        row = []
        for q in range(nb):
            meta = SubdomainMeta(
                p=p,
                q=q,
                kbar=float(kbar[p]),
                rbar=rbar[q],
                tbar=float(tbar[q]),
                freq_range=(p * nc, (p + 1) * nc),
                pulse_range=(q * nc, (q + 1) * nc),
            )
            block = values[p * nc : (p + 1) * nc, q * nc : (q + 1) * nc]
            row.append((block, meta))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# Distance/phase helpers
# ---------------------------------------------------------------------------


def _dist_tensor(views, rbar: np.ndarray, tbar: np.ndarray) -> np.ndarray:
    """|r + v*tbar_q - rbar_q| over the grid, shape (n_q, nx, ny, nvx, nvy)."""
    x, y, vx, vy = (v.coords for v in views)
    tb = tbar[:, None, None]
    u = x[None, :, None] + tb * vx[None, None, :] - rbar[:, 0, None, None]
    w = y[None, :, None] + tb * vy[None, None, :] - rbar[:, 1, None, None]
    z2 = (rbar[:, 2] ** 2)[:, None, None, None, None]
    return np.sqrt((u * u)[:, :, None, :, None] + (w * w)[:, None, :, None, :] + z2)


def phase_ref(meta: SubdomainMeta, views) -> np.ndarray:
    """Unit-modulus phase reference E_pq on the given axis views."""
    d = _dist_tensor(views, meta.rbar[None, :], np.array([meta.tbar]))[0]
    return np.exp(2j * meta.kbar * d)


def _inverse_amplitude_grid(views, positions: np.ndarray, pattern: AntennaPattern, f_ref: float):
    """A^-1 with A = F^2/d^2 at the nominal grid position, per pulse.

    Shape (n_pulses, nx, ny).
    """
    x, y = views[0].coords, views[1].coords
    sx = x[None, :] - positions[:, 0, None]  # (n, nx)
    sy = y[None, :] - positions[:, 1, None]  # (n, ny)
    z = positions[:, 2]
    d2 = (sx * sx)[:, :, None] + (sy * sy)[:, None, :] + (z * z)[:, None, None]
    phi_el = np.arcsin(z[:, None, None] / np.sqrt(d2))
    phi_az = np.arctan2(sy[:, None, :], sx[:, :, None])
    f2 = np.asarray(pattern.gain(phi_el, phi_az, f_ref)) ** 2
    f2 = np.broadcast_to(f2, d2.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.abs(f2 / d2) < _AMPLITUDE_FLOOR, 0.0, d2 / f2)


def _check_uniform(arr: np.ndarray, name: str) -> float:
    if len(arr) == 1:
        return 0.0
    steps = np.diff(arr)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError(f"{name} samples must be uniformly spaced")
    return float(steps[0])


def _f_ref(k: np.ndarray) -> float:
    return float(k.mean() * SPEED_OF_LIGHT / (2.0 * math.pi))


# ---------------------------------------------------------------------------
# Base images
# ---------------------------------------------------------------------------


def _partial_bp(block, k_b, t_b, pos_b, views, pattern: AntennaPattern, f_ref: float):
    """Exact partial backprojection of one data block on arbitrary views."""
    if pattern.freq_dependent:
        raise NotImplementedError("fast path requires a frequency-independent pattern")
    d = _dist_tensor(views, pos_b, t_b)  # (nc, cells)
    ainv = _inverse_amplitude_grid(views, pos_b, pattern, f_ref)  # (nc, nx, ny)
    dk = _check_uniform(k_b, "wavenumber")
    nc_f = len(k_b)
    ph = np.exp(2j * k_b[0] * d)
    step = np.exp(2j * dk * d) if nc_f > 1 else None
    acc = np.zeros_like(ph)
    for l in range(nc_f):
        acc += block[l].reshape((-1, 1, 1, 1, 1)) * ph
        if step is not None and l < nc_f - 1:
            ph *= step
    acc *= ainv[:, :, :, None, None]
    return acc.sum(axis=0)


def base_image(
    block: np.ndarray,
    meta: SubdomainMeta,
    views,
    k: np.ndarray,
    t: np.ndarray,
    positions: np.ndarray,
    pattern: AntennaPattern = ISOTROPIC,
) -> CoarseImage:
    """Direct evaluation of one subdomain's partial sum on base-level views."""
    f_lo, f_hi = meta.freq_range
    p_lo, p_hi = meta.pulse_range
    values = _partial_bp(
        block, k[f_lo:f_hi], t[p_lo:p_hi], positions[p_lo:p_hi], views, pattern, _f_ref(k)
    )
    level = int(math.log2(block.shape[0]))
    return CoarseImage(level=level, meta=meta, values=values, axes=tuple(views))


def _base_images_batched(P, k, t, positions, views, nc, pattern):
    """All (N/N_c)^2 base images at once: tensor (n_p, n_q, *cells)."""
    if pattern.freq_dependent:
        raise NotImplementedError("fast path requires a frequency-independent pattern")
    n = len(k)
    x, y, vx, vy = (v.coords for v in views)
    cells = (len(x), len(y), len(vx), len(vy))

    tb = t[:, None, None]
    u = x[None, :, None] + tb * vx[None, None, :] - positions[:, 0, None, None]
    w = y[None, :, None] + tb * vy[None, None, :] - positions[:, 1, None, None]
    z2 = (positions[:, 2] ** 2)[:, None, None, None, None]
    d = np.sqrt((u * u)[:, :, None, :, None] + (w * w)[:, None, :, None, :] + z2)

    ainv = _inverse_amplitude_grid(views, positions, pattern, _f_ref(k))

    dk = _check_uniform(k, "wavenumber")
    ph = np.exp(2j * k[0] * d)
    step = np.exp(2j * dk * d) if n > 1 else None

    nb = n // nc
    sums = np.empty((nb, n) + cells, dtype=complex)
    acc = np.zeros((n,) + cells, dtype=complex)
    for l in range(n):
        acc += P[l].reshape((n, 1, 1, 1, 1)) * ph
        if (l + 1) % nc == 0:
            sums[(l + 1) // nc - 1] = acc
            acc[:] = 0.0
        if step is not None and l < n - 1:
            ph *= step
    sums *= ainv[None, :, :, :, None, None]
    return sums.reshape((nb, nb, nc) + cells).sum(axis=2)


# ---------------------------------------------------------------------------
# Interpolation and aggregation
# ---------------------------------------------------------------------------


def interpolate(values: np.ndarray, child_views, parent_views, offset: int = 0) -> np.ndarray:
    """Separable multilinear lift of demodulated values onto nested finer
    views.

    ``values`` may carry leading batch dimensions ahead of the ``offset``
    grid axes.  Parent points either coincide with child points or sit
    exactly midway between two.  Points past the child's outermost sample
    (the dyadic grids are left-anchored, so the last fine point per axis
    has no right-hand coarse neighbour) are linearly extrapolated from
    the outermost pair; nearest-clamping there leaves a systematic error
    band that dominates the pyramid error for small subdomain counts.
    """
    out = values
    for ax_i, (cv, pv) in enumerate(zip(child_views, parent_views)):
        if cv.pinned and pv.pinned:
            continue
        axis = offset + ax_i
        u = (pv.fine_lo + pv.stride * np.arange(pv.n) - cv.fine_lo) / cv.stride
        if cv.n == 1:
            idx = np.zeros(pv.n, dtype=np.int64)
            out = np.take(out, idx, axis=axis)
            continue
        i0 = np.clip(np.floor(u).astype(np.int64), 0, cv.n - 2)
        shape = [1] * out.ndim
        shape[axis] = pv.n
        w1 = (u - i0).reshape(shape)
        out = np.take(out, i0, axis=axis) * (1.0 - w1) + np.take(out, i0 + 1, axis=axis) * w1
    return out


def _apply_phase(tensor: np.ndarray, sign: float, kbar: np.ndarray, dist: np.ndarray) -> None:
    """tensor[p] *= exp(sign * 2j * kbar[p] * dist), in place, per p-chunk."""
    for p in range(tensor.shape[0]):
        tensor[p] *= np.exp((sign * 2j * kbar[p]) * dist)


def _lift_children(imgs, kbar, rbar, tbar, child_views, parent_views, interpolation, exact_ctx):
    """Demodulate, interpolate (or exactly re-evaluate), and remodulate each
    child image onto the parent views.  Returns (n_p, n_q, *parent_cells)."""
    if interpolation == "exact":
        P, k, t, positions, pattern = exact_ctx
        size = len(k) // len(kbar)  # samples per axis covered by one child
        n_p, n_q = imgs.shape[:2]
        pcells = tuple(v.n for v in parent_views)
        up = np.empty((n_p, n_q) + pcells, dtype=complex)
        d_par = _dist_tensor(parent_views, rbar, tbar)
        for p in range(n_p):
            fsl = slice(p * size, (p + 1) * size)
            for q in range(n_q):
                psl = slice(q * size, (q + 1) * size)
                exact = _partial_bp(
                    P[fsl, psl], k[fsl], t[psl], positions[psl],
                    parent_views, pattern, _f_ref(k),
                )
                up[p, q] = exact * np.exp(-2j * kbar[p] * d_par[q])
        _apply_phase(up, +1.0, kbar, d_par)
        return up

    d_child = _dist_tensor(child_views, rbar, tbar)
    lifted = imgs.astype(complex, copy=True)
    _apply_phase(lifted, -1.0, kbar, d_child)
    lifted = interpolate(lifted, child_views, parent_views, offset=2)
    d_par = _dist_tensor(parent_views, rbar, tbar)
    _apply_phase(lifted, +1.0, kbar, d_par)
    return lifted


def _pair_means(kbar, rbar, tbar):
    return (
        0.5 * (kbar[0::2] + kbar[1::2]),
        0.5 * (rbar[0::2] + rbar[1::2]),
        0.5 * (tbar[0::2] + tbar[1::2]),
    )


def _aggregate_tensor(
    imgs, kbar, rbar, tbar, child_views, parent_views, interpolation, exact_ctx, threads
):
    """One pyramid step on the whole image tensor."""
    n_p, n_q = imgs.shape[:2]
    pcells = int(np.prod([v.n for v in parent_views]))

    if interpolation == "exact" or n_p * n_q * pcells <= _BATCH_BUDGET:
        up = _lift_children(
            imgs, kbar, rbar, tbar, child_views, parent_views, interpolation, exact_ctx
        )
        shape = up.shape[2:]
        parent = up.reshape((n_p // 2, 2, n_q // 2, 2) + shape).sum(axis=(1, 3))
    else:
        def one(ab):
            a, b = ab
            return _lift_children(
                imgs[a::2, b::2], kbar[a::2], rbar[b::2], tbar[b::2],
                child_views, parent_views, interpolation, exact_ctx,
            )

        quadrants = [(0, 0), (0, 1), (1, 0), (1, 1)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=min(threads, 4)) as pool:
                parts = list(pool.map(one, quadrants))
        else:
            parts = [one(ab) for ab in quadrants]
        # Fixed (a, b) accumulation order keeps results bit-reproducible
        # regardless of scheduling.
        parent = parts[0]
        for part in parts[1:]:
            parent += part

    return parent, *_pair_means(kbar, rbar, tbar)


def aggregate_level(children: list[CoarseImage], parent_views=None) -> CoarseImage:
    """Combine a 2x2 block of subdomain neighbours into one parent image.

    ``children`` are ordered [(a=0,b=0), (0,1), (1,0), (1,1)] in the
    (frequency, pulse) block indices; grids double along every active
    axis and the parent meta is the mean of the child metas.
    """
    if len(children) != 4:
        raise ValueError("aggregation takes exactly four children")
    first = children[0]
    for c in children[1:]:
        if c.level != first.level or c.values.shape != first.values.shape:
            raise ValueError("children must share level and shape")
    child_views = first.axes
    if parent_views is None:
        parent_views = tuple(v.refined() for v in child_views)
    kbar = np.array([children[0].meta.kbar, children[2].meta.kbar])
    rbar = np.stack([children[0].meta.rbar, children[1].meta.rbar])
    tbar = np.array([children[0].meta.tbar, children[1].meta.tbar])
    imgs = np.stack(
        [
            np.stack([children[0].values, children[1].values]),
            np.stack([children[2].values, children[3].values]),
        ]
    )
    parent, kb, rb, tb = _aggregate_tensor(
        imgs, kbar, rbar, tbar, child_views, parent_views, "multilinear", None, 1
    )
    meta = SubdomainMeta(
        p=first.meta.p // 2,
        q=first.meta.q // 2,
        kbar=float(kb[0]),
        rbar=rb[0],
        tbar=float(tb[0]),
        freq_range=(children[0].meta.freq_range[0], children[2].meta.freq_range[1]),
        pulse_range=(children[0].meta.pulse_range[0], children[1].meta.pulse_range[1]),
    )
    return CoarseImage(
        level=first.level + 1, meta=meta, values=parent[0, 0], axes=tuple(parent_views)
    )


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


def detection_matrix(images, level: int | None = None, axes=None) -> DetectionMatrix:
    """D = elementwise sum of image magnitudes across subdomains."""
    if isinstance(images, np.ndarray):
        return DetectionMatrix(values=np.abs(images).sum(axis=(0, 1)), level=level, axes=axes)
    if not images:
        raise ValueError("no images")
    lvl = images[0].level
    for im in images:
        if im.level != lvl:
            raise ValueError(f"level mismatch: {im.level} != {lvl}")
    values = np.zeros(images[0].values.shape)
    for im in images:
        values += np.abs(im.values)
    return DetectionMatrix(values=values, level=lvl, axes=images[0].axes)


def find_local_maxima(
    D: DetectionMatrix,
    kappa: float = 5.0,
    max_peaks: int | None = None,
    min_peaks: int = 0,
) -> list[CoarsePeak]:
    """Cells strictly greater than all axis neighbours and above
    mean + kappa * std, sorted by descending value.

    ``min_peaks`` relaxes the threshold policy: if fewer maxima clear it,
    the strongest unthresholded maxima top the list up (useful for
    clutter-free scenes whose detection statistics make mean + k*std
    exceed every value).
    """
    v = D.values
    strict = np.ones_like(v, dtype=bool)
    for axis in range(v.ndim):
        if v.shape[axis] == 1:
            continue
        greater_lo = np.ones_like(v, dtype=bool)
        greater_hi = np.ones_like(v, dtype=bool)
        sl_c, sl_n = [slice(None)] * v.ndim, [slice(None)] * v.ndim
        sl_c[axis], sl_n[axis] = slice(1, None), slice(None, -1)
        greater_lo[tuple(sl_c)] = v[tuple(sl_c)] > v[tuple(sl_n)]
        greater_hi[tuple(sl_n)] = v[tuple(sl_n)] > v[tuple(sl_c)]
        strict &= greater_lo & greater_hi

    def collect(mask) -> list[CoarsePeak]:
        return [
            CoarsePeak(
                cell=tuple(int(c) for c in cell),
                value=float(v[tuple(cell)]),
                coords=np.array([ax.coords[c] for ax, c in zip(D.axes, cell)]),
            )
            for cell in np.argwhere(mask)
        ]

    threshold = v.mean() + kappa * v.std()
    peaks = collect(strict & (v > threshold))
    peaks.sort(key=lambda p: -p.value)
    if len(peaks) < min_peaks:
        rest = collect(strict & (v <= threshold))
        rest.sort(key=lambda p: -p.value)
        peaks += rest[: min_peaks - len(peaks)]
    return peaks if max_peaks is None else peaks[:max_peaks]


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def run(
    P: np.ndarray,
    k: np.ndarray,
    t: np.ndarray,
    positions: np.ndarray,
    axes: RunAxes,
    cfg: MlddConfig,
    pattern: AntennaPattern = ISOTROPIC,
) -> MlddResult:
    """Multi-level imaging of the range-profile matrix P.

    Builds (N/N_c)^2 base images, aggregates them level by level up to
    L_d, and returns the detection matrix together with the retained
    level-L_d images (for local resolution upgrades).  With L_d = L_max
    the result holds the single fully aggregated image.
    """
    P = np.asarray(P)
    n = P.shape[0]
    if P.shape != (n, n) or len(k) != n or len(t) != n or positions.shape != (n, 3):
        raise ValueError("P, k, t, positions must agree on N")
    if axes.grid.points != n:
        raise ValueError(f"grid points {axes.grid.points} != data size {n}")
    l1, ld, _ = cfg.resolve_levels(n)

    views = axes.views(l1)
    imgs = _base_images_batched(P, k, t, positions, views, cfg.block_size, pattern)
    kbar, rbar, tbar = _block_means(k, t, positions, cfg.block_size)
    ops = n * n * int(np.prod([v.n for v in views]))

    exact_ctx = (P, k, t, positions, pattern) if cfg.interpolation == "exact" else None
    for level in range(l1 + 1, ld + 1):
        child_views = views
        views = axes.views(level)
        imgs, kbar, rbar, tbar = _aggregate_tensor(
            imgs, kbar, rbar, tbar, child_views, views,
            cfg.interpolation, exact_ctx, cfg.threads,
        )
        ops += 2 * imgs.shape[0] * imgs.shape[1] * 4 * int(np.prod([v.n for v in views]))

    det = detection_matrix(imgs, level=ld, axes=views)
    ops += det.values.size
    return MlddResult(
        config=cfg,
        axes=axes,
        level=ld,
        images=imgs,
        kbar=kbar,
        rbar=rbar,
        tbar=tbar,
        detection=det,
        op_count=ops,
    )


def upgrade_resolution(result: MlddResult, peak: CoarsePeak, window: int = 3) -> RefinedPeak:
    """Continue interpolation/aggregation to the final level inside a local
    window of ``window`` detection-level cells around ``peak``.

    Window indices double with each level, so parents never ask the
    interpolation for samples outside the retained child window.  Cost is
    bounded by the window, O(N^2) per detection; windows touching the
    grid edge are clipped.
    """
    axes = result.axes
    lmax = axes.level_max
    ld = result.level
    half = window // 2

    slices: list = [slice(None), slice(None)]
    windows: dict[str, tuple[int, int]] = {}
    for dim, cell, view in zip(_DIMS, peak.cell, result.detection.axes):
        if view.pinned:
            slices.append(slice(None))
            continue
        top = 1 << ld  # inclusive last sample index at the detection level
        lo_ld, hi_ld = max(0, cell - half), min(top, cell + half)
        windows[dim] = (lo_ld, hi_ld)
        slices.append(slice(lo_ld, hi_ld + 1))

    views = axes.views(ld, windows)
    imgs = result.images[tuple(slices)]
    kbar, rbar, tbar = result.kbar, result.rbar, result.tbar

    history = [(ld, tuple(float(c) for c in peak.coords))]
    for level in range(ld + 1, lmax + 1):
        child_views = views
        windows = {dim: (2 * lo, 2 * hi) for dim, (lo, hi) in windows.items()}
        views = axes.views(level, windows)
        imgs, kbar, rbar, tbar = _aggregate_tensor(
            imgs, kbar, rbar, tbar, child_views, views, "multilinear", None,
            result.config.threads,
        )
        mag = np.abs(imgs).sum(axis=(0, 1))
        idx = np.unravel_index(int(np.argmax(mag)), mag.shape)
        history.append((level, tuple(float(v.coords[j]) for v, j in zip(views, idx))))

    final = imgs[0, 0]
    idx = np.unravel_index(int(np.argmax(np.abs(final))), final.shape)
    coords = np.array([v.coords[j] for v, j in zip(views, idx)])
    cell = tuple(
        int(v.fine_lo + v.stride * j) if not v.pinned else 0 for v, j in zip(views, idx)
    )
    return RefinedPeak(
        cell=cell, coords=coords, value=complex(final[idx]), level_history=tuple(history)
    )
