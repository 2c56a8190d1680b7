"""Road extraction from the magnitude of a static image.

Pipeline: normalize -> Canny edges -> disk dilation -> connected-component
area filter -> Hough transform -> greedy peak picking -> mean-shift
clustering of (rho, alpha) peaks -> conversion to world coordinates.

Lines are parameterised in normal form ``x cos(a) + y sin(a) = rho`` with
``a`` in (-pi/2, pi/2].  In pixel coordinates x is the column index and y
the row index (growing downward); :func:`pixel_to_world` flips the row
axis and applies the pixel pitch and origin.  All operations here are
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)  # 8-connectivity structuring element


@dataclass
class GrayImage:
    """Normalized image with world-frame registration.

    ``values[row, col]`` lies in [0, 1]; pixel (0, 0) is the world point
    ``origin`` and rows step world-y downward by ``pitch``.
    """

    values: np.ndarray
    pitch: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.values.min() < 0 or self.values.max() > 1:
            raise ValueError("GrayImage values must lie in [0, 1]")

    @classmethod
    def from_magnitude(cls, magnitude: np.ndarray, x_coords, y_coords) -> "GrayImage":
        """Build from |image| indexed as [ix, iy] with ascending axes.

        Rows of the result run from the largest y downward, columns along
        ascending x, matching the usual raster convention.
        """
        x = np.asarray(x_coords)
        y = np.asarray(y_coords)
        pitch = float(x[1] - x[0])
        if abs(pitch - float(y[1] - y[0])) > 1e-9:
            raise ValueError("x/y pixel pitches differ")
        raster = normalize(np.asarray(magnitude)).T[::-1]
        return cls(values=raster, pitch=pitch, origin=(float(x[0]), float(y[-1])))


@dataclass(frozen=True)
class RoadLine:
    """World-frame road line (normal form) with detection support."""

    rho: float
    alpha: float
    support: int = 0
    width: float = 0.0  # perpendicular extent of the detected component, meters


@dataclass(frozen=True)
class RoadDetParams:
    """Stage parameters (image-processing defaults; all in pixels/degrees)."""

    blur_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.25
    dilation_radius: int = 2
    min_area_fraction: float = 0.005
    rho_step: float = 1.0
    alpha_step_deg: float = 1.0
    max_peaks: int = 24
    peak_fraction: float = 0.3
    nms_rho: int = 9
    nms_alpha: int = 13
    # Bandwidths tuned on the repo's synthetic road scenes: wide enough to
    # chain-merge a thick road's angular satellite peaks with its two edge
    # lines, narrow enough to keep distinct roads apart.
    bandwidth_rho: float = 12.0
    bandwidth_alpha_deg: float = 8.0
    # Clusters whose summed peak votes fall below this fraction of the
    # strongest cluster's are discarded (suppresses accidental alignments).
    min_cluster_fraction: float = 0.3


def normalize(values: np.ndarray) -> np.ndarray:
    """Affine rescale to [0, 1]; a constant image maps to all zeros."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise ValueError("normalize expects nonnegative input")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def canny(image, low: float = 0.1, high: float = 0.25, blur_sigma: float = 1.4) -> np.ndarray:
    """Canny edges: Gaussian blur, Sobel gradients, non-maximum
    suppression, double-threshold hysteresis.

    Thresholds are fractions of the maximum gradient magnitude and must
    satisfy 0 <= low < high <= 1.
    """
    if not 0 <= low < high <= 1:
        raise ValueError(f"need 0 <= low < high <= 1, got low={low}, high={high}")
    values = image.values if isinstance(image, GrayImage) else np.asarray(image, dtype=float)
    smoothed = ndimage.gaussian_filter(values, blur_sigma)
    gr = ndimage.sobel(smoothed, axis=0)  # d/d(row)
    gc = ndimage.sobel(smoothed, axis=1)  # d/d(col)
    mag = np.hypot(gr, gc)
    peak = mag.max()
    if peak == 0:
        return np.zeros(values.shape, dtype=bool)
    mag /= peak

    # Quantize gradient direction into 4 sectors and thin (ties break
    # toward the first neighbour so ideal steps give 1-px lines).
    angle = np.mod(np.arctan2(gr, gc), np.pi)
    sector = ((angle + np.pi / 8) // (np.pi / 4)).astype(int) % 4
    off = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    nms = np.zeros(values.shape, dtype=bool)
    for s, (dr, dc) in off.items():
        fwd = padded[1 + dr : 1 + dr + mag.shape[0], 1 + dc : 1 + dc + mag.shape[1]]
        bwd = padded[1 - dr : 1 - dr + mag.shape[0], 1 - dc : 1 - dc + mag.shape[1]]
        nms |= (sector == s) & (mag > bwd) & (mag >= fwd)

    strong = nms & (mag >= high)
    weak = nms & (mag >= low)
    labels, _ = ndimage.label(weak, structure=_EIGHT)
    keep = np.unique(labels[strong])
    keep = keep[keep > 0]
    return np.isin(labels, keep)


def dilate_disk(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with the integer disk {dx^2 + dy^2 <= r^2}."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    span = np.arange(-radius, radius + 1)
    disk = span[:, None] ** 2 + span[None, :] ** 2 <= radius**2
    return ndimage.binary_dilation(mask, structure=disk)


def connected_components_filter(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components with area below ``min_area`` pixels."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    labels, count = ndimage.label(mask, structure=_EIGHT)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    areas = np.bincount(labels.ravel())
    keep = np.flatnonzero(areas >= min_area)
    keep = keep[keep > 0]
    return np.isin(labels, keep)


def hough(mask: np.ndarray, rho_step: float = 1.0, alpha_step_deg: float = 1.0):
    """Straight-line Hough transform in pixel coordinates.

    Every true pixel votes once per angle bin at
    ``rho = col cos(a) + row sin(a)``; angles cover (-90, 90] degrees.
    Returns ``(accumulator, rho_centers, alpha_centers)`` with the
    accumulator indexed [rho, alpha].
    """
    if rho_step <= 0 or alpha_step_deg <= 0:
        raise ValueError("steps must be positive")
    n_alpha = int(round(180.0 / alpha_step_deg))
    alphas = np.radians(-90.0 + alpha_step_deg * np.arange(1, n_alpha + 1))
    diag = math.hypot(*mask.shape)
    n_rho = 2 * int(math.ceil(diag / rho_step)) + 1
    rho_min = -(n_rho // 2) * rho_step
    rhos = rho_min + rho_step * np.arange(n_rho)

    acc = np.zeros((n_rho, n_alpha), dtype=np.int64)
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        return acc, rhos, alphas
    rho_vals = cols[:, None] * np.cos(alphas)[None, :] + rows[:, None] * np.sin(alphas)[None, :]
    idx = np.rint((rho_vals - rho_min) / rho_step).astype(np.int64)
    for a in range(n_alpha):
        acc[:, a] = np.bincount(idx[:, a], minlength=n_rho)
    return acc, rhos, alphas


def hough_peaks(
    acc: np.ndarray,
    rhos: np.ndarray,
    alphas: np.ndarray,
    max_peaks: int = 24,
    nms_window: tuple[int, int] = (9, 9),
    min_fraction: float = 0.3,
):
    """Greedy peak extraction: take the global maximum, zero a window
    around it (the angle axis wraps), repeat.

    Stops after ``max_peaks`` or when the next peak drops below
    ``min_fraction`` of the first.  Returns (rho, alpha, votes) tuples in
    descending vote order.
    """
    if max_peaks < 1:
        raise ValueError("max_peaks must be >= 1")
    work = acc.astype(float, copy=True)
    half_r, half_a = nms_window[0] // 2, nms_window[1] // 2
    n_rho, n_alpha = work.shape
    peaks = []
    first = None
    for _ in range(max_peaks):
        flat = int(np.argmax(work))
        ir, ia = np.unravel_index(flat, work.shape)
        votes = work[ir, ia]
        if votes <= 0:
            break
        if first is None:
            first = votes
        elif votes < min_fraction * first:
            break
        peaks.append((float(rhos[ir]), float(alphas[ia]), int(votes)))
        r0, r1 = max(0, ir - half_r), min(n_rho, ir + half_r + 1)
        cols = np.arange(ia - half_a, ia + half_a + 1) % n_alpha
        work[np.ix_(np.arange(r0, r1), cols)] = 0.0
    return peaks


def mean_shift_cluster(points, bandwidth: tuple[float, float], tol: float = 1e-4):
    """Flat-kernel mean shift on bandwidth-normalized coordinates.

    Every point iterates to its mode (mean of points within unit
    normalized distance) until the shift drops below ``tol``; modes
    closer than one normalized unit merge, and each cluster center is
    the mean of its member points.  Output is independent of input
    order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return []
    bw = np.asarray(bandwidth, dtype=float)
    if np.any(bw <= 0):
        raise ValueError("bandwidths must be positive")
    z = pts / bw
    modes = z.copy()
    for i in range(len(z)):
        m = z[i]
        for _ in range(500):
            inside = np.sum((z - m) ** 2, axis=1) <= 1.0
            new = z[inside].mean(axis=0)
            if np.linalg.norm(new - m) < tol:
                m = new
                break
            m = new
        modes[i] = m

    # Merge modes within unit distance (transitive closure, order-free).
    n = len(modes)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.sum((modes[i] - modes[j]) ** 2) <= 1.0:
                ra, rb = find(i), find(j)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    centers = [pts[idx].mean(axis=0) for idx in groups.values()]
    centers.sort(key=lambda c: (c[0], c[1]))
    return [(float(c[0]), float(c[1])) for c in centers]


def normalize_line(rho: float, alpha: float) -> tuple[float, float]:
    """Fold (rho, alpha) into alpha in (-pi/2, pi/2] with matching rho sign."""
    alpha = math.remainder(alpha, math.pi)
    if alpha <= -math.pi / 2:
        alpha += math.pi
        rho = -rho
    elif alpha > math.pi / 2:
        alpha -= math.pi
        rho = -rho
    return rho, alpha


def pixel_to_world(rho_px: float, alpha_px: float, image: GrayImage) -> tuple[float, float]:
    """Convert a pixel-frame line (cols/rows normal form) to world frame.

    Applies the pixel pitch and origin and flips the row axis (rows grow
    downward, world y grows upward): alpha negates and rho rescales.
    """
    ox, oy = image.origin
    rho_w = rho_px * image.pitch + ox * math.cos(alpha_px) - oy * math.sin(alpha_px)
    return normalize_line(rho_w, -alpha_px)


def world_to_pixel(rho_w: float, alpha_w: float, image: GrayImage) -> tuple[float, float]:
    """Inverse of :func:`pixel_to_world`."""
    ox, oy = image.origin
    alpha_px = -alpha_w
    rho_px = (rho_w - ox * math.cos(alpha_px) + oy * math.sin(alpha_px)) / image.pitch
    return normalize_line(rho_px, alpha_px)


@dataclass
class RoadDetectionStages:
    """Intermediate products, kept for debug dumps."""

    gray: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    dilated: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    components: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    accumulator: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    peaks: list = field(default_factory=list)


def detect_roads(
    image: GrayImage,
    params: RoadDetParams = RoadDetParams(),
    stages: RoadDetectionStages | None = None,
) -> list[RoadLine]:
    """Full road-parameter extraction on a normalized static image."""
    edges = canny(image.values, params.canny_low, params.canny_high, params.blur_sigma)
    dilated = dilate_disk(edges, params.dilation_radius)
    min_area = int(params.min_area_fraction * image.values.size)
    components = connected_components_filter(dilated, min_area)
    acc, rhos, alphas = hough(components, params.rho_step, params.alpha_step_deg)
    peaks = hough_peaks(
        acc, rhos, alphas, params.max_peaks,
        (params.nms_rho, params.nms_alpha), params.peak_fraction,
    )
    if stages is not None:
        stages.gray = image.values
        stages.edges = edges
        stages.dilated = dilated
        stages.components = components
        stages.accumulator = acc
        stages.peaks = peaks
    if not peaks:
        return []
    bw = (params.bandwidth_rho, math.radians(params.bandwidth_alpha_deg))
    centers = mean_shift_cluster([(p[0], p[1]) for p in peaks], bw)

    # Vote mass per cluster (each peak weighs in at its nearest center)
    # and vote-weighted centroids: satellite peaks of a thick road carry
    # fewer votes than its main lines, so weighting recenters the cluster
    # on the road itself.
    pts = np.array([(p[0], p[1]) for p in peaks])
    wts = np.array([p[2] for p in peaks], dtype=float)
    ctr = np.array(centers)
    norm = np.array(bw)
    nearest = np.argmin(
        np.sum(((pts[:, None, :] - ctr[None, :, :]) / norm) ** 2, axis=2), axis=1
    )
    votes = np.zeros(len(centers))
    weighted = np.zeros_like(ctr)
    for i, c in enumerate(nearest):
        votes[c] += wts[i]
        weighted[c] += wts[i] * pts[i]
    refined = np.where(votes[:, None] > 0, weighted / np.maximum(votes, 1)[:, None], ctr)

    roads = []
    rows, cols = np.nonzero(components)
    for (rho_px, alpha_px), total in zip(refined, votes):
        if total < params.min_cluster_fraction * votes.max():
            continue
        dist = np.abs(cols * math.cos(alpha_px) + rows * math.sin(alpha_px) - rho_px)
        near = dist <= max(3.0 * params.bandwidth_rho, 1.0)
        support = int(near.sum())
        width = 2.0 * (np.percentile(dist[near], 95) if support else 0.0) * image.pitch
        rho_w, alpha_w = pixel_to_world(rho_px, alpha_px, image)
        roads.append(RoadLine(rho=rho_w, alpha=alpha_w, support=support, width=float(width)))
    roads.sort(key=lambda r: -r.support)
    return roads
