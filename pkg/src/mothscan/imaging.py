"""Raster primitives: smoothing, Hessians, curviness saliency, contour maps.

Images are 2-D float64 arrays indexed ``[row, col]`` with intensities in
[0, 1] once loaded/normalized.  x is the column axis, y the row axis.
Angles are measured from +x toward +y and folded into [0, pi), which is the
natural range for line-like orientation.

The saliency measure is the squared gap between the Hessian eigenvalues,

    CS = alpha * ((Ixx - Iyy)**2 + 4 * Ixy**2)

which is rotation invariant in magnitude and scales by a**2 under the
intensity map a*I + b.  Orientation is the principal Hessian eigenvector
(the one with the larger-magnitude eigenvalue), i.e. the across-feature
axis for ridges and edge flanks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError, DimensionError, ParameterError

# 2-D float64 raster in [0, 1]; kept as a plain array on purpose.
GrayImage = np.ndarray

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# I/O


def rgb_to_gray(rgb: np.ndarray) -> GrayImage:
    """Luma conversion. Accepts uint8 or float RGB already in [0, 1]."""
    arr = np.asarray(rgb, dtype=np.float64)
    if np.issubdtype(np.asarray(rgb).dtype, np.integer):
        arr = arr / 255.0
    r, g, b = LUMA_WEIGHTS
    return np.clip(arr[..., 0] * r + arr[..., 1] * g + arr[..., 2] * b, 0.0, 1.0)


def load_gray(path) -> GrayImage:
    """Read a PNG/JPEG/PGM raster as a grayscale image in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read raster {path!r}: {exc}") from exc
    if arr.ndim == 3:
        return rgb_to_gray(arr[..., :3])
    if arr.ndim != 2:
        raise DataError(f"unsupported raster layout {arr.shape} in {path!r}")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64) / float(np.iinfo(arr.dtype).max)
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def save_gray(path, img: GrayImage) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def ensure_gray(img) -> GrayImage:
    """Validate the grayscale contract (2-D, finite, in [0, 1])."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D raster, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("raster contains non-finite intensities")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DataError("intensities outside [0, 1]; normalize on load")
    return arr


# ---------------------------------------------------------------------------
# Smoothing


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-3 sigma, normalized to unit sum."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_field(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with replicate borders, no range clamp.

    Used on derivative/relief fields whose values are not confined to [0, 1].
    """
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(arr, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def gaussian_smooth(img: GrayImage, sigma: float) -> GrayImage:
    """Smooth an intensity image; output clamped back to [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D raster, got shape {arr.shape}")
    return np.clip(smooth_field(arr, sigma), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Hessian and curviness saliency


@dataclass(frozen=True)
class HessianField:
    ixx: np.ndarray
    iyy: np.ndarray
    ixy: np.ndarray
    sigma: float


def hessian(img: np.ndarray, sigma: float) -> HessianField:
    """Second derivatives from Gaussian smoothing + central differences.

    sigma = 0 skips smoothing, making the stencils exact on quadratics.
    Borders are replicate-padded; treat a band of width ceil(3*sigma)+1 as
    approximate.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D raster, got shape {arr.shape}")
    if min(arr.shape) < 5:
        raise DimensionError(f"raster {arr.shape} too small for second differences (need 5x5)")
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    s = smooth_field(arr, sigma) if sigma > 0 else arr
    p = np.pad(s, 1, mode="edge")
    ixx = p[1:-1, 2:] - 2.0 * s + p[1:-1, :-2]
    iyy = p[2:, 1:-1] - 2.0 * s + p[:-2, 1:-1]
    ixy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    return HessianField(ixx=ixx, iyy=iyy, ixy=ixy, sigma=float(sigma))


def principal_direction(h: HessianField) -> np.ndarray:
    """Orientation of the Hessian eigenvector with the larger |eigenvalue|.

    Folded into [0, pi).  Degenerate pixels (ixx == iyy, ixy == 0) map to 0.
    When the two eigenvalues tie in magnitude the positive one is used.
    """
    a, b, c = h.ixx, h.ixy, h.iyy
    mean = 0.5 * (a + c)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)  # eigenvector of the larger signed eigenvalue
    theta = np.where(mean >= 0.0, theta, theta + 0.5 * np.pi)
    theta = np.mod(theta, np.pi)
    return np.where((a == c) & (b == 0.0), 0.0, theta)


@dataclass(frozen=True)
class CurvinessField:
    magnitude: np.ndarray
    orientation: np.ndarray
    alpha: float
    scales: tuple


def curviness_saliency(h: HessianField, alpha: float = 1.0) -> CurvinessField:
    """Squared eigenvalue gap of the Hessian, with principal orientation."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    mag = alpha * ((h.ixx - h.iyy) ** 2 + 4.0 * h.ixy**2)
    return CurvinessField(
        magnitude=mag,
        orientation=principal_direction(h),
        alpha=float(alpha),
        scales=(float(h.sigma),),
    )


def multiscale_cs(img: np.ndarray, scales, alpha: float = 1.0) -> CurvinessField:
    """Per-pixel max of sigma**4-normalized curviness over a scale sweep.

    The sigma**4 factor is the gamma-normalized scale-space weight for a
    squared second-derivative quantity; without it coarse scales always
    lose.  Orientation is taken from the winning scale; ties go to the
    finer scale, so the result does not depend on evaluation order of
    equal responses.
    """
    scales = tuple(float(s) for s in scales)
    if not scales:
        raise ParameterError("scales must be non-empty")
    if any(s <= 0 for s in scales):
        raise ParameterError(f"scales must be positive, got {scales}")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ParameterError(f"scales must be strictly increasing, got {scales}")
    mag = None
    ori = None
    for s in scales:
        f = curviness_saliency(hessian(img, s), alpha)
        m = (s**4) * f.magnitude
        if mag is None:
            mag, ori = m, f.orientation
        else:
            swap = m > mag
            mag = np.where(swap, m, mag)
            ori = np.where(swap, f.orientation, ori)
    return CurvinessField(magnitude=mag, orientation=ori, alpha=float(alpha), scales=scales)


# ---------------------------------------------------------------------------
# Sampling helpers (shared with the descriptor stage)


def bilinear_sample(arr: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at fractional (y, x), clamped at the borders."""
    h, w = arr.shape
    y = np.clip(y, 0.0, h - 1.0)
    x = np.clip(x, 0.0, w - 1.0)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bot = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img: np.ndarray, out_shape) -> np.ndarray:
    """Resize by sampling the source at dst * (in/out) coordinates.

    Equal shapes reproduce the input exactly; a 2:1 shrink samples at
    exactly doubled coordinates.
    """
    arr = np.asarray(img, dtype=np.float64)
    oh, ow = int(out_shape[0]), int(out_shape[1])
    if oh <= 0 or ow <= 0:
        raise ParameterError(f"output shape must be positive, got {out_shape}")
    h, w = arr.shape
    ys = np.arange(oh, dtype=np.float64) * (h / oh)
    xs = np.arange(ow, dtype=np.float64) * (w / ow)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(arr, yy, xx)


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude with replicate borders."""
    p = np.pad(np.asarray(img, dtype=np.float64), 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return np.hypot(gx, gy)


# ---------------------------------------------------------------------------
# Contour extraction


@dataclass
class Contour:
    """Ordered boundary points, as (x, y) pixel coordinates, row (N, 2).

    closed means the traced component encloses interior pixels; such
    contours delimit a region and feed the shape/descriptor stages.  For a
    closed contour the first and last points are 8-neighbors (or equal).
    """

    points: np.ndarray
    closed: bool

    def __len__(self) -> int:
        return len(self.points)

    def bbox(self):
        """Inclusive integer bounds (x0, y0, x1, y1)."""
        xs = self.points[:, 0]
        ys = self.points[:, 1]
        return (
            int(math.floor(xs.min())),
            int(math.floor(ys.min())),
            int(math.ceil(xs.max())),
            int(math.ceil(ys.max())),
        )


# Moore neighborhood, clockwise in image coordinates (y grows downward).
_TRACE_DY = (0, 1, 1, 1, 0, -1, -1, -1)
_TRACE_DX = (1, 1, 0, -1, -1, -1, 0, 1)
_DIR_INDEX = {(dy, dx): i for i, (dy, dx) in enumerate(zip(_TRACE_DY, _TRACE_DX))}


def _trace_boundary(mask: np.ndarray):
    """Moore-neighbor boundary trace (clockwise) of one connected component.

    Returns the boundary cycle as a list of (y, x).  The walk is a
    deterministic function of (pixel, backtrack direction), so cycle
    detection on that state is an exact stopping rule.
    """
    ys, xs = np.nonzero(mask)
    first = np.lexsort((xs, ys))[0]
    start = (int(ys[first]), int(xs[first]))
    if len(ys) == 1:
        return [start]
    h, w = mask.shape
    seen = {}
    path = []
    cur, back = start, 4  # west of the raster-first pixel is background
    while (cur, back) not in seen:
        seen[(cur, back)] = len(path)
        path.append(cur)
        nxt = None
        for k in range(1, 9):
            d = (back + k) % 8
            ny, nx = cur[0] + _TRACE_DY[d], cur[1] + _TRACE_DX[d]
            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx]:
                nxt = (ny, nx)
                break
        if nxt is None:  # unreachable for a connected component of size > 1
            return path
        # scan restarts from the last background pixel checked before nxt
        bd = (d - 1) % 8
        bprev = (cur[0] + _TRACE_DY[bd], cur[1] + _TRACE_DX[bd])
        cur = nxt
        back = _DIR_INDEX[(bprev[0] - cur[0], bprev[1] - cur[1])]
    return path[seen[(cur, back)] :]


def _nms(mag: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Keep pixels that are maxima along their own orientation axis."""
    h, w = mag.shape
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    dx = np.cos(theta)
    dy = np.sin(theta)
    ahead = bilinear_sample(mag, yy + dy, xx + dx)
    behind = bilinear_sample(mag, yy - dy, xx - dx)
    return (mag >= ahead) & (mag >= behind)


# Float dust on constant rasters sits many orders below any real response;
# contours are never formed from it.
_MAGNITUDE_FLOOR = 1e-16


def edge_map(cs: CurvinessField, threshold_quantile: float = 0.90) -> np.ndarray:
    """Thinned binary edge map: NMS survivors above the magnitude quantile."""
    if not 0.0 < threshold_quantile < 1.0:
        raise ParameterError(f"threshold_quantile must be in (0, 1), got {threshold_quantile}")
    mag = cs.magnitude
    thr = max(float(np.quantile(mag, threshold_quantile)), _MAGNITUDE_FLOOR)
    return _nms(mag, cs.orientation) & (mag > thr)


def extract_contours(cs: CurvinessField, threshold_quantile: float = 0.90):
    """Thin, threshold and trace a curviness field into contours.

    Non-maximum suppression thins the magnitude along the orientation axis
    and the given quantile of the full magnitude raster sets the keep
    threshold.  NMS leaves nicks in otherwise closed rings: one-pixel
    dropouts anywhere, and holes a few pixels long where ridges of
    different orientation meet (no single orientation fits a junction, so
    suppression eats its pixels).  The edge map is therefore bridged by a
    radius-2 dilation followed by a radius-1 erosion before 8-connected
    components are traced.  The erosion deliberately undershoots the
    dilation: a symmetric closing cuts end-to-end chain breaks right back
    open (the bridge between two thin chain ends is never thicker than
    the structuring element), while the one-pixel backoff keeps bridges
    over gaps up to about 2.5 px at the cost of fattening every contour
    by a pixel.  A component that encloses
    interior pixels is filled and its outer boundary traced, giving one
    simple closed cycle even when texture ridges hang off the ring; other
    components are traced as open paths.  Contours shorter than 8 points
    are dropped either way.
    """
    edge = edge_map(cs, threshold_quantile)
    if not edge.any():
        return []
    yy, xx = np.mgrid[-2:3, -2:3]
    disc2 = xx * xx + yy * yy <= 4
    yy, xx = np.mgrid[-1:2, -1:2]
    disc1 = xx * xx + yy * yy <= 1
    bridged = ndimage.binary_erosion(
        ndimage.binary_dilation(edge, structure=disc2),
        structure=disc1,
        border_value=1,
    )
    square = np.ones((3, 3), dtype=bool)
    labels, n = ndimage.label(bridged, structure=square)
    contours = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        comp = labels[sl] == i
        filled = ndimage.binary_fill_holes(comp)
        closed = bool(filled.sum() > comp.sum())
        cycle = _trace_boundary(filled if closed else comp)
        if len(cycle) < 8:
            continue
        oy, ox = sl[0].start, sl[1].start
        pts = np.array([(x + ox, y + oy) for y, x in cycle], dtype=np.float64)
        contours.append(Contour(points=pts, closed=closed))
    return contours


def trace_mask(mask: np.ndarray) -> Contour:
    """Closed boundary contour of a filled region mask.

    Traces the connected component that contains the raster-first
    foreground pixel; holes are ignored (only the outer boundary is
    walked).  Inverse of fill_polygon for simply connected masks.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DimensionError(f"expected a 2-D mask, got shape {mask.shape}")
    if not mask.any():
        raise DataError("cannot trace an empty mask")
    cycle = _trace_boundary(mask)
    pts = np.array([(x, y) for y, x in cycle], dtype=np.float64)
    return Contour(points=pts, closed=True)


def fill_polygon(points: np.ndarray, shape) -> np.ndarray:
    """Pixel-center even-odd rasterization of a closed polygon.

    Boundary pixels (the rounded polygon points) are included, so filling a
    traced contour reproduces its enclosed component.
    """
    h, w = int(shape[0]), int(shape[1])
    mask = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) >= 3:
        x, y = pts[:, 0], pts[:, 1]
        x2, y2 = np.roll(x, -1), np.roll(y, -1)
        for row in range(h):
            cross = ((y <= row) & (y2 > row)) | ((y2 <= row) & (y > row))
            if not cross.any():
                continue
            t = (row - y[cross]) / (y2[cross] - y[cross])
            xi = np.sort(x[cross] + t * (x2[cross] - x[cross]))
            for a, b in zip(xi[0::2], xi[1::2]):
                lo = max(int(math.ceil(a)), 0)
                hi = min(int(math.floor(b)), w - 1)
                if hi >= lo:
                    mask[row, lo : hi + 1] = True
    if len(pts):
        xi = np.clip(np.round(pts[:, 0]).astype(np.intp), 0, w - 1)
        yi = np.clip(np.round(pts[:, 1]).astype(np.intp), 0, h - 1)
        mask[yi, xi] = True
    return mask
