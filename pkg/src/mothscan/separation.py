"""Splitting touching insects: contour-derived seeds + Meyer flooding.

The trick for seed discovery: the curviness edge map of a fused blob
contains not only the outer ring but also the interior crease where the
two bodies meet.  Dilating that map closes small gaps, and the pockets of
its complement (components not touching the window border) become the
per-insect seed regions for the watershed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError
from .imaging import (
    Contour,
    edge_map,
    fill_polygon,
    gradient_magnitude,
    multiscale_cs,
    smooth_field,
)

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def disc_element(radius: int) -> np.ndarray:
    """Euclidean disc footprint {(dy, dx): dy**2 + dx**2 <= r**2}.

    Radius 1 is the 5-pixel plus shape; radius 0 the identity.
    """
    r = int(radius)
    if r < 0:
        raise ParameterError(f"radius must be >= 0, got {radius}")
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def dilate_contours(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation of an edge map by a disc structuring element."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"expected a 2-D mask, got shape {mask.shape}")
    if mask.dtype != bool:
        raise ParameterError("dilate_contours expects a boolean mask")
    if radius == 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disc_element(radius))


def initial_regions(dilated: np.ndarray):
    """Seed regions: interior pockets of the dilated contour map.

    4-connected components of the complement that do not touch the raster
    border are labeled 1..R in raster order.  Returns None when no such
    pocket exists, which callers read as "treat the blob as one insect".
    """
    dilated = np.asarray(dilated, dtype=bool)
    labels, n = ndimage.label(~dilated, structure=_CROSS)
    if n == 0:
        return None
    border = np.unique(
        np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    )
    lut = np.zeros(n + 1, dtype=np.int32)
    nxt = 1
    for i in range(1, n + 1):
        if i not in border:
            lut[i] = nxt
            nxt += 1
    if nxt == 1:
        return None
    return lut[labels]


def _reach_offsets(reach: int):
    """Nonzero integer offsets within Euclidean distance reach."""
    out = []
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            if (dy or dx) and dy * dy + dx * dx <= reach * reach:
                out.append((dy, dx))
    return out


def _neighbor_boundary(labels: np.ndarray, rid: int, offsets) -> np.ndarray:
    """Counts of (rid, other) pixel pairs within reach, indexed by other id.

    With the 4-neighborhood offsets this is the shared-boundary length;
    larger reaches let two regions face each other across a thin unlabeled
    wall and still count as neighbors.
    """
    p = np.pad(labels, max(max(abs(dy), abs(dx)) for dy, dx in offsets),
               constant_values=0)
    m = labels == rid
    r = (p.shape[0] - labels.shape[0]) // 2
    h, w = labels.shape
    chunks = [p[r + dy : r + dy + h, r + dx : r + dx + w][m] for dy, dx in offsets]
    neigh = np.concatenate(chunks)
    neigh = neigh[(neigh > 0) & (neigh != rid)]
    return np.bincount(neigh) if neigh.size else np.zeros(0, dtype=np.intp)


def merge_regions(labels: np.ndarray, min_area: float, reach: int = 1) -> np.ndarray:
    """Absorb undersized regions into the neighbor with the longest shared
    boundary, smallest region first, until a fixed point.

    reach 1 means direct 4-adjacency.  Seed maps derived from a dilated
    edge mask keep their pockets separated by the mask wall, so callers in
    that flow pass a reach spanning the wall width; a merged seed may then
    be momentarily disconnected, which the later flooding heals.  Regions
    below min_area with no neighbor in reach are left alone (they cannot
    merge).  Output labels are re-compacted to 1..R preserving ascending
    id order.
    """
    if reach < 1:
        raise ParameterError(f"reach must be >= 1, got {reach}")
    offsets = _reach_offsets(reach)
    lm = np.asarray(labels).copy()
    stuck = set()
    while True:
        ids, counts = np.unique(lm[lm > 0], return_counts=True)
        if len(ids) <= 1:
            break
        merged = False
        for area, rid in sorted(zip(counts, ids)):
            if area >= min_area:
                break
            if int(rid) in stuck:
                continue
            bc = _neighbor_boundary(lm, int(rid), offsets)
            if bc.size == 0 or bc.max() == 0:
                stuck.add(int(rid))
                continue
            lm[lm == rid] = int(bc.argmax())
            merged = True
            break
        if not merged:
            break
    ids = np.unique(lm[lm > 0])
    lut = np.zeros(lm.max() + 1, dtype=np.int32)
    for j, i in enumerate(ids, start=1):
        lut[i] = j
    return lut[lm]


def watershed(relief: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Meyer flooding of a relief raster from labeled seed regions.

    Pixels enter a priority queue keyed by (relief, insertion counter); the
    counter gives FIFO order on plateaus so the flood is deterministic.  A
    popped pixel takes the label of its flooded 4-neighbors when they
    agree and becomes watershed line (label 0 in the output) when two
    basins have reached it.
    """
    relief = np.asarray(relief, dtype=np.float64)
    seeds = np.asarray(seeds)
    if relief.shape != seeds.shape:
        raise DimensionError(f"relief {relief.shape} and seeds {seeds.shape} differ")
    if not (seeds > 0).any():
        raise ParameterError("watershed needs at least one seed pixel")
    h, w = relief.shape
    LINE = -1
    labels = seeds.astype(np.int64).copy()
    queued = labels > 0
    heap = []
    counter = 0

    def push(y, x):
        nonlocal counter
        heapq.heappush(heap, (relief[y, x], counter, y, x))
        counter += 1

    sy, sx = np.nonzero(labels > 0)
    for y, x in zip(sy.tolist(), sx.tolist()):
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and not queued[ny, nx]:
                queued[ny, nx] = True
                push(ny, nx)
    while heap:
        _, _, y, x = heapq.heappop(heap)
        found = 0
        line = False
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w:
                lab = labels[ny, nx]
                if lab > 0:
                    if found and lab != found:
                        line = True
                        break
                    found = lab
        labels[y, x] = LINE if line else found
        if not line:
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and not queued[ny, nx]:
                    queued[ny, nx] = True
                    push(ny, nx)
    labels[labels == LINE] = 0
    return labels.astype(np.int32)


def assign_lines(labels: np.ndarray, relief: np.ndarray) -> np.ndarray:
    """Hand watershed-line pixels to the 4-neighbor region of lowest relief.

    Ties go to the lower label.  Runs in passes so thick line junctions
    resolve from their edges inward; each pass works from a snapshot, so
    the result does not depend on pixel visiting order.
    """
    out = np.asarray(labels).copy()
    h, w = out.shape
    while True:
        ys, xs = np.nonzero(out == 0)
        if not len(ys):
            break
        snap = out.copy()
        changed = False
        for y, x in zip(ys.tolist(), xs.tolist()):
            best = None
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and snap[ny, nx] > 0:
                    key = (relief[ny, nx], snap[ny, nx])
                    if best is None or key < best:
                        best = key
            if best is not None:
                out[y, x] = best[1]
                changed = True
        if not changed:
            break
    return out


@dataclass(frozen=True)
class SeparationParams:
    # scales stop at 2: the stage zooms into one blob, and the coarse
    # scene scale smears the contact seam between abutting bodies into a
    # single dome whose medial ridge drowns the seam response
    # relief smoothing wide enough that the rim-slope peak spreads over
    # the flat outer band of a blob; with a sharper relief the band floods
    # early through the first wall breach and one basin sweeps it whole
    dilation_radius: int = 2
    min_area_frac: float = 0.10
    relief_sigma: float = 2.0
    alpha: float = 1.0
    scales: tuple = (1.0, 2.0)
    threshold_quantile: float = 0.90
    margin: int = 4


def separate_touching(img: np.ndarray, contour: Contour, params: SeparationParams = None):
    """Split a touching-group contour into per-insect masks.

    The curviness edge map of the full frame is cropped to the padded
    bounding box (the interior crease between bodies lives in that map,
    and the full-frame quantile keeps the same threshold the detector
    used; a window-local quantile would sit far higher because the window
    is mostly blob).  The crop is dilated, interior pockets become seeds,
    slivers below min_area_frac of the bbox area are merged away, the
    smoothed gradient-magnitude relief is flooded, and the result is a
    list of full-frame boolean masks that tile the filled contour.  With
    no usable seeds the filled contour comes back as a single region.
    """
    if params is None:
        params = SeparationParams()
    if not contour.closed:
        raise ParameterError("separation expects a closed contour")
    img = np.asarray(img, dtype=np.float64)
    fh, fw = img.shape
    x0, y0, x1, y1 = contour.bbox()
    wy0 = max(y0 - params.margin, 0)
    wy1 = min(y1 + params.margin, fh - 1)
    wx0 = max(x0 - params.margin, 0)
    wx1 = min(x1 + params.margin, fw - 1)
    window = img[wy0 : wy1 + 1, wx0 : wx1 + 1]
    local_pts = contour.points - np.array([wx0, wy0], dtype=np.float64)
    poly = fill_polygon(local_pts, window.shape)

    def whole():
        full = np.zeros((fh, fw), dtype=bool)
        full[wy0 : wy1 + 1, wx0 : wx1 + 1] = poly
        return [full]

    if min(window.shape) < 5:
        return whole()
    cs = multiscale_cs(img, params.scales, params.alpha)
    edges = edge_map(cs, params.threshold_quantile)[wy0 : wy1 + 1, wx0 : wx1 + 1]
    seeds = initial_regions(dilate_contours(edges, params.dilation_radius))
    if seeds is None:
        return whole()
    min_area = params.min_area_frac * (x1 - x0 + 1) * (y1 - y0 + 1)
    # pockets sit across the dilated edge wall from each other, so the
    # merge must reach over a wall of width 2*radius + 1
    seeds = merge_regions(seeds, min_area, reach=2 * params.dilation_radius + 1)
    if seeds.max() == 0:
        return whole()
    relief = smooth_field(gradient_magnitude(window), params.relief_sigma)
    # flood only the contour's region: open background relief is near
    # zero, so an unmasked flood would race around the blob and claim the
    # far rim band from outside
    relief = np.where(poly, relief, np.inf)
    flooded = assign_lines(watershed(relief, seeds), relief)
    # a seed pocket trapped in a wall nook can ride through the flood as a
    # dangling sliver; final regions are 4-adjacent, so plain merging
    # cleans those up
    flooded = merge_regions(np.where(poly, flooded, 0), min_area)
    masks = []
    for rid in range(1, int(flooded.max()) + 1):
        local = (flooded == rid) & poly
        if not local.any():
            continue
        full = np.zeros((fh, fw), dtype=bool)
        full[wy0 : wy1 + 1, wx0 : wx1 + 1] = local
        masks.append(full)
    return masks if masks else whole()
