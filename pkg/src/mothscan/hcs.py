"""Histogram-of-curviness-saliency patch descriptor.

A standardized window is swept by overlapping blocks; each block is split
into cells whose pixels vote their multi-scale curviness magnitude into an
unsigned orientation histogram, with linear interpolation between the two
nearest bin centers.  Blocks are L2-normalized independently, which is
what cancels affine intensity changes, and concatenated row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, ParameterError
from .imaging import multiscale_cs, resize_bilinear


@dataclass(frozen=True)
class HcsParams:
    """Descriptor geometry: sizes are (width, height) pixel pairs.

    Defaults give 15 x 11 blocks x 4 cells x 9 bins = 5940 values.
    alpha and scales are forwarded to the curviness computation; the scale
    set is sorted before use, so permuting it does not change output.
    """

    window: tuple = (64, 48)
    block: tuple = (8, 8)
    stride: tuple = (4, 4)
    cell: tuple = (4, 4)
    bins: int = 9
    alpha: float = 1.0
    scales: tuple = (1.0, 2.0, 4.0)
    epsilon: float = 1e-3

    def __post_init__(self):
        for name in ("window", "block", "stride", "cell"):
            pair = getattr(self, name)
            if len(pair) != 2 or any(int(v) != v or v <= 0 for v in pair):
                raise ParameterError(f"{name} must be a positive integer pair, got {pair}")
        if self.bins < 2:
            raise ParameterError(f"bins must be >= 2, got {self.bins}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if len(set(self.scales)) != len(self.scales) or any(s <= 0 for s in self.scales):
            raise ParameterError(f"scales must be positive and distinct, got {self.scales}")

    def sorted_scales(self) -> tuple:
        return tuple(sorted(float(s) for s in self.scales))


def grid_shape(params: HcsParams):
    """(blocks_x, blocks_y, cells_x, cells_y); errors on non-integer grids."""
    ww, wh = params.window
    bw, bh = params.block
    sx, sy = params.stride
    cw, ch = params.cell
    if bw % cw or bh % ch:
        raise ParameterError(f"block {params.block} not divisible by cell {params.cell}")
    if ww < bw or wh < bh:
        raise ParameterError(f"window {params.window} smaller than block {params.block}")
    if (ww - bw) % sx or (wh - bh) % sy:
        raise ParameterError(
            f"stride {params.stride} does not tile window {params.window} with block {params.block}"
        )
    return (ww - bw) // sx + 1, (wh - bh) // sy + 1, bw // cw, bh // ch


def descriptor_len(params: HcsParams) -> int:
    bx, by, cx, cy = grid_shape(params)
    return bx * by * cx * cy * params.bins


def normalize_patch(img: np.ndarray, mask: np.ndarray, params: HcsParams = None) -> np.ndarray:
    """Standardize a masked region to the descriptor window.

    Crops the mask bounding box, paints pixels outside the mask with the
    region's mean intensity (so background texture cannot vote), resizes
    bilinearly to (height, width) of the window and clamps to [0, 1].
    """
    if params is None:
        params = HcsParams()
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if img.shape != mask.shape:
        raise DimensionError(f"image {img.shape} and mask {mask.shape} differ")
    ys, xs = np.nonzero(mask)
    if not len(ys):
        raise ParameterError("mask selects no pixels")
    y0, y1 = int(ys.min()), int(ys.max())
    x0, x1 = int(xs.min()), int(xs.max())
    if (y1 - y0 + 1) < 8 or (x1 - x0 + 1) < 8:
        raise DimensionError(
            f"region bbox {(x1 - x0 + 1)}x{(y1 - y0 + 1)} below the 8x8 minimum"
        )
    crop = img[y0 : y1 + 1, x0 : x1 + 1]
    local = mask[y0 : y1 + 1, x0 : x1 + 1]
    mean = float(crop[local].mean())
    patch = np.where(local, crop, mean)
    ww, wh = params.window
    return np.clip(resize_bilinear(patch, (wh, ww)), 0.0, 1.0)


def _bin_votes(theta: np.ndarray, bins: int):
    """Two nearest bin centers and their linear weights, with wraparound.

    Centers sit at delta*(k + 1/2), delta = pi/bins; an angle t votes into
    the bracketing centers proportionally to closeness.
    """
    delta = np.pi / bins
    t = theta / delta - 0.5
    k0 = np.floor(t).astype(np.intp)
    w1 = t - k0
    b0 = np.mod(k0, bins)
    b1 = np.mod(k0 + 1, bins)
    return b0, b1, 1.0 - w1, w1


def compute_hcs(patch: np.ndarray, params: HcsParams = None) -> np.ndarray:
    """Descriptor of one standardized window.

    Cell sums are gathered through a per-bin integral image, so any block
    stride works; blocks (and cells inside a block) are concatenated
    row-major, x fastest.
    """
    if params is None:
        params = HcsParams()
    patch = np.asarray(patch, dtype=np.float64)
    ww, wh = params.window
    if patch.shape != (wh, ww):
        raise DimensionError(f"patch shape {patch.shape} != window {(wh, ww)}")
    bx, by, ncx, ncy = grid_shape(params)
    bins = params.bins
    cw, ch = params.cell
    sx, sy = params.stride

    cs = multiscale_cs(patch, params.sorted_scales(), params.alpha)
    mag = cs.magnitude
    b0, b1, w0, w1 = _bin_votes(cs.orientation, bins)
    votes = np.zeros((wh * ww, bins))
    rows = np.arange(wh * ww)
    votes[rows, b0.ravel()] = (mag * w0).ravel()
    votes[rows, b1.ravel()] += (mag * w1).ravel()
    votes = votes.reshape(wh, ww, bins)
    integral = np.zeros((wh + 1, ww + 1, bins))
    integral[1:, 1:] = votes.cumsum(axis=0).cumsum(axis=1)

    def cell_sum(y0, x0):
        return (
            integral[y0 + ch, x0 + cw]
            - integral[y0, x0 + cw]
            - integral[y0 + ch, x0]
            + integral[y0, x0]
        )

    eps2 = params.epsilon**2
    out = np.empty(bx * by * ncx * ncy * bins)
    pos = 0
    block_len = ncx * ncy * bins
    for iy in range(by):
        for ix in range(bx):
            oy, ox = iy * sy, ix * sx
            v = np.concatenate(
                [cell_sum(oy + cy * ch, ox + cx * cw) for cy in range(ncy) for cx in range(ncx)]
            )
            out[pos : pos + block_len] = v / np.sqrt(v @ v + eps2)
            pos += block_len
    return out


# ---------------------------------------------------------------------------
# Descriptor file format: one sample per line, label first, comma-separated.


def save_descriptors(path, x: np.ndarray, y: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionError(f"descriptor matrix {x.shape} and labels {y.shape} disagree")
    with open(path, "w", encoding="ascii") as fh:
        for label, row in zip(y, x):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")


def load_descriptors(path):
    labels = []
    rows = []
    width = None
    with open(path, encoding="ascii") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                label = int(parts[0])
                row = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{ln}: malformed descriptor line") from exc
            if label not in (-1, 1):
                raise DataError(f"{path}:{ln}: label must be -1 or +1, got {label}")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{ln}: expected {width} values, got {len(row)}")
            labels.append(label)
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no descriptors")
    return np.vstack(rows), np.array(labels, dtype=np.int64)
