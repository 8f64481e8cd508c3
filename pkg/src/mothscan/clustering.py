"""Shape triage: contour features, seeded k-means, elbow rule, categories.

Closed contours are summarized by five scalars (area, perimeter,
compactness, solidity, eccentricity), z-scored and clustered; clusters are
then ranked by mean raw area to decide which contours are image noise,
individual insects, or groups of touching insects.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ParameterError
from .imaging import Contour, fill_polygon


class ContourCategory(Enum):
    NOISE = "Noise"
    INDIVIDUAL = "Individual"
    TOUCHING = "Touching"


@dataclass(frozen=True)
class ShapeFeatures:
    area: float
    perimeter: float
    compactness: float
    solidity: float
    eccentricity: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.area, self.perimeter, self.compactness, self.solidity, self.eccentricity]
        )


def _interior_moments(points: np.ndarray):
    """Second central moments of the pixels enclosed by a polygon."""
    x0 = int(np.floor(points[:, 0].min()))
    y0 = int(np.floor(points[:, 1].min()))
    local = points - np.array([x0, y0], dtype=np.float64)
    h = int(np.ceil(local[:, 1].max())) + 1
    w = int(np.ceil(local[:, 0].max())) + 1
    mask = fill_polygon(local, (h, w))
    ys, xs = np.nonzero(mask)
    xs = xs - xs.mean()
    ys = ys - ys.mean()
    return float((xs * xs).mean()), float((ys * ys).mean()), float((xs * ys).mean())


def shape_features(contour: Contour) -> ShapeFeatures:
    """Region descriptors of a closed contour.

    Area is the shoelace area of the point polygon, perimeter the closed
    polyline length, compactness 4*pi*A/P**2 (1 for a circle), solidity the
    area ratio against the convex hull, and eccentricity comes from the
    eigenvalues of the interior pixels' second-moment matrix (0 for a
    disc, sqrt(1 - b**2/a**2) for an a:b ellipse).
    """
    if not contour.closed:
        raise ParameterError("shape features are defined for closed contours only")
    pts = np.asarray(contour.points, dtype=np.float64)
    if len(pts) < 3:
        raise ParameterError("need at least 3 points to enclose area")
    x, y = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    area = 0.5 * abs(float(np.sum(x * y2 - x2 * y)))
    perimeter = float(np.sum(np.hypot(x2 - x, y2 - y)))
    if area == 0.0 or perimeter == 0.0:
        raise ParameterError("degenerate contour encloses no area")
    compactness = 4.0 * np.pi * area / perimeter**2
    try:
        hull_area = float(ConvexHull(pts).volume)
    except QhullError:
        hull_area = area
    solidity = min(area / hull_area, 1.0) if hull_area > 0 else 1.0
    mxx, myy, mxy = _interior_moments(pts)
    half_tr = 0.5 * (mxx + myy)
    root = np.hypot(0.5 * (mxx - myy), mxy)
    lam1, lam2 = half_tr + root, max(half_tr - root, 0.0)
    eccentricity = float(np.sqrt(1.0 - lam2 / lam1)) if lam1 > 0 else 0.0
    return ShapeFeatures(
        area=area,
        perimeter=perimeter,
        compactness=float(compactness),
        solidity=float(solidity),
        eccentricity=eccentricity,
    )


def feature_matrix(features) -> np.ndarray:
    return np.array([f.as_vector() for f in features], dtype=np.float64)


def zscore(x: np.ndarray) -> np.ndarray:
    """Per-column standardization; constant columns map to zero."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    return (x - mu) / sd


# ---------------------------------------------------------------------------
# k-means


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    wcss: float
    n_iter: int
    wcss_history: tuple


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def kmeans(features: np.ndarray, k: int, seed: int, init_centroids=None) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding, capped at 100 rounds.

    init_centroids overrides the seeding; this is how a k+1 run can be
    warm-started from a k run's centroids.  Empty clusters are re-seeded on
    the point farthest from its current centroid, which never increases the
    objective.  All ties break toward the lowest index.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"features must be 2-D, got shape {x.shape}")
    n = len(x)
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=np.float64)
        if centroids.shape != (k, x.shape[1]):
            raise ParameterError(
                f"init_centroids shape {centroids.shape} != {(k, x.shape[1])}"
            )
    else:
        chosen = [int(rng.integers(n))]
        d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
        for _ in range(1, k):
            total = d2.sum()
            probs = np.full(n, 1.0 / n) if total <= 0 else d2 / total
            chosen.append(int(rng.choice(n, p=probs)))
            d2 = np.minimum(d2, ((x - x[chosen[-1]]) ** 2).sum(axis=1))
        centroids = x[chosen].copy()

    assignments = np.full(n, -1, dtype=np.intp)
    history = []
    n_iter = 0
    for n_iter in range(1, 101):
        d2 = _sq_dists(x, centroids)
        new_assign = d2.argmin(axis=1)
        point_cost = d2[np.arange(n), new_assign]
        for c in range(k):
            if not (new_assign == c).any():
                far = int(point_cost.argmax())
                new_assign[far] = c
                centroids[c] = x[far]
                point_cost[far] = 0.0
        history.append(float(point_cost.sum()))
        stable = bool((new_assign == assignments).all())
        assignments = new_assign
        for c in range(k):
            centroids[c] = x[assignments == c].mean(axis=0)
        if stable:
            break
    wcss = float(_sq_dists(x, centroids)[np.arange(n), assignments].sum())
    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        wcss=wcss,
        n_iter=n_iter,
        wcss_history=tuple(history),
    )


def best_kmeans(features: np.ndarray, k: int, seed: int, restarts: int = 10) -> KMeansResult:
    """Best-of-restarts by WCSS; restart r runs with seed + r, ties keep the
    earliest restart."""
    if restarts < 1:
        raise ParameterError(f"restarts must be >= 1, got {restarts}")
    best = None
    for r in range(restarts):
        res = kmeans(features, k, seed + r)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


def elbow_select_k(features: np.ndarray, k_max: int = 6, seed: int = 0, restarts: int = 10) -> int:
    """Geometric elbow: k whose (k, WCSS) point lies farthest from the chord.

    Both axes are normalized to [0, 1] before measuring perpendicular
    distance, so the rule does not depend on the WCSS scale.  Fewer than 3
    samples, or a flat curve, fall back to k = 1.
    """
    x = np.asarray(features, dtype=np.float64)
    if k_max < 2:
        raise ParameterError(f"k_max must be >= 2, got {k_max}")
    n = len(x)
    if n < 3:
        return 1
    k_hi = min(k_max, n)
    wcss = np.array([best_kmeans(x, k, seed, restarts).wcss for k in range(1, k_hi + 1)])
    span = wcss[0] - wcss[-1]
    if span <= 0:
        return 1
    ks = np.arange(1, k_hi + 1, dtype=np.float64)
    px = (ks - 1.0) / (k_hi - 1.0)
    py = (wcss - wcss[-1]) / span
    # chord runs (0, py[0]) -> (1, py[-1]); |cross product| is the distance
    dx, dy = 1.0 - 0.0, py[-1] - py[0]
    dist = np.abs(dx * (py - py[0]) - dy * (px - 0.0)) / np.hypot(dx, dy)
    return int(dist.argmax()) + 1


def categorize(assignments: np.ndarray, features, k: int):
    """Rank clusters by mean raw area: smallest is Noise, next Individual,
    any further clusters are Touching groups.

    With k = 1 everything is Individual; with k = 2 the smaller-area
    cluster is Noise.  Returns {cluster_id: ContourCategory}.  Mean-area
    ties keep cluster ids in ascending order.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    assignments = np.asarray(assignments)
    areas = np.array([f.area for f in features], dtype=np.float64)
    means = np.full(k, np.inf)
    for c in range(k):
        sel = assignments == c
        if sel.any():
            means[c] = areas[sel].mean()
    order = np.argsort(means, kind="stable")
    mapping = {}
    if k == 1:
        return {0: ContourCategory.INDIVIDUAL}
    for rank, cid in enumerate(order):
        if rank == 0 and k >= 2:
            mapping[int(cid)] = ContourCategory.NOISE
        elif rank == 1:
            mapping[int(cid)] = ContourCategory.INDIVIDUAL
        else:
            mapping[int(cid)] = ContourCategory.TOUCHING
    return mapping
