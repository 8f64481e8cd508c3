"""End-to-end detection: contours -> triage -> separation -> classification.

detect_image is deterministic given (image, model, config): every seed is
part of the config, and each stage is itself deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .clustering import (
    ContourCategory,
    best_kmeans,
    categorize,
    elbow_select_k,
    feature_matrix,
    shape_features,
    zscore,
)
from .errors import DataError, DimensionError, ParameterError
from .hcs import HcsParams, compute_hcs, descriptor_len, normalize_patch
from .imaging import ensure_gray, extract_contours, fill_polygon, multiscale_cs
from .separation import SeparationParams, separate_touching
from .svm import KernelSpec, SvmModel


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float = 1.0
    scales: tuple = (1.0, 2.0, 4.0)
    threshold_quantile: float = 0.90
    dilation_radius: int = 2
    min_area_frac: float = 0.10
    relief_sigma: float = 2.0
    # separation looks inside one blob; the coarse scene scale would smear
    # the contact seam between abutting bodies (see SeparationParams)
    separation_scales: tuple = (1.0, 2.0)
    separation_margin: int = 4
    hcs: HcsParams = field(default_factory=HcsParams)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    c: float = 0.1
    k_max: int = 6
    kmeans_seed: int = 0
    kmeans_restarts: int = 10
    svm_seed: int = 0
    folds: int = 5
    augment_ratio: float = 1.0
    augment_seed: int = 0

    def separation_params(self) -> SeparationParams:
        return SeparationParams(
            dilation_radius=self.dilation_radius,
            min_area_frac=self.min_area_frac,
            relief_sigma=self.relief_sigma,
            alpha=self.alpha,
            scales=self.separation_scales,
            threshold_quantile=self.threshold_quantile,
            margin=self.separation_margin,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        d["separation_scales"] = list(self.separation_scales)
        d["hcs"] = {
            "window": list(self.hcs.window),
            "block": list(self.hcs.block),
            "stride": list(self.hcs.stride),
            "cell": list(self.hcs.cell),
            "bins": self.hcs.bins,
            "alpha": self.hcs.alpha,
            "scales": list(self.hcs.scales),
            "epsilon": self.hcs.epsilon,
        }
        d["kernel"] = {"degree": self.kernel.degree, "offset": self.kernel.offset}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:12]


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw)
    base = PipelineConfig()
    kwargs = {}
    if "hcs" in raw:
        h = dict(raw.pop("hcs"))
        for key in ("window", "block", "stride", "cell", "scales"):
            if key in h:
                h[key] = tuple(h[key])
        try:
            kwargs["hcs"] = HcsParams(**h)
        except TypeError as exc:
            raise ParameterError(f"unknown hcs option: {exc}") from exc
    if "kernel" in raw:
        k = raw.pop("kernel")
        kwargs["kernel"] = KernelSpec(degree=k.get("degree", 6), offset=k.get("offset", 1.0))
    for key in ("scales", "separation_scales"):
        if key in raw:
            raw[key] = tuple(raw[key])
    known = set(PipelineConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"unknown config options: {sorted(unknown)}")
    kwargs.update(raw)
    return replace(base, **kwargs)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path!r}: {exc}") from exc
    return config_from_dict(raw)


class DetectionCategory(Enum):
    NOISE = "Noise"
    MOTH = "Moth"
    OTHER_INSECT = "OtherInsect"
    TOUCHING_GROUP = "TouchingGroup"


@dataclass
class Detection:
    category: DetectionCategory
    box: tuple  # (x0, y0, x1, y1), inclusive
    mask: np.ndarray = None
    score: float = None
    members: tuple = ()

    def to_dict(self) -> dict:
        d = {"category": self.category.value, "box": [int(v) for v in self.box]}
        if self.score is not None:
            d["score"] = float(self.score)
        if self.members:
            d["members"] = [m.to_dict() for m in self.members]
        return d


@dataclass
class DetectionResult:
    detections: list
    counts: dict

    def to_dict(self, image_name: str = None, config: PipelineConfig = None) -> dict:
        out = {
            "counts": dict(self.counts),
            "detections": [d.to_dict() for d in self.detections],
        }
        if image_name is not None:
            out["image"] = str(image_name)
        if config is not None:
            out["config_hash"] = config.config_hash()
        return out


def _mask_box(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def _classify_region(img, mask, model, config):
    """SVM verdict for one region mask; None when the bbox is under 8x8."""
    x0, y0, x1, y1 = _mask_box(mask)
    if (x1 - x0 + 1) < 8 or (y1 - y0 + 1) < 8:
        return None, None
    patch = normalize_patch(img, mask, config.hcs)
    score = float(model.decision_function(compute_hcs(patch, config.hcs))[0])
    cat = DetectionCategory.MOTH if score >= 0.0 else DetectionCategory.OTHER_INSECT
    return cat, score


def _point_inside(px: float, py: float, poly: np.ndarray) -> bool:
    """Even-odd ray-cast test of one point against a closed polygon."""
    x, y = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cross = ((y <= py) & (y2 > py)) | ((y2 <= py) & (y > py))
    if not cross.any():
        return False
    t = (py - y[cross]) / (y2[cross] - y[cross])
    xi = x[cross] + t * (x2[cross] - x[cross])
    return int((xi < px).sum()) % 2 == 1


def _top_level(contours):
    """Outermost closed contours only.

    A ring nested inside another closed ring is interior texture of the
    host object (wing patterns produce them in numbers) and must not be
    triaged as a separate object.
    """
    boxes = [c.bbox() for c in contours]
    keep = []
    for i, ci in enumerate(contours):
        bi = boxes[i]
        inside = False
        for j, cj in enumerate(contours):
            if i == j or boxes[j] == bi:
                continue
            bj = boxes[j]
            if (bi[0] >= bj[0] and bi[1] >= bj[1]
                    and bi[2] <= bj[2] and bi[3] <= bj[3]):
                if _point_inside(ci.points[0, 0], ci.points[0, 1], cj.points):
                    inside = True
                    break
        if not inside:
            keep.append(ci)
    return keep


def detect_image(img, model: SvmModel, config: PipelineConfig = None) -> DetectionResult:
    """Full pass over one trap image.

    Closed contours are triaged by clustered shape features; Noise is
    reported as-is, Individual contours are classified directly, Touching
    contours are watershed-split and each member classified.  Counts:
    moths and other_insects include members of split groups;
    touching_groups_split counts groups that produced >= 2 regions.
    """
    if config is None:
        config = PipelineConfig()
    img = ensure_gray(img)
    want = descriptor_len(config.hcs)
    if model.sv_dim != want:
        raise DataError(
            f"model dimension {model.sv_dim} != descriptor length {want}; "
            "the model was trained with a different window geometry"
        )
    counts = {"moths": 0, "other_insects": 0, "noise": 0, "touching_groups_split": 0}
    cs = multiscale_cs(img, config.scales, config.alpha)
    closed = _top_level(
        [c for c in extract_contours(cs, config.threshold_quantile) if c.closed]
    )
    if not closed:
        return DetectionResult(detections=[], counts=counts)
    feats = [shape_features(c) for c in closed]
    if len(closed) < 3:
        k = 1
    else:
        z = zscore(feature_matrix(feats))
        k = elbow_select_k(z, config.k_max, config.kmeans_seed, config.kmeans_restarts)
    if k == 1:
        assignments = np.zeros(len(closed), dtype=int)
    else:
        assignments = best_kmeans(
            zscore(feature_matrix(feats)), k, config.kmeans_seed, config.kmeans_restarts
        ).assignments
    cats = categorize(assignments, feats, k)

    detections = []
    sep = config.separation_params()
    for contour, cluster in zip(closed, assignments):
        triage = cats[int(cluster)]
        box = contour.bbox()
        if triage is ContourCategory.NOISE:
            counts["noise"] += 1
            detections.append(Detection(category=DetectionCategory.NOISE, box=box))
            continue
        if triage is ContourCategory.INDIVIDUAL:
            mask = fill_polygon(contour.points, img.shape)
            cat, score = _classify_region(img, mask, model, config)
            if cat is None:
                counts["noise"] += 1
                detections.append(Detection(category=DetectionCategory.NOISE, box=box))
                continue
            counts["moths" if cat is DetectionCategory.MOTH else "other_insects"] += 1
            detections.append(Detection(category=cat, box=box, mask=mask, score=score))
            continue
        # touching group: split and classify each member
        masks = separate_touching(img, contour, sep)
        members = []
        for m in masks:
            cat, score = _classify_region(img, m, model, config)
            if cat is None:
                counts["noise"] += 1
                members.append(Detection(category=DetectionCategory.NOISE,
                                         box=_mask_box(m), mask=m))
                continue
            counts["moths" if cat is DetectionCategory.MOTH else "other_insects"] += 1
            members.append(Detection(category=cat, box=_mask_box(m), mask=m, score=score))
        if len(masks) >= 2:
            counts["touching_groups_split"] += 1
        detections.append(
            Detection(category=DetectionCategory.TOUCHING_GROUP, box=box,
                      members=tuple(members))
        )
    return DetectionResult(detections=detections, counts=counts)


# ---------------------------------------------------------------------------
# Overlay rendering

_COLORS = {
    DetectionCategory.NOISE: (0, 0, 255),
    DetectionCategory.TOUCHING_GROUP: (255, 0, 0),
    DetectionCategory.MOTH: (0, 255, 0),
    DetectionCategory.OTHER_INSECT: (0, 0, 0),
}

# later entries draw on top
_DRAW_ORDER = (
    DetectionCategory.NOISE,
    DetectionCategory.TOUCHING_GROUP,
    DetectionCategory.OTHER_INSECT,
    DetectionCategory.MOTH,
)


def _draw_rect(rgb, box, color, width=2):
    h, w = rgb.shape[:2]
    x0, y0, x1, y1 = box
    x0, x1 = max(x0, 0), min(x1, w - 1)
    y0, y1 = max(y0, 0), min(y1, h - 1)
    if x0 > x1 or y0 > y1:
        return
    col = np.array(color, dtype=np.uint8)
    for t in range(width):
        if y0 + t <= y1:
            rgb[y0 + t, x0 : x1 + 1] = col
        if y1 - t >= y0:
            rgb[y1 - t, x0 : x1 + 1] = col
        if x0 + t <= x1:
            rgb[y0 : y1 + 1, x0 + t] = col
        if x1 - t >= x0:
            rgb[y0 : y1 + 1, x1 - t] = col


def render_overlay(img, detections) -> np.ndarray:
    """RGB overlay: 2-px boxes, blue Noise, red TouchingGroup, black
    OtherInsect, green Moth (drawn in that order, moths on top).  Members
    of touching groups get their own boxes in their own category color."""
    gray = ensure_gray(img)
    rgb = np.repeat(np.round(gray * 255.0).astype(np.uint8)[:, :, None], 3, axis=2)
    flat = []
    for det in detections:
        flat.append(det)
        flat.extend(det.members)
    for cat in _DRAW_ORDER:
        for det in flat:
            if det.category is cat:
                _draw_rect(rgb, det.box, _COLORS[cat])
    return rgb
