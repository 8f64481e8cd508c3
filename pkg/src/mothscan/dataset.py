"""Patch datasets: augmentation, grouped folds, cross-validation.

Augmented copies always stay in their parent's fold so a model is never
validated on a transform of an image it trained on.  All randomness flows
through explicit seeds; augmenting the same record twice gives the same
bytes.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, DimensionError, ParameterError
from .hcs import HcsParams, compute_hcs, normalize_patch
from .imaging import gaussian_smooth, load_gray, resize_bilinear
from .svm import KernelSpec, train

AUGMENT_OPS = ("rotation", "translation", "blur", "noise", "aspect")


@dataclass(frozen=True)
class Provenance:
    kind: str  # "original" | "augmented"
    op: str = None
    seed: int = None
    parent_id: str = None


@dataclass
class PatchRecord:
    id: str
    image: np.ndarray
    label: int
    provenance: Provenance

    @property
    def is_original(self) -> bool:
        return self.provenance.kind == "original"


def original(id: str, image: np.ndarray, label: int) -> PatchRecord:
    if label not in (-1, 1):
        raise ParameterError(f"label must be -1 or +1, got {label}")
    return PatchRecord(id=id, image=np.asarray(image, dtype=np.float64), label=label,
                       provenance=Provenance(kind="original"))


# ---------------------------------------------------------------------------
# Augmentation


def _aspect_rescale(img: np.ndarray, factor: float) -> np.ndarray:
    """Stretch width by factor, then center-crop or edge-pad back."""
    h, w = img.shape
    nw = max(int(round(w * factor)), 1)
    out = resize_bilinear(img, (h, nw))
    if nw == w:
        return out
    if nw > w:
        lo = (nw - w) // 2
        return out[:, lo : lo + w]
    pad_l = (w - nw) // 2
    return np.pad(out, ((0, 0), (pad_l, w - nw - pad_l)), mode="edge")


def apply_augment_op(img: np.ndarray, op: str, rng: np.random.Generator) -> np.ndarray:
    """One jitter op with parameters drawn from rng; output clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if op == "rotation":
        angle = rng.uniform(-30.0, 30.0)
        out = ndimage.rotate(img, angle, reshape=False, order=1, mode="nearest")
    elif op == "translation":
        dy = rng.uniform(-0.1, 0.1) * h
        dx = rng.uniform(-0.1, 0.1) * w
        out = ndimage.shift(img, (dy, dx), order=1, mode="nearest")
    elif op == "blur":
        out = gaussian_smooth(img, rng.uniform(0.5, 1.5))
    elif op == "noise":
        out = img + rng.normal(0.0, rng.uniform(0.01, 0.05), img.shape)
    elif op == "aspect":
        out = _aspect_rescale(img, rng.uniform(0.8, 1.25))
    else:
        raise ParameterError(f"unknown augmentation op {op!r}")
    return np.clip(out, 0.0, 1.0)


def augment(record: PatchRecord, n_copies: int, seed: int):
    """n_copies jittered children of an original record.

    Copy c draws its op and parameters from default_rng([seed, crc32(id),
    c]), so each child is reproducible in isolation.  Augmenting an
    augmented record is an error (it would break fold cohesion).
    """
    if not record.is_original:
        raise ParameterError(f"record {record.id!r} is already augmented")
    if n_copies < 0:
        raise ParameterError(f"n_copies must be >= 0, got {n_copies}")
    ident = zlib.crc32(record.id.encode("utf-8"))
    out = []
    for c in range(n_copies):
        rng = np.random.default_rng([seed, ident, c])
        op = AUGMENT_OPS[int(rng.integers(len(AUGMENT_OPS)))]
        img = apply_augment_op(record.image, op, rng)
        out.append(
            PatchRecord(
                id=f"{record.id}#a{c}",
                image=img,
                label=record.label,
                provenance=Provenance(kind="augmented", op=op, seed=seed,
                                      parent_id=record.id),
            )
        )
    return out


def plan_augmentation(n_parents: int, target_total: int, seed: int):
    """Copies per parent so originals + copies == target_total exactly.

    Every parent gets floor(target/n) - 1 copies; the fractional remainder
    becomes one extra copy drawn per-parent as Bernoulli(frac), then a
    quota pass flips the latest-drawn extras (or promotes the earliest
    non-drawn) until the total is exact.
    """
    if n_parents < 1:
        raise ParameterError(f"need at least one parent, got {n_parents}")
    if target_total < n_parents:
        raise ParameterError(
            f"target_total {target_total} below parent count {n_parents}"
        )
    base = target_total // n_parents - 1
    extras_needed = target_total - n_parents * (base + 1)
    rng = np.random.default_rng(seed)
    draws = rng.random(n_parents) < (extras_needed / n_parents)
    surplus = int(draws.sum()) - extras_needed
    if surplus > 0:
        for i in range(n_parents - 1, -1, -1):
            if surplus == 0:
                break
            if draws[i]:
                draws[i] = False
                surplus -= 1
    elif surplus < 0:
        for i in range(n_parents):
            if surplus == 0:
                break
            if not draws[i]:
                draws[i] = True
                surplus += 1
    return [base + int(d) for d in draws]


def augment_to_target(records, target_total: int, seed: int):
    """Augment the positive originals until positives total target_total."""
    parents = [r for r in records if r.is_original and r.label == 1]
    if not parents:
        raise DataError("no positive originals to augment")
    plan = plan_augmentation(len(parents), target_total, seed)
    out = list(records)
    for record, n in zip(parents, plan):
        out.extend(augment(record, n, seed))
    return out


# ---------------------------------------------------------------------------
# Fold plans


@dataclass(frozen=True)
class FoldPlan:
    k: int
    fold_of: dict

    def fold(self, record_id: str) -> int:
        return self.fold_of[record_id]

    def members(self, f: int):
        return sorted(rid for rid, ff in self.fold_of.items() if ff == f)


def make_folds(records, k: int, seed: int) -> FoldPlan:
    """Shuffle original records and deal them round-robin into k folds;
    augmented records inherit their parent's fold."""
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate record ids")
    parents = [r for r in records if r.is_original]
    if len(parents) < k:
        raise ParameterError(f"{len(parents)} originals cannot fill {k} folds")
    fold_of = {}
    perm = np.random.default_rng(seed).permutation(len(parents))
    for slot, pi in enumerate(perm):
        fold_of[parents[pi].id] = slot % k
    for r in records:
        if not r.is_original:
            parent = r.provenance.parent_id
            if parent not in fold_of:
                raise DataError(f"augmented record {r.id!r} has no parent {parent!r} in the set")
            fold_of[r.id] = fold_of[parent]
    return FoldPlan(k=k, fold_of=fold_of)


# ---------------------------------------------------------------------------
# Cross-validation


def _descriptors(records, hcs_params: HcsParams) -> np.ndarray:
    full = [np.ones_like(r.image, dtype=bool) for r in records]
    return np.vstack(
        [compute_hcs(normalize_patch(r.image, m, hcs_params), hcs_params)
         for r, m in zip(records, full)]
    )


def cross_validate(records, k: int, hcs_params: HcsParams = None, c: float = 0.1,
                   kernel: KernelSpec = None, seed: int = 0):
    """k-fold accuracy of the HCS + SVM stage over patch records.

    Folds come from make_folds (grouped by parent); fold f trains on the
    other folds with seed + f and scores fold f.  The mean is weighted by
    fold size (total correct / total scored).
    """
    if hcs_params is None:
        hcs_params = HcsParams()
    if kernel is None:
        kernel = KernelSpec()
    records = list(records)
    plan = make_folds(records, k, seed)
    x = _descriptors(records, hcs_params)
    y = np.array([r.label for r in records], dtype=np.int64)
    folds = np.array([plan.fold(r.id) for r in records])
    per_fold = []
    n_train = []
    n_test = []
    correct_total = 0
    for f in range(k):
        test = folds == f
        if not test.any():
            raise DataError(f"fold {f} is empty")
        try:
            model = train(x[~test], y[~test], c=c, kernel=kernel, seed=seed + f)
        except DataError as exc:
            raise DataError(f"fold {f}: {exc}") from exc
        pred = model.predict(x[test])
        correct = int((pred == y[test]).sum())
        correct_total += correct
        per_fold.append(correct / int(test.sum()))
        n_train.append(int((~test).sum()))
        n_test.append(int(test.sum()))
    config = {
        "hcs": {
            "window": list(hcs_params.window), "block": list(hcs_params.block),
            "stride": list(hcs_params.stride), "cell": list(hcs_params.cell),
            "bins": hcs_params.bins, "alpha": hcs_params.alpha,
            "scales": list(hcs_params.scales), "epsilon": hcs_params.epsilon,
        },
        "kernel": {"degree": kernel.degree, "offset": kernel.offset},
        "c": c, "k": k, "seed": seed,
    }
    digest = _short_hash(config)
    return {
        "per_fold": per_fold,
        "mean": correct_total / len(records),
        "n_train": n_train,
        "n_test": n_test,
        "config_hash": digest,
    }


def _short_hash(obj) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Directory layout: root/positive/*.png, root/negative/*.png (+ manifest)


def load_dataset(root) -> list:
    """Read patch records from a positive/negative directory pair.

    A manifest.json at the root ({"records": [{"path", "label", "id"?}]})
    pins ids and labels explicitly and wins over the directory scan.
    """
    root = Path(root)
    manifest = root / "manifest.json"
    records = []
    if manifest.exists():
        try:
            raw = json.loads(manifest.read_text())
            entries = raw["records"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"malformed manifest {manifest}: {exc}") from exc
        for e in entries:
            try:
                path, label = e["path"], int(e["label"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"malformed manifest entry {e!r}") from exc
            if label not in (-1, 1):
                raise DataError(f"manifest label must be -1 or +1, got {label}")
            records.append(original(e.get("id", path), load_gray(root / path), label))
    else:
        for sub, label in (("positive", 1), ("negative", -1)):
            d = root / sub
            if not d.is_dir():
                raise DataError(f"dataset is missing the {sub}/ directory: {d}")
            for p in sorted(d.iterdir()):
                if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".pgm"):
                    records.append(original(f"{sub}/{p.name}", load_gray(p), label))
    if not records:
        raise DataError(f"no patches found under {root}")
    return records
