"""Synthetic trap imagery with exact ground truth.

Blobs use the compact bump profile depth * (1 - q**2)**1.2 inside an
ellipse (q is the normalized elliptical radius).  The gradient of that
profile still vanishes at q=1 but its curvature grows like
(1 - q**2)**-0.8, an integrable spike pinned to the support boundary, so
the detected rim ring sits on the ground-truth footprint instead of
drifting inward.  The interior stays low-curvature.  (A hard-edged disc
would instead yield two concentric flank rings, one on each side of the
intensity step; a smoother bump pulls the ring well inside the support.)

Two texture families drive classification: "moth" blobs are elongated
ellipses carrying a handful of pale interior spots (high interior
curviness), "smooth" blobs are plain discs (curviness only at the rim).
Spots rather than stripes: a stripe's curviness walls span the body and
carve its interior into slices, so the separation stage would shatter a
lone moth; a spot is a compact obstacle the interior stays connected
around.  Scenes are dark blobs on a light background.
"""

from __future__ import annotations

import numpy as np

from .dataset import PatchRecord, original
from .errors import DataError, ParameterError
from .hcs import HcsParams, normalize_patch

BACKGROUND = 0.85
PROFILE_POWER = 1.2


def _member_fields(shape, center, semiaxes, angle=0.0, depth=0.55, spots=()):
    """(normalized squared radius, texture multiplier) rasters of one blob.

    The multiplier is 1 everywhere outside the pale spots, so profiles can
    be reconstructed as depth * bump(q2) * multiplier.
    """
    h, w = int(shape[0]), int(shape[1])
    a, b = float(semiaxes[0]), float(semiaxes[1])
    if a <= 0 or b <= 0:
        raise ParameterError(f"semiaxes must be positive, got {semiaxes}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - float(center[0])
    dy = yy - float(center[1])
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    q2 = (u / a) ** 2 + (v / b) ** 2
    mul = np.ones_like(q2)
    if spots:
        dip = np.zeros_like(q2)
        for su, sv, sr, samp in spots:
            d2 = ((u - su) ** 2 + (v - sv) ** 2) / (sr * sr)
            dip += samp * np.where(
                d2 < 1.0, (1.0 - np.minimum(d2, 1.0)) ** PROFILE_POWER, 0.0
            )
        mul = 1.0 - np.minimum(dip, 0.9)
    return q2, mul


def _bump(q2: np.ndarray) -> np.ndarray:
    """Compact unit bump (1 - q2)**power inside q2 < 1, zero outside."""
    return np.where(q2 < 1.0, (1.0 - np.minimum(q2, 1.0)) ** PROFILE_POWER, 0.0)


def _blob_fields(shape, center, semiaxes, angle=0.0, depth=0.55, spots=()):
    """(normalized squared radius, depth profile) rasters of one blob."""
    q2, mul = _member_fields(shape, center, semiaxes, angle, depth, spots)
    return q2, depth * _bump(q2) * mul


def bump_blob(shape, center, semiaxes, angle=0.0, depth=0.55,
              spots=()) -> np.ndarray:
    """Additive depth field of one blob; subtract it from the background.

    center is (x, y), semiaxes (a, b) along the rotated (u, v) axes.
    spots is a sequence of (u, v, radius, amplitude) pale patches in the
    rotated frame; each scales the profile down locally, so the texture
    fades with the body toward the support boundary and the outer contour
    stays a single ring.
    """
    return _blob_fields(shape, center, semiaxes, angle, depth, spots)[1]


SEAM_DEPTH = 0.2  # crisp-contact shadow step
SOFT_SEAM_DEPTH = 0.6  # soft-contact shadow step, before its fade envelope
SEAM_FADE_POWER = 0.7  # tip-fade exponent of the soft shadow envelope
CORNER_W = 0.25  # weld-bead radius at the lens tips, in q units
CORNER_DEPTH = 0.3  # weld-bead shadow depth
SEAM_HALFWIDTH = 1.8  # px
FUSE_FACTOR = 0.76  # touching-pair center spacing, fraction of the radius sum
SCENE_FUSE_FACTOR = 0.66  # deeper overlap for scene pairs, see make_scene
WELD_K = 0.4  # softmin smoothing of the union outline, in q**2 units


def _fused_field(shape, members, weld_k: float = WELD_K) -> np.ndarray:
    """Depth field of a touching group.

    The group body is one implicit blob over the softmin of the members'
    normalized radii.  Away from the contact that equals the nearest
    member's own profile, so the group stays a two-lobed abutment rather
    than the dome an additive sum would build (a dome reads as one blob
    at the coarse detector scale).  At the waist the softmin rounds the
    rim crossing into a fillet; a hard min would leave a concave corner
    there that no single orientation fits, non-maximum suppression drops
    the corner pixels, and the traced group outline breaks.

    weld_k selects between two contact styles.  Positive values render a
    soft contact: the softmin fillet plus a shadow that fades out toward
    the lens boundary so it ends without a hard cut.  Zero renders a
    crisp abutment: hard min, no fillet, and a constant-depth shadow.
    Soft contact trades lobe fidelity for a traceable outline (the weld
    bead and fading shadow pull the flooded lobes' centroids a few px off
    the member centers), so benchmark groups that are measured against
    member geometry render crisp and accept the broken outline, while
    scene groups that must survive the detector render soft.

    Texture (depth and pale spots) follows the nearest member via the
    same softmin weights.  A thin dark seam is pressed along each contact
    locus q_i = q_j between consecutive members, the way touching bodies
    throw a contact shadow; that seam is what lets the separation stage
    see the join.
    """
    q2s, muls, depths = [], [], []
    for center, params in members:
        q2, mul = _member_fields(shape, center, **params)
        q2s.append(q2)
        muls.append(mul)
        depths.append(params.get("depth", 0.55))
    q2s = np.stack(q2s)
    low = q2s.min(axis=0)
    if weld_k > 0.0:
        w = np.exp(-(q2s - low) / weld_k)
        w /= w.sum(axis=0)
        smin2 = low - weld_k * np.log(np.exp(-(q2s - low) / weld_k).sum(axis=0))
        depth = np.tensordot(np.asarray(depths), w, axes=1)
        mul = (np.stack(muls) * w).sum(axis=0)
    else:
        owner = q2s.argmin(axis=0)
        smin2 = low
        depth = np.choose(owner, depths)
        mul = np.take_along_axis(np.stack(muls), owner[None], axis=0)[0]
    field = depth * _bump(smin2) * mul
    for i in range(len(members) - 1):
        qi, qj = np.sqrt(q2s[i]), np.sqrt(q2s[i + 1])
        ai = members[i][1]["semiaxes"][0]
        aj = members[i + 1][1]["semiaxes"][0]
        wq = SEAM_HALFWIDTH * (1.0 / ai + 1.0 / aj)
        t = (qi - qj) / wq
        lens = (qi < 1.0) & (qj < 1.0)
        # one-sided shadow: the left member shades the right across the
        # contact, a sharp step rather than a symmetric valley.  The step
        # puts the gradient-magnitude peak exactly on the contact locus,
        # so the flood from the two sides meets there instead of sweeping
        # along a flat valley floor, and its curviness double-ridge walls
        # the two seed pockets apart.  In soft mode a compact-bump
        # envelope fades the shadow to zero at the lens boundary; the
        # crisp mode's constant-depth shadow ends in a hard cut across
        # the partner's rim, which steals the rim ring's orientation at
        # the waist but keeps the step flat along the whole contact.
        if weld_k > 0.0:
            # the envelope's exponent sets how far toward the lens tips
            # the shadow keeps its strength: the curviness wall over the
            # shadow has to run close enough to the rim ring that their
            # dilations overlap, or the seed pockets connect around its
            # ends, yet still vanish before it tees into the ring
            m = np.minimum(np.maximum(qi, qj), 1.0)
            step_depth = SOFT_SEAM_DEPTH * (1.0 - m * m) ** SEAM_FADE_POWER
        else:
            step_depth = SEAM_DEPTH
        field = np.where(
            lens,
            field + step_depth * 0.5 * (1.0 - np.tanh(t / 0.35)),
            field,
        )
        if weld_k > 0.0:
            # weld beads: a dab of shadow at each lens tip, the junction
            # where both rims cross.  Suppression has no single ridge
            # orientation to keep there, so the bare junction reads as a
            # hole in the traced outline; the bead's own small ring is
            # isotropic, bridging the two rim arcs outside and plugging
            # the corridor between shadow wall and rim inside.
            corner = np.clip(
                1.0 - ((qi - 1.0) ** 2 + (qj - 1.0) ** 2) / CORNER_W**2,
                0.0, None)
            field = field + CORNER_DEPTH * corner**1.5
    return field


def support_mask(shape, center, semiaxes, angle=0.0) -> np.ndarray:
    """Ground-truth footprint: pixels inside the support ellipse."""
    h, w = int(shape[0]), int(shape[1])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - float(center[0])
    dy = yy - float(center[1])
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    return (u / semiaxes[0]) ** 2 + (v / semiaxes[1]) ** 2 <= 1.0


def _moth_spots(rng, a, b):
    # Spot centers stay within half the semiaxes and keep their dilated
    # curviness rings (spot radius + 2px wall each side) a pixel clear of
    # each other and of the rim's ring, so they never link into a wall
    # that cuts the interior flood pocket.
    spots = []
    for _ in range(int(rng.integers(2, 4))):
        for _ in range(40):
            s = np.sqrt(rng.uniform()) * 0.5
            phi = rng.uniform(0.0, 2.0 * np.pi)
            su, sv = s * a * np.cos(phi), s * b * np.sin(phi)
            sr = rng.uniform(2.0, 2.6)
            if all((su - ou) ** 2 + (sv - ov) ** 2 >= (sr + orad + 7.0) ** 2
                   for ou, ov, orad, _ in spots):
                spots.append((su, sv, sr, rng.uniform(0.45, 0.65)))
                break
    return tuple(spots)


def _moth_params(rng):
    # Semi-minor axis stays >= 4x the coarsest detector scale: smaller
    # bodies respond as lines at sigma=4 (whose sigma^4 weight wins the
    # per-pixel max) and the resulting medial ridge breaks the rim ring.
    # Aspect stays mild (ecc ~0.5): triage clusters z-scored shape
    # features, and a strong elongation axis would out-structure the
    # size axis that tells noise, bodies and groups apart.
    semiaxes = (rng.uniform(24.0, 28.0), rng.uniform(21.0, 24.0))
    return {
        "semiaxes": semiaxes,
        "angle": rng.uniform(0.0, np.pi),
        "depth": rng.uniform(0.5, 0.6),
        "spots": _moth_spots(rng, *semiaxes),
    }


def _pair_member_params(rng):
    # Touching-pair members sample the slim end of the moth family: the
    # tighter tip curvature keeps the fused outline's waist corners above
    # the edge threshold, where a blunt fat-body corner drowns and the
    # outline never closes.
    semiaxes = (rng.uniform(24.0, 28.0), rng.uniform(16.0, 19.0))
    return {
        "semiaxes": semiaxes,
        "angle": rng.uniform(0.0, np.pi),
        "depth": rng.uniform(0.5, 0.6),
        "spots": _moth_spots(rng, *semiaxes),
    }


def _smooth_params(rng):
    r = rng.uniform(17.0, 19.5)
    return {
        "semiaxes": (r, r),
        "angle": 0.0,
        "depth": rng.uniform(0.5, 0.6),
    }


def _other_params(rng):
    # Scene variant of the smooth body: gently elliptical, so its traced
    # eccentricity sits near the moths' and the triage clustering keys on
    # size rather than species shape (the classifier owns that split).
    # The round _smooth_params stays for patches and benchmark blobs.
    r = rng.uniform(17.0, 19.5)
    return {
        "semiaxes": (r, r * rng.uniform(0.86, 0.93)),
        "angle": rng.uniform(0.0, np.pi),
        "depth": rng.uniform(0.5, 0.6),
    }


def _render(shape, blobs=(), groups=(), weld_k: float = WELD_K) -> np.ndarray:
    """Scene raster: background minus isolated bumps and fused groups."""
    img = np.full(shape, BACKGROUND)
    for center, params in blobs:
        img -= bump_blob(shape, center, **params)
    for members in groups:
        img -= _fused_field(shape, members, weld_k)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Patch sets (classifier training/evaluation)


def make_patch(kind: str, seed: int, hcs_params: HcsParams = None) -> np.ndarray:
    """One standardized patch of the given family ("moth" or "smooth").

    The blob is rendered at scene scale in a small tile and pushed through
    normalize_patch with its support mask, so training patches see exactly
    the standardization the detector applies to regions.
    """
    if hcs_params is None:
        hcs_params = HcsParams()
    rng = np.random.default_rng([seed, {"moth": 0, "smooth": 1}[kind]])
    tile = (72, 96)
    center = (tile[1] / 2 + rng.uniform(-2, 2), tile[0] / 2 + rng.uniform(-2, 2))
    # The smooth family trains on the same gently elliptical bodies the
    # detector meets in scenes; a circular negative would hand the
    # classifier a shape shortcut and it would call every ellipse a moth.
    params = _moth_params(rng) if kind == "moth" else _other_params(rng)
    img = _render(tile, [(center, params)])
    mask = support_mask(tile, center, params["semiaxes"], params["angle"])
    return normalize_patch(img, mask, hcs_params)


def make_patch_records(n_pos: int, n_neg: int, seed: int,
                       hcs_params: HcsParams = None) -> list:
    """PatchRecord set: n_pos spotted "moth" (+1) and n_neg "smooth" (-1)."""
    records = []
    for i in range(n_pos):
        records.append(original(f"pos/{i:04d}", make_patch("moth", seed * 100003 + i,
                                                           hcs_params), 1))
    for i in range(n_neg):
        records.append(original(f"neg/{i:04d}", make_patch("smooth", seed * 100003 + i,
                                                           hcs_params), -1))
    return records


# ---------------------------------------------------------------------------
# Scenes (end-to-end detection)


_RING_CLEARANCE = 12.0  # curviness rings reach ~8px past a body support,
# ~4px past a speck; scene spacing keeps neighboring rings disjoint


def _place(rng, shape, radius, existing, clearance=6.0, tries=20000):
    """Center for an item of the given exclusion radius.

    existing holds (x, y, radius) of placed items; the new center keeps
    radius + their radius + clearance away from each of them.
    """
    h, w = shape
    margin = radius + 5
    for _ in range(tries):
        c = (rng.uniform(margin, w - margin), rng.uniform(margin, h - margin))
        if all(
            (c[0] - x) ** 2 + (c[1] - y) ** 2 >= (radius + r + clearance) ** 2
            for x, y, r in existing
        ):
            return c
    raise DataError("could not place a blob; scene too crowded")


def make_scene(seed: int, shape=(384, 384), n_moths=5, n_others=3, n_specks=10,
               n_touching=1):
    """A trap scene plus its ground truth.

    Returns (image, truth) where truth carries category counts (moths
    includes the members of touching pairs), per-item footprints and the
    member centers of each touching pair.
    """
    rng = np.random.default_rng(seed)
    blobs = []
    groups = []
    items = []
    anchors = []  # (x, y, exclusion radius) of placed items
    # touching pairs first: they occupy the most room
    pairs = []
    for _ in range(n_touching):
        p1 = _pair_member_params(rng)
        p2 = _pair_member_params(rng)
        axis = rng.uniform(0.0, np.pi)
        p1["angle"] = p2["angle"] = axis
        a1, a2 = p1["semiaxes"][0], p2["semiaxes"][0]
        # Scene pairs fuse deeper than the benchmark spacing: elongated
        # bodies at the benchmark overlap cross at angles too sharp for
        # even the welded outline to round off, and an unclosed outline
        # drops the whole pair from the detection inventory.
        gap = SCENE_FUSE_FACTOR * (a1 + a2)
        radius = 0.5 * gap + max(a1, a2)
        c = _place(rng, shape, radius, anchors, clearance=_RING_CLEARANCE)
        d = (0.5 * gap * np.cos(axis), 0.5 * gap * np.sin(axis))
        c1 = (c[0] - d[0], c[1] - d[1])
        c2 = (c[0] + d[0], c[1] + d[1])
        groups.append([(c1, p1), (c2, p2)])
        anchors.append((c[0], c[1], radius))
        pairs.append({"centers": [c1, c2], "params": [p1, p2]})
        items.append({"kind": "touching_pair", "centers": [c1, c2]})
    for _ in range(n_moths):
        p = _moth_params(rng)
        c = _place(rng, shape, p["semiaxes"][0], anchors, clearance=_RING_CLEARANCE)
        blobs.append((c, p))
        anchors.append((c[0], c[1], p["semiaxes"][0]))
        items.append({"kind": "moth", "center": c,
                      "semiaxes": p["semiaxes"], "angle": p["angle"]})
    for _ in range(n_others):
        p = _other_params(rng)
        c = _place(rng, shape, p["semiaxes"][0], anchors, clearance=_RING_CLEARANCE)
        blobs.append((c, p))
        anchors.append((c[0], c[1], p["semiaxes"][0]))
        items.append({"kind": "other", "center": c,
                      "semiaxes": p["semiaxes"], "angle": p["angle"]})
    for _ in range(n_specks):
        # Big enough for the finest scale to close a ring around them
        # with tight traced shape: ring compactness and moment noise fall
        # off as 1/radius, and a smeared noise cluster splinters under
        # the z-scored clustering.  Still far below the body scale the
        # area axis keys on.
        r = rng.uniform(6.5, 7.5)
        c = _place(rng, shape, r + 2, anchors, clearance=_RING_CLEARANCE)
        blobs.append((c, {"semiaxes": (r, r), "depth": rng.uniform(0.4, 0.5)}))
        anchors.append((c[0], c[1], r + 2))
        items.append({"kind": "speck", "center": c, "semiaxes": (r, r)})
    img = _render(shape, blobs, groups)
    truth = {
        "moths": n_moths + 2 * n_touching,
        "other_insects": n_others,
        "noise": n_specks,
        "touching_groups": n_touching,
        "items": items,
        "pairs": pairs,
    }
    return img, truth


def make_fused_chain(seed: int, n: int = 2, shape=None):
    """n fused plain discs on one horizontal axis.

    Consecutive centers sit FUSE_FACTOR * (r_i + r_j) apart, so supports
    overlap and the chain renders as one blob with n intensity wells.
    Returns (image, member centers, union support mask).  shape defaults
    to a canvas wide enough to keep the blob small against the frame (the
    edge threshold is a global quantile; a tight canvas would push it into
    the rim magnitudes).
    """
    if n < 2:
        raise ParameterError(f"a fused chain needs at least 2 members, got {n}")
    rng = np.random.default_rng([seed, n])
    params = [_smooth_params(rng) for _ in range(n)]
    radii = [p["semiaxes"][0] for p in params]
    xs = [0.0]
    for r_a, r_b in zip(radii, radii[1:]):
        xs.append(xs[-1] + FUSE_FACTOR * (r_a + r_b))
    extent = xs[-1] + radii[0] + radii[-1]
    if shape is None:
        shape = (160, int(np.ceil(extent)) + 120)
    cy = shape[0] / 2 + rng.uniform(-2, 2)
    cx = shape[1] / 2 + rng.uniform(-2, 2)
    off = cx - (xs[-1] / 2)
    centers = [(off + x, cy) for x in xs]
    img = _render(shape, groups=[list(zip(centers, params))], weld_k=0.0)
    union = np.zeros(shape, dtype=bool)
    for c, p in zip(centers, params):
        union |= support_mask(shape, c, p["semiaxes"])
    return img, centers, union


def make_fused_pair(seed: int, shape=(160, 192)):
    """Two fused plain discs; returns (image, member centers, union mask)."""
    img, centers, union = make_fused_chain(seed, n=2, shape=shape)
    return img, tuple(centers), union


def make_single_blob(seed: int, shape=(128, 128), kind="moth"):
    """One isolated blob; returns (image, ground-truth footprint mask).

    kind "moth" is the spotted ellipse, "smooth" the plain disc, and
    "ellipse" a mildly eccentric plain ellipse at a random angle (the
    cleanest footprint-recovery target).
    """
    rng = np.random.default_rng(seed)
    if kind == "moth":
        params = _moth_params(rng)
    elif kind == "smooth":
        params = _smooth_params(rng)
    elif kind == "ellipse":
        params = {
            "semiaxes": (rng.uniform(24.0, 28.0), rng.uniform(19.0, 22.0)),
            "angle": rng.uniform(0.0, np.pi),
            "depth": rng.uniform(0.5, 0.6),
        }
    else:
        raise ParameterError(f"unknown blob kind {kind!r}")
    c = (shape[1] / 2 + rng.uniform(-2, 2), shape[0] / 2 + rng.uniform(-2, 2))
    img = _render(shape, [(c, params)])
    return img, support_mask(shape, c, params["semiaxes"], params.get("angle", 0.0))
