"""Synthetic occlusion challenge generator.

Scenes are grids of unit feature vectors drawn from planted vMF directions:
object pixels from per-part directions, background pixels from a background
pool, unknown-occluder pixels from a held-out pool that no training stage
ever sees. Geometry is exact, so ground-truth modal/amodal masks, occlusion
fractions, and the order graph come straight from the painter's composition.

Three evaluation scenarios: `two` (one object occludes another at a target
level), `four` (a depth-ordered chain of four objects), `unknown` (two
known objects with overlapping boxes plus an unknown frontmost blob). The
training split contains only clean pairs, plus object-free background maps
for the occluder coefficients.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .fmap import BoundingBox, FeatureMap, save_feature_map
from .formats import (
    Manifest,
    ManifestEntry,
    ObjectRecord,
    SceneAnnotation,
    annotation_to_json,
    atomic_write_text,
    save_manifest,
)
from .vmf import sample_vmf

CLASS_LABELS = ("disc", "brick")
LEVELS = ("L0", "L1", "L2", "L3")
# Right-open occlusion-fraction buckets; objects at or above the last edge
# are excluded from metric buckets entirely.
LEVEL_EDGES = {"L0": (0.0, 0.01), "L1": (0.01, 0.30), "L2": (0.30, 0.60), "L3": (0.60, 0.90)}
OVER_LIMIT = "over90"


def level_of(fraction: float) -> str:
    for name in LEVELS:
        lo, hi = LEVEL_EDGES[name]
        if lo <= fraction < hi:
            return name
    return OVER_LIMIT


@dataclass(frozen=True)
class ChallengeConfig:
    per_level: int = 75
    train_scenes: int = 300
    backgrounds: int = 40
    seed: int = 7
    dim: int = 16
    sigma_gen: float = 30.0
    two_size: int = 44
    four_size: int = 56
    same_class_prob: float = 0.5
    grid: int = 24


@dataclass(frozen=True)
class PartSpace:
    """Planted direction pools with the angular layout the challenge needs.

    Class parts live in tight caps so same-class occluders are genuinely
    confusable; background directions keep >= 45 degrees from every part so
    context never masquerades as object matter; unknown directions sit near
    the background region but outside both training pools.
    """

    class_parts: np.ndarray    # (n_classes, parts_per_class, D)
    bg_dirs: np.ndarray        # (n_bg, D)
    unknown_dirs: np.ndarray   # (n_unknown, D)

    @property
    def dim(self) -> int:
        return self.bg_dirs.shape[1]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.degrees(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0))))


def _cap_sample(rng: np.random.Generator, center: np.ndarray, lo_deg: float, hi_deg: float) -> np.ndarray:
    theta = np.radians(rng.uniform(lo_deg, hi_deg))
    while True:
        g = rng.standard_normal(center.shape[0])
        t = g - np.dot(g, center) * center
        n = np.linalg.norm(t)
        if n > 1e-9:
            break
    t /= n
    return _unit(center * np.cos(theta) + t * np.sin(theta))


def _fill_pool(rng, count, sampler, accept, max_tries=20_000, restarts=40):
    # greedy fill can paint itself into a corner, so retry from scratch
    for _ in range(restarts):
        pool: list[np.ndarray] = []
        for _ in range(max_tries):
            cand = sampler()
            if accept(cand, pool):
                pool.append(cand)
                if len(pool) == count:
                    return np.stack(pool)
    raise ValidationError("direction pool constraints unsatisfiable")


def build_part_space(
    rng: np.random.Generator,
    dim: int = 16,
    n_classes: int = 2,
    parts_per_class: int = 6,
    n_bg: int = 12,
    n_unknown: int = 6,
) -> PartSpace:
    """Direction pools with an explicit angle budget.

    The budget is driven by what a concentration-30 likelihood can tell
    apart per pixel and by the fact that the occluder pool knows only
    background matter:

    - parts inside one template triple sit >= 36 degrees apart, so a pixel
      carrying one part votes against a position expecting another;
    - the two triples of a class sit >= 28 degrees apart, enough to
      identify a template from a small visible sliver;
    - each second-class part is paired 12-18 degrees off a first-class
      part: matter of the other class still looks foreground-plausible,
      so an occluded model keeps claiming the hidden region instead of
      conceding it to the occluder branch, which is what makes conflict
      sets (and with them order votes) exist at all;
    - backgrounds stay >= 50 degrees from every part so hidden known
      matter beats the occluder branch, while unknown matter at >= 60
      degrees from parts and 30-50 from the background centre loses to it.
    """
    if n_classes != 2 or parts_per_class % 3 != 0:
        raise ValidationError("part space needs 2 classes and triple-sized part sets")
    per_triple = 3
    n_triples = parts_per_class // per_triple
    part_center = _unit(rng.standard_normal(dim))

    def base_accept(cand: np.ndarray, pool: list[np.ndarray]) -> bool:
        for j, p in enumerate(pool):
            floor = 36.0 if j // per_triple == len(pool) // per_triple else 28.0
            if _angle_deg(cand, p) < floor:
                return False
        return True

    base = _fill_pool(
        rng,
        n_triples * per_triple,
        lambda: _cap_sample(rng, part_center, 0.0, 34.0),
        base_accept,
    )

    paired: list[np.ndarray] = []
    for i in range(base.shape[0]):
        others = [base[j] for j in range(base.shape[0]) if j != i]

        def pair_accept(cand: np.ndarray, _pool, i=i, others=others) -> bool:
            if not all(_angle_deg(cand, p) >= 28.0 for p in others):
                return False
            for j, q in enumerate(paired):
                floor = 36.0 if j // per_triple == i // per_triple else 28.0
                if _angle_deg(cand, q) < floor:
                    return False
            return True

        paired.append(
            _fill_pool(
                rng, 1, lambda i=i: _cap_sample(rng, base[i], 12.0, 18.0), pair_accept
            )[0]
        )
    class_parts = np.stack([base, np.stack(paired)])
    all_parts = class_parts.reshape(-1, dim)

    while True:
        bg_center = _unit(rng.standard_normal(dim))
        if _angle_deg(bg_center, part_center) >= 85.0:
            break

    bg_dirs = _fill_pool(
        rng,
        n_bg,
        lambda: _cap_sample(rng, bg_center, 0.0, 25.0),
        lambda cand, pool: (
            all(_angle_deg(cand, p) >= 50.0 for p in all_parts)
            and all(_angle_deg(cand, b) >= 8.0 for b in pool)
        ),
    )

    unknown_dirs = _fill_pool(
        rng,
        n_unknown,
        lambda: _cap_sample(rng, bg_center, 30.0, 50.0),
        lambda cand, pool: (
            all(_angle_deg(cand, p) >= 60.0 for p in all_parts)
            and all(_angle_deg(cand, b) >= 25.0 for b in bg_dirs)
            and all(_angle_deg(cand, u) >= 10.0 for u in pool)
        ),
    )
    return PartSpace(class_parts, bg_dirs, unknown_dirs)


# --------------------------------------------------------------------------
# Templates


@dataclass(frozen=True)
class ClassTemplate:
    label: str
    template_id: int
    painter: Callable[[tuple[int, int]], np.ndarray]
    part_grid: np.ndarray    # canonical-scale rendering, -1 outside the mask

    def __post_init__(self):
        if not np.any(self.part_grid >= 0):
            raise ValidationError(f"template {self.label}:{self.template_id} has empty mask")

    @property
    def mask(self) -> np.ndarray:
        return self.part_grid >= 0


def _pattern_painter(
    grid: int,
    silhouette: tuple,
    ids: Sequence[int],
    ring_width: float,
) -> Callable[[tuple[int, int]], np.ndarray]:
    """Evaluate a silhouette plus a sector-and-ring part layout at any size.

    Pixel centers of the requested raster are mapped into canonical grid
    units and everything is evaluated there directly, so rendering at the
    placed size costs one rounding where resampling a canonical raster
    would cost two.

    The layout assigns ids[(sector + ring) mod 3] with nine 40-degree
    sectors and concentric rings, plus a constant hub where sectors get
    narrower than a pixel. Nine sectors make bearings that differ by half
    a turn always land on different ids: a contested region between two
    copies of one template is seen from roughly opposite bearings, so
    their part predictions disagree there and ownership votes stay
    decisive. The rings break the tie for near-concentric copies.
    """
    pick = np.asarray(ids)

    def paint(shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        yy = (np.arange(h, dtype=np.float64)[:, None] + 0.5) * (grid / h) - 0.5
        xx = (np.arange(w, dtype=np.float64)[None, :] + 0.5) * (grid / w) - 0.5
        c = (grid - 1) / 2.0
        dy, dx = yy - c, xx - c
        rho = np.hypot(dy, dx)
        theta = np.arctan2(dy, dx)
        if silhouette[0] == "ellipse":
            ry, rx = silhouette[1:]
            mask = (dy / ry) ** 2 + (dx / rx) ** 2 <= 1.0
        else:
            ry, rx, corner = silhouette[1:]
            qy = np.abs(dy) - (ry - corner)
            qx = np.abs(dx) - (rx - corner)
            mask = np.hypot(np.maximum(qy, 0.0), np.maximum(qx, 0.0)) <= corner
        sector = np.floor((theta + np.pi) / (2.0 * np.pi / 9.0)).astype(np.int64)
        ring = np.floor(rho / ring_width).astype(np.int64)
        slot = np.mod(sector + ring, 3)
        slot[rho < 3.0] = 0
        out = np.full((h, w), -1, dtype=np.int64)
        out[mask] = pick[slot][mask]
        return out

    return paint


def build_templates(grid: int = 24) -> dict[str, list[ClassTemplate]]:
    """Two classes x two templates, geometry in canonical grid units.

    The mask is inset from the grid border so every crop carries a context
    ring. The two templates of a class use disjoint part triples, (0,1,2)
    against (3,4,5), on top of orthogonal silhouettes: a sliver of visible
    object then identifies its template outright, because the sibling
    template has zero coefficient mass on every observed part. That keeps
    mixture selection honest even when most of the object is hidden.
    Within a template, parts interleave on the sector-and-ring layout
    described at `_pattern_painter`, sized so cells survive placement
    rounding while staying small against any plausible overlap region.
    """
    long_r, short_r = grid * 0.385, grid * 0.27
    corner = grid * 0.08

    specs = {
        "disc": [
            (("ellipse", short_r, long_r), (0, 1, 2), 5.0),
            (("ellipse", long_r, short_r), (3, 4, 5), 4.4),
        ],
        "brick": [
            (("rrect", short_r, long_r, corner), (0, 1, 2), 4.7),
            (("rrect", long_r, short_r, corner), (3, 4, 5), 5.3),
        ],
    }
    out: dict[str, list[ClassTemplate]] = {}
    for label, entries in specs.items():
        out[label] = []
        for tid, (sil, ids, ring_w) in enumerate(entries):
            painter = _pattern_painter(grid, sil, ids, ring_w)
            out[label].append(ClassTemplate(label, tid, painter, painter((grid, grid))))
    return out


def scale_part_grid(tpl: ClassTemplate, shape: tuple[int, int]) -> np.ndarray:
    return tpl.painter(shape)


# --------------------------------------------------------------------------
# Placement


@dataclass
class PlacedObject:
    label: str
    class_index: int
    template_id: int
    part_grid: np.ndarray      # scaled to the box
    box: BoundingBox

    def lattice_mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=np.bool_)
        out[self.box.slices] = self.part_grid >= 0
        return out


def _placed_at(shape, mask, y0: int, x0: int) -> np.ndarray | None:
    """Mask placed on the lattice, or None when it does not fit."""
    h, w = mask.shape
    if y0 < 0 or x0 < 0 or y0 + h > shape[0] or x0 + w > shape[1]:
        return None
    out = np.zeros(shape, dtype=np.bool_)
    out[y0 : y0 + h, x0 : x0 + w] = mask
    return out


def _coverage(target: np.ndarray, front: np.ndarray) -> float:
    denom = int(target.sum())
    return float((target & front).sum()) / denom if denom else 0.0


def _approach_search(
    rng: np.random.Generator,
    shape: tuple[int, int],
    mask: np.ndarray,
    other: np.ndarray,
    anchor: tuple[float, float],
    bucket: tuple[float, float],
    attempts: int = 16,
    measure: str = "slider",
    veto=None,
) -> BoundingBox | None:
    """Slide `mask` toward the anchor until the overlap lands in `bucket`.

    measure="slider" targets the fraction of the sliding mask covered by
    `other` (placing an occluded object behind existing matter);
    measure="other" targets the fraction of `other` covered by the slider
    (placing an occluder in front of a fixed object). Binary search on the
    continuous slide, then a local integer scan to absorb pixel snapping.
    A candidate for which `veto(placed_mask)` is true is never returned.
    """
    h, w = mask.shape
    lo_f, hi_f = bucket
    diag = float(np.hypot(*shape)) + 2.0

    def frac_of(placed: np.ndarray) -> float:
        if measure == "slider":
            return _coverage(placed, other)
        return _coverage(other, placed)

    for _ in range(attempts):
        phi = rng.uniform(0.0, 2.0 * np.pi)
        u = np.array([np.sin(phi), np.cos(phi)])
        start = np.array(anchor) + u * diag

        def frac_at(t: float) -> tuple[float, tuple[int, int] | None]:
            cy, cx = start + (np.array(anchor) - start) * t
            y0 = int(round(cy - h / 2.0))
            x0 = int(round(cx - w / 2.0))
            placed = _placed_at(shape, mask, y0, x0)
            if placed is None:
                return -1.0, None
            return frac_of(placed), (y0, x0)

        t_lo, t_hi = 0.0, 1.0
        f_hi, _ = frac_at(t_hi)
        if f_hi < lo_f:
            continue
        target_mid = (lo_f + hi_f) / 2.0
        for _ in range(40):
            t_mid = (t_lo + t_hi) / 2.0
            f_mid, _ = frac_at(t_mid)
            if f_mid < 0.0 or f_mid < target_mid:
                t_lo = t_mid
            else:
                t_hi = t_mid

        _, at = frac_at(t_hi)
        if at is None:
            continue
        for dy in (0, -1, 1, -2, 2, -3, 3):
            for dx in (0, -1, 1, -2, 2, -3, 3):
                y0, x0 = at[0] + dy, at[1] + dx
                placed = _placed_at(shape, mask, y0, x0)
                if placed is None:
                    continue
                f = frac_of(placed)
                if lo_f <= f < hi_f and not (veto is not None and veto(placed)):
                    return BoundingBox(x0, y0, x0 + w, y0 + h)
    return None


def _random_fit_box(rng, shape, h, w, margin=0) -> BoundingBox:
    y0 = int(rng.integers(margin, shape[0] - h - margin + 1))
    x0 = int(rng.integers(margin, shape[1] - w - margin + 1))
    return BoundingBox(x0, y0, x0 + w, y0 + h)


def _scaled_shape(rng, grid: int) -> tuple[int, int]:
    s = rng.uniform(0.85, 1.05)
    side = max(12, int(round(grid * s)))
    return side, side


def _pick_template(rng, templates, class_index: int | None = None):
    labels = sorted(templates)
    ci = int(rng.integers(len(labels))) if class_index is None else class_index
    tid = int(rng.integers(len(templates[labels[ci]])))
    return ci, labels[ci], templates[labels[ci]][tid]


def _place(box: BoundingBox, ci: int, label: str, tpl: ClassTemplate) -> PlacedObject:
    return PlacedObject(label, ci, tpl.template_id, scale_part_grid(tpl, box.shape), box)


# --------------------------------------------------------------------------
# Rendering


def render_composition(
    shape: tuple[int, int],
    placed: Sequence[PlacedObject],
    blob: tuple[np.ndarray, np.ndarray] | None,
    space: PartSpace,
    sigma: float,
    rng: np.random.Generator,
) -> tuple[FeatureMap, np.ndarray]:
    """Paint matter back to front and sample every pixel's feature vector.

    `placed` is depth-ordered, index 0 frontmost. `blob`, when present, is
    (lattice mask, per-pixel unknown-direction index) and sits in front of
    everything. Returns the feature map and the per-pixel matter owner grid
    (-1 background, -2 unknown blob, else index into `placed`).
    """
    owner = np.full(shape, -1, dtype=np.int64)
    for i in reversed(range(len(placed))):
        obj = placed[i]
        window = owner[obj.box.slices]
        window[obj.part_grid >= 0] = i
    if blob is not None:
        owner[blob[0]] = -2

    # One direction id per pixel: background pixels pick uniformly from the
    # background pool; object pixels read their part grid; blob pixels use
    # the blob's held-out directions.
    n_classes, ppc, dim = space.class_parts.shape
    flat_parts = space.class_parts.reshape(-1, dim)
    dir_table = np.concatenate([flat_parts, space.bg_dirs, space.unknown_dirs])
    bg_base = n_classes * ppc
    unk_base = bg_base + space.bg_dirs.shape[0]

    dir_idx = rng.integers(bg_base, unk_base, size=shape)
    for i, obj in enumerate(placed):
        window_owner = owner[obj.box.slices]
        mine = window_owner == i
        dir_window = dir_idx[obj.box.slices]
        dir_window[mine] = obj.class_index * ppc + obj.part_grid[mine]
    if blob is not None:
        dir_idx[blob[0]] = unk_base + blob[1][blob[0]]

    data = np.empty(shape + (dim,), dtype=np.float64)
    for d in range(dir_table.shape[0]):
        sel = dir_idx == d
        count = int(sel.sum())
        if count:
            data[sel] = sample_vmf(rng, dir_table[d], sigma, count)
    return FeatureMap(data), owner


def _ground_truth(
    shape, placed: Sequence[PlacedObject], owner: np.ndarray
) -> list[dict]:
    records = []
    for i, obj in enumerate(placed):
        amodal = obj.lattice_mask(shape)
        modal = amodal & (owner == i)
        total = int(amodal.sum())
        fraction = 1.0 - int(modal.sum()) / total
        records.append(
            dict(
                depth=i,
                label=obj.label,
                template=obj.template_id,
                box=obj.box,
                amodal=amodal,
                modal=modal,
                occlusion=fraction,
                level=level_of(fraction),
            )
        )
    return records


def _order_edges(placed: Sequence[PlacedObject], shape, oids: Sequence[int]) -> list[tuple[int, int]]:
    edges = []
    masks = [p.lattice_mask(shape) for p in placed]
    for i in range(len(placed)):
        for j in range(i + 1, len(placed)):
            if np.any(masks[i] & masks[j]):
                edges.append((oids[i], oids[j]))   # lower depth index is in front
    return edges


def _assemble(
    scene_id, scenario, split, shape, placed, blob_mask, gt, rng
) -> SceneAnnotation:
    """Shuffle object ids so id order carries no depth information."""
    perm = rng.permutation(len(placed)) if placed else np.array([], dtype=np.int64)
    oids = [int(perm[i]) for i in range(len(placed))]
    objects = [None] * len(placed)
    for i, rec in enumerate(gt):
        objects[oids[i]] = ObjectRecord(
            oid=oids[i],
            label=rec["label"],
            template=rec["template"],
            box=rec["box"],
            depth=rec["depth"],
            occlusion=rec["occlusion"],
            level=rec["level"],
            amodal=rec["amodal"],
            modal=rec["modal"],
        )
    edges = _order_edges(placed, shape, oids)
    return SceneAnnotation(
        scene_id=scene_id,
        scenario=scenario,
        split=split,
        shape=shape,
        objects=objects,
        order_edges=edges,
        unknown=blob_mask,
    )


# --------------------------------------------------------------------------
# Scenario builders


def _notice(scenario: str, level: str) -> str:
    return f"{scenario} scene at {level}: placement search exhausted"


def make_two_scene(
    rng, space, templates, cfg: ChallengeConfig, level: str, scene_id: str, split="test"
) -> tuple[FeatureMap, SceneAnnotation]:
    shape = (cfg.two_size, cfg.two_size)
    ci_a, label_a, tpl_a = _pick_template(rng, templates)
    if rng.random() < cfg.same_class_prob:
        ci_b, label_b, tpl_b = _pick_template(rng, templates, class_index=ci_a)
    else:
        ci_b, label_b, tpl_b = _pick_template(rng, templates, class_index=1 - ci_a)

    ha, wa = _scaled_shape(rng, cfg.grid)
    hb, wb = _scaled_shape(rng, cfg.grid)
    mask_a = scale_part_grid(tpl_a, (ha, wa)) >= 0
    mask_b = scale_part_grid(tpl_b, (hb, wb)) >= 0

    box_a = _random_fit_box(rng, shape, ha, wa, margin=1)
    front = _placed_at(shape, mask_a, box_a.y0, box_a.x0)
    anchor = ((box_a.y0 + box_a.y1) / 2.0, (box_a.x0 + box_a.x1) / 2.0)

    if level == "L0":
        # Mask-disjoint placement: a graze of one or two pixels would plant
        # an order edge no amount of evidence could recover.
        box_b = None
        for _ in range(200):
            cand = _random_fit_box(rng, shape, hb, wb, margin=1)
            placed_b = _placed_at(shape, mask_b, cand.y0, cand.x0)
            if placed_b is not None and not np.any(placed_b & front):
                box_b = cand
                break
    else:
        box_b = _approach_search(rng, shape, mask_b, front, anchor, LEVEL_EDGES[level])
    if box_b is None:
        raise ValidationError(_notice("two-object", level))

    placed = [
        _place(box_a, ci_a, label_a, tpl_a),
        _place(box_b, ci_b, label_b, tpl_b),
    ]
    fm, owner = render_composition(shape, placed, None, space, cfg.sigma_gen, rng)
    gt = _ground_truth(shape, placed, owner)
    ann = _assemble(scene_id, "two", split, shape, placed, None, gt, rng)
    return fm, ann


def make_four_scene(
    rng, space, templates, cfg: ChallengeConfig, level: str, scene_id: str
) -> tuple[FeatureMap, SceneAnnotation]:
    shape = (cfg.four_size, cfg.four_size)
    placed: list[PlacedObject] = []

    ci, label, tpl = _pick_template(rng, templates)
    h, w = _scaled_shape(rng, cfg.grid)
    box = _random_fit_box(rng, shape, h, w, margin=6)
    placed.append(_place(box, ci, label, tpl))

    for _ in range(3):
        ci, label, tpl = _pick_template(rng, templates)
        h, w = _scaled_shape(rng, cfg.grid)
        mask = scale_part_grid(tpl, (h, w)) >= 0
        union = np.zeros(shape, dtype=np.bool_)
        for p in placed:
            union |= p.lattice_mask(shape)
        if level == "L0":
            box = None
            for _ in range(300):
                cand = _random_fit_box(rng, shape, h, w, margin=1)
                pm = _placed_at(shape, mask, cand.y0, cand.x0)
                if pm is not None and not np.any(pm & union):
                    box = cand
                    break
        else:
            prev = placed[-1].box
            anchor = ((prev.y0 + prev.y1) / 2.0, (prev.x0 + prev.x1) / 2.0)
            box = _approach_search(rng, shape, mask, union, anchor, LEVEL_EDGES[level])
        if box is None:
            raise ValidationError(_notice("four-object", level))
        placed.append(_place(box, ci, label, tpl))

    fm, owner = render_composition(shape, placed, None, space, cfg.sigma_gen, rng)
    gt = _ground_truth(shape, placed, owner)
    ann = _assemble(scene_id, "four", "test", shape, placed, None, gt, rng)
    return fm, ann


def _ellipse_blob(rng, target_box: BoundingBox) -> np.ndarray:
    # Roughly half the linear size of the object it will sit on: big enough
    # to swallow a contested zone, small enough that neither object's total
    # occlusion is pushed past the heaviest measured bucket.
    h = max(8, int(round(target_box.height * rng.uniform(0.45, 0.70))))
    w = max(8, int(round(target_box.width * rng.uniform(0.50, 0.80))))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / (h / 2.0 - 0.3)) ** 2 + ((xx - cx) / (w / 2.0 - 0.3)) ** 2 <= 1.0


# A blob must cover at least this fraction of the pair's contested zone,
# and no object may end up occluded beyond the cap in total. Both frozen
# after probing on generator seeds disjoint from the shipped challenge.
BLOB_ZONE_BUCKET = (0.35, 0.95)
OCCLUSION_CAP = 0.88


def make_unknown_scene(
    rng, space, templates, cfg: ChallengeConfig, level: str, scene_id: str
) -> tuple[FeatureMap, SceneAnnotation]:
    """An occluding pair at the scene's level plus a frontmost unknown blob.

    The pair is planted exactly like a two-object scene; the blob is then
    aimed at the zone both objects contest (their amodal intersection), so
    unknown matter lands where ownership reasoning has to hold its ground.
    At L0 the knowns stay disjoint and the blob floats clear of both.
    Recorded occlusion fractions are totals (known occluder plus blob);
    the scene's level names the planted pair bucket alone.
    """
    shape = (cfg.two_size, cfg.two_size)
    ci_a, label_a, tpl_a = _pick_template(rng, templates)
    if rng.random() < cfg.same_class_prob:
        ci_b, label_b, tpl_b = _pick_template(rng, templates, class_index=ci_a)
    else:
        ci_b, label_b, tpl_b = _pick_template(rng, templates, class_index=1 - ci_a)
    ha, wa = _scaled_shape(rng, cfg.grid)
    hb, wb = _scaled_shape(rng, cfg.grid)
    mask_a = scale_part_grid(tpl_a, (ha, wa)) >= 0
    mask_b = scale_part_grid(tpl_b, (hb, wb)) >= 0

    box_a = _random_fit_box(rng, shape, ha, wa, margin=1)
    front = _placed_at(shape, mask_a, box_a.y0, box_a.x0)
    anchor = ((box_a.y0 + box_a.y1) / 2.0, (box_a.x0 + box_a.x1) / 2.0)

    if level == "L0":
        box_b = None
        for _ in range(200):
            cand = _random_fit_box(rng, shape, hb, wb, margin=1)
            placed_b = _placed_at(shape, mask_b, cand.y0, cand.x0)
            if placed_b is not None and not np.any(placed_b & front):
                box_b = cand
                break
    else:
        box_b = _approach_search(rng, shape, mask_b, front, anchor, LEVEL_EDGES[level])
    if box_b is None:
        raise ValidationError(_notice("two-plus-unknown", level))

    placed = [
        _place(box_a, ci_a, label_a, tpl_a),
        _place(box_b, ci_b, label_b, tpl_b),
    ]
    amodal_a = placed[0].lattice_mask(shape)
    amodal_b = placed[1].lattice_mask(shape)
    zone = amodal_a & amodal_b
    blob = _ellipse_blob(rng, box_a)

    def overcovers(pm: np.ndarray) -> bool:
        # Totals must stay inside measurable buckets for both objects.
        if _coverage(amodal_a, pm) >= OCCLUSION_CAP:
            return True
        hidden_b = (amodal_b & front) | (amodal_b & pm)
        return hidden_b.sum() / amodal_b.sum() >= OCCLUSION_CAP

    if level == "L0":
        blob_box = None
        for _ in range(200):
            cand = _random_fit_box(rng, shape, blob.shape[0], blob.shape[1])
            pm = _placed_at(shape, blob, cand.y0, cand.x0)
            if pm is not None and not np.any(pm & (amodal_a | amodal_b)):
                blob_box = cand
                break
    else:
        ys, xs = np.nonzero(zone)
        mid = (float(ys.mean()), float(xs.mean()))
        blob_box = _approach_search(
            rng, shape, blob, zone, mid, BLOB_ZONE_BUCKET,
            measure="other", veto=overcovers,
        )
    if blob_box is None:
        raise ValidationError(_notice("two-plus-unknown", level))

    blob_lattice = _placed_at(shape, blob, blob_box.y0, blob_box.x0)
    blob_dirs = np.zeros(shape, dtype=np.int64)
    n_unknown = space.unknown_dirs.shape[0]
    pick = rng.integers(n_unknown, size=2)
    blob_dirs[blob_lattice] = rng.choice(pick, size=int(blob_lattice.sum()))

    fm, owner = render_composition(
        shape, placed, (blob_lattice, blob_dirs), space, cfg.sigma_gen, rng
    )
    gt = _ground_truth(shape, placed, owner)
    ann = _assemble(scene_id, "unknown", "test", shape, placed, blob_lattice, gt, rng)
    return fm, ann


def make_train_scene(
    rng, space, templates, cfg: ChallengeConfig, scene_id: str
) -> tuple[FeatureMap, SceneAnnotation]:
    """Two clean objects, boxes fully disjoint."""
    shape = (cfg.two_size, cfg.two_size)
    for _ in range(400):
        ci_a, label_a, tpl_a = _pick_template(rng, templates)
        ci_b, label_b, tpl_b = _pick_template(rng, templates)
        ha, wa = _scaled_shape(rng, cfg.grid)
        hb, wb = _scaled_shape(rng, cfg.grid)
        box_a = _random_fit_box(rng, shape, ha, wa)
        box_b = _random_fit_box(rng, shape, hb, wb)
        if not box_a.overlaps(box_b):
            placed = [
                _place(box_a, ci_a, label_a, tpl_a),
                _place(box_b, ci_b, label_b, tpl_b),
            ]
            fm, owner = render_composition(shape, placed, None, space, cfg.sigma_gen, rng)
            gt = _ground_truth(shape, placed, owner)
            ann = _assemble(scene_id, "two", "train", shape, placed, None, gt, rng)
            return fm, ann
    raise ValidationError("could not place disjoint training pair")


def make_background_map(rng, space, cfg: ChallengeConfig, scene_id: str) -> tuple[FeatureMap, SceneAnnotation]:
    shape = (cfg.two_size, cfg.two_size)
    fm, _ = render_composition(shape, [], None, space, cfg.sigma_gen, rng)
    ann = SceneAnnotation(
        scene_id=scene_id,
        scenario="background",
        split="background",
        shape=shape,
        objects=[],
        order_edges=[],
        unknown=None,
    )
    return fm, ann


# --------------------------------------------------------------------------
# Dataset driver


_SCENARIO_STREAM = {"two": 3, "four": 4, "unknown": 5}
_SCENARIO_BUILDERS = {
    "two": make_two_scene,
    "four": make_four_scene,
    "unknown": make_unknown_scene,
}


def generate_challenge(
    root: str, cfg: ChallengeConfig = ChallengeConfig(), scenarios: Sequence[str] = ("two", "four", "unknown")
) -> Manifest:
    """Write the full challenge under `root` and return its manifest.

    Every scene draws from an independent seed-derived stream, so any subset
    regenerates identically regardless of generation order.
    """
    for s in scenarios:
        if s not in _SCENARIO_BUILDERS:
            raise ValidationError(f"unknown scenario {s!r}")
    space = build_part_space(np.random.default_rng([cfg.seed, 17]), cfg.dim)
    templates = build_templates(cfg.grid)

    os.makedirs(os.path.join(root, "scenes"), exist_ok=True)
    os.makedirs(os.path.join(root, "annotations"), exist_ok=True)
    entries: list[ManifestEntry] = []

    def emit(fm: FeatureMap, ann: SceneAnnotation, level: str):
        fpath = os.path.join("scenes", f"{ann.scene_id}.fmap")
        apath = os.path.join("annotations", f"{ann.scene_id}.json")
        save_feature_map(fm, os.path.join(root, fpath))
        atomic_write_text(os.path.join(root, apath), annotation_to_json(ann))
        entries.append(
            ManifestEntry(ann.scene_id, fpath, apath, ann.split, ann.scenario, level)
        )

    def stubborn(stream: list, build):
        # A placement search can come up dry for an unlucky geometry draw;
        # resample the whole scene from a fresh attempt-indexed stream.
        last = None
        for attempt in range(24):
            rng = np.random.default_rng(stream + [attempt])
            try:
                return build(rng)
            except ValidationError as exc:
                last = exc
        raise last

    for i in range(cfg.train_scenes):
        fm, ann = stubborn(
            [cfg.seed, 1, i],
            lambda rng, i=i: make_train_scene(rng, space, templates, cfg, f"train-{i:04d}"),
        )
        emit(fm, ann, "L0")

    for i in range(cfg.backgrounds):
        rng = np.random.default_rng([cfg.seed, 2, i])
        fm, ann = make_background_map(rng, space, cfg, f"bg-{i:04d}")
        emit(fm, ann, "L0")

    for scenario in scenarios:
        builder = _SCENARIO_BUILDERS[scenario]
        code = _SCENARIO_STREAM[scenario]
        for li, level in enumerate(LEVELS):
            for i in range(cfg.per_level):
                scene_id = f"{scenario}-{level}-{i:04d}"
                fm, ann = stubborn(
                    [cfg.seed, code, li, i],
                    lambda rng, level=level, sid=scene_id: builder(
                        rng, space, templates, cfg, level, sid
                    ),
                )
                emit(fm, ann, level)

    manifest = Manifest(
        root=root,
        entries=entries,
        config=dict(
            seed=cfg.seed,
            dim=cfg.dim,
            sigma_gen=cfg.sigma_gen,
            per_level=cfg.per_level,
            train_scenes=cfg.train_scenes,
            backgrounds=cfg.backgrounds,
            grid=cfg.grid,
            same_class_prob=cfg.same_class_prob,
        ),
    )
    save_manifest(manifest, os.path.join(root, "manifest.json"))
    return manifest
