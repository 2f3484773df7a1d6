"""Segmentation metrics and the variant-comparison driver.

Objects are scored by mask IoU and bucketed by their ground-truth occlusion
fraction; the bucket edges live in `synth.LEVEL_EDGES` so the generator and
the scorer can never drift apart. Objects hidden beyond the last bucket are
excluded from every row. The Mean row averages over objects, not over level
rows, so sparsely populated buckets do not get outsized weight.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .fmap import FeatureMap, iou
from .formats import ModelBundle, ObjectRecord, SceneAnnotation
from .orm import SceneResult, segment_scene
from .synth import LEVEL_EDGES, LEVELS

__all__ = [
    "MiouTable",
    "miou_by_level",
    "mask_iou",
    "level_of",
    "order_accuracy",
    "dataset_order_accuracy",
    "full_graph_accuracy",
    "predict_scene",
    "run_ablation",
    "AblationReport",
    "unknown_outlier_stats",
    "format_level_table",
    "format_ablation_report",
    "VARIANTS",
]


# ---------------------------------------------------------------------------
# per-object scoring


def mask_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    return iou(pred, truth)


def level_of(occlusion: float) -> str | None:
    """Bucket name for a ground-truth occlusion fraction, None if excluded."""
    for name in LEVELS:
        lo, hi = LEVEL_EDGES[name]
        if lo <= occlusion < hi:
            return name
    return None


@dataclass(frozen=True)
class MiouTable:
    """Per-level mean IoU in percent. Empty buckets hold NaN."""

    rows: dict[str, float]
    counts: dict[str, int]
    mean: float
    total: int

    def as_dict(self) -> dict[str, float]:
        out = dict(self.rows)
        out["Mean"] = self.mean
        return out

    def __getitem__(self, key: str) -> float:
        if key == "Mean":
            return self.mean
        return self.rows[key]


def _index_predictions(predictions: Iterable[SceneAnnotation]):
    table: dict[str, dict[int, ObjectRecord]] = {}
    for ann in predictions:
        table[ann.scene_id] = {rec.oid: rec for rec in ann.objects}
    return table


def miou_by_level(
    predictions: Iterable[SceneAnnotation],
    truths: Iterable[SceneAnnotation],
    mode: str = "modal",
) -> MiouTable:
    """Score predicted masks against ground truth, bucketed by occlusion.

    Objects are matched by scene id and object id. A truth object with no
    matching prediction scores zero; extra predicted objects are ignored.
    """
    if mode not in ("modal", "amodal"):
        raise ValidationError(f"mode must be modal or amodal, got {mode!r}")
    pred = _index_predictions(predictions)

    sums = {name: 0.0 for name in LEVELS}
    counts = {name: 0 for name in LEVELS}
    for ann in sorted(truths, key=lambda a: a.scene_id):
        scene_pred = pred.get(ann.scene_id, {})
        for rec in ann.objects:
            name = level_of(rec.occlusion)
            if name is None:
                continue
            match = scene_pred.get(rec.oid)
            if match is None:
                iou = 0.0
            else:
                want = rec.modal if mode == "modal" else rec.amodal
                got = match.modal if mode == "modal" else match.amodal
                iou = mask_iou(got, want)
            sums[name] += iou
            counts[name] += 1

    rows = {
        name: (100.0 * sums[name] / counts[name]) if counts[name] else math.nan
        for name in LEVELS
    }
    total = sum(counts.values())
    mean = 100.0 * sum(sums.values()) / total if total else math.nan
    return MiouTable(rows=rows, counts=counts, mean=mean, total=total)


# ---------------------------------------------------------------------------
# depth-order scoring


def _edge_pairs(edges) -> dict[frozenset, tuple[int, int]]:
    out: dict[frozenset, tuple[int, int]] = {}
    for e in edges:
        if hasattr(e, "front"):
            front, back = int(e.front), int(e.back)
        else:
            front, back = int(e[0]), int(e[1])
        out[frozenset((front, back))] = (front, back)
    return out


def order_accuracy(predicted, truth) -> float:
    """Fraction of true overlapping pairs whose predicted direction matches.

    A pair with no predicted edge counts as wrong. Scenes without any
    overlapping pair score 1.0 vacuously.
    """
    want = _edge_pairs(truth)
    if not want:
        return 1.0
    got = _edge_pairs(predicted)
    hit = sum(1 for key, direction in want.items() if got.get(key) == direction)
    return hit / len(want)


def dataset_order_accuracy(
    pairs: Iterable[tuple[SceneAnnotation, SceneAnnotation]],
) -> float:
    """Pooled pair accuracy over (predicted, truth) annotation pairs."""
    hit = tot = 0
    for predicted, truth in pairs:
        want = _edge_pairs(truth.order_edges)
        got = _edge_pairs(predicted.order_edges)
        tot += len(want)
        hit += sum(1 for key, d in want.items() if got.get(key) == d)
    return hit / tot if tot else 1.0


def full_graph_accuracy(
    pairs: Iterable[tuple[SceneAnnotation, SceneAnnotation]],
) -> float:
    """Fraction of scenes whose entire order graph is recovered."""
    scenes = perfect = 0
    for predicted, truth in pairs:
        scenes += 1
        if order_accuracy(predicted.order_edges, truth.order_edges) == 1.0:
            perfect += 1
    return perfect / scenes if scenes else 1.0


# ---------------------------------------------------------------------------
# prediction driver


def predict_scene(
    fm: FeatureMap,
    truth: SceneAnnotation,
    bundle: ModelBundle,
    iters: int = 1,
    no_order: bool = False,
    occ_merge: str = "max",
    score_mode: str = "max",
) -> tuple[SceneAnnotation, SceneResult]:
    """Segment one scene with ground-truth boxes and package the prediction.

    The record deliberately carries no run configuration: depth and
    occlusion are sentinels, level is blank, and only the masks, the class
    decision, and the recovered order edges describe the output.
    """
    boxes = [(rec.oid, rec.box) for rec in truth.objects]
    result = segment_scene(
        fm, boxes, bundle,
        iters=iters, no_order=no_order,
        occ_merge=occ_merge, score_mode=score_mode,
    )
    objects = []
    for idx, rec in enumerate(truth.objects):
        obj = result.objects[idx]
        objects.append(
            ObjectRecord(
                oid=rec.oid,
                label=bundle.classes[obj.class_index].label,
                template=obj.mixture_index,
                box=rec.box,
                depth=-1,
                occlusion=-1.0,
                level="",
                amodal=result.amodal[idx],
                modal=result.modal[idx],
                score=obj.score,
            )
        )
    edges = [
        (e.front, e.back, e.votes_front, e.votes_back, e.conflict_size)
        for e in result.edges
    ]
    ann = SceneAnnotation(
        scene_id=truth.scene_id,
        scenario=truth.scenario,
        split=truth.split,
        shape=truth.shape,
        objects=objects,
        order_edges=edges,
    )
    return ann, result


# ---------------------------------------------------------------------------
# variant comparison

# name -> segment_scene arguments; "independent" never runs competition,
# "no-order" competes but skips the reassignment step.
VARIANTS: tuple[tuple[str, dict], ...] = (
    ("independent", dict(iters=0)),
    ("no-order", dict(iters=1, no_order=True)),
    ("ordered-1", dict(iters=1)),
    ("ordered-2", dict(iters=2)),
)


@dataclass(frozen=True)
class AblationReport:
    modal: dict[str, MiouTable]
    amodal: dict[str, MiouTable]
    order: dict[str, float]
    scenario: str = ""


def run_ablation(
    pairs: Sequence[tuple[FeatureMap, SceneAnnotation]],
    bundle: ModelBundle,
    variants: Sequence[tuple[str, dict]] = VARIANTS,
    occ_merge: str = "max",
    score_mode: str = "max",
    jobs: int = 1,
    scenario: str = "",
) -> AblationReport:
    """Segment every scene under each variant and tabulate modal/amodal mIoU."""
    modal: dict[str, MiouTable] = {}
    amodal: dict[str, MiouTable] = {}
    order: dict[str, float] = {}
    truths = [truth for _, truth in pairs]

    for name, kwargs in variants:
        def one(pair, kwargs=kwargs):
            fm, truth = pair
            ann, _ = predict_scene(
                fm, truth, bundle,
                occ_merge=occ_merge, score_mode=score_mode, **kwargs,
            )
            return ann
        predicted = _map_ordered(one, pairs, jobs)
        modal[name] = miou_by_level(predicted, truths, "modal")
        amodal[name] = miou_by_level(predicted, truths, "amodal")
        if kwargs.get("iters", 1) == 0:
            order[name] = math.nan
        else:
            order[name] = dataset_order_accuracy(zip(predicted, truths))
    return AblationReport(modal=modal, amodal=amodal, order=order, scenario=scenario)


def _map_ordered(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# unknown-matter diagnostics


def unknown_outlier_stats(
    owners: np.ndarray, truth: SceneAnnotation, outlier_id: int
) -> tuple[int, int]:
    """Count contested unknown pixels owned by the outlier.

    Contested means inside a zone two objects both extend over (the
    intersection of their true amodal masks): exactly where order
    reassignment is allowed to move pixels, so unknown matter standing
    there survives only if the outlier holds it. Returns
    (outlier-owned, total) over that region restricted to the unknown mask.
    """
    if truth.unknown is None:
        return 0, 0
    region = np.zeros(truth.shape, dtype=np.bool_)
    recs = truth.objects
    for i in range(len(recs)):
        for j in range(i + 1, len(recs)):
            both = recs[i].amodal & recs[j].amodal
            region |= both
    sel = truth.unknown & region
    total = int(sel.sum())
    if total == 0:
        return 0, 0
    return int((owners[sel] == outlier_id).sum()), total


# ---------------------------------------------------------------------------
# aligned-text reports


def _cell(value: float) -> str:
    return "     -" if math.isnan(value) else f"{value:6.2f}"


def format_level_table(rows: dict[str, MiouTable], title: str) -> str:
    """One line per variant, columns L0..L3 then the object-weighted mean."""
    name_w = max([len(n) for n in rows] + [len("variant")])
    lines = [title]
    header = "variant".ljust(name_w) + "".join(f"  {lv:>6}" for lv in LEVELS)
    lines.append(header + f"  {'Mean':>6}  {'n':>5}")
    lines.append("-" * len(lines[-1]))
    for name, table in rows.items():
        cells = "".join(f"  {_cell(table.rows[lv])}" for lv in LEVELS)
        lines.append(
            name.ljust(name_w) + cells + f"  {_cell(table.mean)}  {table.total:5d}"
        )
    return "\n".join(lines)


def format_ablation_report(report: AblationReport) -> str:
    where = f" [{report.scenario}]" if report.scenario else ""
    parts = [
        format_level_table(report.modal, f"modal mIoU{where}"),
        "",
        format_level_table(report.amodal, f"amodal mIoU{where}"),
        "",
        "pairwise order accuracy" + where,
    ]
    name_w = max([len(n) for n in report.order] + [len("variant")])
    for name, acc in report.order.items():
        shown = "     -" if math.isnan(acc) else f"{acc:6.4f}"
        parts.append(f"{name.ljust(name_w)}  {shown}")
    return "\n".join(parts)
