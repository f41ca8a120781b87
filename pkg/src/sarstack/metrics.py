"""COCO-style box AP/AR.

Conventions follow the COCO evaluator: ten IoU thresholds 0.50:0.05:0.95,
101-point interpolated precision, at most 100 detections per image and
category, no area ranges and no crowd regions. Reported values are on the
x100 scale.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .datasets import DatasetGT, PredictionSet
from .errors import ValidationError
from .geometry import Annotation, Detection, iou

log = logging.getLogger(__name__)

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID: tuple[float, ...] = tuple(i / 100 for i in range(101))
MAX_DETS = 100

TABLE_COLUMNS = ("AP_0.5:0.95", "AP_0.5", "AP_0.75", "AR_0.5:0.95")


@dataclass
class PRCurve:
    """(recall, precision) after each detection of a score-descending sweep."""

    points: list[tuple[float, float]]
    iou_threshold: float = 0.5

    def __post_init__(self):
        prev = 0.0
        for r, p in self.points:
            if not (0.0 <= r <= 1.0 and 0.0 <= p <= 1.0):
                raise ValueError(f"curve point ({r}, {p}) outside [0, 1]")
            if r < prev:
                raise ValueError("recall must be non-decreasing along the curve")
            prev = r

    @classmethod
    def from_matches(cls, tp_flags: Sequence[bool], n_gt: int, iou_threshold: float = 0.5):
        """Curve from TP/FP flags already ordered by descending score."""
        points = []
        tp = 0
        for k, hit in enumerate(tp_flags, start=1):
            tp += hit
            points.append((tp / n_gt if n_gt else 0.0, tp / k))
        return cls(points, iou_threshold)


@dataclass
class MetricSet:
    ap_50_95: float
    ap_50: float
    ap_75: float
    ar_50_95: float

    def as_row(self) -> dict[str, float]:
        return dict(zip(TABLE_COLUMNS, (self.ap_50_95, self.ap_50, self.ap_75, self.ar_50_95)))


@dataclass
class EvalReport(MetricSet):
    per_category: dict[int, MetricSet] = field(default_factory=dict)
    ap_by_threshold: dict[float, float] = field(default_factory=dict)
    n_images: int = 0
    n_gt: int = 0
    n_detections: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap_50_95": self.ap_50_95,
            "ap_50": self.ap_50,
            "ap_75": self.ap_75,
            "ar_50_95": self.ar_50_95,
            "per_category": {
                str(cid): {
                    "ap_50_95": m.ap_50_95,
                    "ap_50": m.ap_50,
                    "ap_75": m.ap_75,
                    "ar_50_95": m.ar_50_95,
                }
                for cid, m in sorted(self.per_category.items())
            },
            "ap_by_threshold": {f"{t:.2f}": v for t, v in self.ap_by_threshold.items()},
            "counts": {
                "images": self.n_images,
                "ground_truth": self.n_gt,
                "detections": self.n_detections,
            },
            "warnings": list(self.warnings),
        }


def _score_order(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (-d.score, d.source_index))


def _greedy(ious: list[list[float]], n_gt: int, iou_thr: float) -> list[int]:
    # ious[i][j]: detection i (score order) vs gt j; returns matched gt index or -1
    taken = [False] * n_gt
    out = []
    for row in ious:
        best, best_iou = -1, iou_thr
        for j in range(n_gt):
            if not taken[j] and row[j] >= best_iou and (best < 0 or row[j] > best_iou):
                best, best_iou = j, row[j]
        if best >= 0:
            taken[best] = True
        out.append(best)
    return out


def match_detections(
    dets: Sequence[Detection], gts: Sequence[Annotation], iou_thr: float
) -> list[tuple[Detection, Annotation | None]]:
    """Greedy one-to-one matching for one image and category.

    Detections are visited by descending score (ties by ``source_index``);
    each takes the unmatched ground truth with the highest IoU, provided it is
    at least ``iou_thr``. Equal IoUs go to the earlier ground truth.
    """
    ordered = _score_order(dets)
    ious = [[iou(d.box, g.box) for g in gts] for d in ordered]
    matched = _greedy(ious, len(gts), iou_thr)
    return [(d, gts[j] if j >= 0 else None) for d, j in zip(ordered, matched)]


def average_precision(curve: PRCurve) -> float:
    """101-point interpolated AP: mean over the recall grid of the best
    precision reached at any recall at or beyond each grid value."""
    if not curve.points:
        return 0.0
    recalls = [r for r, _ in curve.points]
    envelope = [p for _, p in curve.points]
    for i in range(len(envelope) - 2, -1, -1):
        if envelope[i + 1] > envelope[i]:
            envelope[i] = envelope[i + 1]
    total = 0.0
    for r in RECALL_GRID:
        i = bisect.bisect_left(recalls, r)
        if i < len(recalls):
            total += envelope[i]
    return total / len(RECALL_GRID)


def _collect(gt: DatasetGT, preds: PredictionSet, max_dets: int):
    unknown = sorted({d.image_id for d in preds.detections} - gt.image_by_id.keys())
    if unknown:
        raise ValidationError(f"predictions reference unknown image ids {unknown}")

    gts: dict[int, dict[int, list[Annotation]]] = {}
    for a in gt.annotations:
        gts.setdefault(a.category_id, {}).setdefault(a.image_id, []).append(a)
    dts: dict[int, dict[int, list[Detection]]] = {}
    for d in preds.detections:
        dts.setdefault(d.category_id, {}).setdefault(d.image_id, []).append(d)
    for per_image in dts.values():
        for image_id, dets in per_image.items():
            per_image[image_id] = _score_order(dets)[:max_dets]
    return gts, dts


def _category_metrics(
    gts_by_image: dict[int, list[Annotation]],
    dts_by_image: dict[int, list[Detection]],
    thresholds: Sequence[float],
) -> tuple[list[float], list[float]]:
    n_gt = sum(len(v) for v in gts_by_image.values())
    # per image: score-ordered detections and their IoU rows
    rows = {}
    for image_id, dets in dts_by_image.items():
        g = gts_by_image.get(image_id, [])
        rows[image_id] = [[iou(d.box, a.box) for a in g] for d in dets]
    pooled = sorted(
        ((d.score, d.source_index, image_id, k)
         for image_id, dets in dts_by_image.items()
         for k, d in enumerate(dets)),
        key=lambda t: (-t[0], t[1], t[2]),
    )

    aps, recalls = [], []
    for thr in thresholds:
        hits = {}
        for image_id, ious in rows.items():
            hits[image_id] = _greedy(ious, len(gts_by_image.get(image_id, [])), thr)
        flags = [hits[image_id][k] >= 0 for _, _, image_id, k in pooled]
        curve = PRCurve.from_matches(flags, n_gt, thr)
        aps.append(average_precision(curve))
        recalls.append(curve.points[-1][0] if curve.points else 0.0)
    return aps, recalls


def _summarize(aps_by_cat: list[list[float]], recalls_by_cat: list[list[float]]) -> MetricSet:
    if not aps_by_cat:
        return MetricSet(0.0, 0.0, 0.0, 0.0)
    n = len(aps_by_cat)
    i50, i75 = IOU_THRESHOLDS.index(0.5), IOU_THRESHOLDS.index(0.75)
    all_ap = [v for row in aps_by_cat for v in row]
    all_ar = [v for row in recalls_by_cat for v in row]
    return MetricSet(
        ap_50_95=100.0 * sum(all_ap) / len(all_ap),
        ap_50=100.0 * sum(row[i50] for row in aps_by_cat) / n,
        ap_75=100.0 * sum(row[i75] for row in aps_by_cat) / n,
        ar_50_95=100.0 * sum(all_ar) / len(all_ar),
    )


def evaluate(gt: DatasetGT, preds: PredictionSet, max_dets: int = MAX_DETS) -> EvalReport:
    """Score a prediction set against ground truth.

    Categories without any ground-truth box are left out of the averages;
    detections in such categories only produce a warning.
    """
    gts, dts = _collect(gt, preds, max_dets)
    warnings = []
    stray = sorted(set(dts) - set(gts))
    if stray:
        msg = f"detections in categories without ground truth: {stray}"
        warnings.append(msg)
        log.warning(msg)

    per_category = {}
    aps_by_cat, recalls_by_cat = [], []
    for cid in sorted(gts):
        aps, recalls = _category_metrics(gts[cid], dts.get(cid, {}), IOU_THRESHOLDS)
        aps_by_cat.append(aps)
        recalls_by_cat.append(recalls)
        per_category[cid] = _summarize([aps], [recalls])

    summary = _summarize(aps_by_cat, recalls_by_cat)
    ap_by_threshold = {
        thr: (100.0 * sum(row[i] for row in aps_by_cat) / len(aps_by_cat) if aps_by_cat else 0.0)
        for i, thr in enumerate(IOU_THRESHOLDS)
    }
    return EvalReport(
        ap_50_95=summary.ap_50_95,
        ap_50=summary.ap_50,
        ap_75=summary.ap_75,
        ar_50_95=summary.ar_50_95,
        per_category=per_category,
        ap_by_threshold=ap_by_threshold,
        n_images=len(gt.images),
        n_gt=len(gt.annotations),
        n_detections=len(preds.detections),
        warnings=warnings,
    )


def objective(report: MetricSet) -> float:
    """Tuning target: AP@[.5:.95] + AR@[.5:.95], both on the x100 scale."""
    return report.ap_50_95 + report.ar_50_95
