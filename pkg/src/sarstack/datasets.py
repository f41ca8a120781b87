"""COCO ground truth and results files, dataset splitting and checkpoint sweeps."""

from __future__ import annotations

import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InputError, ValidationError
from .geometry import Annotation, Detection, from_abs_xywh, to_abs_xywh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: str = ""


@dataclass
class DatasetGT:
    images: list[ImageInfo]
    annotations: list[Annotation]
    categories: list[Category]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen: set[int] = set()
        for im in self.images:
            if im.id in seen:
                raise ValidationError(f"duplicate image id {im.id}")
            seen.add(im.id)
            if im.width <= 0 or im.height <= 0:
                raise ValidationError(
                    f"image {im.id} has non-positive size {im.width}x{im.height}"
                )
        cat_ids: set[int] = set()
        for c in self.categories:
            if c.id in cat_ids:
                raise ValidationError(f"duplicate category id {c.id}")
            cat_ids.add(c.id)
        for a in self.annotations:
            if a.image_id not in seen:
                raise ValidationError(
                    f"annotation {a.annotation_id} references unknown image {a.image_id}"
                )
            if a.category_id not in cat_ids:
                raise ValidationError(
                    f"annotation {a.annotation_id} references unknown category {a.category_id}"
                )

    @cached_property
    def image_by_id(self) -> dict[int, ImageInfo]:
        return {im.id: im for im in self.images}

    @cached_property
    def category_ids(self) -> set[int]:
        return {c.id for c in self.categories}

    def subset(self, image_ids) -> "DatasetGT":
        """Dataset restricted to ``image_ids``, keeping the original image order."""
        keep = set(image_ids)
        return DatasetGT(
            images=[im for im in self.images if im.id in keep],
            annotations=[a for a in self.annotations if a.image_id in keep],
            categories=list(self.categories),
        )


@dataclass
class PredictionSet:
    label: str
    detections: list[Detection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InputError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


@dataclass
class SweepResult:
    curve: list[tuple[str, Any]]  # (checkpoint label, EvalReport), input order
    best_checkpoint: str

    @property
    def best_report(self):
        return dict(self.curve)[self.best_checkpoint]


# ---------------------------------------------------------------------------
# COCO parsing
# ---------------------------------------------------------------------------


def _read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None


def _number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{what} must be numeric, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(f"{what} must be finite, got {value!r}")
    return value


def _int_id(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        # ids written as 3.0 by some exporters
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ValidationError(f"{what} must be an integer, got {value!r}")
    return value


def _bbox(record: dict, what: str) -> tuple[float, float, float, float]:
    bbox = record.get("bbox")
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise ValidationError(f"{what}: bbox must be a list of 4 numbers, got {bbox!r}")
    x, y, w, h = (_number(v, f"{what}: bbox value") for v in bbox)
    if w < 0 or h < 0:
        raise ValidationError(f"{what}: bbox has negative extent {bbox!r}")
    return x, y, w, h


def gt_from_coco(data: Any, source: str = "<memory>") -> DatasetGT:
    """Build a validated :class:`DatasetGT` from a parsed COCO dict."""
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: top level must be an object")
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise ValidationError(f"{source}: missing key '{key}'")
        if not isinstance(data[key], list):
            raise ValidationError(f"{source}: '{key}' must be a list")

    images = []
    for rec in data["images"]:
        if not isinstance(rec, dict):
            raise ValidationError(f"{source}: image entry {rec!r} is not an object")
        for key in ("id", "width", "height"):
            if key not in rec:
                raise ValidationError(f"{source}: image {rec.get('id')!r} missing '{key}'")
        image_id = _int_id(rec["id"], "image id")
        width = _number(rec["width"], f"image {image_id} width")
        height = _number(rec["height"], f"image {image_id} height")
        if width <= 0 or height <= 0:
            raise ValidationError(
                f"{source}: image {image_id} has non-positive size {width}x{height}"
            )
        images.append(ImageInfo(image_id, int(width), int(height), str(rec.get("file_name", ""))))

    categories = []
    for rec in data["categories"]:
        if not isinstance(rec, dict) or "id" not in rec or "name" not in rec:
            raise ValidationError(f"{source}: category entry {rec!r} needs 'id' and 'name'")
        cid = _int_id(rec["id"], "category id")
        if cid < 1:
            raise ValidationError(f"{source}: category id must be >= 1, got {cid}")
        categories.append(Category(cid, str(rec["name"]), str(rec.get("supercategory", ""))))

    by_id = {}
    for im in images:
        if im.id in by_id:
            raise ValidationError(f"{source}: duplicate image id {im.id}")
        by_id[im.id] = im
    cat_ids = {c.id for c in categories}

    annotations = []
    for pos, rec in enumerate(data["annotations"]):
        if not isinstance(rec, dict):
            raise ValidationError(f"{source}: annotation #{pos} is not an object")
        ann_id = _int_id(rec.get("id", pos), f"annotation #{pos} id")
        what = f"{source}: annotation {ann_id}"
        for key in ("image_id", "category_id", "bbox"):
            if key not in rec:
                raise ValidationError(f"{what} missing '{key}'")
        image_id = _int_id(rec["image_id"], f"{what} image_id")
        category_id = _int_id(rec["category_id"], f"{what} category_id")
        if image_id not in by_id:
            raise ValidationError(f"{what} references unknown image {image_id}")
        if category_id not in cat_ids:
            raise ValidationError(f"{what} references unknown category {category_id}")
        im = by_id[image_id]
        box = from_abs_xywh(*_bbox(rec, what), im.width, im.height)
        if box.area <= 0.0:
            raise ValidationError(f"{what} has a zero-area box inside its image")
        annotations.append(Annotation(box, category_id, image_id, ann_id))

    return DatasetGT(images, annotations, categories)


def gt_to_coco(gt: DatasetGT) -> dict:
    images = [
        {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
        for im in gt.images
    ]
    annotations = []
    for a in gt.annotations:
        im = gt.image_by_id[a.image_id]
        x, y, w, h = to_abs_xywh(a.box, im.width, im.height)
        annotations.append(
            {
                "id": a.annotation_id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": [x, y, w, h],
                "area": w * h,
                "iscrowd": 0,
            }
        )
    categories = [
        {"id": c.id, "name": c.name, "supercategory": c.supercategory} for c in gt.categories
    ]
    return {"images": images, "annotations": annotations, "categories": categories}


def load_gt(path) -> DatasetGT:
    return gt_from_coco(_read_json(path), source=str(path))


def save_gt(gt: DatasetGT, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(gt_to_coco(gt), fh, indent=1)
        fh.write("\n")


def predictions_from_coco(
    records: Any, gt: DatasetGT, label: str = "model", model_id: int = 0, source: str = "<memory>"
) -> PredictionSet:
    """Build a :class:`PredictionSet` from a COCO results array.

    Unknown image ids are collected over the whole file and reported together.
    """
    if not isinstance(records, list):
        raise ValidationError(f"{source}: results file must be a JSON array")
    unknown_images: set = set()
    detections = []
    for pos, rec in enumerate(records):
        what = f"{source}: record #{pos}"
        if not isinstance(rec, dict):
            raise ValidationError(f"{what} is not an object")
        for key in ("image_id", "category_id", "bbox", "score"):
            if key not in rec:
                raise ValidationError(f"{what} missing '{key}'")
        image_id = _int_id(rec["image_id"], f"{what} image_id")
        category_id = _int_id(rec["category_id"], f"{what} category_id")
        score = _number(rec["score"], f"{what} score")
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"{what} score {score} outside [0, 1]")
        if category_id not in gt.category_ids:
            raise ValidationError(f"{what} references unknown category {category_id}")
        xywh = _bbox(rec, what)
        im = gt.image_by_id.get(image_id)
        if im is None:
            unknown_images.add(image_id)
            continue
        detections.append(
            Detection(
                box=from_abs_xywh(*xywh, im.width, im.height),
                score=float(score),
                category_id=category_id,
                image_id=image_id,
                model_id=model_id,
                source_index=pos,
            )
        )
    if unknown_images:
        raise ValidationError(
            f"{source}: predictions reference unknown image ids {sorted(unknown_images)}"
        )
    return PredictionSet(label=label, detections=detections)


def predictions_to_coco(preds: PredictionSet, gt: DatasetGT) -> list[dict]:
    out = []
    for d in preds.detections:
        im = gt.image_by_id[d.image_id]
        out.append(
            {
                "image_id": d.image_id,
                "category_id": d.category_id,
                "bbox": list(to_abs_xywh(d.box, im.width, im.height)),
                "score": d.score,
            }
        )
    return out


def load_predictions(path, gt: DatasetGT, model_id: int = 0, label: str | None = None) -> PredictionSet:
    path = Path(path)
    return predictions_from_coco(
        _read_json(path),
        gt,
        label=label if label is not None else path.stem,
        model_id=model_id,
        source=str(path),
    )


def save_predictions(preds: PredictionSet, gt: DatasetGT, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(predictions_to_coco(preds, gt), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def validation_size(n_images: int, train_fraction: float) -> int:
    """Number of validation images: nearest integer (halves round up), at least 1."""
    n_val = math.floor(n_images * (1.0 - train_fraction) + 0.5)
    return min(max(n_val, 1), n_images - 1)


def split(gt: DatasetGT, spec: SplitSpec) -> tuple[DatasetGT, DatasetGT]:
    """Partition whole images into train and validation subsets."""
    n = len(gt.images)
    if n < 2:
        raise InputError(f"need at least 2 images to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_val = validation_size(n, spec.train_fraction)
    val_ids = {gt.images[i].id for i in order[:n_val]}
    train_ids = {im.id for im in gt.images} - val_ids
    return gt.subset(train_ids), gt.subset(val_ids)


# ---------------------------------------------------------------------------
# Checkpoint sweep
# ---------------------------------------------------------------------------


def natural_key(label: str):
    """Sort key that orders embedded numbers numerically ("epoch2" < "epoch10")."""
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.split(r"(\d+)", label) if tok]


def select_best(curve: Sequence[tuple[str, Any]]) -> str:
    """Label with the highest AP@[.5:.95]; ties go to the earliest label."""
    if not curve:
        raise InputError("no checkpoints to select from")
    ranked = sorted(curve, key=lambda item: natural_key(item[0]))
    best_label, best_value = ranked[0][0], ranked[0][1].ap_50_95
    for label, report in ranked[1:]:
        if report.ap_50_95 > best_value:
            best_label, best_value = label, report.ap_50_95
    return best_label


def sweep(
    gt: DatasetGT, checkpoint_predictions: Sequence[tuple[str, str | os.PathLike]], workers: int = 1
) -> SweepResult:
    """Evaluate each checkpoint's prediction file and pick the best one."""
    from .metrics import evaluate

    if not checkpoint_predictions:
        raise InputError("sweep needs at least one checkpoint")

    def run(item):
        label, path = item
        try:
            preds = load_predictions(path, gt, label=label)
        except ValidationError as exc:
            raise ValidationError(f"checkpoint '{label}': {exc}") from None
        except OSError as exc:
            raise OSError(f"checkpoint '{label}': {exc}") from exc
        return label, evaluate(gt, preds)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            curve = list(pool.map(run, checkpoint_predictions))
    else:
        curve = [run(item) for item in checkpoint_predictions]
    best = select_best(curve)
    log.info("sweep: %d checkpoints, best %s", len(curve), best)
    return SweepResult(curve=curve, best_checkpoint=best)
