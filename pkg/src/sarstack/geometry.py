"""Axis-aligned boxes in normalized corner form and the overlap measure.

Every box inside the package lives in ``[0, 1]`` image-relative coordinates
as ``(x1, y1, x2, y2)``. Absolute COCO ``[x, y, w, h]`` pixels only appear at
the file boundary, via :func:`from_abs_xywh` and :func:`to_abs_xywh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputError


def _clip01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


@dataclass(frozen=True, slots=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InputError(f"box coordinates must be finite, got {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise InputError(f"box corners out of order: {coords}")
        for name, v in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, _clip01(float(v)))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True, slots=True)
class Detection:
    """One predicted box with its confidence, class and provenance.

    ``source_index`` is the record's position in the originating file and is
    used to break score ties deterministically.
    """

    box: BBox
    score: float
    category_id: int
    image_id: int
    model_id: int = 0
    source_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"score must lie in [0, 1], got {self.score}")
        if self.category_id < 1:
            raise InputError(f"category_id must be >= 1, got {self.category_id}")
        if self.model_id < 0:
            raise InputError(f"model_id must be >= 0, got {self.model_id}")


@dataclass(frozen=True, slots=True)
class Annotation:
    box: BBox
    category_id: int
    image_id: int
    annotation_id: int

    def __post_init__(self):
        if self.box.area <= 0.0:
            raise InputError(
                f"annotation {self.annotation_id} has a degenerate box {self.box.as_tuple()}"
            )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def from_abs_xywh(x: float, y: float, w: float, h: float, img_w: float, img_h: float) -> BBox:
    """Convert an absolute COCO ``[x, y, w, h]`` box to a normalized BBox."""
    if img_w <= 0 or img_h <= 0:
        raise InputError(f"image dimensions must be positive, got {img_w}x{img_h}")
    if w < 0 or h < 0:
        raise InputError(f"box extent must be non-negative, got w={w}, h={h}")
    x1 = _clip01(x / img_w)
    y1 = _clip01(y / img_h)
    x2 = _clip01((x + w) / img_w)
    y2 = _clip01((y + h) / img_h)
    return BBox(x1, y1, x2, y2)


def to_abs_xywh(box: BBox, img_w: float, img_h: float) -> tuple[float, float, float, float]:
    if img_w <= 0 or img_h <= 0:
        raise InputError(f"image dimensions must be positive, got {img_w}x{img_h}")
    return (
        box.x1 * img_w,
        box.y1 * img_h,
        box.x2 * img_w - box.x1 * img_w,
        box.y2 * img_h - box.y1 * img_h,
    )
