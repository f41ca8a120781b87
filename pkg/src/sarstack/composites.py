"""RGB composites from Sentinel band rasters, patch cropping and box-aware augmentation.

Rasters travel as raw little-endian float32, row-major, next to a JSON
sidecar ``{"width": int, "height": int, "nodata": float?}``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image

from .errors import FormatError, InputError
from .geometry import Annotation, BBox

RATIO_EPS = 1e-6
DEGENERATE_VALUE = 128
AUGMENT_OPS = ("flip_h", "flip_v", "rot90", "rot180", "rot270")


@dataclass
class BandRaster:
    values: np.ndarray  # (height, width) float32
    nodata_value: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.size == 0:
            raise InputError(f"raster must be a non-empty 2-D grid, got shape {self.values.shape}")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def nodata_mask(self) -> np.ndarray:
        mask = np.isnan(self.values)
        if self.nodata_value is not None:
            mask |= self.values == np.float32(self.nodata_value)
        return mask


@dataclass
class RGBImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise InputError(f"RGB image must be uint8 (H, W, 3), got {px.dtype} {px.shape}")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class CropSpec:
    patch_size: int
    stride: int | None = None
    min_box_visibility: float = 0.5

    def __post_init__(self):
        if self.patch_size <= 0:
            raise InputError(f"patch_size must be positive, got {self.patch_size}")
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size)
        if not 0 < self.stride <= self.patch_size:
            raise InputError(f"stride must lie in (0, patch_size], got {self.stride}")
        if not 0.0 < self.min_box_visibility <= 1.0:
            raise InputError(
                f"min_box_visibility must lie in (0, 1], got {self.min_box_visibility}"
            )


class Patch(NamedTuple):
    image: RGBImage
    origin_x: int
    origin_y: int


class DetectionPatch(NamedTuple):
    image: RGBImage
    annotations: list[Annotation]
    origin_x: int
    origin_y: int


# ---------------------------------------------------------------------------
# Raster I/O
# ---------------------------------------------------------------------------


def sidecar_path(data_path) -> Path:
    """Default sidecar location: the data path with ``.json`` appended."""
    p = Path(data_path)
    return p.with_name(p.name + ".json")


def load_raster(data_path, sidecar=None) -> BandRaster:
    sidecar = sidecar_path(data_path) if sidecar is None else Path(sidecar)
    with open(sidecar, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{sidecar}: invalid JSON ({exc})") from None
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{sidecar}: needs integer 'width' and 'height'") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"{sidecar}: dimensions must be positive, got {width}x{height}")
    nodata = meta.get("nodata")
    with open(data_path, "rb") as fh:
        raw = fh.read()
    expected = width * height * 4
    if len(raw) != expected:
        raise FormatError(
            f"{data_path}: {len(raw)} bytes but {width}x{height} float32 needs {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(height, width)
    return BandRaster(values.astype(np.float32), None if nodata is None else float(nodata))


def save_raster(raster: BandRaster, data_path, sidecar=None) -> None:
    sidecar = sidecar_path(data_path) if sidecar is None else Path(sidecar)
    with open(data_path, "wb") as fh:
        fh.write(raster.values.astype("<f4").tobytes())
    meta = {"width": raster.width, "height": raster.height}
    if raster.nodata_value is not None:
        meta["nodata"] = raster.nodata_value
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


# ---------------------------------------------------------------------------
# Composites
# ---------------------------------------------------------------------------


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def percentile_stretch(
    x: np.ndarray, valid: np.ndarray, clip_percentiles: tuple[float, float]
) -> np.ndarray:
    """Map ``x`` to bytes by clipping to its own percentile range.

    Percentiles are taken over ``valid`` cells only; invalid cells come out 0.
    A zero-width range maps every valid cell to 128.
    """
    out = np.zeros(x.shape, dtype=np.uint8)
    if not valid.any():
        return out
    lo, hi = np.percentile(x[valid], clip_percentiles)
    if not hi > lo:
        out[valid] = DEGENERATE_VALUE
        return out
    scaled = (np.clip(x, lo, hi) - lo) / (hi - lo) * 255.0
    out[valid] = _round_half_up(scaled[valid]).astype(np.uint8)
    return out


def s1_composite(
    vh: BandRaster, vv: BandRaster, clip_percentiles: tuple[float, float] = (2.0, 98.0)
) -> RGBImage:
    """Sentinel-1 colour composite: R = |VH|, G = |VV|, B = |VH| / |VV|."""
    if vh.values.shape != vv.values.shape:
        raise InputError(
            f"VH is {vh.width}x{vh.height} but VV is {vv.width}x{vv.height}"
        )
    low, high = clip_percentiles
    if not 0.0 <= low < high <= 100.0:
        raise InputError(f"clip percentiles must satisfy 0 <= low < high <= 100, got {clip_percentiles}")
    valid = ~(vh.nodata_mask | vv.nodata_mask)
    a_vh = np.abs(vh.values.astype(np.float64))
    a_vv = np.abs(vv.values.astype(np.float64))
    ratio = a_vh / np.maximum(a_vv, RATIO_EPS)
    channels = [percentile_stretch(c, valid, (low, high)) for c in (a_vh, a_vv, ratio)]
    return RGBImage(np.stack(channels, axis=-1))


def s2_composite(
    b04: BandRaster, b03: BandRaster, b02: BandRaster, reflectance_scale: float = 10000.0
) -> RGBImage:
    """Sentinel-2 true colour: B04 -> R, B03 -> G, B02 -> B."""
    if not (b04.values.shape == b03.values.shape == b02.values.shape):
        raise InputError("B04, B03 and B02 rasters must share dimensions")
    if reflectance_scale <= 0:
        raise InputError(f"reflectance_scale must be positive, got {reflectance_scale}")
    valid = ~(b04.nodata_mask | b03.nodata_mask | b02.nodata_mask)
    channels = []
    for band in (b04, b03, b02):
        v = np.clip(band.values.astype(np.float64) / reflectance_scale, 0.0, 1.0)
        c = _round_half_up(255.0 * v)
        c[~valid] = 0
        channels.append(c.astype(np.uint8))
    return RGBImage(np.stack(channels, axis=-1))


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------


def grid_origins(width: int, height: int, spec: CropSpec) -> list[tuple[int, int]]:
    size, stride = spec.patch_size, spec.stride
    if width < size or height < size:
        raise InputError(f"image {width}x{height} is smaller than patch size {size}")
    xs = range(0, width - size + 1, stride)
    ys = range(0, height - size + 1, stride)
    return [(x, y) for y in ys for x in xs]


def crop_grid(img: RGBImage, spec: CropSpec) -> list[Patch]:
    """Cut full patches on a regular grid, row by row; partial edges are dropped."""
    size = spec.patch_size
    return [
        Patch(RGBImage(img.pixels[y : y + size, x : x + size].copy()), x, y)
        for x, y in grid_origins(img.width, img.height, spec)
    ]


def _remap_into_patch(
    ann: Annotation, img_w: int, img_h: int, ox: int, oy: int, size: int, min_visibility: float
) -> Annotation | None:
    b = ann.box
    x1, y1, x2, y2 = b.x1 * img_w, b.y1 * img_h, b.x2 * img_w, b.y2 * img_h
    cx1, cy1 = max(x1, ox), max(y1, oy)
    cx2, cy2 = min(x2, ox + size), min(y2, oy + size)
    if cx2 <= cx1 or cy2 <= cy1:
        return None
    visible = (cx2 - cx1) * (cy2 - cy1) / ((x2 - x1) * (y2 - y1))
    # pixel/normalized round trips leave ~1e-16 noise on exact boundary ratios
    if visible < min_visibility - 1e-9:
        return None
    box = BBox((cx1 - ox) / size, (cy1 - oy) / size, (cx2 - ox) / size, (cy2 - oy) / size)
    return Annotation(box, ann.category_id, ann.image_id, ann.annotation_id)


def crop_detection_patches(
    img: RGBImage, annotations: Sequence[Annotation], spec: CropSpec
) -> list[DetectionPatch]:
    """Grid patches that contain at least one sufficiently visible box.

    Boxes are clipped to each patch and re-expressed in patch coordinates.
    """
    size = spec.patch_size
    out = []
    for x, y in grid_origins(img.width, img.height, spec):
        kept = []
        for ann in annotations:
            r = _remap_into_patch(ann, img.width, img.height, x, y, size, spec.min_box_visibility)
            if r is not None:
                kept.append(r)
        if kept:
            out.append(
                DetectionPatch(RGBImage(img.pixels[y : y + size, x : x + size].copy()), kept, x, y)
            )
    return out


def _transform_box(b: BBox, op: str) -> BBox:
    if op == "flip_h":
        return BBox(1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2)
    if op == "flip_v":
        return BBox(b.x1, 1.0 - b.y2, b.x2, 1.0 - b.y1)
    # rotations are counter-clockwise, matching np.rot90
    if op == "rot90":
        return BBox(b.y1, 1.0 - b.x2, b.y2, 1.0 - b.x1)
    if op == "rot180":
        return BBox(1.0 - b.x2, 1.0 - b.y2, 1.0 - b.x1, 1.0 - b.y1)
    if op == "rot270":
        return BBox(1.0 - b.y2, b.x1, 1.0 - b.y1, b.x2)
    raise InputError(f"unknown augmentation '{op}', expected one of {AUGMENT_OPS}")


def _transform_pixels(px: np.ndarray, op: str) -> np.ndarray:
    if op == "flip_h":
        return px[:, ::-1]
    if op == "flip_v":
        return px[::-1]
    return np.rot90(px, k={"rot90": 1, "rot180": 2, "rot270": 3}[op], axes=(0, 1))


def augment(
    patch: RGBImage, annotations: Sequence[Annotation], ops: Sequence[str]
) -> tuple[RGBImage, list[Annotation]]:
    """Apply flips/rotations in order to the pixels and, identically, to the boxes."""
    for op in ops:
        if op not in AUGMENT_OPS:
            raise InputError(f"unknown augmentation '{op}', expected one of {AUGMENT_OPS}")
        if op.startswith("rot") and patch.width != patch.height:
            raise InputError(f"{op} needs a square patch, got {patch.width}x{patch.height}")
    px = patch.pixels
    anns = list(annotations)
    for op in ops:
        px = _transform_pixels(px, op)
        anns = [
            Annotation(_transform_box(a.box, op), a.category_id, a.image_id, a.annotation_id)
            for a in anns
        ]
    return RGBImage(np.ascontiguousarray(px)), anns


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def save_png(img: RGBImage, path) -> None:
    Image.fromarray(np.ascontiguousarray(img.pixels)).save(path, format="PNG")


def load_png(path) -> RGBImage:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode != "RGB":
                raise FormatError(f"{path}: expected 8-bit RGB, got mode {im.mode}")
            pixels = np.array(im, dtype=np.uint8)
    except FormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"{path}: cannot decode PNG ({exc})") from None
    return RGBImage(pixels)
