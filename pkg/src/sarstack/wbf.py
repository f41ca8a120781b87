"""Weighted Boxes Fusion of several detectors' outputs.

Detections from all models are pooled per image and category, sorted by
weighted confidence and greedily clustered against the running fused box of
each cluster. A cluster's box is the confidence-weighted mean of its members'
corners; its score is the mean weighted confidence, rescaled by how many of
the ``N`` models could have contributed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .errors import ConfigurationError, InputError
from .geometry import BBox, Detection, iou

if TYPE_CHECKING:
    from .datasets import PredictionSet

ENSEMBLE_LABEL = "ensemble"


@dataclass(frozen=True)
class EnsembleConfig:
    weights: tuple[float, ...]
    iou_threshold: float = 0.55
    skip_threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.weights:
            raise ConfigurationError("ensemble needs at least one weight")
        if any(not w > 0.0 for w in self.weights):
            raise ConfigurationError(f"weights must be positive, got {list(self.weights)}")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigurationError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if not 0.0 <= self.skip_threshold < 1.0:
            raise ConfigurationError(
                f"skip_threshold must lie in [0, 1), got {self.skip_threshold}"
            )

    @classmethod
    def uniform(cls, n_models: int, iou_threshold: float = 0.55, skip_threshold: float = 0.0):
        return cls((1.0,) * n_models, iou_threshold, skip_threshold)

    @property
    def n_models(self) -> int:
        return len(self.weights)


@dataclass
class FusedDetection:
    box: BBox
    score: float
    category_id: int
    member_ids: list[tuple[int, int]] = field(default_factory=list)

    @property
    def cluster_size(self) -> int:
        return len(self.member_ids)


def normalize_weights(weights: Sequence[float]) -> list[float]:
    """Rescale weights so that their arithmetic mean is 1."""
    if not weights:
        raise InputError("no weights given")
    if any(not w > 0.0 for w in weights):
        raise InputError(f"weights must be positive, got {list(weights)}")
    mean = sum(weights) / len(weights)
    return [w / mean for w in weights]


class _Cluster:
    __slots__ = ("members", "box", "key")

    def __init__(self, member):
        # member = (weighted score, model, source_index, box)
        self.members = [member]
        self.box = member[3]
        self.key = (member[1], member[2])

    def add(self, member):
        self.members.append(member)
        total = 0.0
        x1 = y1 = x2 = y2 = 0.0
        for s, _, _, b in self.members:
            total += s
            x1 += s * b.x1
            y1 += s * b.y1
            x2 += s * b.x2
            y2 += s * b.y2
        if total > 0.0:
            self.box = BBox(x1 / total, y1 / total, x2 / total, y2 / total)


def fuse_image(
    per_model: Sequence[Sequence[Detection]], config: EnsembleConfig
) -> list[FusedDetection]:
    """Fuse the detections of ``N`` models for a single image.

    ``per_model[m]`` holds model ``m``'s detections; the list position, not
    ``Detection.model_id``, selects the weight.
    """
    n_models = len(per_model)
    if n_models != config.n_models:
        raise ConfigurationError(
            f"{n_models} detection lists given but config has {config.n_models} weights"
        )
    image_ids = {d.image_id for dets in per_model for d in dets}
    if len(image_ids) > 1:
        raise InputError(f"fuse_image got detections from several images: {sorted(image_ids)}")

    weights = normalize_weights(config.weights)
    by_category: dict[int, list] = {}
    for m, dets in enumerate(per_model):
        w = weights[m]
        for d in dets:
            if d.score < config.skip_threshold:
                continue
            by_category.setdefault(d.category_id, []).append(
                (d.score * w, m, d.source_index, d.box)
            )

    fused: list[tuple[tuple, FusedDetection]] = []
    for category_id, pool in by_category.items():
        pool.sort(key=lambda t: (-t[0], t[1], t[2]))
        clusters: list[_Cluster] = []
        for member in pool:
            best, best_iou = None, config.iou_threshold
            for cluster in clusters:
                overlap = iou(member[3], cluster.box)
                if overlap > best_iou:
                    best, best_iou = cluster, overlap
            if best is None:
                clusters.append(_Cluster(member))
            else:
                best.add(member)

        for cluster in clusters:
            size = len(cluster.members)
            raw = sum(t[0] for t in cluster.members) / size
            score = raw * min(size, n_models) / n_models
            score = min(max(score, 0.0), 1.0)
            det = FusedDetection(
                box=cluster.box,
                score=score,
                category_id=category_id,
                member_ids=[(t[1], t[2]) for t in cluster.members],
            )
            fused.append(((-score,) + cluster.key, det))

    fused.sort(key=lambda t: t[0])
    return [det for _, det in fused]


def fuse_dataset(
    per_model_sets: Sequence["PredictionSet"], config: EnsembleConfig, workers: int = 1
) -> "PredictionSet":
    """Fuse whole prediction sets image by image.

    Output detections are ordered by image id, then by fused score, and are
    renumbered so that ``source_index`` is their position in the result.
    """
    from .datasets import PredictionSet

    if len(per_model_sets) != config.n_models:
        raise ConfigurationError(
            f"{len(per_model_sets)} prediction sets given but config has "
            f"{config.n_models} weights"
        )
    grouped: dict[int, list[list[Detection]]] = {}
    for m, pset in enumerate(per_model_sets):
        for d in pset.detections:
            lists = grouped.get(d.image_id)
            if lists is None:
                lists = grouped[d.image_id] = [[] for _ in per_model_sets]
            lists[m].append(d)

    image_ids = sorted(grouped)
    jobs = [grouped[i] for i in image_ids]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda per_model: fuse_image(per_model, config), jobs))
    else:
        results = [fuse_image(per_model, config) for per_model in jobs]

    detections = []
    for image_id, fused in zip(image_ids, results):
        for f in fused:
            detections.append(
                Detection(
                    box=f.box,
                    score=f.score,
                    category_id=f.category_id,
                    image_id=image_id,
                    model_id=0,
                    source_index=len(detections),
                )
            )
    return PredictionSet(label=ENSEMBLE_LABEL, detections=detections)
