"""Search over ensemble weights and thresholds that maximizes AP + AR.

The sampler is seeded uniform random search. Trial 0 is always the unweighted
baseline (all weights 1, IoU 0.55, no skipping), so a study can never end up
worse than plain fusion.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import DatasetGT, PredictionSet
from .errors import ConfigurationError, InputError
from .metrics import EvalReport, evaluate, objective
from .wbf import EnsembleConfig, fuse_dataset

log = logging.getLogger(__name__)

BASELINE_IOU = 0.55
BASELINE_SKIP = 0.0


def _check_interval(name, interval, lo_ok, hi_ok, allow_point):
    lo, hi = float(interval[0]), float(interval[1])
    if hi < lo or (hi == lo and not allow_point):
        raise ConfigurationError(f"{name} range [{lo}, {hi}] must have positive length")
    if not (lo_ok(lo) and hi_ok(hi)):
        raise ConfigurationError(f"{name} range [{lo}, {hi}] leaves the valid domain")
    return lo, hi


@dataclass(frozen=True)
class SearchSpace:
    n_models: int
    weight_range: tuple[float, float] = (0.01, 2.0)
    iou_range: tuple[float, float] = (0.30, 0.80)
    skip_range: tuple[float, float] = (0.00, 0.40)
    allow_points: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.n_models < 1:
            raise ConfigurationError("search space needs at least one model")
        pts = self.allow_points
        object.__setattr__(
            self, "weight_range",
            _check_interval("weight", self.weight_range, lambda v: v > 0, lambda v: True, pts),
        )
        object.__setattr__(
            self, "iou_range",
            _check_interval("iou", self.iou_range, lambda v: v > 0, lambda v: v < 1, pts),
        )
        object.__setattr__(
            self, "skip_range",
            _check_interval("skip", self.skip_range, lambda v: v >= 0, lambda v: v < 1, pts),
        )

    @classmethod
    def point(cls, weight: float, iou_threshold: float, skip_threshold: float, n_models: int):
        """A space holding one admissible configuration (all weights equal)."""
        return cls(
            n_models,
            (weight, weight),
            (iou_threshold, iou_threshold),
            (skip_threshold, skip_threshold),
            allow_points=True,
        )


@dataclass
class Trial:
    index: int
    config: EnsembleConfig
    objective_value: float
    report: EvalReport

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "weights": list(self.config.weights),
            "iou_threshold": self.config.iou_threshold,
            "skip_threshold": self.config.skip_threshold,
            "objective": self.objective_value,
            "ap_50_95": self.report.ap_50_95,
            "ap_50": self.report.ap_50,
            "ap_75": self.report.ap_75,
            "ar_50_95": self.report.ar_50_95,
        }


@dataclass
class StudyResult:
    best: Trial
    history: list[Trial]
    seed: int
    n_trials: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_trials": self.n_trials,
            "best": {
                "index": self.best.index,
                "weights": list(self.best.config.weights),
                "iou_threshold": self.best.config.iou_threshold,
                "skip_threshold": self.best.config.skip_threshold,
                "objective": self.best.objective_value,
            },
            "history": [t.to_dict() for t in self.history],
            "best_so_far": best_so_far_curve(self),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def sample(space: SearchSpace, rng: np.random.Generator) -> EnsembleConfig:
    """Draw every parameter uniformly from its interval."""
    weights = tuple(float(rng.uniform(*space.weight_range)) for _ in range(space.n_models))
    iou_thr = float(rng.uniform(*space.iou_range))
    skip_thr = float(rng.uniform(*space.skip_range))
    return EnsembleConfig(weights, iou_thr, skip_thr)


def baseline_config(n_models: int) -> EnsembleConfig:
    return EnsembleConfig.uniform(n_models, BASELINE_IOU, BASELINE_SKIP)


def run_trial(
    index: int, config: EnsembleConfig, gt: DatasetGT, per_model_sets: Sequence[PredictionSet]
) -> Trial:
    report = evaluate(gt, fuse_dataset(per_model_sets, config))
    return Trial(index, config, objective(report), report)


def tune(
    gt: DatasetGT,
    per_model_sets: Sequence[PredictionSet],
    space: SearchSpace | None = None,
    n_trials: int = 100,
    seed: int = 0,
    workers: int = 1,
) -> StudyResult:
    if n_trials < 1:
        raise InputError(f"n_trials must be >= 1, got {n_trials}")
    if not per_model_sets:
        raise InputError("tune needs at least one prediction set")
    if space is None:
        space = SearchSpace(len(per_model_sets))
    if space.n_models != len(per_model_sets):
        raise ConfigurationError(
            f"search space is for {space.n_models} models, got {len(per_model_sets)} prediction sets"
        )

    # all configs are drawn up front so that parallel evaluation cannot reorder the RNG stream
    rng = np.random.default_rng(seed)
    configs = [baseline_config(space.n_models)]
    configs += [sample(space, rng) for _ in range(n_trials - 1)]

    def run(item):
        return run_trial(item[0], item[1], gt, per_model_sets)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            history = list(pool.map(run, enumerate(configs)))
    else:
        history = [run(item) for item in enumerate(configs)]

    best = history[0]
    for trial in history[1:]:
        if trial.objective_value > best.objective_value:
            best = trial
    log.info(
        "tune: %d trials, best #%d objective %.4f", n_trials, best.index, best.objective_value
    )
    return StudyResult(best=best, history=history, seed=seed, n_trials=n_trials)


def best_so_far_curve(study: StudyResult) -> list[float]:
    out: list[float] = []
    for trial in study.history:
        v = trial.objective_value
        out.append(v if not out or v > out[-1] else out[-1])
    return out
