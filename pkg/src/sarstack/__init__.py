"""Toolkit for SAR object-detection datasets and tuned detector ensembles."""

from .errors import ConfigurationError, FormatError, InputError, SarStackError, ValidationError
from .geometry import Annotation, BBox, Detection, from_abs_xywh, iou, to_abs_xywh
from .datasets import DatasetGT, PredictionSet, SplitSpec, SweepResult, load_gt, load_predictions, split, sweep
from .wbf import EnsembleConfig, FusedDetection, fuse_dataset, fuse_image, normalize_weights
from .metrics import EvalReport, PRCurve, average_precision, evaluate, match_detections, objective
from .tuner import SearchSpace, StudyResult, Trial, best_so_far_curve, sample, tune

__version__ = "0.1.0"
