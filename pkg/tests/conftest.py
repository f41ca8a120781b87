import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sarstack.datasets import Category, DatasetGT, ImageInfo, PredictionSet  # noqa: E402
from sarstack.geometry import Annotation, BBox, Detection  # noqa: E402


def det(box, score, cat=1, image_id=1, model_id=0, idx=0):
    return Detection(BBox(*box), score, cat, image_id, model_id, idx)


def ann(box, cat=1, image_id=1, ann_id=1):
    return Annotation(BBox(*box), cat, image_id, ann_id)


def simple_gt(boxes_per_image, size=870, n_categories=1):
    """boxes_per_image: list (one per image) of lists of (box, category)."""
    images, anns = [], []
    for k, boxes in enumerate(boxes_per_image, start=1):
        images.append(ImageInfo(k, size, size, f"img{k}.png"))
        for box, cat in boxes:
            anns.append(Annotation(BBox(*box), cat, k, len(anns) + 1))
    cats = [Category(c, f"class{c}") for c in range(1, n_categories + 1)]
    return DatasetGT(images, anns, cats)


def gt_as_predictions(gt, score=1.0, label="perfect"):
    return PredictionSet(
        label,
        [Detection(a.box, score, a.category_id, a.image_id, 0, k) for k, a in enumerate(gt.annotations)],
    )


def random_box(rng, lo=0.05, hi=0.5):
    w, h = rng.uniform(lo, hi, size=2)
    x, y = rng.uniform(0, 1 - w), rng.uniform(0, 1 - h)
    return (float(x), float(y), float(x + w), float(y + h))


def jitter(box, rng, amount):
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    d = rng.uniform(-amount, amount, size=4)
    return (
        min(max(x1 + d[0] * w, 0.0), 1.0),
        min(max(y1 + d[1] * h, 0.0), 1.0),
        min(max(x2 + d[2] * w, 0.0), 1.0),
        min(max(y2 + d[3] * h, 0.0), 1.0),
    )


def random_wbf_instance(rng, max_models=3, max_dets=6, n_categories=2):
    """Per-model detection lists for one image, clustered around a few anchors."""
    n_models = int(rng.integers(1, max_models + 1))
    anchors = [random_box(rng, 0.1, 0.4) for _ in range(3)]
    per_model = []
    for m in range(n_models):
        dets = []
        for k in range(int(rng.integers(0, max_dets + 1))):
            base = anchors[int(rng.integers(len(anchors)))]
            box = jitter(base, rng, 0.3)
            if box[2] < box[0] or box[3] < box[1]:
                box = base
            cat = int(rng.integers(1, n_categories + 1))
            dets.append(Detection(BBox(*box), float(rng.uniform(0, 1)), cat, 1, m, k))
        per_model.append(dets)
    weights = [float(w) for w in rng.uniform(0.1, 3.0, size=n_models)]
    iou_thr = float(rng.uniform(0.3, 0.8))
    skip_thr = float(rng.uniform(0.0, 0.3))
    return per_model, weights, iou_thr, skip_thr


def random_metric_instance(rng, max_images=3, max_gt=4, max_dets=6, n_categories=1):
    boxes_per_image = []
    gt_boxes = {}
    for _ in range(int(rng.integers(1, max_images + 1))):
        boxes = [
            (random_box(rng, 0.1, 0.4), int(rng.integers(1, n_categories + 1)))
            for _ in range(int(rng.integers(0, max_gt + 1)))
        ]
        boxes_per_image.append(boxes)
    gt = simple_gt(boxes_per_image, n_categories=n_categories)
    for a in gt.annotations:
        gt_boxes.setdefault((a.image_id, a.category_id), []).append(a.box.as_tuple())
    dets = []
    for img_idx, boxes in enumerate(boxes_per_image, start=1):
        for _ in range(int(rng.integers(0, max_dets + 1))):
            if boxes and rng.random() < 0.7:
                base, cat = boxes[int(rng.integers(len(boxes)))]
                box = jitter(base, rng, 0.15)
                if box[2] <= box[0] or box[3] <= box[1]:
                    box = base
            else:
                box, cat = random_box(rng), int(rng.integers(1, n_categories + 1))
            dets.append(Detection(BBox(*box), float(rng.uniform(0, 1)), cat, img_idx, 0, len(dets)))
    return gt, PredictionSet("random", dets), gt_boxes


def write_json(path, data):
    path = Path(path)
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# whole-suite wall time: acceptance criterion 10 -----------------------------

SUITE_BUDGET_S = 60.0
_session_start = [0.0]


def pytest_sessionstart(session):
    _session_start[0] = time.perf_counter()


def _suite_elapsed():
    return time.perf_counter() - _session_start[0]


def pytest_sessionfinish(session, exitstatus):
    if _suite_elapsed() >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = _suite_elapsed()
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(
        f"CRITERION 10: {verdict}  full suite wall time {elapsed:.2f}s (< {SUITE_BUDGET_S:.0f}s)"
    )
