import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import det, random_wbf_instance
from oracles import wbf_trace
from sarstack.datasets import PredictionSet
from sarstack.errors import ConfigurationError, InputError
from sarstack.wbf import EnsembleConfig, fuse_dataset, fuse_image, normalize_weights


def as_trace_input(per_model):
    return [[(d.box.as_tuple(), d.score, d.category_id, d.source_index) for d in dets] for dets in per_model]


def assert_matches(fused, expected, tol=1e-9):
    assert len(fused) == len(expected)
    for f, (box, score, cat, members) in zip(fused, expected):
        assert f.category_id == cat
        assert f.member_ids == members
        assert abs(f.score - score) <= tol
        assert max(abs(a - b) for a, b in zip(f.box.as_tuple(), box)) <= tol


@pytest.mark.parametrize(
    "weights, expected",
    [([1, 1, 1], [1, 1, 1]), ([2, 4, 6], [0.5, 1, 1.5]), ([5], [1])],
)
def test_normalize_weights(weights, expected):
    assert normalize_weights(weights) == pytest.approx(expected)


def test_normalize_weights_rejects_nonpositive():
    with pytest.raises(InputError):
        normalize_weights([1, 0])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EnsembleConfig(())
    with pytest.raises(ConfigurationError):
        EnsembleConfig((1.0, -1.0))
    with pytest.raises(ConfigurationError):
        EnsembleConfig((1.0,), iou_threshold=1.0)
    with pytest.raises(ConfigurationError):
        EnsembleConfig((1.0,), skip_threshold=1.0)


def test_single_model_single_detection_is_identity():
    b = (0.1, 0.1, 0.4, 0.5)
    out = fuse_image([[det(b, 0.9)]], EnsembleConfig((1.0,), 0.55, 0.0))
    assert len(out) == 1
    assert out[0].box.as_tuple() == b
    assert out[0].score == 0.9
    assert out[0].cluster_size == 1


def test_two_models_identical_box():
    b = (0.2, 0.2, 0.6, 0.6)
    out = fuse_image(
        [[det(b, 0.8, model_id=0)], [det(b, 0.6, model_id=1)]], EnsembleConfig((1.0, 1.0))
    )
    assert len(out) == 1
    assert out[0].box.as_tuple() == pytest.approx(b)
    assert out[0].score == pytest.approx(0.7)
    assert out[0].member_ids == [(0, 0), (1, 0)]


def test_skip_threshold_removes_everything():
    dets = [[det((0, 0, 0.5, 0.5), 0.4), det((0.5, 0.5, 1, 1), 0.7, idx=1)]]
    assert fuse_image(dets, EnsembleConfig((1.0,), 0.5, 0.7 + 1e-9)) == []


def test_skip_filters_raw_not_weighted_score():
    # weight pushes the effective score above the threshold, but the raw score decides
    per_model = [[det((0, 0, 0.3, 0.3), 0.3)], [det((0.6, 0.6, 0.9, 0.9), 0.9, model_id=1)]]
    out = fuse_image(per_model, EnsembleConfig((10.0, 0.1), 0.5, 0.35))
    assert [f.member_ids for f in out] == [[(1, 0)]]


def test_categories_never_mix():
    b = (0.2, 0.2, 0.6, 0.6)
    out = fuse_image([[det(b, 0.9, cat=1), det(b, 0.8, cat=2, idx=1)]], EnsembleConfig((1.0,)))
    assert sorted(f.category_id for f in out) == [1, 2]


def test_joins_highest_iou_cluster():
    # c overlaps both seed clusters above 0.5 (0.60 vs a, 0.78 vs b); the first-found rule would pick a
    a = det((0.0, 0.0, 0.4, 0.4), 0.9, idx=0)
    b = det((0.15, 0.0, 0.55, 0.4), 0.8, idx=1)
    c = det((0.1, 0.0, 0.5, 0.4), 0.7, idx=2)
    out = fuse_image([[a, b, c]], EnsembleConfig((1.0,), 0.5, 0.0))
    assert [f.member_ids for f in out] == [[(0, 0)], [(0, 1), (0, 2)]]


def test_weight_count_mismatch():
    with pytest.raises(ConfigurationError):
        fuse_image([[], []], EnsembleConfig((1.0,)))


def test_mixed_images_rejected():
    with pytest.raises(InputError):
        fuse_image([[det((0, 0, 1, 1), 0.5, image_id=1), det((0, 0, 1, 1), 0.5, image_id=2)]],
                   EnsembleConfig((1.0,)))


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        per_model, weights, iou_thr, skip_thr = random_wbf_instance(rng)
        fused = fuse_image(per_model, EnsembleConfig(tuple(weights), iou_thr, skip_thr))
        expected = wbf_trace(as_trace_input(per_model), weights, iou_thr, skip_thr)
        assert_matches(fused, expected)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 20.0))
def test_weight_scale_invariance(seed, k):
    per_model, weights, iou_thr, skip_thr = random_wbf_instance(np.random.default_rng(seed))
    a = fuse_image(per_model, EnsembleConfig(tuple(weights), iou_thr, skip_thr))
    b = fuse_image(per_model, EnsembleConfig(tuple(k * w for w in weights), iou_thr, skip_thr))
    assert_matches(b, [(f.box.as_tuple(), f.score, f.category_id, f.member_ids) for f in a])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_structural_invariants(seed):
    per_model, weights, iou_thr, skip_thr = random_wbf_instance(np.random.default_rng(seed))
    fused = fuse_image(per_model, EnsembleConfig(tuple(weights), iou_thr, skip_thr))
    w = normalize_weights(weights)
    survivors = {
        (m, d.source_index): (d, d.score * w[m])
        for m, dets in enumerate(per_model)
        for d in dets
        if d.score >= skip_thr
    }
    members = [mid for f in fused for mid in f.member_ids]
    assert len(fused) <= len(survivors)
    assert sorted(members) == sorted(survivors)
    for f in fused:
        assert f.cluster_size == len(f.member_ids)
        assert 0.0 <= f.score <= 1.0
        assert f.score <= max(survivors[m][1] for m in f.member_ids) + 1e-12
        for c in range(4):
            coords = [survivors[m][0].box.as_tuple()[c] for m in f.member_ids]
            assert min(coords) - 1e-12 <= f.box.as_tuple()[c] <= max(coords) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_model_permutation_only_relabels(seed):
    rng = np.random.default_rng(seed)
    per_model, weights, iou_thr, skip_thr = random_wbf_instance(rng)
    perm = list(rng.permutation(len(per_model)))
    a = fuse_image(per_model, EnsembleConfig(tuple(weights), iou_thr, skip_thr))
    b = fuse_image([per_model[p] for p in perm], EnsembleConfig(tuple(weights[p] for p in perm), iou_thr, skip_thr))
    key = lambda f: (f.category_id, round(f.score, 12), tuple(round(c, 12) for c in f.box.as_tuple()))
    assert sorted(map(key, a)) == sorted(map(key, b))


def test_single_model_keeps_separate_boxes():
    dets = [det((0.0, 0.0, 0.2, 0.2), 0.3, idx=0), det((0.5, 0.5, 0.9, 0.9), 0.8, idx=1)]
    out = fuse_image([dets], EnsembleConfig((1.0,), 0.55, 0.0))
    assert [(f.box.as_tuple(), f.score) for f in out] == [
        ((0.5, 0.5, 0.9, 0.9), 0.8),
        ((0.0, 0.0, 0.2, 0.2), 0.3),
    ]


def test_fuse_dataset_empty():
    sets = [PredictionSet(f"m{m}") for m in range(3)]
    assert fuse_dataset(sets, EnsembleConfig((1.0, 1.0, 1.0))).detections == []


def test_fuse_dataset_disjoint_images_rescales_singletons():
    sets = [
        PredictionSet(f"m{m}", [det((0.1, 0.1, 0.3, 0.3), 0.9, image_id=m + 1, model_id=m)])
        for m in range(3)
    ]
    out = fuse_dataset(sets, EnsembleConfig((1.0, 1.0, 1.0)))
    assert out.label == "ensemble"
    assert [d.image_id for d in out.detections] == [1, 2, 3]
    assert [d.score for d in out.detections] == pytest.approx([0.3, 0.3, 0.3])
    assert [d.source_index for d in out.detections] == [0, 1, 2]


def test_fuse_dataset_single_model_identity():
    dets = [
        det((0.1, 0.1, 0.3, 0.3), 0.4, image_id=1, idx=0),
        det((0.5, 0.5, 0.8, 0.8), 0.9, image_id=1, idx=1),
        det((0.2, 0.2, 0.6, 0.6), 0.7, image_id=2, idx=2),
    ]
    out = fuse_dataset([PredictionSet("m", dets)], EnsembleConfig((1.0,)))
    got = [(d.image_id, d.box.as_tuple(), d.score) for d in out.detections]
    assert got == [
        (1, (0.5, 0.5, 0.8, 0.8), 0.9),
        (1, (0.1, 0.1, 0.3, 0.3), 0.4),
        (2, (0.2, 0.2, 0.6, 0.6), 0.7),
    ]


def test_fuse_dataset_threads_match_sequential():
    rng = np.random.default_rng(3)
    sets = []
    for m in range(3):
        dets = []
        for image_id in range(1, 9):
            per_model, *_ = random_wbf_instance(rng, max_models=1)
            for d in per_model[0]:
                dets.append(det(d.box.as_tuple(), d.score, d.category_id, image_id, m, len(dets)))
        sets.append(PredictionSet(f"m{m}", dets))
    cfg = EnsembleConfig((0.5, 1.0, 2.0), 0.5, 0.1)
    assert fuse_dataset(sets, cfg, workers=4) == fuse_dataset(sets, cfg, workers=1)
