#!/usr/bin/env python3
"""
Test the multiclass-to-binary wrappers: top-label, class-wise, confidence,
normalized and top-K
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))
from binary_calibrators import BinaryCalibratorSpec, BinaryHBModel, IdentityModel
from core_data import ProbMatrix, accuracy, empty_dataset, make_dataset, top_label
from m2b_wrappers import (
    ClassWiseModel,
    ConfidenceModel,
    M2BNotionSpec,
    NormalizedModel,
    TopKModel,
    TopLabelModel,
    fit_class_wise,
    fit_confidence,
    fit_m2b,
    fit_normalized,
    fit_top_k,
    fit_top_label,
    predict_class_wise,
    predict_confidence,
    predict_m2b,
    predict_normalized,
    predict_top_k,
    predict_top_label,
)
from utils import ClassCountMismatch, EmptyInput, InvalidHyperparameters, KOutOfRange, UnsupportedPredictor

SPEC = BinaryCalibratorSpec.points_per_bin(50, seed=0)


def _constant(value: float) -> BinaryHBModel:
    return BinaryHBModel(B=1, upper_edges=[], bin_values=[value], bin_counts=[1], delta=1e-10, seed=0)


def _random_dataset(n: int, L: int, seed: int):
    rng = np.random.default_rng(seed)
    scores = rng.dirichlet(np.ones(L), size=n)
    labels = np.array([rng.choice(L, p=row) for row in scores])
    return make_dataset(scores, labels)


def _matrix_of(L: int, n: int = 25) -> ProbMatrix:
    return ProbMatrix(np.random.default_rng(L).dirichlet(np.ones(L), size=n))


def _stratified_dataset():
    """Two strata predicted with 0.6: one right 20% of the time, the other always"""
    scores = [[0.6, 0.2, 0.2]] * 10 + [[0.2, 0.6, 0.2]] * 10
    labels = [0, 0] + [2] * 8 + [1] * 10
    return make_dataset(scores, labels)


def test_top_label_hand_partition():
    """Rows predicted as class 0 are split into two bins; class 1 falls back to identity"""
    data = make_dataset([[0.6, 0.4], [0.7, 0.3], [0.8, 0.2], [0.9, 0.1]], [1, 0, 0, 0])
    model = fit_top_label(data, BinaryCalibratorSpec.fixed_bins(2, seed=0))

    assert np.allclose(model.per_class[0].bin_values, [0.5, 1.0]), f"Got {model.per_class[0].bin_values}"
    assert isinstance(model.per_class[1], IdentityModel)
    assert len(model.warnings) == 1 and "Class 2" in model.warnings[0]

    preds = predict_top_label(model, ProbMatrix(np.array([[0.65, 0.35], [0.3, 0.7]])))
    assert preds.top_class.tolist() == [0, 1]
    assert preds.top_prob[0] == pytest.approx(0.5)
    assert preds.top_prob[1] == pytest.approx(0.7), "Identity fallback must return the raw confidence"
    print("✅ Top-label hand partition passed")


def test_top_label_keeps_argmax_and_accuracy():
    """Top-label HB only rewrites the confidence: argmax and accuracy survive any fit/eval split"""
    for seed in range(100):
        L = 2 + seed % 5
        data = _random_dataset(300, L, seed=seed)
        order = np.random.default_rng(seed).permutation(data.n_rows)
        fit_rows = np.zeros(data.n_rows, dtype=bool)
        fit_rows[order[:150]] = True
        fit_set, eval_set = data.subset(fit_rows), data.subset(~fit_rows)

        model = fit_top_label(fit_set, BinaryCalibratorSpec.points_per_bin(20, seed=seed))
        calibrated = predict_m2b(model, eval_set.scores)
        base = top_label(eval_set.scores)
        assert np.array_equal(calibrated.top_class, base.top_class), f"argmax changed for seed {seed}"
        assert accuracy(calibrated.top_class, eval_set.labels) == accuracy(base.top_class, eval_set.labels)
    print("✅ Top-label argmax invariance passed")


def test_top_label_routes_then_maps():
    """Prediction picks the argmax class, then applies that class's calibrator"""
    model = TopLabelModel(2, (_constant(0.2), _constant(0.9)), SPEC)
    preds = predict_top_label(model, ProbMatrix(np.array([[0.3, 0.7]])))
    assert preds.top_class[0] == 1 and preds.top_prob[0] == pytest.approx(0.9)

    transparent = TopLabelModel(3, (IdentityModel(),) * 3, SPEC)
    matrix = ProbMatrix(np.random.default_rng(0).dirichlet(np.ones(3), size=20))
    assert np.array_equal(predict_top_label(transparent, matrix).top_prob, top_label(matrix).top_prob)
    print("✅ Top-label routing passed")


def test_top_label_all_correct_and_rare_classes():
    """All-correct calibration data maps every confidence to 1; rare classes get one bin"""
    rng = np.random.default_rng(1)
    scores = rng.dirichlet(np.ones(4), size=400)
    data = make_dataset(scores, np.argmax(scores, axis=1))
    model = fit_top_label(data, BinaryCalibratorSpec.points_per_bin(20, seed=3))
    assert np.all(predict_top_label(model, ProbMatrix(rng.dirichlet(np.ones(4), size=50))).top_prob == 1.0)

    rare = make_dataset([[0.7, 0.3]] * 183 + [[0.2, 0.8]] * 400, [0] * 183 + [1] * 400)
    rare_model = fit_top_label(rare, BinaryCalibratorSpec.points_per_bin(100, seed=0))
    assert rare_model.bins_per_class == (1, 4), f"Got {rare_model.bins_per_class}"
    assert rare_model.total_bins == 5
    print("✅ Top-label all-correct and rare class passed")


def test_pooling_hides_stratum_gap():
    """Confidence HB sees a calibrated 0.6; top-label HB separates the strata"""
    data = _stratified_dataset()

    confidence = fit_confidence(data, SPEC)
    assert confidence.total_bins == 1
    pooled = predict_confidence(confidence, data.scores)
    assert np.allclose(pooled.top_prob, 0.6)

    by_class = predict_top_label(fit_top_label(data, SPEC), data.scores)
    assert np.allclose(by_class.top_prob[:10], 0.2)
    assert np.allclose(by_class.top_prob[10:], 1.0)
    print("✅ Pooling versus top-label passed")


def test_confidence_bins_are_pooled():
    """n=100 with 50 points per bin gives two bins in total, not per class"""
    model = fit_confidence(_random_dataset(100, 4, seed=2), SPEC)
    assert model.bins_per_class == (2,)
    print("✅ Confidence pooling passed")


def test_class_wise_fits():
    """Each class sees all rows; constant targets give constant calibrators"""
    model = fit_class_wise(_random_dataset(100, 3, seed=4), SPEC)
    assert model.bins_per_class == (2, 2, 2)

    rng = np.random.default_rng(5)
    all_zero = make_dataset(rng.dirichlet(np.ones(2), size=60), np.zeros(60, dtype=int))
    constant = predict_class_wise(fit_class_wise(all_zero, SPEC), ProbMatrix(rng.dirichlet(np.ones(2), size=10)))
    assert np.all(constant[:, 0] == 1.0) and np.all(constant[:, 1] == 0.0)

    small = _random_dataset(30, 3, seed=6)
    collapsed = predict_class_wise(fit_class_wise(small, SPEC), small.scores)
    frequencies = np.bincount(small.labels, minlength=3) / 30
    assert np.allclose(collapsed, frequencies[None, :]), "Single-bin models must output class frequencies"
    print("✅ Class-wise fits passed")


def test_class_wise_rows_need_not_sum_to_one():
    model = ClassWiseModel(2, (_constant(0.6), _constant(0.6)), SPEC)
    out = predict_class_wise(model, ProbMatrix(np.array([[0.5, 0.5], [0.1, 0.9]])))
    assert np.allclose(out.sum(axis=1), 1.2)

    identity = ClassWiseModel(3, (IdentityModel(),) * 3, SPEC)
    matrix = ProbMatrix(np.random.default_rng(7).dirichlet(np.ones(3), size=10))
    assert np.array_equal(predict_class_wise(identity, matrix), matrix.values)
    print("✅ Class-wise row sums passed")


def test_normalized_predictions():
    """Components are divided by their row sum; zero rows become uniform"""
    matrix = ProbMatrix(np.array([[0.4, 0.6]]))
    scaled = predict_normalized(NormalizedModel(2, (_constant(0.2), _constant(0.6)), SPEC), matrix)
    assert np.allclose(scaled.values, [[0.25, 0.75]])

    zero = predict_normalized(NormalizedModel(2, (_constant(0.0), _constant(0.0)), SPEC), matrix)
    assert np.allclose(zero.values, [[0.5, 0.5]])

    identity = predict_normalized(NormalizedModel(2, (IdentityModel(), IdentityModel()), SPEC), matrix)
    assert np.allclose(identity.values, matrix.values)

    fitted = predict_normalized(fit_normalized(_random_dataset(200, 4, seed=8), SPEC), _matrix_of(4))
    assert np.allclose(fitted.values.sum(axis=1), 1.0)
    print("✅ Normalized predictions passed")


def test_top_k_reduces_to_top_label_and_confidence():
    """K=1 label variant equals top-label HB; K=1 confidence variant equals confidence HB"""
    data = _random_dataset(300, 4, seed=9)
    matrix = _matrix_of(4)

    label = predict_top_k(fit_top_k(data, 1, "label", SPEC), matrix)
    assert np.array_equal(label.rank_prob[0], predict_top_label(fit_top_label(data, SPEC), matrix).top_prob)

    pooled = predict_top_k(fit_top_k(data, 1, "confidence", SPEC), matrix)
    assert np.array_equal(pooled.rank_prob[0], predict_confidence(fit_confidence(data, SPEC), matrix).top_prob)
    print("✅ Top-K reductions passed")


def test_top_k_grid_with_identity_fallback():
    """K=L on identical rows leaves six empty (rank, class) cells"""
    data = make_dataset([[0.6, 0.3, 0.1]] * 12, [0] * 6 + [1] * 4 + [2] * 2)
    model = fit_top_k(data, 3, "label", SPEC)
    assert len(model.per_rank) == 3 and all(len(row) == 3 for row in model.per_rank)
    assert isinstance(model.per_rank[0][1], IdentityModel)
    assert len(model.warnings) == 6

    preds = predict_top_k(model, data.scores)
    assert np.allclose(preds.rank_prob[:, 0], [0.5, 4 / 12, 2 / 12])
    assert preds.rank_class[:, 0].tolist() == [0, 1, 2]

    with pytest.raises(KOutOfRange):
        fit_top_k(data, 4, "label", SPEC)
    with pytest.raises(InvalidHyperparameters):
        fit_top_k(data, 2, "rank", SPEC)
    print("✅ Top-K grid passed")


def test_fit_m2b_dispatch():
    data = _random_dataset(150, 3, seed=10)
    matrix = _matrix_of(3)
    assert isinstance(fit_m2b(M2BNotionSpec("top_label"), data, SPEC), TopLabelModel)
    assert isinstance(fit_m2b(M2BNotionSpec("confidence"), data, SPEC), ConfidenceModel)

    class_wise = fit_m2b(M2BNotionSpec("class_wise"), data, SPEC)
    assert type(class_wise) is ClassWiseModel
    assert np.array_equal(predict_m2b(class_wise, matrix), predict_class_wise(fit_class_wise(data, SPEC), matrix))

    top_two = fit_m2b(M2BNotionSpec("top_k_label", K=2), data, SPEC)
    assert isinstance(top_two, TopKModel) and top_two.K == 2 and top_two.variant == "label"
    expected = predict_top_k(fit_top_k(data, 2, "label", SPEC), matrix)
    assert np.array_equal(predict_m2b(top_two, matrix).rank_prob, expected.rank_prob)

    with pytest.raises(KOutOfRange):
        M2BNotionSpec("top_k_confidence")
    with pytest.raises(InvalidHyperparameters):
        M2BNotionSpec("canonical")
    with pytest.raises(UnsupportedPredictor):
        predict_m2b(object(), matrix)
    print("✅ M2B dispatch passed")


def test_wrapper_errors():
    with pytest.raises(EmptyInput):
        fit_top_label(empty_dataset(3), SPEC)
    with pytest.raises(EmptyInput):
        fit_class_wise(empty_dataset(3), SPEC)

    model = fit_top_label(_random_dataset(60, 3, seed=11), SPEC)
    with pytest.raises(ClassCountMismatch):
        predict_top_label(model, _matrix_of(2))
    with pytest.raises(InvalidHyperparameters):
        fit_class_wise(_random_dataset(60, 3, seed=11), SPEC, points_per_bin_by_class=[10, 10])
    print("✅ Wrapper errors passed")


if __name__ == "__main__":
    test_top_label_hand_partition()
    test_top_label_keeps_argmax_and_accuracy()
    test_top_label_routes_then_maps()
    test_top_label_all_correct_and_rare_classes()
    test_pooling_hides_stratum_gap()
    test_confidence_bins_are_pooled()
    test_class_wise_fits()
    test_class_wise_rows_need_not_sum_to_one()
    test_normalized_predictions()
    test_top_k_reduces_to_top_label_and_confidence()
    test_top_k_grid_with_identity_fallback()
    test_fit_m2b_dispatch()
    test_wrapper_errors()
