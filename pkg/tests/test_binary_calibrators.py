#!/usr/bin/env python3
"""
Test uniform-mass histogram binning and the identity calibrator
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))
from binary_calibrators import (
    BinaryCalibratorSpec,
    fit_binary,
    fit_binary_hb,
    fit_identity,
    perturbed_bin_probabilities,
    predict_binary_hb,
)
from utils import BinsExceedPoints, EmptyInput, InvalidHyperparameters

NINE_SCORES = np.linspace(0.1, 0.9, 9)
NINE_LABELS = np.array([0, 0, 1, 0, 1, 1, 1, 1, 1])


def test_fixed_bins_hand_partition():
    """Nine sorted points in three bins give the mean label of each third"""
    model = fit_binary_hb(NINE_SCORES, NINE_LABELS, BinaryCalibratorSpec.fixed_bins(3, seed=0))
    assert model.B == 3
    assert np.allclose(model.bin_values, [1 / 3, 2 / 3, 1.0]), f"Unexpected bin values {model.bin_values}"
    assert model.bin_counts.tolist() == [3, 3, 3]
    assert predict_binary_hb(model, 0.15) == pytest.approx(1 / 3)
    assert predict_binary_hb(model, 0.0) == model.bin_values[0]
    assert predict_binary_hb(model, 1.0) == model.bin_values[-1]
    print("✅ Hand partition passed")


def test_fit_points_are_routed_to_their_bins():
    """Unperturbed fit scores land in the bin they were counted in"""
    model = fit_binary_hb(NINE_SCORES, NINE_LABELS, BinaryCalibratorSpec.fixed_bins(3, seed=5))
    assert model.bin_index(NINE_SCORES).tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    print("✅ Fit-point routing passed")


def test_points_per_bin_policy():
    """m=100 with k=50 gives two bins of 50; m < k falls back to one bin"""
    rng = np.random.default_rng(1)
    scores = rng.random(100)
    labels = (rng.random(100) < scores).astype(float)
    model = fit_binary_hb(scores, labels, BinaryCalibratorSpec.points_per_bin(50, seed=0))
    assert model.B == 2 and model.bin_counts.tolist() == [50, 50]

    single = fit_binary_hb(scores[:10], labels[:10], BinaryCalibratorSpec.points_per_bin(50, seed=0))
    assert single.B == 1
    assert single.predict(np.array([0.0, 0.5, 1.0])).tolist() == [labels[:10].mean()] * 3
    print("✅ Points-per-bin policy passed")


def test_all_ones_and_uniform_mass():
    """All-one labels give all-one bins; bin sizes differ by at most one"""
    rng = np.random.default_rng(2)
    scores = rng.random(103)
    model = fit_binary_hb(scores, np.ones(103), BinaryCalibratorSpec.fixed_bins(10, seed=3))
    assert np.all(model.bin_values == 1.0)
    assert model.bin_counts.max() - model.bin_counts.min() <= 1
    assert model.bin_counts.min() >= 103 // 10
    assert np.all(np.diff(model.upper_edges) > 0), "Edges must be strictly ascending"
    assert len(np.unique(model.predict(rng.random(1000)))) <= model.B
    print("✅ Uniform mass passed")


def test_calibrated_on_fit_set():
    """Bin values equal the label means of the fit rows in each bin"""
    rng = np.random.default_rng(4)
    scores = rng.random(500)
    labels = (rng.random(500) < scores ** 2).astype(float)
    model = fit_binary_hb(scores, labels, BinaryCalibratorSpec.points_per_bin(50, seed=9))
    bins = model.bin_index(scores)
    for b in range(model.B):
        in_bin = bins == b
        if in_bin.any():
            assert labels[in_bin].mean() == pytest.approx(model.bin_values[b], abs=1e-12)
    print("✅ Fit-set calibration passed")


def test_ties_are_split_across_bins():
    """Identical scores still fill bins of equal size thanks to the perturbation"""
    scores = np.full(40, 0.7)
    labels = np.r_[np.zeros(20), np.ones(20)]
    model = fit_binary_hb(scores, labels, BinaryCalibratorSpec.fixed_bins(4, seed=11))
    assert model.bin_counts.tolist() == [10, 10, 10, 10]
    print("✅ Tie splitting passed")


def test_reproducible_with_seed():
    """Same inputs and seed give a bit-identical model"""
    rng = np.random.default_rng(6)
    scores, labels = rng.random(300), rng.integers(0, 2, 300)
    spec = BinaryCalibratorSpec.points_per_bin(30, seed=42)
    first, second = fit_binary_hb(scores, labels, spec), fit_binary_hb(scores, labels, spec)
    assert np.array_equal(first.upper_edges, second.upper_edges)
    assert np.array_equal(first.bin_values, second.bin_values)
    print("✅ Reproducibility passed")


def test_errors_and_spec_validation():
    """Empty input, too many bins and bad hyperparameters are rejected"""
    with pytest.raises(EmptyInput):
        fit_binary_hb([], [], BinaryCalibratorSpec.fixed_bins(1))
    with pytest.raises(BinsExceedPoints):
        fit_binary_hb([0.1, 0.2], [0, 1], BinaryCalibratorSpec.fixed_bins(3))
    with pytest.raises(InvalidHyperparameters):
        BinaryCalibratorSpec.points_per_bin(1)
    with pytest.raises(InvalidHyperparameters):
        BinaryCalibratorSpec.fixed_bins(0)
    with pytest.raises(InvalidHyperparameters):
        BinaryCalibratorSpec.fixed_bins(3, delta=0.0)
    print("✅ Error handling passed")


def test_identity_calibrator():
    """Identity predicts its input"""
    model = fit_identity()
    assert model.predict(np.array([0.37, 0.0, 1.0])).tolist() == [0.37, 0.0, 1.0]
    assert model.n_bins == 0
    dispatched = fit_binary([0.2], [1], BinaryCalibratorSpec.identity())
    assert dispatched.predict(np.array([0.2]))[0] == 0.2
    print("✅ Identity calibrator passed")


def test_perturbed_bin_probabilities():
    """A tied score spreads over the bins its fit points were cut into"""
    scores = np.array([0.1] * 10 + [0.7] * 40 + [0.9] * 10)
    labels = np.arange(60) % 2
    model = fit_binary_hb(scores, labels, BinaryCalibratorSpec.fixed_bins(6, seed=5))
    probs = perturbed_bin_probabilities(model, [0.1, 0.4, 0.7, 0.95])

    assert probs.shape == (4, 6)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert np.all(probs >= 0.0)
    assert probs[2, 0] == 0.0 and np.all(probs[2, 1:5] > 0.0), f"0.7 routing {probs[2]}"
    assert np.array_equal(probs[1], np.eye(6)[1]), "0.4 lies strictly inside the second bin"
    assert np.array_equal(probs[3], np.eye(6)[5])

    # predict itself draws no noise: a tied score always lands in the lowest of its bins
    repeated = [model.predict(np.array([0.4, 0.7])) for _ in range(5)]
    assert all(np.array_equal(r, repeated[0]) for r in repeated)
    assert model.bin_index(np.array([0.7]))[0] == 1
    assert repeated[0][1] == model.bin_values[1]
    assert predict_binary_hb(model, 0.4) == model.bin_values[int(np.argmax(probs[1]))]
    print("✅ Perturbed bin probabilities passed")


if __name__ == "__main__":
    test_fixed_bins_hand_partition()
    test_fit_points_are_routed_to_their_bins()
    test_points_per_bin_policy()
    test_all_ones_and_uniform_mass()
    test_calibrated_on_fit_set()
    test_ties_are_split_across_bins()
    test_reproducible_with_seed()
    test_errors_and_spec_validation()
    test_identity_calibrator()
    test_perturbed_bin_probabilities()
