#!/usr/bin/env python3
"""
Test finite distributions, sampling and the coverage harness

Full-size coverage runs (R=100, n=5000) are slow; set MCALIB_RUN_SLOW=1 to
include them.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))
from core_data import top_label
from metrics import exact_metrics
from synthetic import (
    DiscreteDistribution,
    coverage_experiment,
    example1_distribution,
    random_distribution,
    sample,
)
from utils import InvalidHyperparameters

RUN_SLOW = bool(os.environ.get("MCALIB_RUN_SLOW"))


def test_example_population():
    """Both atoms report 0.6; the pooled hit rate is 0.5 * (0.2 + 1.0)"""
    dist = example1_distribution()
    decomposition = top_label(dist.scores)
    assert decomposition.top_class.tolist() == [0, 1]
    assert np.allclose(decomposition.top_prob, 0.6)
    hit_rate = np.dot(dist.p_x, dist.cond[[0, 1], decomposition.top_class])
    assert hit_rate == pytest.approx(0.6)
    print("✅ Example population passed")


def test_distribution_validation():
    with pytest.raises(InvalidHyperparameters):
        DiscreteDistribution(("a",), np.array([0.9]), np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))
    with pytest.raises(InvalidHyperparameters):
        DiscreteDistribution(("a",), np.array([1.0]), np.array([[0.5, 0.6]]), np.array([[0.5, 0.5]]))
    with pytest.raises(InvalidHyperparameters):
        DiscreteDistribution(("a",), np.array([1.0]), np.array([[0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]))
    print("✅ Distribution validation passed")


def test_random_distribution():
    first = random_distribution(4, 30, seed=3)
    second = random_distribution(4, 30, seed=3)
    for name in ("p_x", "cond", "score_map"):
        assert np.array_equal(getattr(first, name), getattr(second, name)), f"{name} differs for the same seed"
    assert np.all(np.abs(first.cond.sum(axis=1) - 1.0) < 1e-12)
    assert first.n_atoms == 30 and first.n_classes == 4 and first.support[0] == "x00"

    flat = random_distribution(3, 10, seed=1, sharpness=0.0)
    assert np.allclose(flat.score_map, 1 / 3)

    calibrated = random_distribution(3, 10, seed=1, miscalibration=0.0)
    assert np.allclose(calibrated.cond, calibrated.score_map)

    degenerate = random_distribution(3, 10, seed=2, degenerate=True)
    assert np.all(degenerate.score_map == degenerate.score_map[0])

    with pytest.raises(InvalidHyperparameters):
        random_distribution(1, 10)
    with pytest.raises(InvalidHyperparameters):
        random_distribution(3, 10, miscalibration=1.5)
    print("✅ Random distributions passed")


def test_sampling():
    dist = random_distribution(3, 5, seed=4)
    assert sample(dist, 0, seed=1).n_rows == 0

    first, second = sample(dist, 500, seed=9), sample(dist, 500, seed=9)
    assert np.array_equal(first.scores.values, second.scores.values)
    assert np.array_equal(first.labels, second.labels)

    n = 100_000
    data = sample(dist, n, seed=5)
    atom_of_row = np.array([np.flatnonzero(np.all(dist.score_map == row, axis=1))[0] for row in data.scores.values[:2000]])
    assert np.all(atom_of_row >= 0), "Every row must carry its atom's score vector"
    counts = np.array([np.sum(np.all(data.scores.values == row, axis=1)) for row in dist.score_map])
    sigma = np.sqrt(n * dist.p_x * (1 - dist.p_x))
    assert np.all(np.abs(counts - n * dist.p_x) <= 4 * sigma), f"Atom counts {counts} far from {n * dist.p_x}"

    label_share = np.bincount(data.labels, minlength=3) / n
    expected = dist.p_x @ dist.cond
    assert np.all(np.abs(label_share - expected) <= 4 * np.sqrt(expected * (1 - expected) / n))
    print("✅ Sampling passed")


def test_confidence_errors_never_exceed_top_label_errors():
    """Exact conf-ECE <= TL-ECE and conf-MCE <= TL-MCE on random populations"""
    for i in range(1000):
        dist = random_distribution(3, 5, seed=i, degenerate=(i % 4 == 0), sharpness=float(i % 5))
        result = exact_metrics(dist)
        assert result["conf_ece"] <= result["tl_ece"] + 1e-12, f"Instance {i}: {result}"
        assert result["conf_mce"] <= result["tl_mce"] + 1e-12, f"Instance {i}: {result}"
        assert 0.0 <= result["tl_ece"] <= result["tl_mce"] + 1e-12 <= 1.0 + 1e-12
    print("✅ Confidence versus top-label ordering passed")


def test_top_label_coverage_on_example_population():
    report = coverage_experiment(example1_distribution(), "top_label", n=2000, k=50, alpha=0.1, R=20, seed=0)
    assert report.replications == 20 and report.precondition_failures == 0
    assert report.conditional_violation_frequency <= report.frequency_slack
    assert report.marginal_violation_frequency <= report.frequency_slack
    assert report.mean_ece <= report.ece_slack, f"Mean TL-ECE {report.mean_ece} above {report.ece_slack}"
    assert report.eps_conditional > report.eps_marginal

    payload = report.to_dict()
    assert payload["notion"] == "top_label" and payload["replications"] == 20
    assert 0.0 <= payload["conditional_violation_frequency"] <= 1.0
    print(f"✅ Top-label coverage passed (mean TL-ECE {report.mean_ece:.4f})")


def test_class_wise_coverage():
    """Each class gets alpha / L; tied atoms are spread over the bins they straddle"""
    for dist in (example1_distribution(), random_distribution(3, 20, seed=6)):
        report = coverage_experiment(dist, "class_wise", n=2000, k=50, alpha=0.1, R=10, seed=1)
        assert report.conditional_violation_frequency <= report.frequency_slack
        assert report.marginal_violation_frequency <= report.frequency_slack
        assert report.mean_ece <= report.ece_slack
    print("✅ Class-wise coverage passed")


def test_coverage_is_deterministic():
    dist = random_distribution(3, 10, seed=7)
    first = coverage_experiment(dist, n=300, k=30, R=2, seed=11)
    second = coverage_experiment(dist, n=300, k=30, R=2, seed=11)
    assert np.array_equal(first.ece_values, second.ece_values)
    assert np.array_equal(first.max_deviations, second.max_deviations)
    assert first.std_ece >= 0.0

    with pytest.raises(InvalidHyperparameters):
        coverage_experiment(dist, "confidence", R=1)
    with pytest.raises(InvalidHyperparameters):
        coverage_experiment(dist, R=0)
    print("✅ Coverage determinism passed")


@pytest.mark.slow
@pytest.mark.skipif(not RUN_SLOW, reason="set MCALIB_RUN_SLOW=1 for full coverage runs")
def test_full_coverage_runs():
    for notion in ("top_label", "class_wise"):
        dist = random_distribution(4, 50, seed=21)
        report = coverage_experiment(dist, notion, n=5000, k=50, alpha=0.1, R=100, seed=0)
        assert report.conditional_violation_frequency <= report.frequency_slack, report.to_dict()
        assert report.mean_ece <= report.ece_slack, report.to_dict()
    print("✅ Full coverage runs passed")


def _balanced_distribution(L: int, atoms: int, seed: int) -> DiscreteDistribution:
    """Uniform atoms whose argmax cycles through the classes, so every class gets n / L rows on average"""
    base = random_distribution(L, atoms, seed=seed)
    score_map, cond = base.score_map.copy(), base.cond.copy()
    for i in range(atoms):
        top, target = int(np.argmax(score_map[i])), i % L
        score_map[i, [top, target]] = score_map[i, [target, top]]
        cond[i, [top, target]] = cond[i, [target, top]]
    return DiscreteDistribution(base.support, np.full(atoms, 1.0 / atoms), cond, score_map)


@pytest.mark.slow
@pytest.mark.skipif(not RUN_SLOW, reason="set MCALIB_RUN_SLOW=1 for full coverage runs")
@pytest.mark.parametrize("notion", ["top_label", "class_wise"])
@pytest.mark.parametrize("L", [3, 5, 10])
def test_coverage_across_class_counts(L, notion):
    """Violations stay within alpha up to Monte-Carlo error at n=2000, k=50"""
    dist = _balanced_distribution(L, 50, seed=30 + L)
    report = coverage_experiment(dist, notion, n=2000, k=50, delta=1e-10, alpha=0.1, R=100, seed=L)
    assert report.precondition_failures == 0
    assert report.conditional_violation_frequency <= report.frequency_slack, report.to_dict()
    assert report.marginal_violation_frequency <= report.frequency_slack, report.to_dict()
    assert report.mean_ece <= report.ece_slack, report.to_dict()
    print(f"✅ Coverage at L={L} ({notion}) passed")


if __name__ == "__main__":
    test_example_population()
    test_distribution_validation()
    test_random_distribution()
    test_sampling()
    test_confidence_errors_never_exceed_top_label_errors()
    test_top_label_coverage_on_example_population()
    test_class_wise_coverage()
    test_coverage_is_deterministic()
    if RUN_SLOW:
        test_full_coverage_runs()
        for L in (3, 5, 10):
            for notion in ("top_label", "class_wise"):
                test_coverage_across_class_counts(L, notion)
