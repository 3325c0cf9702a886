#!/usr/bin/env python3
"""
Test simplex binning schemes and canonical calibration
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))
from canonical_binning import (
    SEEDED_RANDOM,
    GridScheme,
    SierpinskiScheme,
    build_scheme,
    default_directions,
    fit_canonical,
    fit_projection_hb,
    grid_assign,
    grid_bin_count,
    grid_index_set,
    predict_canonical,
    predict_canonical_matrix,
    recalibration_arrows,
    sierpinski_assign,
    sierpinski_bin_count,
    sierpinski_paths,
)
from core_data import make_dataset
from metrics import _canonical_deviation, validity_curve
from synthetic import random_distribution, sample
from utils import ClassCountMismatch, InvalidHyperparameters, NonUnitDirection, NotOnSimplex, TooFewPoints

RUN_SLOW = bool(os.environ.get("MCALIB_RUN_SLOW"))


def _simplex_points(n: int, L: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).dirichlet(np.ones(L), size=n)


def _labelled(n: int, L: int, seed: int):
    rng = np.random.default_rng(seed)
    scores = rng.dirichlet(np.ones(L), size=n)
    labels = np.array([rng.choice(L, p=row) for row in scores])
    return make_dataset(scores, labels)


def test_sierpinski_paths():
    """Descend while a coordinate exceeds one half"""
    assert sierpinski_assign([0.4, 0.3, 0.3], 3, 1) == (0,)
    assert sierpinski_assign([0.4, 0.3, 0.3], 3, 4) == (0,)
    assert sierpinski_assign([0.9, 0.05, 0.05], 3, 2) == (1, 1)
    assert sierpinski_assign([0.1, 0.7, 0.2], 3, 2) == (2, 0), "(0.2, 0.4, 0.4) has no coordinate above 0.5"
    assert sierpinski_assign([0.5, 0.5, 0.0], 3, 2) == (0,), "Exactly one half is not above one half"
    with pytest.raises(NotOnSimplex):
        sierpinski_assign([0.6, 0.6, 0.0], 3, 2)
    print("✅ Sierpinski paths passed")


def test_sierpinski_counts_match_enumeration():
    assert sierpinski_bin_count(3, 1) == 4
    assert sierpinski_bin_count(3, 2) == 13
    assert sierpinski_bin_count(3, 3) == 40
    for L, q in ((2, 1), (2, 4), (3, 2), (4, 2), (5, 3)):
        paths = sierpinski_paths(L, q)
        assert len(paths) == len(set(paths)) == sierpinski_bin_count(L, q), f"Count mismatch at L={L}, q={q}"

    scheme = SierpinskiScheme(3, 3)
    assigned = scheme.assign_matrix(_simplex_points(2000, 3, seed=1))
    assert assigned.min() >= 0 and assigned.max() < scheme.n_bins
    with pytest.raises(InvalidHyperparameters):
        sierpinski_bin_count(3, 0)
    print("✅ Sierpinski counts passed")


def test_grid_examples():
    assert grid_assign([1.0, 0.0, 0.0], 4) == (4, 1, 1)
    assert grid_assign([1 / 3, 1 / 3, 1 / 3], 3) == (1, 1, 2)
    assert grid_bin_count(3, 4) == 16
    assert grid_index_set(3, 3) == sorted(grid_index_set(3, 3)), "Index set must be lexicographic"
    with pytest.raises(NotOnSimplex):
        grid_assign([0.2, 0.2], 3)
    print("✅ Grid examples passed")


def test_grid_bins_exhaust_the_simplex():
    """Random points, vertices and grid nodes all find a bin"""
    for L in (3, 4, 5):
        points = _simplex_points(1000, L, seed=L)
        for K in range(2, 7):
            valid = set(grid_index_set(L, K))
            for s in points:
                assert grid_assign(s, K) in valid
            for vertex in np.eye(L):
                assert grid_assign(vertex, K) in valid
            node = np.zeros(L)
            node[0], node[1] = 1 / K, 1 - 1 / K
            assert grid_assign(node, K) in valid
    print("✅ Grid exhaustiveness passed")


@pytest.mark.slow
@pytest.mark.skipif(not RUN_SLOW, reason="set MCALIB_RUN_SLOW=1 for large simplex samples")
@pytest.mark.parametrize("L", [3, 4, 5])
def test_grid_bins_exhaust_a_large_sample(L):
    """10^5 Dirichlet points per dimension, every K from 2 to 6"""
    points = _simplex_points(100_000, L, seed=100 + L)
    for K in range(2, 7):
        scheme = GridScheme(L, K)
        assigned = scheme.assign_matrix(points)
        assert assigned.min() >= 0 and assigned.max() < scheme.n_bins
    print(f"✅ Large-sample grid exhaustiveness at L={L} passed")


def test_grid_bins_are_all_reachable():
    """Every index tuple owns a region of the simplex"""
    for L, K in ((3, 3), (3, 4)):
        scheme = GridScheme(L, K)
        hit = set(scheme.assign_matrix(_simplex_points(20000, L, seed=K)).tolist())
        assert hit == set(range(scheme.n_bins)), f"Unreached grid bins at L={L}, K={K}"
    assert GridScheme(3, 3).n_bins == 9
    print("✅ Grid reachability passed")


def test_projection_binning_quota():
    """n=9, B=3: c=3, two boundary points, at least c-1 interior points per bin"""
    points = _simplex_points(9, 3, seed=4)
    scheme = fit_projection_hb(points, 3)
    assert scheme.c == 3 and scheme.thresholds.size == 2
    boundary = scheme.on_boundary(points)
    assert boundary.sum() == 2

    interior = np.bincount(scheme.assign_matrix(points[~boundary]), minlength=3)
    assert np.all(interior >= 2), f"Interior counts {interior}"
    assert interior[2] == 3, "The residual bin keeps the three points never removed"

    big = _simplex_points(1000, 4, seed=5)
    wide = fit_projection_hb(big, 8)
    inside = wide.assign_matrix(big[~wide.on_boundary(big)])
    assert np.bincount(inside, minlength=8).min() >= (1000 + 1) // 8 - 1
    print("✅ Projection quota passed")


@pytest.mark.parametrize("B", [3, 10])
@pytest.mark.parametrize("n", [9, 100, 1000])
def test_projection_quota_across_sizes(n, B):
    """B-1 boundary points; the first B-1 bins keep exactly c-1 interior points, the residual at least c-1"""
    points = _simplex_points(n, 3, seed=n + B)
    if n < B:
        with pytest.raises(TooFewPoints):
            fit_projection_hb(points, B)
        return
    scheme = fit_projection_hb(points, B)
    c = (n + 1) // B
    assert scheme.c == c and scheme.thresholds.size == B - 1
    boundary = scheme.on_boundary(points)
    assert boundary.sum() == B - 1

    interior = np.bincount(scheme.assign_matrix(points[~boundary]), minlength=B)
    assert np.all(interior[:-1] == c - 1), f"Interior counts {interior} at n={n}, B={B}"
    assert interior[-1] == n - (B - 1) * c >= c - 1
    print(f"✅ Projection quota at n={n}, B={B} passed")


def test_projection_binning_edges():
    points = _simplex_points(9, 3, seed=6)
    single = fit_projection_hb(points, 1)
    assert single.thresholds.size == 0 and np.all(single.assign_matrix(points) == 0)

    with pytest.raises(TooFewPoints):
        fit_projection_hb(points[:2], 3)
    with pytest.raises(TooFewPoints):
        fit_projection_hb(np.tile([0.5, 0.3, 0.2], (9, 1)), 3)
    with pytest.raises(NonUnitDirection):
        fit_projection_hb(points, 3, q_vectors=np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]))

    custom = np.eye(3)[[0, 1, 2, 0]]
    truncated = fit_projection_hb(points, 3, q_vectors=custom)
    assert truncated.q_vectors.shape == (3, 3)
    assert len(truncated.warnings) == 1 and "Ignoring 2 of 4 directions" in truncated.warnings[0]

    exact = fit_projection_hb(points, 3, q_vectors=np.eye(3)[[0, 1]])
    assert exact.warnings == ()
    assert fit_projection_hb(points, 3, q_vectors=np.eye(3)).warnings[0].startswith("Ignoring 1 of 3")
    assert fit_projection_hb(points, 3).warnings == ()

    labels = np.arange(9) % 3
    model = fit_canonical(truncated, make_dataset(points, labels))
    assert truncated.warnings[0] in model.warnings
    print("✅ Projection edge cases passed")


def test_default_directions():
    cycle = default_directions(3, 5)
    assert np.array_equal(cycle, -np.eye(3)[[0, 1, 2, 0, 1]])

    random = default_directions(4, 6, SEEDED_RANDOM, seed=3)
    assert np.allclose(np.linalg.norm(random, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(random, default_directions(4, 6, SEEDED_RANDOM, seed=3))
    with pytest.raises(InvalidHyperparameters):
        default_directions(3, 2, "spiral")
    print("✅ Default directions passed")


def test_fit_canonical_counts():
    """pi_hat rows are bin label frequencies; empty bins are uniform"""
    scheme = SierpinskiScheme(2, 1)
    model = fit_canonical(scheme, make_dataset([[0.9, 0.1]] * 3, [0, 0, 1]))
    bin_of = scheme.assign([0.9, 0.1])
    assert np.allclose(model.pi_hat[bin_of], [2 / 3, 1 / 3])
    assert model.bin_counts[bin_of] == 3
    others = [b for b in range(scheme.n_bins) if b != bin_of]
    assert np.allclose(model.pi_hat[others], 0.5)
    assert len(model.warnings) == 1

    grid = fit_canonical(GridScheme(4, 2), make_dataset([[0.7, 0.1, 0.1, 0.1]] * 5, [0] * 5))
    filled = grid.bin_counts > 0
    assert np.allclose(grid.pi_hat[filled], [1.0, 0.0, 0.0, 0.0])
    assert np.allclose(grid.pi_hat[~filled], 0.25)

    with pytest.raises(ClassCountMismatch):
        fit_canonical(SierpinskiScheme(3, 2), make_dataset([[0.9, 0.1]], [0]))
    print("✅ fit_canonical counts passed")


def test_canonical_model_is_calibrated_on_its_fit_set():
    """Every bin's mean label equals its prediction, so l1 validity at 0 is 1"""
    data = _labelled(800, 3, seed=7)
    for scheme in (SierpinskiScheme(3, 2), GridScheme(3, 4)):
        model = fit_canonical(scheme, data)
        assert np.allclose(model.pi_hat.sum(axis=1), 1.0, atol=1e-12)
        preds = predict_canonical_matrix(model, data.scores)
        curve = validity_curve(preds.values, data.labels, grouping="canonical",
                               groups=scheme.assign_matrix(data.scores.values))
        assert curve.values[0] == 1.0, f"{scheme.kind} is not calibrated on its fit set"
    print("✅ Fit-set canonical calibration passed")


def test_exact_canonical_deviation_per_bin():
    """On a finite population the per-bin l1 error is ||pi_hat[b] - P(Y | bin b)||_1 and concentrates"""
    dist = random_distribution(3, 40, seed=12)
    L, n, failure = dist.n_classes, 20000, 1e-6
    for scheme in (GridScheme(3, 3), SierpinskiScheme(3, 2)):
        model = fit_canonical(scheme, sample(dist, n, seed=13))
        atom_bins = scheme.assign_matrix(dist.score_map)
        occupied = np.unique(atom_bins)
        truth = np.array([dist.p_x[atom_bins == b] @ dist.cond[atom_bins == b] / dist.p_x[atom_bins == b].sum()
                          for b in occupied])
        closed_form = np.abs(model.pi_hat[occupied] - truth).sum(axis=1)

        rows = np.repeat(np.arange(dist.n_atoms), L)
        labels = np.tile(np.arange(L), dist.n_atoms)
        weights = dist.p_x[rows] * dist.cond[rows, labels]
        mass, deviation = _canonical_deviation(model.pi_hat[atom_bins[rows]], labels, atom_bins[rows], weights)
        assert np.allclose(deviation, closed_form, atol=1e-12), f"{scheme.kind}: {deviation} vs {closed_form}"
        assert mass.sum() == pytest.approx(1.0)

        # l1 concentration of an L-category empirical distribution, union over bins
        counts = model.bin_counts[occupied]
        seen = counts > 0
        bound = np.sqrt(2.0 * (np.log(2.0 ** L - 2.0) + np.log(scheme.n_bins / failure)) / counts[seen])
        assert np.all(closed_form[seen] <= bound), f"{scheme.kind}: {closed_form[seen]} above {bound}"
    print("✅ Exact canonical deviation passed")


def test_predict_canonical_and_arrows():
    data = _labelled(500, 3, seed=8)
    scheme = build_scheme("projection", 3, data.scores)
    assert scheme.n_bins == 10
    model = fit_canonical(scheme, data)

    first, second = data.scores.values[0], data.scores.values[1]
    if scheme.assign(first) == scheme.assign(second):
        assert np.array_equal(predict_canonical(model, first), predict_canonical(model, second))
    assert np.array_equal(predict_canonical(model, first), model.pi_hat[scheme.assign(first)])
    with pytest.raises(NotOnSimplex):
        predict_canonical(model, [0.5, 0.6, 0.1])

    arrows = recalibration_arrows(model, data)
    assert sum(a["count"] for a in arrows) == data.n_rows
    assert all(a["l1_length"] >= 0 for a in arrows)
    assert set(arrows[0]) == {"bin", "bin_label", "count", "mean_prediction", "pi_hat", "l1_length"}

    assert build_scheme("sierpinski", 3).n_bins == 13
    assert build_scheme("grid", 3).n_bins == 16
    with pytest.raises(InvalidHyperparameters):
        build_scheme("projection", 3)
    with pytest.raises(InvalidHyperparameters):
        build_scheme("hexagonal", 3)
    print("✅ Prediction and arrows passed")


if __name__ == "__main__":
    test_sierpinski_paths()
    test_sierpinski_counts_match_enumeration()
    test_grid_examples()
    test_grid_bins_exhaust_the_simplex()
    if RUN_SLOW:
        for L in (3, 4, 5):
            test_grid_bins_exhaust_a_large_sample(L)
    test_grid_bins_are_all_reachable()
    test_projection_binning_quota()
    for n in (9, 100, 1000):
        for B in (3, 10):
            test_projection_quota_across_sizes(n, B)
    test_projection_binning_edges()
    test_default_directions()
    test_fit_canonical_counts()
    test_canonical_model_is_calibrated_on_its_fit_set()
    test_exact_canonical_deviation_per_bin()
    test_predict_canonical_and_arrows()
