#!/usr/bin/env python3
"""
Finite-support distributions and the coverage harness

A DiscreteDistribution lists its atoms with P(X = x), the true label
distribution P(Y = . | X = x) and the base model output g(x). Because the
support is finite, calibration errors of any fitted predictor can be computed
exactly, which is what the coverage experiment relies on: sample a
calibration set, fit histogram binning, and check the exact deviations
against the closed-form epsilons.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax
from tqdm import tqdm

from binary_calibrators import (
    BinaryCalibratorSpec,
    BinaryHBModel,
    default_delta,
    default_points_per_bin,
    perturbed_bin_probabilities,
)
from bounds import eps_conditional, eps_marginal, expected_ece_bound
from core_data import Dataset, ProbMatrix, top_label
from m2b_wrappers import CLASS_WISE, TOP_LABEL, fit_class_wise, fit_top_label
from utils import InvalidHyperparameters, default_seed, mix_seed

SIMPLEX_TOL = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """
    Joint distribution of (X, Y) over finitely many atoms.

    Attributes:
        support: Atom names
        p_x: P(X = x) per atom
        cond: atoms x L, row x is P(Y = . | X = x)
        score_map: atoms x L, row x is the base model output g(x)
    """

    support: Tuple[str, ...]
    p_x: np.ndarray
    cond: np.ndarray
    score_map: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(str(s) for s in self.support))
        for name in ("p_x", "cond", "score_map"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        atoms = len(self.support)
        if self.p_x.shape != (atoms,):
            raise InvalidHyperparameters(f"p_x must have {atoms} entries, got shape {self.p_x.shape}")
        if self.cond.ndim != 2 or self.cond.shape[0] != atoms or self.cond.shape[1] < 2:
            raise InvalidHyperparameters(f"cond must be {atoms} x L with L >= 2, got {self.cond.shape}")
        if self.score_map.shape != self.cond.shape:
            raise InvalidHyperparameters(
                f"score_map shape {self.score_map.shape} does not match cond shape {self.cond.shape}"
            )
        if self.p_x.min() < 0 or abs(self.p_x.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidHyperparameters("p_x must be non-negative and sum to 1")
        for name in ("cond", "score_map"):
            rows = getattr(self, name)
            if rows.min() < 0 or np.any(np.abs(rows.sum(axis=1) - 1.0) > SIMPLEX_TOL):
                raise InvalidHyperparameters(f"Every {name} row must lie on the simplex")

    @property
    def n_atoms(self) -> int:
        return len(self.support)

    @property
    def n_classes(self) -> int:
        return self.cond.shape[1]

    @property
    def scores(self) -> ProbMatrix:
        return ProbMatrix(self.score_map)


def example1_distribution() -> DiscreteDistribution:
    """
    Two atoms where confidence calibration holds but top-label calibration fails.

    Both atoms report h = 0.6, for classes 1 and 2 respectively. Class 1 is
    right 20% of the time on atom a and class 2 always on atom b, so the
    pooled hit rate at 0.6 is exactly 0.6 while each class is off by 0.4.
    Atom a's remaining mass goes to class 3.
    """
    return DiscreteDistribution(
        support=("a", "b"),
        p_x=np.array([0.5, 0.5]),
        cond=np.array([[0.2, 0.0, 0.8], [0.0, 1.0, 0.0]]),
        score_map=np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2]]),
    )


def random_distribution(L: int, atoms: int, seed: Optional[int] = None, sharpness: float = 3.0,
                        miscalibration: float = 0.5, degenerate: bool = False) -> DiscreteDistribution:
    """
    Seeded random finite distribution.

    score_map rows are softmax(sharpness * z) with standard normal z, so
    sharpness 0 gives uniform rows. cond mixes score_map with an independent
    Dirichlet(1) row using weight miscalibration (0 means g is perfectly
    calibrated). degenerate gives every atom the same score row.

    Args:
        L: Number of classes
        atoms: Number of atoms
        seed: Seed (default MCALIB_SEED)
        sharpness: Inverse temperature of the base model's scores
        miscalibration: Weight in [0, 1] on the random cond component
        degenerate: All atoms share one score row

    Returns:
        DiscreteDistribution
    """
    if L < 2 or atoms < 1:
        raise InvalidHyperparameters(f"Need L >= 2 and atoms >= 1, got L={L}, atoms={atoms}")
    if not 0.0 <= miscalibration <= 1.0:
        raise InvalidHyperparameters(f"miscalibration must lie in [0, 1], got {miscalibration}")
    if sharpness < 0:
        raise InvalidHyperparameters(f"sharpness must be >= 0, got {sharpness}")
    rng = np.random.default_rng(default_seed() if seed is None else seed)

    p_x = rng.dirichlet(np.ones(atoms))
    p_x = p_x / p_x.sum()

    z = rng.standard_normal((atoms, L))
    if degenerate:
        z = np.repeat(z[:1], atoms, axis=0)
    score_map = softmax(sharpness * z, axis=1)

    noise = rng.dirichlet(np.ones(L), size=atoms)
    cond = (1.0 - miscalibration) * score_map + miscalibration * noise
    cond = cond / cond.sum(axis=1, keepdims=True)

    width = len(str(atoms - 1))
    support = tuple(f"x{i:0{width}d}" for i in range(atoms))
    return DiscreteDistribution(support, p_x, cond, score_map / score_map.sum(axis=1, keepdims=True))


def sample_atoms(dist: DiscreteDistribution, n: int, seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Atom indices and 0-based labels of n i.i.d. draws."""
    if n < 0:
        raise InvalidHyperparameters(f"Sample size must be >= 0, got {n}")
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    atoms = rng.choice(dist.n_atoms, size=n, p=dist.p_x)
    u = rng.random(n)
    cumulative = np.cumsum(dist.cond[atoms], axis=1)
    labels = np.minimum((u[:, None] >= cumulative).sum(axis=1), dist.n_classes - 1)
    return atoms, labels.astype(np.int64)


def sample(dist: DiscreteDistribution, n: int, seed: Optional[int] = None) -> Dataset:
    """n i.i.d. draws; each row's scores are the score_map row of its atom."""
    atoms, labels = sample_atoms(dist, n, seed)
    values = dist.score_map[atoms] if n else np.zeros((0, dist.n_classes))
    return Dataset(ProbMatrix(values), labels)


@dataclass(frozen=True, eq=False)
class CoverageReport:
    """
    Outcome of R independent fit-and-check replications.

    marginal_violation_mass[r] is the probability, under the distribution,
    that a test point lands in an output group whose deviation exceeds
    eps_marginal, given replication r's fitted model; its mean over r
    estimates the probability of the marginal event. conditional_violations[r]
    is whether any group with positive mass exceeded eps_conditional.
    deviations[r] holds the per-group deviations.
    """

    notion: str
    replications: int
    n: int
    k: int
    alpha: float
    delta: float
    seed: int
    eps_marginal: float
    eps_conditional: float
    marginal_violation_mass: np.ndarray
    conditional_violations: np.ndarray
    max_deviations: np.ndarray
    ece_values: np.ndarray
    deviations: Tuple[np.ndarray, ...] = field(repr=False, default=())
    precondition_failures: int = 0

    @property
    def marginal_violation_frequency(self) -> float:
        return float(np.mean(self.marginal_violation_mass))

    @property
    def conditional_violation_frequency(self) -> float:
        return float(np.mean(self.conditional_violations))

    @property
    def mean_ece(self) -> float:
        return float(np.mean(self.ece_values))

    @property
    def std_ece(self) -> float:
        return float(np.std(self.ece_values, ddof=1)) if self.replications > 1 else 0.0

    @property
    def expected_ece_bound(self) -> float:
        return expected_ece_bound(self.k, self.delta)

    @property
    def frequency_slack(self) -> float:
        """alpha + 3 binomial standard errors at R replications."""
        return self.alpha + 3.0 * np.sqrt(self.alpha * (1.0 - self.alpha) / self.replications)

    @property
    def ece_slack(self) -> float:
        """Expected-ECE bound plus 3 Monte-Carlo standard errors."""
        return self.expected_ece_bound + 3.0 * self.std_ece / np.sqrt(self.replications)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "notion": self.notion,
            "replications": self.replications,
            "n": self.n,
            "k": self.k,
            "alpha": self.alpha,
            "delta": self.delta,
            "seed": self.seed,
            "eps_marginal": self.eps_marginal,
            "eps_conditional": self.eps_conditional,
            "marginal_violation_frequency": self.marginal_violation_frequency,
            "conditional_violation_frequency": self.conditional_violation_frequency,
            "frequency_slack": self.frequency_slack,
            "mean_ece": self.mean_ece,
            "std_ece": self.std_ece,
            "expected_ece_bound": self.expected_ece_bound,
            "ece_slack": self.ece_slack,
            "max_deviation_max": float(np.max(self.max_deviations)),
            "precondition_failures": self.precondition_failures,
        }


def _routing(calibrator, scores: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per atom, the probability of landing in each output group, and each group's value."""
    if isinstance(calibrator, BinaryHBModel):
        return perturbed_bin_probabilities(calibrator, scores), calibrator.bin_values
    # identity: every atom is its own group
    return np.eye(scores.size), np.asarray(scores, dtype=float)


def _group_deviations(p_x: np.ndarray, routing: np.ndarray, values: np.ndarray,
                      target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mass and exact |P(target | group) - value| of every group with positive mass."""
    mass = p_x @ routing
    hit_mass = (p_x * target) @ routing
    keep = mass > 0
    return mass[keep], np.abs(hit_mass[keep] / mass[keep] - values[keep])


def _top_label_replication(dist: DiscreteDistribution, data: Dataset, spec: BinaryCalibratorSpec,
                           k: int, predicted: np.ndarray):
    model = fit_top_label(data, spec)
    decomposition = top_label(dist.scores)
    masses, deviations = [], []
    for l, calibrator in enumerate(model.per_class):
        atoms = decomposition.top_class == l
        if not atoms.any():
            continue
        routing, values = _routing(calibrator, decomposition.top_prob[atoms])
        mass, deviation = _group_deviations(dist.p_x[atoms], routing, values, dist.cond[atoms, l])
        masses.append(mass)
        deviations.append(deviation)
    mass, deviation = np.concatenate(masses), np.concatenate(deviations)
    counts = np.bincount(top_label(data.scores).top_class, minlength=dist.n_classes)
    failed = bool(np.any(counts[predicted] < k))
    return mass, deviation, float(np.dot(mass, deviation)), failed


def _class_wise_replication(dist: DiscreteDistribution, data: Dataset, spec: BinaryCalibratorSpec,
                            k: int, predicted: np.ndarray):
    model = fit_class_wise(data, spec)
    masses, deviations, per_class_ece = [], [], []
    for l, calibrator in enumerate(model.per_class):
        routing, values = _routing(calibrator, dist.score_map[:, l])
        mass, deviation = _group_deviations(dist.p_x, routing, values, dist.cond[:, l])
        masses.append(mass)
        deviations.append(deviation)
        per_class_ece.append(float(np.dot(mass, deviation)))
    return np.concatenate(masses), np.concatenate(deviations), float(np.mean(per_class_ece)), data.n_rows < k


def coverage_experiment(dist: DiscreteDistribution, notion: str = TOP_LABEL, n: int = 5000,
                        k: Optional[int] = None, delta: Optional[float] = None, alpha: float = 0.1,
                        R: int = 100, seed: Optional[int] = None, progress: bool = False) -> CoverageReport:
    """
    Monte-Carlo check of the histogram-binning guarantees.

    Replication r samples n points with seed mix(seed, r, 0), fits the
    wrapper with seed mix(seed, r, 1) and computes the exact deviation of
    every output group (class and bin) for the randomized predictor that adds a
    fresh Uniform(0, delta) draw to each score, so atoms whose tied points straddle a bin edge are
    spread over those bins. For top_label the epsilons are those of the
    top-label guarantee; for class_wise each class gets alpha / L and the
    violating masses of the classes are added (union bound). Replications
    where some class predicted by g on the support has fewer than k
    calibration rows are counted in precondition_failures but kept.

    Args:
        dist: Ground-truth distribution
        notion: 'top_label' or 'class_wise'
        n: Calibration set size per replication
        k: Points per bin
        delta: Tie-break perturbation bound
        alpha: Failure probability
        R: Replications
        seed: Master seed (default MCALIB_SEED)
        progress: Show a tqdm progress bar

    Returns:
        CoverageReport
    """
    k = default_points_per_bin() if k is None else k
    delta = default_delta() if delta is None else delta
    if notion not in (TOP_LABEL, CLASS_WISE):
        raise InvalidHyperparameters(f"Coverage experiments support top_label and class_wise, got {notion!r}")
    if R < 1:
        raise InvalidHyperparameters(f"Need at least one replication, got R={R}")
    if n < 1:
        raise InvalidHyperparameters(f"Calibration size must be >= 1, got n={n}")
    seed = default_seed() if seed is None else seed

    alpha_cell = alpha if notion == TOP_LABEL else alpha / dist.n_classes
    eps1 = eps_marginal(k, alpha_cell, delta)
    eps2 = eps_conditional(k, n, alpha_cell, delta)
    replicate = _top_label_replication if notion == TOP_LABEL else _class_wise_replication

    predicted = np.unique(top_label(dist.scores).top_class[dist.p_x > 0])

    masses: List[float] = []
    violations: List[bool] = []
    max_devs: List[float] = []
    eces: List[float] = []
    deviations: List[np.ndarray] = []
    failures = 0
    for r in tqdm(range(R), desc="Replications", unit="rep", disable=not progress):
        data = sample(dist, n, mix_seed(seed, r, 0))
        spec = BinaryCalibratorSpec.points_per_bin(k, delta, seed=mix_seed(seed, r, 1))
        mass, deviation, ece, failed = replicate(dist, data, spec, k, predicted)
        masses.append(min(1.0, float(mass[deviation > eps1].sum())))
        worst = float(deviation.max())
        max_devs.append(worst)
        violations.append(worst > eps2)
        eces.append(ece)
        deviations.append(deviation)
        failures += int(failed)

    if failures:
        logging.warning(f"{failures} of {R} replications had a class with fewer than k={k} calibration rows")
    report = CoverageReport(
        notion=notion, replications=R, n=n, k=k, alpha=alpha, delta=delta, seed=seed,
        eps_marginal=eps1, eps_conditional=eps2,
        marginal_violation_mass=np.array(masses),
        conditional_violations=np.array(violations, dtype=bool),
        max_deviations=np.array(max_devs),
        ece_values=np.array(eces),
        deviations=tuple(deviations),
        precondition_failures=failures,
    )
    logging.info(
        f"Coverage ({notion}): R={R}, n={n}, k={k}, conditional violations "
        f"{report.conditional_violation_frequency:.3f}, mean ECE {report.mean_ece:.4f}"
    )
    return report
