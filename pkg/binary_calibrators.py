#!/usr/bin/env python3
"""
Binary calibrators

Every multiclass wrapper reduces its notion to binary problems and hands each
one to a binary calibrator. Two are provided: uniform-mass histogram binning
and the identity map used as a null calibrator and as the fallback for
classes with no calibration rows.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from utils import (
    BinsExceedPoints,
    EmptyInput,
    InvalidHyperparameters,
    NonRectangular,
    default_seed,
    env_float,
    env_int,
)

HISTOGRAM_BINNING = "histogram_binning"
IDENTITY = "identity"
POINTS_PER_BIN = "points_per_bin"
FIXED_BINS = "fixed_bins"

# Built-in defaults; MCALIB_POINTS_PER_BIN and MCALIB_DELTA override them at call time
DEFAULT_POINTS_PER_BIN = 50
DEFAULT_DELTA = 1e-10


def default_points_per_bin() -> int:
    return env_int("MCALIB_POINTS_PER_BIN", DEFAULT_POINTS_PER_BIN)


def default_delta() -> float:
    return env_float("MCALIB_DELTA", DEFAULT_DELTA)


@dataclass(frozen=True)
class BinaryCalibratorSpec:
    """
    Which binary calibrator to run and how many bins it gets.

    bins_param is k (points per bin, B = max(1, floor(m/k))) under the
    points_per_bin policy, or B itself under fixed_bins.
    """

    kind: str = HISTOGRAM_BINNING
    bins_policy: str = POINTS_PER_BIN
    bins_param: int = field(default_factory=default_points_per_bin)
    delta: float = field(default_factory=default_delta)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (HISTOGRAM_BINNING, IDENTITY):
            raise InvalidHyperparameters(f"Unknown calibrator kind: {self.kind!r}")
        if self.bins_policy not in (POINTS_PER_BIN, FIXED_BINS):
            raise InvalidHyperparameters(f"Unknown bins policy: {self.bins_policy!r}")
        if int(self.bins_param) != self.bins_param:
            raise InvalidHyperparameters(f"bins_param must be an integer, got {self.bins_param}")
        if self.bins_policy == POINTS_PER_BIN and self.bins_param < 2:
            raise InvalidHyperparameters(f"Points per bin must be >= 2, got {self.bins_param}")
        if self.bins_policy == FIXED_BINS and self.bins_param < 1:
            raise InvalidHyperparameters(f"Number of bins must be >= 1, got {self.bins_param}")
        if not self.delta > 0:
            raise InvalidHyperparameters(f"Tie-break delta must be > 0, got {self.delta}")
        if self.seed < 0:
            raise InvalidHyperparameters(f"Seed must be non-negative, got {self.seed}")
        object.__setattr__(self, "bins_param", int(self.bins_param))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def points_per_bin(cls, k: Optional[int] = None, delta: Optional[float] = None,
                       seed: Optional[int] = None) -> "BinaryCalibratorSpec":
        return cls(HISTOGRAM_BINNING, POINTS_PER_BIN, default_points_per_bin() if k is None else k,
                   default_delta() if delta is None else delta, default_seed() if seed is None else seed)

    @classmethod
    def fixed_bins(cls, B: int, delta: Optional[float] = None, seed: Optional[int] = None) -> "BinaryCalibratorSpec":
        return cls(HISTOGRAM_BINNING, FIXED_BINS, B, default_delta() if delta is None else delta,
                   default_seed() if seed is None else seed)

    @classmethod
    def identity(cls, seed: Optional[int] = None) -> "BinaryCalibratorSpec":
        return cls(kind=IDENTITY, seed=default_seed() if seed is None else seed)

    def with_seed(self, seed: int) -> "BinaryCalibratorSpec":
        return replace(self, seed=seed)

    def with_points_per_bin(self, k: int) -> "BinaryCalibratorSpec":
        return replace(self, bins_policy=POINTS_PER_BIN, bins_param=k)

    def with_bins(self, B: int) -> "BinaryCalibratorSpec":
        return replace(self, bins_policy=FIXED_BINS, bins_param=B)

    def n_bins(self, m: int) -> int:
        """Bin count for a fit set of m points."""
        if self.bins_policy == POINTS_PER_BIN:
            return max(1, m // self.bins_param)
        return self.bins_param

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bins_policy": self.bins_policy,
            "bins_param": self.bins_param,
            "delta": self.delta,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class BinaryHBModel:
    """Fitted histogram-binning map: bin b covers (upper_edges[b-1], upper_edges[b]]."""

    B: int
    upper_edges: np.ndarray
    bin_values: np.ndarray
    bin_counts: np.ndarray
    delta: float
    seed: int

    kind = HISTOGRAM_BINNING

    def __post_init__(self):
        for name, dtype in (("upper_edges", float), ("bin_values", float), ("bin_counts", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.upper_edges.size != self.B - 1 or self.bin_values.size != self.B:
            raise NonRectangular(
                f"A {self.B}-bin model needs {self.B - 1} edges and {self.B} values, "
                f"got {self.upper_edges.size} and {self.bin_values.size}"
            )

    @property
    def n_bins(self) -> int:
        return self.B

    def bin_index(self, scores: np.ndarray) -> np.ndarray:
        """Bin of each score; a score equal to an edge falls in the lower bin."""
        return np.searchsorted(self.upper_edges, np.asarray(scores, dtype=float), side="left")

    def predict(self, scores: np.ndarray) -> np.ndarray:
        return self.bin_values[self.bin_index(scores)]


@dataclass(frozen=True)
class IdentityModel:
    """Null calibrator: predict(s) = s."""

    kind = IDENTITY

    @property
    def n_bins(self) -> int:
        return 0

    def predict(self, scores: np.ndarray) -> np.ndarray:
        return np.array(scores, dtype=float)


BinaryModel = Union[BinaryHBModel, IdentityModel]


def _as_fit_arrays(scores, binary_labels):
    scores = np.asarray(scores, dtype=float).ravel()
    binary_labels = np.asarray(binary_labels, dtype=float).ravel()
    if scores.size != binary_labels.size:
        raise NonRectangular(f"{scores.size} scores but {binary_labels.size} labels")
    return scores, binary_labels


def fit_binary_hb(scores, binary_labels, spec: BinaryCalibratorSpec) -> BinaryHBModel:
    """
    Fit uniform-mass histogram binning on one binary problem.

    Scores are perturbed once by seeded Uniform(0, delta) noise so that every
    bin boundary is unique, sorted, and cut at ranks round(j*m/B). Each bin
    therefore holds floor(m/B) or ceil(m/B) points, and its value is the mean
    label of those points.

    Args:
        scores: m probabilities g(X_i)
        binary_labels: m targets in {0, 1}
        spec: Bins policy, delta and seed

    Returns:
        BinaryHBModel: Fitted map

    Raises:
        EmptyInput: m == 0
        BinsExceedPoints: fixed_bins(B) with B > m
    """
    scores, binary_labels = _as_fit_arrays(scores, binary_labels)
    m = scores.size
    if m == 0:
        raise EmptyInput("Cannot fit histogram binning on zero points")

    B = spec.n_bins(m)
    if B > m:
        raise BinsExceedPoints(f"Requested {B} bins for only {m} points")

    rng = np.random.default_rng(spec.seed)
    perturbed = scores + rng.uniform(0.0, spec.delta, size=m)
    order = np.argsort(perturbed, kind="stable")
    sorted_perturbed = perturbed[order]

    cuts = np.floor(np.arange(1, B) * m / B + 0.5).astype(np.int64)
    upper_edges = sorted_perturbed[cuts - 1]

    rank_bin = np.zeros(m, dtype=np.int64)
    rank_bin[cuts] = 1
    rank_bin = np.cumsum(rank_bin)
    bin_counts = np.bincount(rank_bin, minlength=B)
    bin_sums = np.bincount(rank_bin, weights=binary_labels[order], minlength=B)
    bin_values = bin_sums / bin_counts

    return BinaryHBModel(
        B=B,
        upper_edges=upper_edges,
        bin_values=bin_values,
        bin_counts=bin_counts,
        delta=spec.delta,
        seed=spec.seed,
    )


def predict_binary_hb(model: BinaryHBModel, score: float) -> float:
    """Calibrated probability for a single score."""
    return float(model.predict(np.asarray([score]))[0])


def perturbed_bin_probabilities(model: BinaryHBModel, scores) -> np.ndarray:
    """
    Bin distribution of each score after adding Uniform(0, delta) noise.

    This is the randomized predictor the tie-break perturbation defines:
    a score shared by many fit points spreads over the bins those points
    were cut into. Used for exact coverage checks on finite supports.

    Returns:
        ndarray: len(scores) x B, rows summing to 1
    """
    scores = np.asarray(scores, dtype=float).ravel()
    lo, hi = scores[:, None], scores[:, None] + model.delta
    edges = np.concatenate([[-np.inf], model.upper_edges, [np.inf]])
    lower = np.clip(edges[None, :-1], lo, hi)
    upper = np.clip(edges[None, 1:], lo, hi)
    overlap = upper - lower
    total = overlap.sum(axis=1)

    probs = np.zeros((scores.size, model.B))
    ok = total > 0
    probs[ok] = overlap[ok] / total[ok, None]
    # delta below float resolution at this score: fall back to deterministic routing
    probs[np.flatnonzero(~ok), model.bin_index(scores[~ok])] = 1.0
    return probs


def fit_identity(scores=None, labels=None, spec: BinaryCalibratorSpec = None) -> IdentityModel:
    return IdentityModel()


def fit_binary(scores, binary_labels, spec: BinaryCalibratorSpec) -> BinaryModel:
    """Dispatch on spec.kind."""
    if spec.kind == IDENTITY:
        return fit_identity(scores, binary_labels, spec)
    model = fit_binary_hb(scores, binary_labels, spec)
    logging.debug(f"Fitted histogram binning: m={int(model.bin_counts.sum())}, B={model.B}")
    return model
