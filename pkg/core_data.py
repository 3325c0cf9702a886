#!/usr/bin/env python3
"""
Core data types for multiclass calibration

Prediction matrices, label vectors, datasets and the top-label / top-K
decompositions every calibrator and metric works on. Class indices are
0-based here and 1-based in anything a person reads.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import softmax

from utils import (
    ClassCountMismatch,
    EmptyInput,
    KOutOfRange,
    LabelOutOfRange,
    NonFinite,
    NonRectangular,
    OutOfRange,
    RowSumZero,
)

ROW_SUM_TOL = 1e-6
NEGATIVE_DUST = 1e-6
ZERO_ROW_SUM = 1e-12

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _as_2d(matrix: ArrayLike, what: str) -> np.ndarray:
    try:
        arr = np.asarray(matrix, dtype=float)
    except (ValueError, TypeError) as e:
        raise NonRectangular(f"{what} is not a rectangular numeric matrix: {e}")
    if arr.ndim != 2:
        raise NonRectangular(f"{what} must be 2-dimensional (rows x classes), got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise NonRectangular(f"{what} needs at least 2 classes, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True)
class ProbMatrix:
    """n x L matrix of predicted class probabilities, rows on the simplex."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise NonRectangular(f"ProbMatrix needs shape (n, L) with L >= 2, got {arr.shape}")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_rows


@dataclass(frozen=True)
class TopLabelDecomposition:
    """Per-row predicted class c(X) and its probability h(X)."""

    top_class: np.ndarray
    top_prob: np.ndarray

    def __post_init__(self):
        top_class = np.asarray(self.top_class, dtype=np.int64).ravel()
        top_prob = np.asarray(self.top_prob, dtype=float).ravel()
        if top_class.shape != top_prob.shape:
            raise NonRectangular(
                f"top_class has {top_class.size} rows but top_prob has {top_prob.size}"
            )
        object.__setattr__(self, "top_class", _frozen(top_class))
        object.__setattr__(self, "top_prob", _frozen(top_prob))

    def __len__(self) -> int:
        return self.top_class.size


@dataclass(frozen=True)
class TopKDecomposition:
    """The K highest classes per row; arrays are indexed [rank][row]."""

    rank_class: np.ndarray
    rank_prob: np.ndarray

    def __post_init__(self):
        rank_class = np.asarray(self.rank_class, dtype=np.int64)
        rank_prob = np.asarray(self.rank_prob, dtype=float)
        if rank_class.ndim != 2 or rank_class.shape != rank_prob.shape:
            raise NonRectangular(
                f"rank_class {rank_class.shape} and rank_prob {rank_prob.shape} must be matching (K, n) arrays"
            )
        object.__setattr__(self, "rank_class", _frozen(rank_class))
        object.__setattr__(self, "rank_prob", _frozen(rank_prob))

    @property
    def K(self) -> int:
        return self.rank_class.shape[0]

    def __len__(self) -> int:
        return self.rank_class.shape[1]

    def rank(self, k: int) -> TopLabelDecomposition:
        """The (class, probability) pair at 0-based rank k."""
        return TopLabelDecomposition(self.rank_class[k], self.rank_prob[k])


@dataclass(frozen=True)
class Dataset:
    """Calibration or evaluation split: scores g(X_i) paired with labels Y_i."""

    scores: ProbMatrix
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise LabelOutOfRange("Labels must be integer class indices")
        labels = labels.astype(np.int64).ravel()
        if labels.size != self.scores.n_rows:
            raise NonRectangular(
                f"scores has {self.scores.n_rows} rows but labels has {labels.size} entries"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.scores.n_classes):
            bad = labels[(labels < 0) | (labels >= self.scores.n_classes)][0]
            raise LabelOutOfRange(
                f"Label {bad + 1} is outside classes 1..{self.scores.n_classes}"
            )
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n_rows(self) -> int:
        return self.scores.n_rows

    @property
    def n_classes(self) -> int:
        return self.scores.n_classes

    def __len__(self) -> int:
        return self.n_rows

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Rows selected by a boolean mask or index array."""
        return Dataset(ProbMatrix(self.scores.values[mask]), self.labels[mask])


def validate_and_normalize(matrix: ArrayLike, renormalize: bool = False) -> ProbMatrix:
    """
    Check a raw n x L matrix and return it as a ProbMatrix.

    Negative dust down to -1e-6 is clipped to zero. With renormalize on, each
    row is divided by its sum; otherwise rows must already sum to 1 within
    1e-6 and entries must lie in [0, 1] within the same tolerance.

    Args:
        matrix: Raw values, one row per example
        renormalize: Divide rows by their sums

    Returns:
        ProbMatrix: Validated matrix

    Raises:
        NonRectangular: Ragged or non 2-D input
        NonFinite: NaN or infinite entries
        OutOfRange: Entries outside [0, 1] (or rows not summing to 1) with renormalize off
        RowSumZero: A row sums to (almost) zero with renormalize on
    """
    arr = _as_2d(matrix, "Probability matrix")
    if not np.all(np.isfinite(arr)):
        row = int(np.where(~np.all(np.isfinite(arr), axis=1))[0][0])
        raise NonFinite(f"Row {row + 1} contains a non-finite entry")

    if arr.size and arr.min() < -NEGATIVE_DUST:
        row, col = np.unravel_index(int(np.argmin(arr)), arr.shape)
        raise OutOfRange(f"Entry ({row + 1}, class {col + 1}) = {arr[row, col]} is negative")
    arr = np.clip(arr, 0.0, None)

    if renormalize:
        sums = arr.sum(axis=1)
        if np.any(sums <= ZERO_ROW_SUM):
            row = int(np.where(sums <= ZERO_ROW_SUM)[0][0])
            raise RowSumZero(f"Row {row + 1} sums to {sums[row]}; cannot renormalize")
        arr = arr / sums[:, None]
    else:
        if arr.size and arr.max() > 1.0 + NEGATIVE_DUST:
            row, col = np.unravel_index(int(np.argmax(arr)), arr.shape)
            raise OutOfRange(f"Entry ({row + 1}, class {col + 1}) = {arr[row, col]} exceeds 1")
        sums = arr.sum(axis=1)
        off = np.abs(sums - 1.0) > ROW_SUM_TOL
        if np.any(off):
            row = int(np.where(off)[0][0])
            raise OutOfRange(
                f"Row {row + 1} sums to {sums[row]:.9f}; use renormalize to rescale rows"
            )
        arr = np.minimum(arr, 1.0)

    return ProbMatrix(arr)


def softmax_rows(logits: ArrayLike) -> ProbMatrix:
    """Row-wise softmax with max-subtraction (scipy handles the shift)."""
    arr = _as_2d(logits, "Logit matrix")
    if not np.all(np.isfinite(arr)):
        row = int(np.where(~np.all(np.isfinite(arr), axis=1))[0][0])
        raise NonFinite(f"Logit row {row + 1} contains a non-finite entry")
    if arr.shape[0] == 0:
        return ProbMatrix(arr)
    return ProbMatrix(softmax(arr, axis=1))


def top_label(matrix: ProbMatrix) -> TopLabelDecomposition:
    """Argmax class per row (ties go to the lowest index) and its probability."""
    values = matrix.values
    top_class = np.argmax(values, axis=1) if values.shape[0] else np.zeros(0, dtype=np.int64)
    top_prob = values[np.arange(values.shape[0]), top_class]
    return TopLabelDecomposition(top_class, top_prob)


def top_k(matrix: ProbMatrix, K: int) -> TopKDecomposition:
    """
    The K highest classes per row in descending probability.

    Ties are broken toward the lower class index, so top_k(M, 1) agrees
    with top_label(M).

    Raises:
        KOutOfRange: Unless 1 <= K <= L
    """
    L = matrix.n_classes
    if not isinstance(K, (int, np.integer)) or K < 1 or K > L:
        raise KOutOfRange(f"K must be between 1 and {L}, got {K}")
    values = matrix.values
    order = np.argsort(-values, axis=1, kind="stable")[:, :K]
    probs = np.take_along_axis(values, order, axis=1)
    return TopKDecomposition(order.T, probs.T)


def accuracy(top_class: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose predicted class equals the label."""
    top_class = np.asarray(top_class).ravel()
    labels = np.asarray(labels).ravel()
    if top_class.size == 0:
        raise EmptyInput("Cannot compute accuracy of zero rows")
    if top_class.size != labels.size:
        raise NonRectangular(f"{top_class.size} predictions but {labels.size} labels")
    return float(np.mean(top_class == labels))


def make_dataset(
    scores: ArrayLike, labels: Sequence[int], renormalize: bool = False
) -> Dataset:
    """Validate a raw score matrix and pair it with 0-based labels."""
    return Dataset(validate_and_normalize(scores, renormalize=renormalize), np.asarray(labels))


def empty_dataset(n_classes: int) -> Dataset:
    return Dataset(ProbMatrix(np.zeros((0, n_classes))), np.zeros(0, dtype=np.int64))


def require_classes(expected: int, matrix: ProbMatrix, what: Optional[str] = None) -> None:
    """Raise ClassCountMismatch unless the matrix has the expected class count."""
    if matrix.n_classes != expected:
        label = what or "model"
        raise ClassCountMismatch(
            f"The {label} was fitted with {expected} classes but the input has {matrix.n_classes}"
        )
