#!/usr/bin/env python3
"""
Simplex binning for canonical calibration

Three ways to partition the probability simplex into bins: Sierpinski
(recursive halving toward a vertex), grid-style (tuples of coordinate cells)
and projection histogram binning (sequential order-statistic cuts along
direction vectors). A canonical model maps every bin to the empirical label
distribution of the calibration rows falling in it.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core_data import Dataset, ProbMatrix, require_classes
from utils import (
    EmptyInput,
    InvalidHyperparameters,
    NoBinFound,
    NonUnitDirection,
    NotOnSimplex,
    TooFewPoints,
    default_seed,
)

SIMPLEX_TOL = 1e-6
UNIT_NORM_TOL = 1e-9
GRID_SNAP_TOL = 1e-9
SENTINEL_THRESHOLD = 1.01
CATCH_ALL = 0

CANONICAL_CYCLE = "canonical_cycle"
SEEDED_RANDOM = "seeded_random"


def check_simplex_point(s, L: Optional[int] = None) -> np.ndarray:
    """Return s as a float vector, or raise NotOnSimplex."""
    s = np.asarray(s, dtype=float).ravel()
    if L is not None and s.size != L:
        raise NotOnSimplex(f"Expected a point with {L} coordinates, got {s.size}")
    if s.size < 2 or not np.all(np.isfinite(s)):
        raise NotOnSimplex(f"Not a finite point with at least 2 coordinates: {s}")
    if s.min() < -SIMPLEX_TOL or abs(s.sum() - 1.0) > SIMPLEX_TOL:
        raise NotOnSimplex(f"Point {s} is not on the probability simplex")
    return s


# Sierpinski binning

def sierpinski_bin_count(L: int, q: int) -> int:
    """(L^(q+1) - 1) / (L - 1): L^q leaves plus one catch-all per internal node."""
    if L < 2 or q < 1:
        raise InvalidHyperparameters(f"Sierpinski binning needs L >= 2 and q >= 1, got L={L}, q={q}")
    return (L ** (q + 1) - 1) // (L - 1)


def sierpinski_assign(s, L: int, q: int) -> Tuple[int, ...]:
    """
    Path of a point through the Sierpinski recursion.

    At each of up to q levels, if some coordinate exceeds 0.5 (strictly) the
    path records that 1-based class l and the point is rescaled by
    t_u = 2 t_u - 1{u = l}; otherwise the path ends in the level's catch-all
    bin, recorded as 0.
    """
    t = check_simplex_point(s, L)
    if q < 1:
        raise InvalidHyperparameters(f"Depth q must be >= 1, got {q}")
    path = []
    for _ in range(q):
        above = np.where(t > 0.5)[0]
        if above.size == 0:
            path.append(CATCH_ALL)
            break
        l = int(above[0])
        path.append(l + 1)
        t = 2.0 * t
        t[l] -= 1.0
    return tuple(path)


def sierpinski_paths(L: int, q: int) -> List[Tuple[int, ...]]:
    """Every bin path in depth-first order."""
    sierpinski_bin_count(L, q)
    paths = []

    def walk(prefix: Tuple[int, ...]) -> None:
        if len(prefix) == q:
            paths.append(prefix)
            return
        paths.append(prefix + (CATCH_ALL,))
        for l in range(1, L + 1):
            walk(prefix + (l,))

    walk(())
    return paths


@dataclass(frozen=True, eq=False)
class SierpinskiScheme:
    L: int
    q: int

    kind = "sierpinski"

    def __post_init__(self):
        paths = sierpinski_paths(self.L, self.q)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(paths)})
        object.__setattr__(self, "_paths", tuple(paths))

    @property
    def n_bins(self) -> int:
        return len(self._paths)

    @property
    def n_classes(self) -> int:
        return self.L

    def bin_label(self, b: int) -> str:
        return "/".join("*" if step == CATCH_ALL else str(step) for step in self._paths[b])

    def assign(self, s) -> int:
        return self._index[sierpinski_assign(s, self.L, self.q)]

    def assign_matrix(self, values: np.ndarray) -> np.ndarray:
        return np.array([self.assign(row) for row in values], dtype=np.int64)

    def on_boundary(self, values: np.ndarray) -> np.ndarray:
        return np.zeros(len(values), dtype=bool)


# Grid-style binning

def grid_index_set(L: int, K: int) -> List[Tuple[int, ...]]:
    """All k in {1..K}^L with max(L, K+1) <= sum(k) <= K + L - 1, in lexicographic order."""
    if L < 2 or K < 1:
        raise InvalidHyperparameters(f"Grid binning needs L >= 2 and K >= 1, got L={L}, K={K}")
    low, high = max(L, K + 1), K + L - 1
    return [k for k in itertools.product(range(1, K + 1), repeat=L) if low <= sum(k) <= high]


def grid_bin_count(L: int, K: int) -> int:
    return len(grid_index_set(L, K))


def grid_assign(s, K: int) -> Tuple[int, ...]:
    """
    Lexicographically smallest k in the index set with s_l K in [k_l - 1, k_l] for all l.

    Only k_l in {ceil(s_l K), floor(s_l K) + 1} can satisfy the membership
    test, so at most 2^L candidate tuples are examined.

    Raises:
        NotOnSimplex: s is not a simplex point
        NoBinFound: no candidate lies in the index set
    """
    s = check_simplex_point(s)
    if K < 1:
        raise InvalidHyperparameters(f"Grid resolution K must be >= 1, got {K}")
    L = s.size
    x = s * K
    nearest = np.round(x)
    x = np.where(np.abs(x - nearest) < GRID_SNAP_TOL, nearest, x)

    candidates = []
    for value in x:
        options = sorted({int(np.ceil(value)), int(np.floor(value)) + 1})
        options = [k for k in options if 1 <= k <= K and k - 1 <= value <= k]
        candidates.append(options)

    low, high = max(L, K + 1), K + L - 1
    for k in itertools.product(*candidates):
        if low <= sum(k) <= high:
            return tuple(k)
    raise NoBinFound(f"No grid bin contains {s} at K={K}")


@dataclass(frozen=True, eq=False)
class GridScheme:
    L: int
    K: int

    kind = "grid"

    def __post_init__(self):
        tuples = grid_index_set(self.L, self.K)
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(tuples)})
        object.__setattr__(self, "_tuples", tuple(tuples))

    @property
    def n_bins(self) -> int:
        return len(self._tuples)

    @property
    def n_classes(self) -> int:
        return self.L

    def bin_label(self, b: int) -> str:
        return ",".join(str(k) for k in self._tuples[b])

    def assign(self, s) -> int:
        return self._index[grid_assign(check_simplex_point(s, self.L), self.K)]

    def assign_matrix(self, values: np.ndarray) -> np.ndarray:
        return np.array([self.assign(row) for row in values], dtype=np.int64)

    def on_boundary(self, values: np.ndarray) -> np.ndarray:
        return np.zeros(len(values), dtype=bool)


# Projection histogram binning

def default_directions(L: int, B: int, policy: str = CANONICAL_CYCLE, seed: Optional[int] = None) -> np.ndarray:
    """
    B unit direction vectors (rows) in L dimensions.

    canonical_cycle rotates through -e_1, -e_2, ..., -e_L, -e_1, ...;
    seeded_random draws directions uniformly on the sphere.
    """
    if B < 1 or L < 2:
        raise InvalidHyperparameters(f"Need B >= 1 and L >= 2, got B={B}, L={L}")
    if policy == CANONICAL_CYCLE:
        directions = np.zeros((B, L))
        directions[np.arange(B), np.arange(B) % L] = -1.0
        return directions
    if policy == SEEDED_RANDOM:
        rng = np.random.default_rng(default_seed() if seed is None else seed)
        directions = rng.standard_normal((B, L))
        return directions / np.linalg.norm(directions, axis=1, keepdims=True)
    raise InvalidHyperparameters(f"Unknown direction policy {policy!r}")


@dataclass(frozen=True, eq=False)
class ProjectionHBScheme:
    """
    Sequential projection bins.

    Bin b < B-1 takes points with g.q_b < T_b that no earlier bin took; the
    last bin is the residual, reached through the sentinel T_B = 1.01.
    """

    B: int
    q_vectors: np.ndarray
    thresholds: np.ndarray
    c: int
    warnings: Tuple[str, ...] = ()

    kind = "projection"

    def __post_init__(self):
        q_vectors = np.array(self.q_vectors, dtype=float)
        thresholds = np.array(self.thresholds, dtype=float).ravel()
        q_vectors.setflags(write=False)
        thresholds.setflags(write=False)
        object.__setattr__(self, "q_vectors", q_vectors)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def n_bins(self) -> int:
        return self.B

    @property
    def n_classes(self) -> int:
        return self.q_vectors.shape[1]

    def bin_label(self, b: int) -> str:
        return str(b + 1)

    def _projections(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) @ self.q_vectors[: self.B - 1].T

    def assign_matrix(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.B == 1:
            return np.zeros(values.shape[0], dtype=np.int64)
        below = self._projections(values) < self.thresholds[None, :]
        first = np.argmax(below, axis=1)
        return np.where(below.any(axis=1), first, self.B - 1).astype(np.int64)

    def assign(self, s) -> int:
        return int(self.assign_matrix(check_simplex_point(s, self.n_classes)[None, :])[0])

    def on_boundary(self, values: np.ndarray) -> np.ndarray:
        """Rows whose projection equals a learnt threshold exactly."""
        values = np.asarray(values, dtype=float)
        if self.B == 1:
            return np.zeros(values.shape[0], dtype=bool)
        return np.any(self._projections(values) == self.thresholds[None, :], axis=1)


def fit_projection_hb(data_scores, B: int, q_vectors: Optional[np.ndarray] = None,
                      seed: Optional[int] = None, policy: str = CANONICAL_CYCLE) -> ProjectionHBScheme:
    """
    Learn projection thresholds.

    With c = floor((n+1)/B), for b = 1..B-1 the threshold T_b is the c-th
    smallest projection onto q_b among the points still unassigned, and
    points with projection <= T_b are removed. Each bin keeps at least c - 1
    points strictly inside it.

    Args:
        data_scores: n x L simplex points
        B: Number of bins
        q_vectors: At least B-1 unit directions; default from default_directions
        seed: Seed for seeded_random directions
        policy: Direction policy used when q_vectors is None

    Raises:
        TooFewPoints: n < B, or ties in the projections exhaust the points
        NonUnitDirection: a direction does not have unit norm
    """
    values = data_scores.values if isinstance(data_scores, ProbMatrix) else np.asarray(data_scores, dtype=float)
    n, L = values.shape
    if B < 1:
        raise InvalidHyperparameters(f"Number of bins must be >= 1, got {B}")
    if n < B:
        raise TooFewPoints(f"Projection binning with {B} bins needs at least {B} points, got {n}")

    supplied = q_vectors is not None
    if not supplied:
        q_vectors = default_directions(L, B, policy, seed)
    q_vectors = np.asarray(q_vectors, dtype=float)
    if q_vectors.ndim != 2 or q_vectors.shape[1] != L or q_vectors.shape[0] < B - 1:
        raise InvalidHyperparameters(
            f"Need at least {B - 1} directions of dimension {L}, got shape {q_vectors.shape}"
        )
    norms = np.linalg.norm(q_vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise NonUnitDirection(f"Direction {bad + 1} has norm {norms[bad]}, expected 1")
    warnings = []
    if supplied and q_vectors.shape[0] > B - 1:
        message = (f"Ignoring {q_vectors.shape[0] - (B - 1)} of {q_vectors.shape[0]} directions: "
                   f"{B} bins use the first {B - 1}")
        logging.warning(message)
        warnings.append(message)
        q_vectors = q_vectors[:B]
    if q_vectors.shape[0] < B:
        q_vectors = np.vstack([q_vectors, default_directions(L, B)[q_vectors.shape[0]:]])

    c = (n + 1) // B
    remaining = values
    thresholds = []
    for b in range(B - 1):
        if remaining.shape[0] < c:
            raise TooFewPoints(
                f"Only {remaining.shape[0]} points left for bin {b + 1} (need {c}); projections have ties"
            )
        projections = remaining @ q_vectors[b]
        threshold = float(np.partition(projections, c - 1)[c - 1])
        thresholds.append(threshold)
        remaining = remaining[projections > threshold]

    logging.info(f"Fitted projection binning: n={n}, B={B}, c={c}")
    return ProjectionHBScheme(B, q_vectors, np.array(thresholds), c, tuple(warnings))


CanonicalScheme = Union[SierpinskiScheme, GridScheme, ProjectionHBScheme]


@dataclass(frozen=True, eq=False)
class CanonicalModel:
    """Scheme plus pi_hat, the B x L matrix of per-bin label frequencies."""

    scheme: CanonicalScheme
    pi_hat: np.ndarray
    bin_counts: np.ndarray
    warnings: Tuple[str, ...] = ()

    notion = "canonical"

    def __post_init__(self):
        for name, dtype in (("pi_hat", float), ("bin_counts", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_classes(self) -> int:
        return self.pi_hat.shape[1]

    @property
    def total_bins(self) -> int:
        return self.scheme.n_bins


def fit_canonical(scheme: CanonicalScheme, data: Dataset) -> CanonicalModel:
    """
    Estimate pi_hat for a binning scheme.

    Row b of pi_hat is the label distribution of calibration rows in bin b;
    rows lying exactly on a projection threshold are left out, and empty bins
    get the uniform vector 1/L.
    """
    if data.n_rows == 0:
        raise EmptyInput("Canonical calibration needs at least one calibration row")
    require_classes(scheme.n_classes, data.scores, "binning scheme")
    L = data.n_classes
    values = data.scores.values
    bins = scheme.assign_matrix(values)
    keep = ~scheme.on_boundary(values)

    counts = np.bincount(bins[keep], minlength=scheme.n_bins)
    label_counts = np.zeros((scheme.n_bins, L))
    np.add.at(label_counts, (bins[keep], data.labels[keep]), 1.0)

    pi_hat = np.full((scheme.n_bins, L), 1.0 / L)
    filled = counts > 0
    pi_hat[filled] = label_counts[filled] / counts[filled, None]

    warnings = list(getattr(scheme, "warnings", ()))
    empty = int((~filled).sum())
    if empty:
        message = f"{empty} of {scheme.n_bins} bins received no calibration rows; they predict the uniform vector"
        logging.warning(message)
        warnings.append(message)
    logging.info(f"Fitted canonical calibrator ({scheme.kind}): n={data.n_rows}, L={L}, bins={scheme.n_bins}")
    return CanonicalModel(scheme, pi_hat, counts, tuple(warnings))


def predict_canonical(model: CanonicalModel, s) -> np.ndarray:
    """pi_hat row of the bin containing s."""
    s = check_simplex_point(s, model.n_classes)
    return np.array(model.pi_hat[model.scheme.assign(s)])


def predict_canonical_matrix(model: CanonicalModel, scores: ProbMatrix) -> ProbMatrix:
    require_classes(model.n_classes, scores)
    return ProbMatrix(model.pi_hat[model.scheme.assign_matrix(scores.values)])


def recalibration_arrows(model: CanonicalModel, data: Dataset) -> List[Dict]:
    """
    Per non-empty bin: mean prediction (arrow tail), pi_hat row (arrow head) and l1 length.

    Computed on data, usually the test split.
    """
    require_classes(model.n_classes, data.scores)
    values = data.scores.values
    bins = model.scheme.assign_matrix(values)
    arrows = []
    for b in np.unique(bins):
        members = values[bins == b]
        tail = members.mean(axis=0)
        head = model.pi_hat[b]
        arrows.append({
            "bin": int(b) + 1,
            "bin_label": model.scheme.bin_label(int(b)),
            "count": int(members.shape[0]),
            "mean_prediction": tail.tolist(),
            "pi_hat": head.tolist(),
            "l1_length": float(np.abs(head - tail).sum()),
        })
    return arrows


def build_scheme(kind: str, L: int, data_scores=None, bins: Optional[int] = None, depth: Optional[int] = None,
                 grid_k: Optional[int] = None, directions: str = CANONICAL_CYCLE,
                 seed: Optional[int] = None) -> CanonicalScheme:
    """Construct a scheme by name ('sierpinski', 'grid' or 'projection')."""
    if kind == "sierpinski":
        return SierpinskiScheme(L, 2 if depth is None else depth)
    if kind == "grid":
        return GridScheme(L, 4 if grid_k is None else grid_k)
    if kind == "projection":
        if data_scores is None:
            raise InvalidHyperparameters("Projection binning is learnt from data; pass data_scores")
        n = len(data_scores)
        B = bins if bins is not None else max(1, n // 50)
        return fit_projection_hb(data_scores, B, seed=seed, policy=directions)
    raise InvalidHyperparameters(f"Unknown canonical scheme {kind!r}")
