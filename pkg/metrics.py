#!/usr/bin/env python3
"""
Calibration metrics

Plugin estimators of conf-ECE, TL-ECE, TL-MCE, CW-ECE and conf-MCE under
equal-width or unbinned grouping, reliability-diagram and validity-curve
data, and exact versions of every metric on finite-support distributions.

All estimators share one grouping routine: rows are grouped by a key (cell,
or (class, cell)), each group contributes weight * |accuracy - confidence|.
Optional row weights let the same code compute exact expectations, where a
row is an atom weighted by P(X = x) and its target is P(Y = c(x) | X = x).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from baselines_scaling import TemperatureModel, apply_temperature, log_scores
from canonical_binning import CanonicalModel, predict_canonical_matrix
from core_data import ProbMatrix, TopKDecomposition, TopLabelDecomposition, top_label
from m2b_wrappers import ClassWiseModel, ConfidenceModel, TopKModel, TopLabelModel, predict_m2b
from utils import (
    EmptyInput,
    InvalidHyperparameters,
    NonRectangular,
    OutOfRange,
    UnsupportedPredictor,
    env_int,
)

# Built-in defaults; MCALIB_ECE_BINS, MCALIB_SWEEP_MIN and MCALIB_SWEEP_MAX override them at call time
DEFAULT_ECE_BINS = 15
SWEEP_MIN_BINS = 5
SWEEP_MAX_BINS = 25

EQUAL_WIDTH = "equal_width"
UNBINNED = "unbinned"
EPS_TOL = 1e-12


def default_ece_bins() -> int:
    return env_int("MCALIB_ECE_BINS", DEFAULT_ECE_BINS)


def default_sweep_range() -> Tuple[int, int]:
    return env_int("MCALIB_SWEEP_MIN", SWEEP_MIN_BINS), env_int("MCALIB_SWEEP_MAX", SWEEP_MAX_BINS)


@dataclass(frozen=True)
class BinningScheme:
    """Equal-width cells [0,1/B), ..., [1-1/B,1], or grouping by exact value."""

    kind: str = EQUAL_WIDTH
    B: int = field(default_factory=default_ece_bins)

    def __post_init__(self):
        if self.kind not in (EQUAL_WIDTH, UNBINNED):
            raise InvalidHyperparameters(f"Unknown binning scheme {self.kind!r}")
        if self.B < 1:
            raise InvalidHyperparameters(f"Number of bins must be >= 1, got {self.B}")

    @classmethod
    def equal_width(cls, B: Optional[int] = None) -> "BinningScheme":
        return cls(EQUAL_WIDTH, default_ece_bins() if B is None else B)

    @classmethod
    def unbinned(cls) -> "BinningScheme":
        return cls(UNBINNED, 1)

    def cells(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.kind == UNBINNED:
            return values
        return np.minimum(np.floor(np.clip(values, 0.0, 1.0) * self.B), self.B - 1).astype(np.int64)

    def to_dict(self) -> dict:
        if self.kind == UNBINNED:
            return {"kind": UNBINNED}
        return {"kind": EQUAL_WIDTH, "bins": self.B}


def _resolve_scheme(scheme: Optional[BinningScheme]) -> BinningScheme:
    return BinningScheme.equal_width() if scheme is None else scheme


def _weights_for(n: int, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return np.ones(n, dtype=float)
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != n:
        raise NonRectangular(f"{weights.size} weights for {n} rows")
    return weights


def _check_aligned(preds_len: int, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).ravel()
    if preds_len == 0:
        raise EmptyInput("Cannot estimate a calibration metric on zero rows")
    if labels.size != preds_len:
        raise NonRectangular(f"{preds_len} predictions but {labels.size} labels")
    return labels


def group_deviations(keys: Dict[str, np.ndarray], conf: np.ndarray, target: np.ndarray,
                     weights: np.ndarray, exact_conf_key: Optional[str] = None) -> pd.DataFrame:
    """
    Per-group mass, mean confidence, mean target and |difference|.

    Args:
        keys: Grouping columns
        conf: Predicted probability per row
        target: Outcome per row (0/1, or a probability for exact computations)
        weights: Row weights; group mass is normalized to sum to 1
        exact_conf_key: Key column that holds the confidence itself (unbinned
            grouping); its value is used as the group confidence verbatim

    Returns:
        DataFrame: key columns plus count, weight, conf, acc, deviation
    """
    frame = pd.DataFrame(dict(keys))
    frame["w"] = weights
    frame["wc"] = weights * conf
    frame["wt"] = weights * target
    grouped = (
        frame.groupby(list(keys), sort=True)
        .agg(count=("w", "size"), weight=("w", "sum"), wc=("wc", "sum"), wt=("wt", "sum"))
        .reset_index()
    )
    grouped = grouped[grouped["weight"] > 0].copy()
    if exact_conf_key is not None:
        grouped["conf"] = grouped[exact_conf_key].astype(float)
    else:
        grouped["conf"] = grouped["wc"] / grouped["weight"]
    grouped["acc"] = grouped["wt"] / grouped["weight"]
    grouped["deviation"] = (grouped["acc"] - grouped["conf"]).abs()
    grouped["weight"] = grouped["weight"] / grouped["weight"].sum()
    return grouped.drop(columns=["wc", "wt"]).reset_index(drop=True)


def _top_label_groups(top_class, top_prob, target, scheme: BinningScheme, weights, by_class: bool) -> pd.DataFrame:
    keys = {}
    if by_class:
        keys["cls"] = np.asarray(top_class, dtype=np.int64)
    keys["cell"] = scheme.cells(top_prob)
    return group_deviations(
        keys, np.asarray(top_prob, dtype=float), np.asarray(target, dtype=float), weights,
        exact_conf_key="cell" if scheme.kind == UNBINNED else None,
    )


def _hits(preds: TopLabelDecomposition, labels) -> np.ndarray:
    labels = _check_aligned(len(preds), labels)
    return (preds.top_class == labels).astype(float)


def conf_ece(preds: TopLabelDecomposition, labels, scheme: Optional[BinningScheme] = None,
             weights: Optional[np.ndarray] = None) -> float:
    """E|P(Y = c(X) | h(X)) - h(X)|, grouping by cell of h."""
    scheme = _resolve_scheme(scheme)
    hits = _hits(preds, labels)
    groups = _top_label_groups(preds.top_class, preds.top_prob, hits, scheme,
                               _weights_for(len(preds), weights), by_class=False)
    return float((groups["weight"] * groups["deviation"]).sum())


def tl_ece(preds: TopLabelDecomposition, labels, scheme: Optional[BinningScheme] = None,
           weights: Optional[np.ndarray] = None) -> float:
    """E|P(Y = c(X) | c(X), h(X)) - h(X)|, grouping by (predicted class, cell)."""
    scheme = _resolve_scheme(scheme)
    hits = _hits(preds, labels)
    groups = _top_label_groups(preds.top_class, preds.top_prob, hits, scheme,
                               _weights_for(len(preds), weights), by_class=True)
    return float((groups["weight"] * groups["deviation"]).sum())


def tl_mce(preds: TopLabelDecomposition, labels, scheme: Optional[BinningScheme] = None,
           weights: Optional[np.ndarray] = None) -> float:
    """Largest deviation over non-empty (class, cell) groups, whatever their size."""
    scheme = _resolve_scheme(scheme)
    hits = _hits(preds, labels)
    groups = _top_label_groups(preds.top_class, preds.top_prob, hits, scheme,
                               _weights_for(len(preds), weights), by_class=True)
    return float(groups["deviation"].max())


def conf_mce(preds: TopLabelDecomposition, labels, scheme: Optional[BinningScheme] = None,
             weights: Optional[np.ndarray] = None) -> float:
    """Largest deviation over non-empty cells, ignoring the predicted class."""
    scheme = _resolve_scheme(scheme)
    hits = _hits(preds, labels)
    groups = _top_label_groups(preds.top_class, preds.top_prob, hits, scheme,
                               _weights_for(len(preds), weights), by_class=False)
    return float(groups["deviation"].max())


def _as_matrix(matrix_preds) -> np.ndarray:
    values = matrix_preds.values if isinstance(matrix_preds, ProbMatrix) else np.asarray(matrix_preds, dtype=float)
    if values.ndim != 2:
        raise NonRectangular(f"Class-wise predictions must be an n x L matrix, got shape {values.shape}")
    return values


def _class_wise_groups(values: np.ndarray, targets: np.ndarray, scheme: BinningScheme,
                       weights: np.ndarray) -> List[pd.DataFrame]:
    return [
        group_deviations(
            {"cell": scheme.cells(values[:, l])}, values[:, l], targets[:, l], weights,
            exact_conf_key="cell" if scheme.kind == UNBINNED else None,
        )
        for l in range(values.shape[1])
    ]


def cw_ece(matrix_preds, labels, scheme: Optional[BinningScheme] = None,
           weights: Optional[np.ndarray] = None) -> float:
    """Average over classes of the binary ECE of (h_l(X), 1{Y = l})."""
    scheme = _resolve_scheme(scheme)
    values = _as_matrix(matrix_preds)
    labels = _check_aligned(values.shape[0], labels)
    if values.min() < -1e-9 or values.max() > 1 + 1e-9:
        raise OutOfRange("Class-wise predictions must lie in [0, 1]")
    targets = (labels[:, None] == np.arange(values.shape[1])[None, :]).astype(float)
    groups = _class_wise_groups(values, targets, scheme, _weights_for(values.shape[0], weights))
    return float(np.mean([(g["weight"] * g["deviation"]).sum() for g in groups]))


METRICS: Dict[str, Callable] = {
    "conf_ece": conf_ece,
    "tl_ece": tl_ece,
    "tl_mce": tl_mce,
    "cw_ece": cw_ece,
    "conf_mce": conf_mce,
}
VECTOR_METRICS = {"cw_ece"}


def compute_metric(name: str, preds, labels, scheme: Optional[BinningScheme] = None,
                   weights: Optional[np.ndarray] = None) -> float:
    """
    Evaluate a named metric on decomposed or full-vector predictions.

    Full-vector predictions are reduced to (argmax, max) for the top-label
    metrics. cw_ece needs full vectors.
    """
    if name not in METRICS:
        raise InvalidHyperparameters(f"Unknown metric {name!r}; expected one of {', '.join(METRICS)}")
    if name in VECTOR_METRICS:
        if isinstance(preds, (TopLabelDecomposition, TopKDecomposition)):
            raise UnsupportedPredictor(f"{name} needs a full prediction vector per row")
        return METRICS[name](preds, labels, scheme, weights)
    if not isinstance(preds, TopLabelDecomposition):
        preds = top_label(ProbMatrix(_as_matrix(preds)))
    return METRICS[name](preds, labels, scheme, weights)


def ece_sweep(preds, labels, metric: str = "tl_ece", b_min: Optional[int] = None,
              b_max: Optional[int] = None) -> List[Dict[str, float]]:
    """The metric under equal-width binning for every B in [b_min, b_max]."""
    env_min, env_max = default_sweep_range()
    b_min = env_min if b_min is None else b_min
    b_max = env_max if b_max is None else b_max
    if b_min < 1 or b_max < b_min:
        raise InvalidHyperparameters(f"Invalid sweep range [{b_min}, {b_max}]")
    return [
        {"bins": B, "value": compute_metric(metric, preds, labels, BinningScheme.equal_width(B))}
        for B in range(b_min, b_max + 1)
    ]


def per_class_tl_ece(preds: TopLabelDecomposition, labels, scheme: Optional[BinningScheme] = None,
                     n_classes: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    TL-ECE broken down by predicted class.

    For each class l: the share of rows predicted as l, the share of rows
    labelled l, the TL-ECE restricted to rows predicted as l, and its
    contribution (share * restricted TL-ECE). Contributions sum to tl_ece.
    """
    scheme = _resolve_scheme(scheme)
    hits = _hits(preds, labels)
    labels = np.asarray(labels).ravel()
    if n_classes is None:
        n_classes = int(max(preds.top_class.max(), labels.max())) + 1
    n = len(preds)
    rows = []
    for l in range(n_classes):
        mask = preds.top_class == l
        share = float(mask.sum()) / n
        entry = {
            "class": l + 1,
            "count": int(mask.sum()),
            "predicted_proportion": share,
            "label_proportion": float(np.mean(labels == l)),
            "tl_ece": None,
            "contribution": 0.0,
        }
        if mask.any():
            groups = _top_label_groups(preds.top_class[mask], preds.top_prob[mask], hits[mask], scheme,
                                       np.ones(int(mask.sum())), by_class=False)
            within = float((groups["weight"] * groups["deviation"]).sum())
            entry["tl_ece"] = within
            entry["contribution"] = share * within
        rows.append(entry)
    return rows


def top_k_ece(preds: TopKDecomposition, labels, scheme: Optional[BinningScheme] = None,
              variant: str = "label") -> Dict[str, Any]:
    """
    Per-rank ECE of top-K predictions.

    Rank k is scored as TL-ECE (label variant) or conf-ECE (confidence
    variant) of (c^(k), h^(k)) against 1{Y = c^(k)}.
    """
    if variant not in ("label", "confidence"):
        raise InvalidHyperparameters(f"Top-K variant must be 'label' or 'confidence', got {variant!r}")
    metric = tl_ece if variant == "label" else conf_ece
    per_rank = [metric(preds.rank(k), labels, scheme) for k in range(preds.K)]
    return {"variant": variant, "per_rank": per_rank, "mean": float(np.mean(per_rank))}


@dataclass(frozen=True)
class ReliabilityBin:
    index: int
    lower: float
    upper: float
    count: int
    weight: float
    conf: float
    acc: float
    delta: float
    direction: int

    @property
    def marker(self) -> float:
        """Ordinate of the deviation marker: conf +/- delta, signed by acc vs conf."""
        return self.conf + self.direction * self.delta


@dataclass(frozen=True)
class ReliabilityCell:
    bin_index: int
    cls: int
    count: int
    weight_in_bin: float
    conf: float
    acc: float
    delta: float


@dataclass(frozen=True)
class ReliabilityDiagramData:
    B: int
    kind: str
    bins: Tuple[ReliabilityBin, ...]
    cells: Tuple[ReliabilityCell, ...]
    class_filter: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "type": "reliability",
            "kind": self.kind,
            "bins": self.B,
            "class_filter": None if self.class_filter is None else self.class_filter + 1,
            "points": [
                {
                    "bin": b.index + 1,
                    "lower": b.lower,
                    "upper": b.upper,
                    "count": b.count,
                    "weight": b.weight,
                    "conf": b.conf,
                    "acc": b.acc,
                    "delta": b.delta,
                    "direction": b.direction,
                    "marker": b.marker,
                }
                for b in self.bins
            ],
            "class_cells": [
                {
                    "bin": c.bin_index + 1,
                    "class": c.cls + 1,
                    "count": c.count,
                    "weight_in_bin": c.weight_in_bin,
                    "conf": c.conf,
                    "acc": c.acc,
                    "delta": c.delta,
                }
                for c in self.cells
            ],
        }


def reliability_diagram(preds: TopLabelDecomposition, labels, B: Optional[int] = None,
                        kind: str = "top_label", class_filter: Optional[int] = None,
                        weights: Optional[np.ndarray] = None) -> ReliabilityDiagramData:
    """
    Reliability-diagram data on B equal-width bins of h(X).

    Each non-empty bin reports (conf_b, acc_b), its mass and a deviation
    Delta_b. For kind='top_label' Delta_b averages the per-class deviations
    Delta_{b,l} with weights P(c(X) = l | bin b); for kind='confidence' it is
    |acc_b - conf_b|. class_filter keeps only rows predicted as that class.
    Empty bins are left out.
    """
    if kind not in ("top_label", "confidence"):
        raise InvalidHyperparameters(f"Reliability diagram kind must be 'top_label' or 'confidence', got {kind!r}")
    scheme = BinningScheme.equal_width(B)
    B = scheme.B
    hits = _hits(preds, labels)
    w = _weights_for(len(preds), weights)
    top_class, top_prob = preds.top_class, preds.top_prob
    if class_filter is not None:
        mask = top_class == class_filter
        if not mask.any():
            raise EmptyInput(f"No rows are predicted as class {class_filter + 1}")
        top_class, top_prob, hits, w = top_class[mask], top_prob[mask], hits[mask], w[mask]

    pooled = _top_label_groups(top_class, top_prob, hits, scheme, w, by_class=False)
    per_class = _top_label_groups(top_class, top_prob, hits, scheme, w, by_class=True)

    cells = []
    class_delta = {}
    for row in per_class.itertuples(index=False):
        bin_weight = float(pooled.loc[pooled["cell"] == row.cell, "weight"].iloc[0])
        share = float(row.weight) / bin_weight
        cells.append(ReliabilityCell(int(row.cell), int(row.cls), int(row.count), share,
                                     float(row.conf), float(row.acc), float(row.deviation)))
        class_delta[int(row.cell)] = class_delta.get(int(row.cell), 0.0) + share * float(row.deviation)

    bins = []
    for row in pooled.itertuples(index=False):
        b = int(row.cell)
        delta = class_delta[b] if kind == "top_label" else float(row.deviation)
        direction = 1 if row.acc > row.conf else -1
        bins.append(ReliabilityBin(b, b / B, (b + 1) / B, int(row.count), float(row.weight),
                                   float(row.conf), float(row.acc), delta, direction))
    return ReliabilityDiagramData(B, kind, tuple(bins), tuple(cells), class_filter)


@dataclass(frozen=True)
class ValidityCurve:
    epsilons: np.ndarray
    values: np.ndarray
    grouping: str

    def to_dict(self) -> dict:
        return {
            "type": "validity",
            "grouping": self.grouping,
            "epsilon": [float(e) for e in self.epsilons],
            "V": [float(v) for v in self.values],
        }


def _epsilon_grid(grid_step: float, upper: float) -> np.ndarray:
    if grid_step <= 0 or grid_step > 1:
        raise InvalidHyperparameters(f"grid_step must be in (0, 1], got {grid_step}")
    steps = int(round(1.0 / grid_step))
    if abs(steps * grid_step - 1.0) > 1e-9:
        raise InvalidHyperparameters(f"grid_step must divide 1, got {grid_step}")
    return np.arange(int(round(upper)) * steps + 1) / steps


def _canonical_deviation(values: np.ndarray, labels: np.ndarray, group_ids: np.ndarray,
                         weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per group: mass and ||mean one-hot(Y) - mean prediction||_1."""
    L = values.shape[1]
    onehot = (labels[:, None] == np.arange(L)[None, :]).astype(float)
    _, inverse = np.unique(group_ids, return_inverse=True, axis=0 if group_ids.ndim > 1 else None)
    inverse = np.asarray(inverse).ravel()
    n_groups = int(inverse.max()) + 1
    mass = np.bincount(inverse, weights=weights, minlength=n_groups)
    mean_pred = np.zeros((n_groups, L))
    mean_label = np.zeros((n_groups, L))
    np.add.at(mean_pred, inverse, values * weights[:, None])
    np.add.at(mean_label, inverse, onehot * weights[:, None])
    keep = mass > 0
    deviation = np.abs(mean_label[keep] - mean_pred[keep]).sum(axis=1) / mass[keep]
    return mass[keep] / mass[keep].sum(), deviation


def validity_curve(preds, labels, grouping: str = "top_label", grid_step: float = 0.01,
                   scheme: Optional[BinningScheme] = None, class_filter: Optional[int] = None,
                   groups: Optional[np.ndarray] = None,
                   weights: Optional[np.ndarray] = None) -> ValidityCurve:
    """
    V(eps): mass of rows whose group deviation is at most eps.

    grouping='top_label' groups by (predicted class, cell), 'confidence' by
    cell, and 'canonical' by bin id (groups) or by identical prediction
    vector, with the l1 deviation between mean one-hot label and mean
    prediction. The canonical grid runs to 2, the largest l1 distance on the
    simplex; the others run to 1.
    """
    if grouping not in ("top_label", "confidence", "canonical"):
        raise InvalidHyperparameters(f"Unknown validity grouping {grouping!r}")

    if grouping == "canonical":
        values = _as_matrix(preds)
        labels = _check_aligned(values.shape[0], labels)
        w = _weights_for(values.shape[0], weights)
        group_ids = values if groups is None else np.asarray(groups)
        mass, deviation = _canonical_deviation(values, labels, group_ids, w)
        epsilons = _epsilon_grid(grid_step, 2.0)
    else:
        if not isinstance(preds, TopLabelDecomposition):
            preds = top_label(ProbMatrix(_as_matrix(preds)))
        scheme = _resolve_scheme(scheme)
        hits = _hits(preds, labels)
        w = _weights_for(len(preds), weights)
        top_class, top_prob = preds.top_class, preds.top_prob
        if class_filter is not None:
            mask = top_class == class_filter
            if not mask.any():
                raise EmptyInput(f"No rows are predicted as class {class_filter + 1}")
            top_class, top_prob, hits, w = top_class[mask], top_prob[mask], hits[mask], w[mask]
        table = _top_label_groups(top_class, top_prob, hits, scheme, w, by_class=grouping == "top_label")
        mass = table["weight"].to_numpy()
        deviation = table["deviation"].to_numpy()
        epsilons = _epsilon_grid(grid_step, 1.0)

    values = np.array([1.0 - mass[deviation > eps + EPS_TOL].sum() for eps in epsilons])
    values = np.clip(np.maximum.accumulate(values), 0.0, 1.0)
    return ValidityCurve(epsilons, values, grouping)


Predictor = Union[None, TopLabelDecomposition, np.ndarray, ProbMatrix, Callable, Any]


def resolve_predictions(predictor: Predictor, scores: ProbMatrix
                        ) -> Tuple[TopLabelDecomposition, Optional[np.ndarray]]:
    """
    Turn a predictor into (top-label decomposition, full vectors or None).

    Accepts None (the base scores themselves), a decomposition or matrix
    aligned with the rows of scores, any fitted M2B, temperature or canonical
    model, or a callable mapping a ProbMatrix to one of those.
    """
    if predictor is None:
        return top_label(scores), scores.values
    if isinstance(predictor, TopKDecomposition) or isinstance(predictor, TopKModel):
        raise UnsupportedPredictor("Top-K predictors have no single top-label prediction; use top_k_ece")
    if isinstance(predictor, TopLabelDecomposition):
        if len(predictor) != scores.n_rows:
            raise NonRectangular(f"Decomposition has {len(predictor)} rows, expected {scores.n_rows}")
        return predictor, None
    if isinstance(predictor, (np.ndarray, ProbMatrix)):
        values = _as_matrix(predictor)
        if values.shape[0] != scores.n_rows:
            raise NonRectangular(f"Prediction matrix has {values.shape[0]} rows, expected {scores.n_rows}")
        return top_label(ProbMatrix(values)), values
    if isinstance(predictor, (TopLabelModel, ConfidenceModel, ClassWiseModel)):
        return resolve_predictions(predict_m2b(predictor, scores), scores)
    if isinstance(predictor, CanonicalModel):
        return resolve_predictions(predict_canonical_matrix(predictor, scores), scores)
    if isinstance(predictor, TemperatureModel):
        return resolve_predictions(apply_temperature(predictor, log_scores(scores)), scores)
    if callable(predictor):
        return resolve_predictions(predictor(scores), scores)
    raise UnsupportedPredictor(f"Cannot evaluate predictor of type {type(predictor).__name__}")


def exact_top_label_deviations(dist, decomposition: TopLabelDecomposition, by_class: bool = True) -> np.ndarray:
    """
    Exact |P(Y = c(X) | c(X), h(X)) - h(X)| for every atom of a finite distribution.

    by_class=False conditions on h(X) only (confidence notion).
    """
    atoms = np.arange(len(decomposition))
    target = dist.cond[atoms, decomposition.top_class]
    keys = {"cls": decomposition.top_class, "cell": decomposition.top_prob} if by_class else {"cell": decomposition.top_prob}
    frame = pd.DataFrame(keys)
    group_id = frame.groupby(list(keys), sort=True).ngroup().to_numpy()
    mass = np.bincount(group_id, weights=dist.p_x)
    hit_mass = np.bincount(group_id, weights=dist.p_x * target)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(mass > 0, hit_mass / np.where(mass > 0, mass, 1.0), 0.0)
    return np.abs(acc[group_id] - decomposition.top_prob)


def exact_class_wise_deviations(dist, values: np.ndarray) -> np.ndarray:
    """Exact |P(Y = l | h_l(X)) - h_l(X)| per atom and class (atoms x L)."""
    values = _as_matrix(values)
    out = np.empty_like(values)
    for l in range(values.shape[1]):
        group_id = pd.Series(values[:, l]).groupby(values[:, l], sort=True).ngroup().to_numpy()
        mass = np.bincount(group_id, weights=dist.p_x)
        hit_mass = np.bincount(group_id, weights=dist.p_x * dist.cond[:, l])
        acc = np.where(mass > 0, hit_mass / np.where(mass > 0, mass, 1.0), 0.0)
        out[:, l] = np.abs(acc[group_id] - values[:, l])
    return out


def exact_metrics(dist, predictor: Predictor = None) -> Dict[str, Optional[float]]:
    """
    Exact conf-ECE, TL-ECE, TL-MCE, CW-ECE and conf-MCE of a predictor.

    The distribution's support is enumerated: each atom x carries weight
    P(X = x), and its outcome is the true probability P(Y = c(x) | X = x), so
    no sampling or binning error enters. cw_ece is None for predictors that
    only output a top-label pair.

    Args:
        dist: Finite distribution with p_x, cond and score_map arrays
        predictor: See resolve_predictions

    Returns:
        dict: metric name -> value
    """
    scores = ProbMatrix(dist.score_map)
    decomposition, values = resolve_predictions(predictor, scores)
    p_x = np.asarray(dist.p_x, dtype=float)

    tl_dev = exact_top_label_deviations(dist, decomposition, by_class=True)
    conf_dev = exact_top_label_deviations(dist, decomposition, by_class=False)
    positive = p_x > 0
    result = {
        "conf_ece": float(np.dot(p_x, conf_dev)),
        "tl_ece": float(np.dot(p_x, tl_dev)),
        "tl_mce": float(tl_dev[positive].max()),
        "conf_mce": float(conf_dev[positive].max()),
        "cw_ece": None,
    }
    if values is not None:
        cw_dev = exact_class_wise_deviations(dist, values)
        result["cw_ece"] = float(np.mean(p_x @ cw_dev))
    logging.debug(f"Exact metrics over {p_x.size} atoms: {result}")
    return result
