#!/usr/bin/env python3
"""
Multiclass-to-binary (M2B) calibrators

Each notion (top-label, class-wise, confidence, top-K-label, top-K-confidence)
is reduced to binary calibration problems that are solved independently by a
binary calibrator. The normalized calibrator is class-wise fitting followed by
renormalization at predict time.

Per-class fits use seeds mix(seed, class, rank); a class or (rank, class) cell
without calibration rows gets the identity calibrator and a recorded warning.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from binary_calibrators import (
    FIXED_BINS,
    BinaryCalibratorSpec,
    BinaryModel,
    IdentityModel,
    fit_binary,
)
from core_data import (
    Dataset,
    ProbMatrix,
    TopKDecomposition,
    TopLabelDecomposition,
    require_classes,
    top_k,
    top_label,
)
from utils import EmptyInput, InvalidHyperparameters, KOutOfRange, UnsupportedPredictor, mix_seed

TOP_LABEL = "top_label"
CLASS_WISE = "class_wise"
CONFIDENCE = "confidence"
NORMALIZED = "normalized"
TOP_K_LABEL = "top_k_label"
TOP_K_CONFIDENCE = "top_k_confidence"

M2B_NOTIONS = (CONFIDENCE, TOP_LABEL, CLASS_WISE, TOP_K_LABEL, TOP_K_CONFIDENCE)


def _total_bins(models) -> int:
    return int(sum(m.n_bins for m in models))


@dataclass(frozen=True, eq=False)
class TopLabelModel:
    n_classes: int
    per_class: Tuple[BinaryModel, ...]
    spec: BinaryCalibratorSpec
    warnings: Tuple[str, ...] = ()

    notion = TOP_LABEL

    @property
    def bins_per_class(self) -> Tuple[int, ...]:
        return tuple(m.n_bins for m in self.per_class)

    @property
    def total_bins(self) -> int:
        return _total_bins(self.per_class)


@dataclass(frozen=True, eq=False)
class ClassWiseModel:
    n_classes: int
    per_class: Tuple[BinaryModel, ...]
    spec: BinaryCalibratorSpec
    warnings: Tuple[str, ...] = ()

    notion = CLASS_WISE

    @property
    def bins_per_class(self) -> Tuple[int, ...]:
        return tuple(m.n_bins for m in self.per_class)

    @property
    def total_bins(self) -> int:
        return _total_bins(self.per_class)


@dataclass(frozen=True, eq=False)
class NormalizedModel(ClassWiseModel):
    notion = NORMALIZED


@dataclass(frozen=True, eq=False)
class ConfidenceModel:
    n_classes: int
    calibrator: BinaryModel
    spec: BinaryCalibratorSpec
    warnings: Tuple[str, ...] = ()

    notion = CONFIDENCE

    @property
    def bins_per_class(self) -> Tuple[int, ...]:
        return (self.calibrator.n_bins,)

    @property
    def total_bins(self) -> int:
        return self.calibrator.n_bins


@dataclass(frozen=True, eq=False)
class TopKModel:
    """
    Top-K calibrator.

    For the label variant per_rank[k] is a tuple of L binary models h_{k,l};
    for the confidence variant per_rank[k] is a 1-tuple holding h^(k).
    """

    n_classes: int
    K: int
    variant: str
    per_rank: Tuple[Tuple[BinaryModel, ...], ...]
    spec: BinaryCalibratorSpec
    warnings: Tuple[str, ...] = ()

    @property
    def notion(self) -> str:
        return TOP_K_LABEL if self.variant == "label" else TOP_K_CONFIDENCE

    @property
    def bins_per_class(self) -> Tuple[int, ...]:
        return tuple(m.n_bins for row in self.per_rank for m in row)

    @property
    def total_bins(self) -> int:
        return _total_bins(m for row in self.per_rank for m in row)


@dataclass(frozen=True)
class M2BNotionSpec:
    """An M2B notion, with K for the top-K notions."""

    notion: str
    K: Optional[int] = None

    def __post_init__(self):
        if self.notion not in M2B_NOTIONS:
            raise InvalidHyperparameters(
                f"Unknown M2B notion {self.notion!r}; expected one of {', '.join(M2B_NOTIONS)}"
            )
        if self.notion in (TOP_K_LABEL, TOP_K_CONFIDENCE):
            if self.K is None or self.K < 1:
                raise KOutOfRange(f"Notion {self.notion} needs K >= 1, got {self.K}")


M2BModel = Union[TopLabelModel, ClassWiseModel, NormalizedModel, ConfidenceModel, TopKModel]


def _require_rows(data: Dataset, what: str) -> None:
    if data.n_rows == 0:
        raise EmptyInput(f"{what} needs at least one calibration row")


def _fit_cell(scores, targets, spec: BinaryCalibratorSpec, seed: int, where: str, warnings: list) -> BinaryModel:
    """Fit one binary problem, falling back to identity when it has no rows."""
    m = scores.size
    if m == 0:
        message = f"{where} has no calibration rows; using the identity calibrator"
        logging.warning(message)
        warnings.append(message)
        return IdentityModel()
    cell_spec = spec.with_seed(seed)
    if cell_spec.bins_policy == FIXED_BINS and cell_spec.bins_param > m:
        message = f"{where} has {m} rows, fewer than {cell_spec.bins_param} bins; using {m} bins"
        logging.warning(message)
        warnings.append(message)
        cell_spec = cell_spec.with_bins(m)
    return fit_binary(scores, targets, cell_spec)


def fit_top_label(data: Dataset, spec: BinaryCalibratorSpec) -> TopLabelModel:
    """
    Top-label calibrator.

    Rows are partitioned by predicted class c(X_i); h_l is fitted on
    (g(X_i), 1{Y_i = l}) over the rows predicted as l.
    """
    _require_rows(data, "Top-label calibration")
    decomposition = top_label(data.scores)
    hits = (data.labels == decomposition.top_class).astype(float)
    warnings = []
    per_class = []
    for l in range(data.n_classes):
        mask = decomposition.top_class == l
        per_class.append(
            _fit_cell(
                decomposition.top_prob[mask], hits[mask], spec,
                mix_seed(spec.seed, l, 0), f"Class {l + 1}", warnings,
            )
        )
    model = TopLabelModel(data.n_classes, tuple(per_class), spec, tuple(warnings))
    logging.info(f"Fitted top-label calibrator: n={data.n_rows}, L={data.n_classes}, bins={model.total_bins}")
    return model


def predict_top_label(model: TopLabelModel, scores: ProbMatrix) -> TopLabelDecomposition:
    require_classes(model.n_classes, scores)
    decomposition = top_label(scores)
    calibrated = np.empty(scores.n_rows, dtype=float)
    for l, calibrator in enumerate(model.per_class):
        mask = decomposition.top_class == l
        if np.any(mask):
            calibrated[mask] = calibrator.predict(decomposition.top_prob[mask])
    return TopLabelDecomposition(decomposition.top_class, calibrated)


def _fit_one_vs_all(data: Dataset, spec: BinaryCalibratorSpec,
                    points_per_bin_by_class: Optional[Sequence[int]], warnings: list) -> Tuple[BinaryModel, ...]:
    L = data.n_classes
    if points_per_bin_by_class is not None and len(points_per_bin_by_class) != L:
        raise InvalidHyperparameters(
            f"Got {len(points_per_bin_by_class)} per-class points-per-bin values for {L} classes"
        )
    per_class = []
    for l in range(L):
        class_spec = spec
        if points_per_bin_by_class is not None:
            class_spec = spec.with_points_per_bin(int(points_per_bin_by_class[l]))
        targets = (data.labels == l).astype(float)
        per_class.append(
            _fit_cell(
                data.scores.values[:, l], targets, class_spec,
                mix_seed(spec.seed, l, 0), f"Class {l + 1}", warnings,
            )
        )
    return tuple(per_class)


def fit_class_wise(data: Dataset, spec: BinaryCalibratorSpec,
                   points_per_bin_by_class: Optional[Sequence[int]] = None) -> ClassWiseModel:
    """
    Class-wise calibrator.

    Every h_l is fitted on all n rows with scores g_l(X_i) and targets
    1{Y_i = l}. points_per_bin_by_class sets a separate k_l per class.
    """
    _require_rows(data, "Class-wise calibration")
    warnings = []
    per_class = _fit_one_vs_all(data, spec, points_per_bin_by_class, warnings)
    model = ClassWiseModel(data.n_classes, per_class, spec, tuple(warnings))
    logging.info(f"Fitted class-wise calibrator: n={data.n_rows}, L={data.n_classes}, bins={model.total_bins}")
    return model


def predict_class_wise(model: ClassWiseModel, scores: ProbMatrix) -> np.ndarray:
    """n x L calibrated components; rows are not renormalized."""
    require_classes(model.n_classes, scores)
    out = np.empty(scores.values.shape, dtype=float)
    for l, calibrator in enumerate(model.per_class):
        out[:, l] = calibrator.predict(scores.values[:, l])
    return out


def fit_confidence(data: Dataset, spec: BinaryCalibratorSpec) -> ConfidenceModel:
    """One binary calibrator on the pooled (g(X_i), 1{Y_i = c(X_i)})."""
    _require_rows(data, "Confidence calibration")
    decomposition = top_label(data.scores)
    hits = (data.labels == decomposition.top_class).astype(float)
    warnings = []
    calibrator = _fit_cell(
        decomposition.top_prob, hits, spec, mix_seed(spec.seed, 0, 0), "Pooled confidence data", warnings
    )
    logging.info(f"Fitted confidence calibrator: n={data.n_rows}, bins={calibrator.n_bins}")
    return ConfidenceModel(data.n_classes, calibrator, spec, tuple(warnings))


def predict_confidence(model: ConfidenceModel, scores: ProbMatrix) -> TopLabelDecomposition:
    require_classes(model.n_classes, scores)
    decomposition = top_label(scores)
    return TopLabelDecomposition(decomposition.top_class, model.calibrator.predict(decomposition.top_prob))


def fit_normalized(data: Dataset, spec: BinaryCalibratorSpec,
                   points_per_bin_by_class: Optional[Sequence[int]] = None) -> NormalizedModel:
    _require_rows(data, "Normalized calibration")
    warnings = []
    per_class = _fit_one_vs_all(data, spec, points_per_bin_by_class, warnings)
    model = NormalizedModel(data.n_classes, per_class, spec, tuple(warnings))
    logging.info(f"Fitted normalized calibrator: n={data.n_rows}, L={data.n_classes}, bins={model.total_bins}")
    return model


def predict_normalized(model: NormalizedModel, scores: ProbMatrix) -> ProbMatrix:
    """Class-wise components divided by their row sum; zero-sum rows become uniform."""
    components = predict_class_wise(model, scores)
    sums = components.sum(axis=1)
    zero = sums <= 0.0
    out = np.empty_like(components)
    out[~zero] = components[~zero] / sums[~zero, None]
    out[zero] = 1.0 / model.n_classes
    return ProbMatrix(out)


def fit_top_k(data: Dataset, K: int, variant: str, spec: BinaryCalibratorSpec) -> TopKModel:
    """
    Top-K-label (variant 'label') or top-K-confidence (variant 'confidence').

    Label: for each rank k and class l, h_{k,l} is fitted on rows whose k-th
    class is l with targets 1{Y_i = l}. Confidence: for each rank k, one
    pooled h^(k) on (g^(k)(X_i), 1{Y_i = c^(k)(X_i)}).
    """
    if variant not in ("label", "confidence"):
        raise InvalidHyperparameters(f"Top-K variant must be 'label' or 'confidence', got {variant!r}")
    decomposition = top_k(data.scores, K)
    _require_rows(data, "Top-K calibration")
    warnings = []
    per_rank = []
    for k in range(K):
        rank_class = decomposition.rank_class[k]
        rank_prob = decomposition.rank_prob[k]
        if variant == "label":
            row = []
            for l in range(data.n_classes):
                mask = rank_class == l
                row.append(
                    _fit_cell(
                        rank_prob[mask], (data.labels[mask] == l).astype(float), spec,
                        mix_seed(spec.seed, l, k), f"Rank {k + 1}, class {l + 1}", warnings,
                    )
                )
            per_rank.append(tuple(row))
        else:
            hits = (data.labels == rank_class).astype(float)
            per_rank.append(
                (_fit_cell(rank_prob, hits, spec, mix_seed(spec.seed, 0, k), f"Rank {k + 1}", warnings),)
            )
    model = TopKModel(data.n_classes, K, variant, tuple(per_rank), spec, tuple(warnings))
    logging.info(f"Fitted top-{K}-{variant} calibrator: n={data.n_rows}, L={data.n_classes}, bins={model.total_bins}")
    return model


def predict_top_k(model: TopKModel, scores: ProbMatrix) -> TopKDecomposition:
    """Calibrated probability for each of the K ranks; rank classes are unchanged."""
    require_classes(model.n_classes, scores)
    decomposition = top_k(scores, model.K)
    calibrated = np.empty(decomposition.rank_prob.shape, dtype=float)
    for k in range(model.K):
        rank_class = decomposition.rank_class[k]
        rank_prob = decomposition.rank_prob[k]
        if model.variant == "label":
            for l, calibrator in enumerate(model.per_rank[k]):
                mask = rank_class == l
                if np.any(mask):
                    calibrated[k, mask] = calibrator.predict(rank_prob[mask])
        else:
            calibrated[k] = model.per_rank[k][0].predict(rank_prob)
    return TopKDecomposition(decomposition.rank_class, calibrated)


def fit_m2b(notion: M2BNotionSpec, data: Dataset, spec: BinaryCalibratorSpec) -> M2BModel:
    """Generic M2B calibrator: dispatch to the fit for the requested notion."""
    if notion.notion == TOP_LABEL:
        return fit_top_label(data, spec)
    if notion.notion == CLASS_WISE:
        return fit_class_wise(data, spec)
    if notion.notion == CONFIDENCE:
        return fit_confidence(data, spec)
    if notion.notion == TOP_K_LABEL:
        return fit_top_k(data, notion.K, "label", spec)
    return fit_top_k(data, notion.K, "confidence", spec)


def predict_m2b(model: M2BModel, scores: ProbMatrix):
    """Predict with any fitted wrapper; the return type follows the notion."""
    if isinstance(model, NormalizedModel):
        return predict_normalized(model, scores)
    if isinstance(model, ClassWiseModel):
        return predict_class_wise(model, scores)
    if isinstance(model, TopLabelModel):
        return predict_top_label(model, scores)
    if isinstance(model, ConfidenceModel):
        return predict_confidence(model, scores)
    if isinstance(model, TopKModel):
        return predict_top_k(model, scores)
    raise UnsupportedPredictor(f"Not an M2B model: {type(model).__name__}")
