#!/usr/bin/env python3
"""
File formats for mcalib

Score files are CSV (or XLSX) with a header of p_1..p_L or logit_1..logit_L
and an optional 1-based `label` column. Prediction files follow the shape of
the predictor. Fitted models are stored as JSON with a fixed schema per
notion; numbers are written with full round-trip precision so a reloaded
model predicts bit-identically.
"""

import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from baselines_scaling import TemperatureModel
from binary_calibrators import (
    HISTOGRAM_BINNING,
    IDENTITY,
    BinaryCalibratorSpec,
    BinaryHBModel,
    BinaryModel,
    IdentityModel,
)
from canonical_binning import CanonicalModel, GridScheme, ProjectionHBScheme, SierpinskiScheme
from core_data import Dataset, ProbMatrix, TopKDecomposition, TopLabelDecomposition, softmax_rows, validate_and_normalize
from m2b_wrappers import (
    CLASS_WISE,
    CONFIDENCE,
    NORMALIZED,
    TOP_K_CONFIDENCE,
    TOP_K_LABEL,
    TOP_LABEL,
    ClassWiseModel,
    ConfidenceModel,
    NormalizedModel,
    TopKModel,
    TopLabelModel,
)
from utils import (
    LabelOutOfRange,
    MalformedHeader,
    McalibError,
    NonFinite,
    RaggedRow,
    SchemaViolation,
    UnsupportedPredictor,
    VersionMismatch,
    to_json,
)

FORMAT_VERSION = 1
PROBS = "probs"
LOGITS = "logits"
LABEL_COLUMN = "label"
COLUMN_PREFIX = {PROBS: "p_", LOGITS: "logit_"}
TEMPERATURE = "temperature"
CANONICAL = "canonical"

COMMON_KEYS = {"format_version", "notion", "n_classes", "warnings"}
NOTION_KEYS = {
    TOP_LABEL: COMMON_KEYS | {"calibrator", "per_class"},
    CLASS_WISE: COMMON_KEYS | {"calibrator", "per_class"},
    NORMALIZED: COMMON_KEYS | {"calibrator", "per_class"},
    CONFIDENCE: COMMON_KEYS | {"calibrator", "pooled"},
    TOP_K_LABEL: COMMON_KEYS | {"calibrator", "K", "per_rank"},
    TOP_K_CONFIDENCE: COMMON_KEYS | {"calibrator", "K", "per_rank"},
    TEMPERATURE: COMMON_KEYS | {"temperature"},
    CANONICAL: COMMON_KEYS | {"scheme", "pi_hat", "bin_counts"},
}
SPEC_KEYS = {"kind", "bins_policy", "bins_param", "delta", "seed"}
HB_KEYS = {"kind", "B", "upper_edges", "bin_values", "bin_counts", "delta", "seed"}
TEMPERATURE_KEYS = {"T", "search_range", "fit_nll", "nll_at_one", "converged"}
SCHEME_KEYS = {
    "sierpinski": {"kind", "L", "q"},
    "grid": {"kind", "L", "K"},
    "projection": {"kind", "B", "c", "q_vectors", "thresholds"},
}

Model = Union[TopLabelModel, ClassWiseModel, NormalizedModel, ConfidenceModel, TopKModel,
              TemperatureModel, CanonicalModel]


# Score files

@dataclass(frozen=True, eq=False)
class ScoreFile:
    """Parsed score file: probabilities, raw logits when the file had them, labels when present."""

    scores: ProbMatrix
    labels: Optional[np.ndarray]
    logits: Optional[np.ndarray]
    mode: str
    path: Path

    def dataset(self) -> Dataset:
        if self.labels is None:
            raise MalformedHeader(f"{self.path} has no '{LABEL_COLUMN}' column")
        return Dataset(self.scores, self.labels)


def _load_frame(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    try:
        if path.suffix.lower() in (".xlsx", ".xls"):
            frame = pd.read_excel(path, engine="openpyxl")
        else:
            frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise MalformedHeader(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        raise RaggedRow(f"{path}: {e}") from e
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _score_columns(columns: List[str], prefix: str, path: Path) -> List[str]:
    pattern = re.compile(rf"^{re.escape(prefix)}(\d+)$")
    indices = {}
    for column in columns:
        if column == LABEL_COLUMN:
            continue
        match = pattern.match(column)
        if not match:
            raise MalformedHeader(f"{path}: unexpected column {column!r}; expected {prefix}1..{prefix}L and '{LABEL_COLUMN}'")
        indices[int(match.group(1))] = column
    L = len(indices)
    if L < 2 or sorted(indices) != list(range(1, L + 1)):
        raise MalformedHeader(f"{path}: score columns must be {prefix}1..{prefix}L with L >= 2, got {sorted(indices)}")
    return [indices[i] for i in range(1, L + 1)]


def _numeric_block(frame: pd.DataFrame, columns: List[str], path: Path) -> np.ndarray:
    raw = frame[columns]
    missing = raw.isna().any(axis=1).to_numpy()
    if missing.any():
        row = int(np.argmax(missing))
        raise RaggedRow(f"{path}: data row {row + 1} has missing fields")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise NonFinite(f"{path}: data row {row + 1} has a non-numeric entry")
    return numeric.to_numpy(dtype=float)


def _parse_labels(column: pd.Series, L: Optional[int], path: Path) -> np.ndarray:
    if column.isna().any():
        row = int(np.argmax(column.isna().to_numpy()))
        raise RaggedRow(f"{path}: data row {row + 1} has no label")
    values = pd.to_numeric(column, errors="coerce").to_numpy(dtype=float)
    if np.isnan(values).any() or np.any(values != np.round(values)):
        raise LabelOutOfRange(f"{path}: labels must be integers")
    upper = L if L is not None else np.inf
    bad = (values < 1) | (values > upper)
    if bad.any():
        row = int(np.argmax(bad))
        bound = f"1..{L}" if L is not None else ">= 1"
        raise LabelOutOfRange(f"{path}: data row {row + 1} has label {int(values[row])}, expected {bound}")
    return values.astype(np.int64) - 1


def read_scores(path: Union[str, Path], mode: str = PROBS, renormalize: bool = False) -> ScoreFile:
    """
    Read a score file; the label column is optional.

    Args:
        path: CSV or XLSX file
        mode: 'probs' (columns p_1..p_L) or 'logits' (columns logit_1..logit_L)
        renormalize: Divide probability rows by their sums

    Raises:
        FileNotFoundError: path does not exist
        MalformedHeader: header does not match the mode
        RaggedRow: a row has missing or extra fields
        LabelOutOfRange: a label is not an integer in 1..L
    """
    if mode not in COLUMN_PREFIX:
        raise MalformedHeader(f"Unknown input mode {mode!r}; expected 'probs' or 'logits'")
    path = Path(path)
    frame = _load_frame(path)
    columns = _score_columns(list(frame.columns), COLUMN_PREFIX[mode], path)
    values = _numeric_block(frame, columns, path)
    L = len(columns)

    labels = _parse_labels(frame[LABEL_COLUMN], L, path) if LABEL_COLUMN in frame.columns else None
    if mode == LOGITS:
        scores, logits = softmax_rows(values), values
    else:
        scores, logits = validate_and_normalize(values, renormalize=renormalize), None

    logging.info(f"Loaded {scores.n_rows} rows with {L} classes from {path}")
    return ScoreFile(scores, labels, logits, mode, path)


def read_dataset(path: Union[str, Path], mode: str = PROBS, renormalize: bool = False) -> Dataset:
    """Labelled score file as a Dataset with 0-based labels."""
    return read_scores(path, mode, renormalize).dataset()


# Prediction files

def predictions_frame(preds, labels: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Tabular form of a prediction; classes and labels are written 1-based."""
    if isinstance(preds, TopLabelDecomposition):
        frame = pd.DataFrame({"top_class": preds.top_class + 1, "top_prob": preds.top_prob})
    elif isinstance(preds, TopKDecomposition):
        frame = pd.DataFrame()
        for k in range(preds.K):
            frame[f"class_{k + 1}"] = preds.rank_class[k] + 1
            frame[f"prob_{k + 1}"] = preds.rank_prob[k]
    elif isinstance(preds, (ProbMatrix, np.ndarray)):
        values = preds.values if isinstance(preds, ProbMatrix) else np.asarray(preds, dtype=float)
        frame = pd.DataFrame(values, columns=[f"p_{l + 1}" for l in range(values.shape[1])])
    else:
        raise UnsupportedPredictor(f"Cannot write predictions of type {type(preds).__name__}")
    if labels is not None:
        frame[LABEL_COLUMN] = np.asarray(labels) + 1
    return frame


def write_predictions(preds, output_path: Optional[Union[str, Path]] = None,
                      labels: Optional[np.ndarray] = None) -> str:
    """Write predictions as CSV to output_path, or to stdout when it is None."""
    text = predictions_frame(preds, labels).to_csv(index=False, lineterminator="\n")
    if output_path is None:
        sys.stdout.write(text)
    else:
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text(text)
        logging.info(f"Wrote predictions to {output_path}")
    return text


def read_predictions(path: Union[str, Path], n_classes: Optional[int] = None) -> Tuple[Any, Optional[np.ndarray]]:
    """
    Read a prediction CSV written by write_predictions.

    Returns:
        tuple: (TopLabelDecomposition, TopKDecomposition or n x L array; 0-based labels or None)
    """
    path = Path(path)
    frame = _load_frame(path)
    columns = [c for c in frame.columns if c != LABEL_COLUMN]

    if columns == ["top_class", "top_prob"]:
        block = _numeric_block(frame, columns, path)
        preds = TopLabelDecomposition(block[:, 0].astype(np.int64) - 1, block[:, 1])
    elif columns and all(re.match(r"^(class|prob)_\d+$", c) for c in columns):
        K = len(columns) // 2
        expected = [name for k in range(1, K + 1) for name in (f"class_{k}", f"prob_{k}")]
        if columns != expected:
            raise MalformedHeader(f"{path}: top-K prediction columns must be {', '.join(expected)}")
        block = _numeric_block(frame, columns, path)
        preds = TopKDecomposition(block[:, 0::2].T.astype(np.int64) - 1, block[:, 1::2].T)
    else:
        score_columns = _score_columns(list(frame.columns), COLUMN_PREFIX[PROBS], path)
        preds = _numeric_block(frame, score_columns, path)
        n_classes = n_classes or preds.shape[1]

    labels = _parse_labels(frame[LABEL_COLUMN], n_classes, path) if LABEL_COLUMN in frame.columns else None
    logging.info(f"Loaded {len(frame)} predictions from {path}")
    return preds, labels


# Model files

def _binary_to_dict(model: BinaryModel) -> Dict[str, Any]:
    if isinstance(model, IdentityModel):
        return {"kind": IDENTITY}
    return {
        "kind": HISTOGRAM_BINNING,
        "B": int(model.B),
        "upper_edges": model.upper_edges.tolist(),
        "bin_values": model.bin_values.tolist(),
        "bin_counts": model.bin_counts.tolist(),
        "delta": float(model.delta),
        "seed": int(model.seed),
    }


def _scheme_to_dict(scheme) -> Dict[str, Any]:
    if isinstance(scheme, SierpinskiScheme):
        return {"kind": scheme.kind, "L": scheme.L, "q": scheme.q}
    if isinstance(scheme, GridScheme):
        return {"kind": scheme.kind, "L": scheme.L, "K": scheme.K}
    return {
        "kind": scheme.kind,
        "B": scheme.B,
        "c": scheme.c,
        "q_vectors": scheme.q_vectors.tolist(),
        "thresholds": scheme.thresholds.tolist(),
    }


def model_to_dict(model: Model) -> Dict[str, Any]:
    """JSON-ready dict for any fitted model."""
    payload: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "notion": model.notion,
        "n_classes": int(model.n_classes),
        "warnings": list(getattr(model, "warnings", ())),
    }
    if isinstance(model, (TopLabelModel, ClassWiseModel)):
        payload["calibrator"] = model.spec.to_dict()
        payload["per_class"] = [_binary_to_dict(m) for m in model.per_class]
    elif isinstance(model, ConfidenceModel):
        payload["calibrator"] = model.spec.to_dict()
        payload["pooled"] = _binary_to_dict(model.calibrator)
    elif isinstance(model, TopKModel):
        payload["calibrator"] = model.spec.to_dict()
        payload["K"] = int(model.K)
        payload["per_rank"] = [[_binary_to_dict(m) for m in row] for row in model.per_rank]
    elif isinstance(model, TemperatureModel):
        payload["temperature"] = {
            "T": float(model.T),
            "search_range": [float(v) for v in model.search_range],
            "fit_nll": float(model.fit_nll),
            "nll_at_one": float(model.nll_at_one),
            "converged": bool(model.converged),
        }
    elif isinstance(model, CanonicalModel):
        payload["scheme"] = _scheme_to_dict(model.scheme)
        payload["pi_hat"] = model.pi_hat.tolist()
        payload["bin_counts"] = model.bin_counts.tolist()
    else:
        raise UnsupportedPredictor(f"Cannot serialize model of type {type(model).__name__}")
    return payload


def save_model(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(model_to_dict(model)))
    logging.info(f"Saved {model.notion} model to {path}")
    return path


def _require_keys(obj: Any, expected: set, where: str) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{where} must be a JSON object")
    unknown = set(obj) - expected
    missing = expected - set(obj)
    if unknown or missing:
        details = []
        if unknown:
            details.append(f"unknown fields {sorted(unknown)}")
        if missing:
            details.append(f"missing fields {sorted(missing)}")
        raise SchemaViolation(f"{where}: {'; '.join(details)}")
    return obj


def _binary_from_dict(obj: Any, where: str) -> BinaryModel:
    if isinstance(obj, dict) and obj.get("kind") == IDENTITY:
        _require_keys(obj, {"kind"}, where)
        return IdentityModel()
    obj = _require_keys(obj, HB_KEYS, where)
    if obj["kind"] != HISTOGRAM_BINNING:
        raise SchemaViolation(f"{where}: unknown calibrator kind {obj['kind']!r}")
    return BinaryHBModel(
        B=int(obj["B"]),
        upper_edges=np.array(obj["upper_edges"], dtype=float),
        bin_values=np.array(obj["bin_values"], dtype=float),
        bin_counts=np.array(obj["bin_counts"], dtype=np.int64),
        delta=float(obj["delta"]),
        seed=int(obj["seed"]),
    )


def _spec_from_dict(obj: Any) -> BinaryCalibratorSpec:
    obj = _require_keys(obj, SPEC_KEYS, "calibrator")
    return BinaryCalibratorSpec(obj["kind"], obj["bins_policy"], int(obj["bins_param"]),
                                float(obj["delta"]), int(obj["seed"]))


def _scheme_from_dict(obj: Any):
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind not in SCHEME_KEYS:
        raise SchemaViolation(f"scheme: unknown kind {kind!r}")
    obj = _require_keys(obj, SCHEME_KEYS[kind], "scheme")
    if kind == "sierpinski":
        return SierpinskiScheme(int(obj["L"]), int(obj["q"]))
    if kind == "grid":
        return GridScheme(int(obj["L"]), int(obj["K"]))
    return ProjectionHBScheme(int(obj["B"]), np.array(obj["q_vectors"], dtype=float),
                              np.array(obj["thresholds"], dtype=float), int(obj["c"]))


def model_from_dict(payload: Any) -> Model:
    """
    Rebuild a model from its JSON dict.

    Raises:
        VersionMismatch: format_version is not the supported one
        SchemaViolation: unknown notion, unknown or missing fields, or inconsistent arrays
    """
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise SchemaViolation("Model file must be a JSON object with a format_version")
    if payload["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(f"Model format version {payload['format_version']} is not supported (expected {FORMAT_VERSION})")
    notion = payload.get("notion")
    if notion not in NOTION_KEYS:
        raise SchemaViolation(f"Unknown notion {notion!r}")
    _require_keys(payload, NOTION_KEYS[notion], "model")

    try:
        L = int(payload["n_classes"])
        warnings = tuple(str(w) for w in payload["warnings"])
        if notion in (TOP_LABEL, CLASS_WISE, NORMALIZED):
            per_class = tuple(_binary_from_dict(m, f"per_class[{i}]") for i, m in enumerate(payload["per_class"]))
            if len(per_class) != L:
                raise SchemaViolation(f"Expected {L} per-class calibrators, got {len(per_class)}")
            cls = {TOP_LABEL: TopLabelModel, CLASS_WISE: ClassWiseModel, NORMALIZED: NormalizedModel}[notion]
            return cls(L, per_class, _spec_from_dict(payload["calibrator"]), warnings)
        if notion == CONFIDENCE:
            return ConfidenceModel(L, _binary_from_dict(payload["pooled"], "pooled"),
                                   _spec_from_dict(payload["calibrator"]), warnings)
        if notion in (TOP_K_LABEL, TOP_K_CONFIDENCE):
            K = int(payload["K"])
            per_rank = tuple(
                tuple(_binary_from_dict(m, f"per_rank[{k}][{l}]") for l, m in enumerate(row))
                for k, row in enumerate(payload["per_rank"])
            )
            width = L if notion == TOP_K_LABEL else 1
            if len(per_rank) != K or any(len(row) != width for row in per_rank):
                raise SchemaViolation(f"per_rank must hold {K} rows of {width} calibrators")
            variant = "label" if notion == TOP_K_LABEL else "confidence"
            return TopKModel(L, K, variant, per_rank, _spec_from_dict(payload["calibrator"]), warnings)
        if notion == TEMPERATURE:
            obj = _require_keys(payload["temperature"], TEMPERATURE_KEYS, "temperature")
            return TemperatureModel(float(obj["T"]), tuple(float(v) for v in obj["search_range"]),
                                    float(obj["fit_nll"]), float(obj["nll_at_one"]), bool(obj["converged"]), L)
        scheme = _scheme_from_dict(payload["scheme"])
        pi_hat = np.array(payload["pi_hat"], dtype=float)
        if pi_hat.shape != (scheme.n_bins, L):
            raise SchemaViolation(f"pi_hat has shape {pi_hat.shape}, expected ({scheme.n_bins}, {L})")
        return CanonicalModel(scheme, pi_hat, np.array(payload["bin_counts"], dtype=np.int64), warnings)
    except (SchemaViolation, VersionMismatch):
        raise
    except (McalibError, TypeError, KeyError, IndexError, ValueError) as e:
        raise SchemaViolation(f"Invalid {notion} model: {e}") from e


def load_model(path: Union[str, Path]) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"{path} is not valid JSON: {e}") from e
    model = model_from_dict(payload)
    logging.info(f"Loaded {model.notion} model ({model.n_classes} classes) from {path}")
    return model
