"""
mcalib

Multiclass post-hoc calibration: histogram binning wrapped around the
top-label, class-wise, confidence and top-K notions, simplex binning for
canonical calibration, calibration metrics and distribution-free bounds.
"""

from .baselines_scaling import TemperatureModel, apply_temperature, fit_temperature
from .binary_calibrators import BinaryCalibratorSpec, fit_binary_hb, predict_binary_hb
from .bounds import BoundRequest, theorem1_bounds, theorem2_bounds
from .canonical_binning import (
    CanonicalModel,
    GridScheme,
    SierpinskiScheme,
    fit_canonical,
    fit_projection_hb,
    grid_assign,
    predict_canonical,
    sierpinski_assign,
)
from .core_data import Dataset, ProbMatrix, softmax_rows, top_k, top_label, validate_and_normalize
from .m2b_wrappers import M2BNotionSpec, fit_m2b, predict_m2b
from .metrics import BinningScheme, compute_metric, exact_metrics, reliability_diagram, validity_curve
from .model_io import load_model, read_dataset, save_model
from .report_builder import CalibrationReportBuilder
from .synthetic import coverage_experiment, example1_distribution, random_distribution, sample
from .utils import McalibError

__all__ = [
    "BinaryCalibratorSpec",
    "BinningScheme",
    "BoundRequest",
    "CalibrationReportBuilder",
    "CanonicalModel",
    "Dataset",
    "GridScheme",
    "M2BNotionSpec",
    "McalibError",
    "ProbMatrix",
    "SierpinskiScheme",
    "TemperatureModel",
    "apply_temperature",
    "compute_metric",
    "coverage_experiment",
    "exact_metrics",
    "example1_distribution",
    "fit_binary_hb",
    "fit_canonical",
    "fit_m2b",
    "fit_projection_hb",
    "fit_temperature",
    "grid_assign",
    "load_model",
    "predict_binary_hb",
    "predict_canonical",
    "predict_m2b",
    "random_distribution",
    "read_dataset",
    "reliability_diagram",
    "sample",
    "save_model",
    "sierpinski_assign",
    "softmax_rows",
    "theorem1_bounds",
    "theorem2_bounds",
    "top_k",
    "top_label",
    "validate_and_normalize",
    "validity_curve",
]
