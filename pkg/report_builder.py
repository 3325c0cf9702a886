#!/usr/bin/env python3
"""
Calibration Report Builder
Compares uncalibrated scores, temperature scaling and the histogram-binning
wrappers on a calibration/test split and writes JSON and text summaries
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from baselines_scaling import apply_temperature, fit_temperature, log_scores
from binary_calibrators import BinaryCalibratorSpec, default_delta
from core_data import Dataset, accuracy
from m2b_wrappers import fit_class_wise, fit_confidence, fit_normalized, fit_top_label
from metrics import (
    BinningScheme,
    compute_metric,
    default_ece_bins,
    default_sweep_range,
    ece_sweep,
    per_class_tl_ece,
    resolve_predictions,
)
from model_io import PROBS, read_scores
from utils import TOOL_VERSION, ClassCountMismatch, default_seed, generate_metadata, write_json

HB_METHODS = ("tl_hb", "cw_hb", "n_hb", "conf_hb")
METHOD_TITLES = {
    "base": "Uncalibrated",
    "temperature": "Temperature scaling",
    "tl_hb": "Top-label HB",
    "cw_hb": "Class-wise HB",
    "n_hb": "Normalized HB",
    "conf_hb": "Confidence HB",
}
REPORT_METRICS = ("conf_ece", "tl_ece", "tl_mce", "cw_ece", "conf_mce")


class CalibrationReportBuilder:
    def __init__(self, mode: str = PROBS, bins: Optional[int] = None, points_per_bin: Optional[int] = None,
                 delta: Optional[float] = None, seed: Optional[int] = None, renormalize: bool = False,
                 sweep_range: Optional[Tuple[int, int]] = None):
        """
        Args:
            mode: Input mode of both files ('probs' or 'logits')
            bins: B for equal-width evaluation and for the fixed-bins HB fits (default MCALIB_ECE_BINS)
            points_per_bin: Fit HB with k points per bin instead of B fixed bins
            delta: Tie-break perturbation bound (default MCALIB_DELTA)
            seed: Seed for all HB fits (default MCALIB_SEED)
            renormalize: Renormalize probability rows on load
            sweep_range: Inclusive range of B for the ECE sweep (default MCALIB_SWEEP_MIN..MAX)
        """
        self.mode = mode
        bins = default_ece_bins() if bins is None else bins
        delta = default_delta() if delta is None else delta
        self.bins = bins
        self.points_per_bin = points_per_bin
        self.delta = delta
        self.seed = default_seed() if seed is None else seed
        self.renormalize = renormalize
        self.sweep_range = default_sweep_range() if sweep_range is None else tuple(sweep_range)

        if points_per_bin is None:
            self.calibrator_spec = BinaryCalibratorSpec.fixed_bins(bins, delta, self.seed)
        else:
            self.calibrator_spec = BinaryCalibratorSpec.points_per_bin(points_per_bin, delta, self.seed)

        self.calibration_logits: Optional[np.ndarray] = None
        self.test_logits: Optional[np.ndarray] = None

    def configuration(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "bins": self.bins,
            "calibrator": self.calibrator_spec.to_dict(),
            "renormalize": self.renormalize,
            "sweep_range": list(self.sweep_range),
        }

    def load_splits(self, calibration_file, test_file) -> Tuple[Dataset, Dataset, Optional[Dict[str, np.ndarray]]]:
        """Load both splits; logits are kept when the files carry them."""
        logging.info(f"Loading calibration split from {calibration_file}")
        calibration = read_scores(calibration_file, self.mode, self.renormalize)
        logging.info(f"Loading test split from {test_file}")
        test = read_scores(test_file, self.mode, self.renormalize)

        cal_data, test_data = calibration.dataset(), test.dataset()
        if cal_data.n_classes != test_data.n_classes:
            raise ClassCountMismatch(
                f"Calibration split has {cal_data.n_classes} classes but the test split has {test_data.n_classes}"
            )

        self.calibration_logits, self.test_logits = calibration.logits, test.logits
        logits = None
        if calibration.logits is not None:
            logits = {"calibration": calibration.logits, "test": test.logits}
        return cal_data, test_data, logits

    def fit_methods(self, calibration: Dataset) -> Dict[str, Any]:
        """Fit every compared method on the calibration split, in report order."""
        logits = self.calibration_logits
        if logits is None:
            logits = log_scores(calibration.scores)
        models = {
            "base": None,
            "temperature": fit_temperature(logits, calibration.labels),
            "tl_hb": fit_top_label(calibration, self.calibrator_spec),
            "cw_hb": fit_class_wise(calibration, self.calibrator_spec),
            "n_hb": fit_normalized(calibration, self.calibrator_spec),
            "conf_hb": fit_confidence(calibration, self.calibrator_spec),
        }
        logging.info(f"Fitted {len(models)} methods on {calibration.n_rows} calibration rows")
        return models

    def _predict(self, method: str, model, test: Dataset):
        if method == "temperature":
            logits = self.test_logits if self.test_logits is not None else log_scores(test.scores)
            return resolve_predictions(apply_temperature(model, logits), test.scores)
        return resolve_predictions(model, test.scores)

    def calculate_metrics(self, models: Dict[str, Any], test: Dataset) -> Dict[str, Any]:
        """
        Evaluate every method on the test split.

        HB outputs take finitely many values, so their metrics group rows by
        exact value; the continuous-output methods use B equal-width bins.
        """
        results = {}
        for method, model in models.items():
            decomposition, vectors = self._predict(method, model, test)
            scheme = BinningScheme.unbinned() if method in HB_METHODS else BinningScheme.equal_width(self.bins)
            entry = {
                "title": METHOD_TITLES[method],
                "scheme": scheme.to_dict(),
                "accuracy": accuracy(decomposition.top_class, test.labels),
            }
            for name in REPORT_METRICS:
                if name == "cw_ece":
                    entry[name] = None if vectors is None else compute_metric(name, vectors, test.labels, scheme)
                else:
                    entry[name] = compute_metric(name, decomposition, test.labels, scheme)
            entry["total_bins"] = getattr(model, "total_bins", None)
            entry["per_class_tl_ece"] = per_class_tl_ece(decomposition, test.labels, scheme, test.n_classes)
            entry["tl_ece_sweep"] = ece_sweep(decomposition, test.labels, "tl_ece", *self.sweep_range)
            results[method] = entry
            logging.debug(f"{method}: tl_ece={entry['tl_ece']:.4f}, conf_ece={entry['conf_ece']:.4f}")
        return results

    def generate_text_summary(self, metrics: Dict[str, Any], output_dir: Path, tag: str) -> Path:
        """Write a plain-text comparison table."""
        output_path = Path(output_dir) / f"calibration_summary_{tag}.txt"

        with open(output_path, "w") as f:
            f.write(f"CALIBRATION SUMMARY - {tag.replace('_', ' ').upper()}\n")
            f.write("=" * 40 + "\n\n")
            f.write(f"Evaluation bins (continuous methods): {self.bins}\n")
            f.write(f"HB calibrator: {self.calibrator_spec.bins_policy} = {self.calibrator_spec.bins_param}\n\n")

            header = f"{'Method':<22}{'Acc':>8}" + "".join(f"{name:>10}" for name in REPORT_METRICS)
            f.write(header + "\n")
            f.write("-" * len(header) + "\n")
            for entry in metrics.values():
                cells = "".join(
                    f"{'-':>10}" if entry[name] is None else f"{100 * entry[name]:>10.2f}" for name in REPORT_METRICS
                )
                f.write(f"{entry['title']:<22}{100 * entry['accuracy']:>8.2f}{cells}\n")
            f.write("\n")

            f.write("WORST PREDICTED CLASSES BY TL-ECE CONTRIBUTION (top-label HB):\n")
            f.write("-" * 35 + "\n")
            per_class = metrics.get("tl_hb", {}).get("per_class_tl_ece", [])
            ranked = sorted((c for c in per_class if c["count"]), key=lambda c: -c["contribution"])[:5]
            for c in ranked:
                f.write(f"- Class {c['class']}: {c['count']} rows, TL-ECE {100 * c['tl_ece']:.2f}, "
                        f"contribution {100 * c['contribution']:.2f}\n")
            f.write("\n")

            f.write("Notes:\n")
            f.write("- Values are percentages\n")
            f.write("- HB methods are evaluated without binning (their outputs are discrete)\n")
            f.write("- cw_ece is blank for methods that only output a top-label probability\n")

        logging.info(f"Text summary generated: {output_path}")
        return output_path

    def generate_json_summary(self, calibration: Dataset, test: Dataset, metrics: Dict[str, Any],
                              calibration_file, test_file, output_dir: Path, tag: str) -> Path:
        """Write calibration_summary_<tag>.json with a metadata block (no timestamp)."""
        summary = {
            "version": TOOL_VERSION,
            "metadata": generate_metadata({"calibration": Path(calibration_file), "test": Path(test_file)}),
            "configuration": self.configuration(),
            "n_calibration": calibration.n_rows,
            "n_test": test.n_rows,
            "n_classes": calibration.n_classes,
            "metrics": metrics,
        }
        json_path = Path(output_dir) / f"calibration_summary_{tag}.json"
        write_json(summary, json_path)
        return json_path

    def build_report(self, calibration_file, test_file, output_dir: Union[str, Path],
                     tag: Optional[str] = None) -> Tuple[Path, Path]:
        """Full pipeline: load, fit, evaluate, write JSON and text summaries."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        tag = tag or Path(calibration_file).stem

        calibration, test, _ = self.load_splits(calibration_file, test_file)
        models = self.fit_methods(calibration)
        metrics = self.calculate_metrics(models, test)
        text_path = self.generate_text_summary(metrics, output_dir, tag)
        json_path = self.generate_json_summary(calibration, test, metrics, calibration_file, test_file, output_dir, tag)
        logging.info(f"Report written to {output_dir}")
        return json_path, text_path
