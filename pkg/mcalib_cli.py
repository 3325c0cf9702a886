#!/usr/bin/env python3
"""
mcalib CLI
Command-line interface for fitting, applying and evaluating multiclass calibrators
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
from tqdm import tqdm

from baselines_scaling import TemperatureModel, apply_temperature, fit_temperature, log_scores
from binary_calibrators import BinaryCalibratorSpec, default_delta, default_points_per_bin
from bounds import BoundRequest, required_points_per_bin, theorem1_bounds, theorem2_bounds
from canonical_binning import CanonicalModel, build_scheme, fit_canonical, predict_canonical_matrix
from core_data import ProbMatrix, TopKDecomposition, TopLabelDecomposition, top_label
from m2b_wrappers import NORMALIZED, M2BNotionSpec, fit_m2b, fit_normalized, predict_m2b
from metrics import (
    BinningScheme,
    compute_metric,
    default_ece_bins,
    ece_sweep,
    per_class_tl_ece,
    reliability_diagram,
    top_k_ece,
    validity_curve,
)
from model_io import LOGITS, PROBS, ScoreFile, load_model, model_to_dict, read_predictions, read_scores, save_model, write_predictions
from report_builder import CalibrationReportBuilder
from synthetic import coverage_experiment, example1_distribution, random_distribution
from utils import (
    TOOL_VERSION,
    InvalidHyperparameters,
    MalformedHeader,
    McalibError,
    UnsupportedPredictor,
    default_seed,
    write_json,
)

NOTIONS = ["top-label", "class-wise", "confidence", "normalized", "top-k-label", "top-k-confidence",
           "temperature", "canonical"]
METRIC_NAMES = ["conf-ece", "tl-ece", "tl-mce", "cw-ece", "conf-mce"]


def setup_logging(debug: bool = False, quiet: bool = False) -> None:
    """
    Configure the root logger: console on stderr, plus a file when MCALIB_LOG_FILE is set.

    Args:
        debug: Log at DEBUG level
        quiet: Only show warnings and errors on the console
    """
    log_level = logging.DEBUG if debug else logging.INFO
    root = logging.getLogger("")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    root.setLevel(log_level)

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING if quiet else log_level)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(console)

    log_file = os.getenv("MCALIB_LOG_FILE")
    if log_file:
        file_handler = logging.FileHandler(log_file, mode="a")
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
        root.addHandler(file_handler)


def _status(args, message: str) -> None:
    """Human-readable progress on stderr, so stdout stays machine-readable."""
    if not args.quiet:
        tqdm.write(message, file=sys.stderr)


def _parse_list(text: Optional[str], cast) -> Optional[List]:
    if text is None:
        return None
    try:
        return [cast(item) for item in str(text).split(",") if item.strip()]
    except ValueError:
        raise InvalidHyperparameters(f"Could not parse {text!r} as a comma-separated list")


def _internal(name: str) -> str:
    return name.replace("-", "_")


def _calibrator_spec(args) -> BinaryCalibratorSpec:
    if args.calibrator == "identity":
        return BinaryCalibratorSpec.identity(args.seed)
    if args.bins is not None:
        return BinaryCalibratorSpec.fixed_bins(args.bins, args.delta, args.seed)
    return BinaryCalibratorSpec.points_per_bin(args.points_per_bin or default_points_per_bin(), args.delta, args.seed)


def predict_with(model, score_file: ScoreFile):
    """Apply any fitted model to a parsed score file."""
    if isinstance(model, TemperatureModel):
        logits = score_file.logits if score_file.logits is not None else log_scores(score_file.scores)
        return apply_temperature(model, logits)
    if isinstance(model, CanonicalModel):
        return predict_canonical_matrix(model, score_file.scores)
    return predict_m2b(model, score_file.scores)


def fit_model(args, score_file: ScoreFile):
    data = score_file.dataset()
    notion = _internal(args.notion)
    if notion == "temperature":
        logits = score_file.logits if score_file.logits is not None else log_scores(data.scores)
        return fit_temperature(logits, data.labels)
    if notion == "canonical":
        bins = args.bins
        if args.scheme == "projection" and bins is None:
            bins = max(1, data.n_rows // (args.points_per_bin or default_points_per_bin()))
        scheme = build_scheme(args.scheme, data.n_classes, data.scores, bins=bins, depth=args.depth,
                              grid_k=args.grid_k, directions=_internal(args.directions), seed=args.seed)
        return fit_canonical(scheme, data)
    spec = _calibrator_spec(args)
    if notion == NORMALIZED:
        return fit_normalized(data, spec)
    return fit_m2b(M2BNotionSpec(notion, args.top_k), data, spec)


def cmd_fit(args) -> int:
    score_file = read_scores(args.input, args.mode, args.renormalize)
    if args.dry_run:
        data = score_file.dataset()
        print("[DRY RUN] Configuration:")
        print(f"  - Notion: {args.notion}")
        print(f"  - Rows: {data.n_rows}, classes: {data.n_classes}")
        if args.notion not in ("temperature", "canonical"):
            print(f"  - Calibrator: {_calibrator_spec(args).to_dict()}")
        print(f"  - Output: {args.output or 'stdout'}")
        print("[DRY RUN] Would fit the model without writing files")
        return 0

    model = fit_model(args, score_file)
    if args.output:
        save_model(model, args.output)
    else:
        write_json(model_to_dict(model))
    for warning in getattr(model, "warnings", ()):
        _status(args, f"⚠️  {warning}")
    bins = getattr(model, "total_bins", None)
    _status(args, f"✅ Fitted {model.notion} model on {score_file.scores.n_rows} rows"
                  + (f" ({bins} bins in total)" if bins is not None else ""))
    if hasattr(model, "bins_per_class"):
        logging.info(f"Bins per class: {list(model.bins_per_class)}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    score_file = read_scores(args.input, args.mode, args.renormalize)
    preds = predict_with(model, score_file)
    write_predictions(preds, args.output, score_file.labels)
    _status(args, f"✅ Wrote {score_file.scores.n_rows} predictions")
    return 0


def _load_eval_inputs(args):
    """(predictions, 0-based labels, L, canonical bin ids or None) for eval and diagram."""
    if args.preds:
        preds, labels = read_predictions(args.preds)
        if labels is None:
            raise MalformedHeader(f"{args.preds} has no 'label' column")
        L = preds.shape[1] if not isinstance(preds, (TopLabelDecomposition, TopKDecomposition)) else None
        return preds, labels, L, None
    score_file = read_scores(args.input, args.mode, args.renormalize)
    data = score_file.dataset()
    if not args.model:
        return data.scores, data.labels, data.n_classes, None
    model = load_model(args.model)
    groups = model.scheme.assign_matrix(data.scores.values) if isinstance(model, CanonicalModel) else None
    return predict_with(model, score_file), data.labels, data.n_classes, groups


def _as_top_label(preds) -> TopLabelDecomposition:
    if isinstance(preds, TopLabelDecomposition):
        return preds
    return top_label(preds if isinstance(preds, ProbMatrix) else ProbMatrix(preds))


def _scheme(args) -> BinningScheme:
    if getattr(args, "unbinned", False):
        return BinningScheme.unbinned()
    return BinningScheme.equal_width(args.bins or default_ece_bins())


def cmd_eval(args) -> int:
    preds, labels, L, _ = _load_eval_inputs(args)
    metric = _internal(args.metric)
    scheme = _scheme(args)
    result = {"metric": metric, "scheme": scheme.to_dict(), "n": int(len(labels))}

    if isinstance(preds, TopKDecomposition):
        variants = {"tl_ece": "label", "conf_ece": "confidence"}
        if metric not in variants:
            raise UnsupportedPredictor(f"Top-K predictions support tl-ece and conf-ece, not {args.metric}")
        breakdown = top_k_ece(preds, labels, scheme, variants[metric])
        result.update({"value": breakdown["mean"], "per_rank": breakdown["per_rank"]})
    else:
        result["value"] = compute_metric(metric, preds, labels, scheme)
        if args.sweep:
            result["sweep"] = ece_sweep(preds, labels, metric)
        if args.per_class:
            result["per_class"] = per_class_tl_ece(_as_top_label(preds), labels, scheme, L)

    write_json(result, args.output)
    return 0


def _write_table(frame: pd.DataFrame, output: str) -> None:
    path = Path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logging.info(f"Wrote {path}")


def cmd_diagram(args) -> int:
    preds, labels, L, groups = _load_eval_inputs(args)
    if isinstance(preds, TopKDecomposition):
        raise UnsupportedPredictor("Diagrams need a single top-label prediction per row")
    class_filter = None if args.class_filter is None else args.class_filter - 1

    if args.type == "validity":
        curve = validity_curve(preds, labels, _internal(args.grouping), args.grid_step, _scheme(args),
                               class_filter=class_filter, groups=groups)
        payload = curve.to_dict()
        table = pd.DataFrame({"epsilon": payload["epsilon"], "V": payload["V"]})
    else:
        data = reliability_diagram(_as_top_label(preds), labels, args.bins or default_ece_bins(), _internal(args.type),
                                   class_filter=class_filter)
        payload = data.to_dict()
        table = pd.DataFrame(payload["points"])

    if args.output and str(args.output).lower().endswith(".csv"):
        _write_table(table, args.output)
    else:
        write_json(payload, args.output)
    return 0


def cmd_bounds(args) -> int:
    ks = _parse_list(args.k, int) or [default_points_per_bin()]
    alphas = _parse_list(args.alpha, float) or [0.1]
    if args.theorem == 1:
        if len(ks) != 1 or len(alphas) != 1:
            raise InvalidHyperparameters("--theorem 1 takes a single k and a single alpha")
        result = theorem1_bounds(BoundRequest(k=ks[0], n=args.n, alpha=alphas[0], delta=args.delta))
    else:
        request = BoundRequest(
            k=ks[0],
            n=args.n,
            alpha=alphas[0],
            delta=args.delta,
            k_per_class=ks if len(ks) > 1 else None,
            alpha_per_class=alphas if len(alphas) > 1 else None,
        )
        result = theorem2_bounds(request, args.classes)
    if args.target_ece is not None:
        result["required_points_per_bin"] = required_points_per_bin(args.target_ece, args.delta)
    write_json(result, args.output)
    return 0


def cmd_simulate(args) -> int:
    if args.distribution == "example1":
        dist = example1_distribution()
    else:
        dist = random_distribution(args.classes, args.atoms, args.seed, args.sharpness,
                                   args.miscalibration, args.degenerate)
    report = coverage_experiment(dist, _internal(args.notion), args.n, args.k, args.delta, args.alpha,
                                 args.replications, args.seed, progress=not args.quiet)
    payload = report.to_dict()
    payload["distribution"] = {"kind": args.distribution, "atoms": dist.n_atoms, "classes": dist.n_classes}
    write_json(payload, args.output)
    return 0


def cmd_report(args) -> int:
    builder = CalibrationReportBuilder(mode=args.mode, bins=args.bins, points_per_bin=args.points_per_bin,
                                       delta=args.delta, seed=args.seed, renormalize=args.renormalize)
    output_dir = Path(args.output)
    tag = args.tag or Path(args.calibration).stem

    if args.dry_run:
        for path in (args.calibration, args.test):
            if not Path(path).exists():
                raise FileNotFoundError(f"Input file not found: {path}")
        print("[DRY RUN] Configuration:")
        for key, value in sorted(builder.configuration().items()):
            print(f"  - {key}: {value}")
        print(f"  - Output directory: {output_dir}")
        print(f"[DRY RUN] Would write calibration_summary_{tag}.json and calibration_summary_{tag}.txt")
        return 0

    output_dir.mkdir(parents=True, exist_ok=True)
    progress = (lambda message: tqdm.write(message, file=sys.stderr)) if not args.quiet else (lambda message: None)
    with tqdm(total=5, desc="Building report", disable=args.quiet, file=sys.stderr) as pbar:
        progress("Loading calibration and test splits...")
        calibration, test, _ = builder.load_splits(args.calibration, args.test)
        pbar.update(1)

        progress("Fitting calibrators...")
        models = builder.fit_methods(calibration)
        pbar.update(1)

        progress("Evaluating on the test split...")
        metrics = builder.calculate_metrics(models, test)
        pbar.update(1)

        progress("Writing text summary...")
        text_path = builder.generate_text_summary(metrics, output_dir, tag)
        pbar.update(1)

        progress("Writing JSON summary...")
        json_path = builder.generate_json_summary(calibration, test, metrics, args.calibration, args.test,
                                                  output_dir, tag)
        pbar.update(1)

    _status(args, "\n✅ Report generation completed successfully!")
    _status(args, f"📁 Output directory: {output_dir}")
    _status(args, f"📄 Generated files:\n  - {json_path.name}\n  - {text_path.name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--debug", action="store_true", help="Enable debug logging and tracebacks")
    common.add_argument("--quiet", action="store_true", help="Suppress progress output and info logs")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--mode", choices=[PROBS, LOGITS], default=PROBS,
                        help="Input columns are p_1..p_L (probs) or logit_1..logit_L (logits)")
    inputs.add_argument("--renormalize", action="store_true", help="Divide probability rows by their sums")

    parser = argparse.ArgumentParser(
        prog="mcalib",
        description="Multiclass post-hoc calibration with histogram binning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s fit --notion top-label --points-per-bin 50 --input cal.csv --output model.json
  %(prog)s predict --model model.json --input test.csv --output preds.csv
  %(prog)s eval --metric tl-ece --bins 15 --model model.json --input test.csv
  %(prog)s bounds --theorem 1 --k 50 --n 5000 --alpha 0.1
  %(prog)s report --calibration cal.csv --test test.csv --output reports/
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", parents=[common, inputs], help="Fit a calibrator on a labelled score file")
    fit.add_argument("--notion", choices=NOTIONS, required=True)
    fit.add_argument("--calibrator", choices=["hb", "identity"], default="hb")
    size = fit.add_mutually_exclusive_group()
    size.add_argument("--points-per-bin", type=int, help=f"Points per bin k (default {default_points_per_bin()})")
    size.add_argument("--bins", type=int, help="Fixed number of bins B")
    fit.add_argument("--delta", type=float, default=default_delta())
    fit.add_argument("--seed", type=int, default=default_seed())
    fit.add_argument("--top-k", type=int, help="K for the top-k notions")
    fit.add_argument("--scheme", choices=["sierpinski", "grid", "projection"], default="sierpinski")
    fit.add_argument("--depth", type=int, default=2, help="Sierpinski depth q")
    fit.add_argument("--grid-k", type=int, default=4, help="Grid resolution K")
    fit.add_argument("--directions", choices=["canonical-cycle", "seeded-random"], default="canonical-cycle")
    fit.add_argument("--input", required=True)
    fit.add_argument("--output", help="Model JSON path (default: stdout)")
    fit.add_argument("--dry-run", action="store_true", help="Validate inputs without fitting or writing")
    fit.set_defaults(handler=cmd_fit)

    predict = sub.add_parser("predict", parents=[common, inputs], help="Apply a fitted model")
    predict.add_argument("--model", required=True)
    predict.add_argument("--input", required=True)
    predict.add_argument("--output", help="Prediction CSV path (default: stdout)")
    predict.set_defaults(handler=cmd_predict)

    evaluation = sub.add_parser("eval", parents=[common, inputs], help="Estimate a calibration metric")
    evaluation.add_argument("--metric", choices=METRIC_NAMES, required=True)
    binning = evaluation.add_mutually_exclusive_group()
    binning.add_argument("--bins", type=int, help=f"Equal-width bins (default {default_ece_bins()})")
    binning.add_argument("--unbinned", action="store_true", help="Group by exact predicted value")
    evaluation.add_argument("--model")
    source = evaluation.add_mutually_exclusive_group(required=True)
    source.add_argument("--input")
    source.add_argument("--preds", help="Prediction CSV with a label column")
    evaluation.add_argument("--sweep", action="store_true", help="Add the metric for B = 5..25")
    evaluation.add_argument("--per-class", action="store_true", help="Add the per-class TL-ECE breakdown")
    evaluation.add_argument("--output")
    evaluation.set_defaults(handler=cmd_eval)

    diagram = sub.add_parser("diagram", parents=[common, inputs], help="Reliability or validity data")
    diagram.add_argument("--type", choices=["confidence", "top-label", "validity"], required=True)
    diagram_binning = diagram.add_mutually_exclusive_group()
    diagram_binning.add_argument("--bins", type=int)
    diagram_binning.add_argument("--unbinned", action="store_true")
    diagram.add_argument("--grouping", choices=["top-label", "confidence", "canonical"], default="top-label")
    diagram.add_argument("--grid-step", type=float, default=0.01)
    diagram.add_argument("--class", dest="class_filter", type=int, help="Only rows predicted as this class")
    diagram.add_argument("--model")
    diagram_source = diagram.add_mutually_exclusive_group(required=True)
    diagram_source.add_argument("--input")
    diagram_source.add_argument("--preds")
    diagram.add_argument("--output", help="JSON path, or .csv for a flat table (default: stdout)")
    diagram.set_defaults(handler=cmd_diagram)

    bounds = sub.add_parser("bounds", parents=[common], help="Closed-form calibration guarantees")
    bounds.add_argument("--theorem", type=int, choices=[1, 2], required=True)
    bounds.add_argument("--k", help="Points per bin; comma list for per-class values")
    bounds.add_argument("--n", type=int)
    bounds.add_argument("--alpha", help="Failure probability; comma list for per-class values")
    bounds.add_argument("--delta", type=float, default=default_delta())
    bounds.add_argument("--classes", type=int, help="Number of classes L")
    bounds.add_argument("--target-ece", type=float, help="Also report the k reaching this expected ECE")
    bounds.add_argument("--output")
    bounds.set_defaults(handler=cmd_bounds)

    simulate = sub.add_parser("simulate", parents=[common], help="Monte-Carlo coverage check")
    simulate.add_argument("--replications", type=int, default=100)
    simulate.add_argument("--n", type=int, default=5000)
    simulate.add_argument("--k", type=int, default=default_points_per_bin())
    simulate.add_argument("--alpha", type=float, default=0.1)
    simulate.add_argument("--delta", type=float, default=default_delta())
    simulate.add_argument("--seed", type=int, default=default_seed())
    simulate.add_argument("--notion", choices=["top-label", "class-wise"], default="top-label")
    simulate.add_argument("--distribution", choices=["random", "example1"], default="random")
    simulate.add_argument("--classes", type=int, default=3)
    simulate.add_argument("--atoms", type=int, default=50)
    simulate.add_argument("--sharpness", type=float, default=3.0)
    simulate.add_argument("--miscalibration", type=float, default=0.5)
    simulate.add_argument("--degenerate", action="store_true")
    simulate.add_argument("--output")
    simulate.set_defaults(handler=cmd_simulate)

    report = sub.add_parser("report", parents=[common, inputs], help="Compare calibrators on a split")
    report.add_argument("--calibration", required=True)
    report.add_argument("--test", required=True)
    report.add_argument("--output", default="./output", help="Output directory (default: ./output)")
    report.add_argument("--tag", help="Report file tag (default: calibration file stem)")
    report.add_argument("--bins", type=int, default=default_ece_bins())
    report.add_argument("--points-per-bin", type=int)
    report.add_argument("--delta", type=float, default=default_delta())
    report.add_argument("--seed", type=int, default=default_seed())
    report.add_argument("--dry-run", action="store_true")
    report.set_defaults(handler=cmd_report)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one CLI invocation.

    Returns:
        int: 0 on success, 1 on data or schema errors, 2 on usage errors
    """
    try:
        parser = build_parser()
    except McalibError as e:
        # MCALIB_* defaults are read here; a bad value is a usage error
        print(f"❌ Error: {e}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    setup_logging(args.debug, args.quiet)
    try:
        return args.handler(args)

    except FileNotFoundError as e:
        error_msg = f"File not found: {e}"
        if args.debug:
            logging.exception(error_msg)
        else:
            logging.error(error_msg)
        print(f"❌ Error: {error_msg}", file=sys.stderr)
        print("💡 Tip: Check that file paths are correct and files exist", file=sys.stderr)
        return 1

    except McalibError as e:
        error_msg = f"Invalid input ({type(e).__name__}): {e}"
        if args.debug:
            logging.exception(error_msg)
        else:
            logging.error(error_msg)
        print(f"❌ Error: {error_msg}", file=sys.stderr)
        return 1

    except Exception as e:
        error_msg = f"Processing error: {e}"
        if args.debug:
            logging.exception(error_msg)
        else:
            logging.error(error_msg)
        print(f"❌ Error: {error_msg}", file=sys.stderr)
        print("💡 Tip: Use --debug flag for detailed error information", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
