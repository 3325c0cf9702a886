#!/usr/bin/env python3
"""
Distribution-free calibration guarantees for histogram binning

Closed-form epsilons for top-label HB (points per bin k, calibration size n)
and class-wise HB (per-class k_l and alpha_l, combined by a union bound).
Natural logarithms throughout. The calculators are advisory and never gate
fitting.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from binary_calibrators import default_delta, default_points_per_bin
from utils import InvalidHyperparameters


@dataclass(frozen=True)
class BoundRequest:
    """Inputs to the bound calculators; per-class arrays are only read by theorem2_bounds."""

    k: int = field(default_factory=default_points_per_bin)
    n: Optional[int] = None
    alpha: float = 0.1
    delta: float = field(default_factory=default_delta)
    k_per_class: Optional[Sequence[int]] = None
    alpha_per_class: Optional[Sequence[float]] = None


def _check_k(k, what: str = "k") -> None:
    if int(k) != k or k < 2:
        raise InvalidHyperparameters(f"{what} must be an integer >= 2, got {k}")


def _check_alpha(alpha, what: str = "alpha") -> None:
    if not 0 < alpha < 1:
        raise InvalidHyperparameters(f"{what} must lie in (0, 1), got {alpha}")


def _check_common(req: BoundRequest) -> None:
    if not req.delta > 0:
        raise InvalidHyperparameters(f"delta must be > 0, got {req.delta}")
    if req.n is not None and (int(req.n) != req.n or req.n < 1):
        raise InvalidHyperparameters(f"n must be a positive integer, got {req.n}")


def eps_marginal(k: int, alpha: float, delta: float) -> float:
    """sqrt(log(2/alpha) / (2(k-1))) + delta."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * (k - 1))) + delta


def eps_conditional(k: int, n: int, alpha: float, delta: float) -> float:
    """sqrt(log(2n/(k alpha)) / (2(k-1))) + delta."""
    return math.sqrt(math.log(2.0 * n / (k * alpha)) / (2.0 * (k - 1))) + delta


def expected_ece_bound(k: int, delta: float) -> float:
    """sqrt(1/(2k)) + delta."""
    return math.sqrt(1.0 / (2.0 * k)) + delta


def theorem1_bounds(req: BoundRequest) -> Dict[str, Any]:
    """
    Guarantees for top-label histogram binning.

    With probability at least 1 - alpha the calibrator is eps_marginal
    marginally and eps_conditional conditionally top-label calibrated; the
    latter also bounds TL-MCE. The expected TL-ECE is at most
    sqrt(1/(2k)) + delta. eps_conditional needs n and is None without it.

    Raises:
        InvalidHyperparameters: k < 2, alpha outside (0, 1), delta <= 0, n < 1
    """
    _check_k(req.k)
    _check_alpha(req.alpha)
    _check_common(req)
    eps2 = None if req.n is None else eps_conditional(req.k, req.n, req.alpha, req.delta)
    return {
        "theorem": 1,
        "k": int(req.k),
        "n": None if req.n is None else int(req.n),
        "alpha": req.alpha,
        "delta": req.delta,
        "eps_marginal": eps_marginal(req.k, req.alpha, req.delta),
        "eps_conditional": eps2,
        "tl_mce_bound": eps2,
        "expected_tl_ece_bound": expected_ece_bound(req.k, req.delta),
        "note": "tl_mce_bound holds with probability at least 1 - alpha and equals eps_conditional",
    }


def theorem2_bounds(req: BoundRequest, n_classes: Optional[int] = None) -> Dict[str, Any]:
    """
    Guarantees for class-wise histogram binning.

    Each class uses all n rows, so the per-class epsilons use n rather than
    a class count. Missing per-class arrays are filled from req.k and from
    req.alpha split evenly across the n_classes classes.

    Returns:
        dict: per_class list plus eps_max (marginal), eps_max_conditional,
        alpha_sum and expected_cw_ece_bound
    """
    _check_common(req)
    k_l = req.k_per_class
    alpha_l = req.alpha_per_class
    if k_l is None and alpha_l is None and n_classes is None:
        raise InvalidHyperparameters("theorem2_bounds needs per-class arrays or n_classes")
    L = n_classes if n_classes is not None else len(k_l if k_l is not None else alpha_l)
    if L < 1:
        raise InvalidHyperparameters(f"Number of classes must be >= 1, got {L}")
    if k_l is None:
        k_l = [req.k] * L
    if alpha_l is None:
        _check_alpha(req.alpha)
        alpha_l = [req.alpha / L] * L
    if len(k_l) != L or len(alpha_l) != L:
        raise InvalidHyperparameters(
            f"Per-class arrays must have {L} entries, got {len(k_l)} k values and {len(alpha_l)} alphas"
        )
    for l, (k, a) in enumerate(zip(k_l, alpha_l)):
        _check_k(k, f"k for class {l + 1}")
        _check_alpha(a, f"alpha for class {l + 1}")

    per_class = []
    for l, (k, a) in enumerate(zip(k_l, alpha_l)):
        per_class.append({
            "class": l + 1,
            "k": int(k),
            "alpha": float(a),
            "eps_marginal": eps_marginal(k, a, req.delta),
            "eps_conditional": None if req.n is None else eps_conditional(k, req.n, a, req.delta),
        })

    marginal = [c["eps_marginal"] for c in per_class]
    conditional = [c["eps_conditional"] for c in per_class]
    return {
        "theorem": 2,
        "n": None if req.n is None else int(req.n),
        "delta": req.delta,
        "per_class": per_class,
        "eps_max": max(marginal),
        "eps_max_conditional": None if req.n is None else max(conditional),
        "alpha_sum": float(np.sum(alpha_l)),
        "expected_cw_ece_bound": max(expected_ece_bound(k, req.delta) for k in k_l),
    }


def required_points_per_bin(target_expected_ece: float, delta: Optional[float] = None) -> int:
    """Smallest k >= 2 whose expected-ECE bound sqrt(1/(2k)) + delta is at most the target."""
    delta = default_delta() if delta is None else delta
    if not target_expected_ece > delta:
        raise InvalidHyperparameters(
            f"Target {target_expected_ece} must exceed delta {delta} for any k to reach it"
        )
    k = max(2, math.ceil(1.0 / (2.0 * (target_expected_ece - delta) ** 2)))
    while k > 2 and expected_ece_bound(k - 1, delta) <= target_expected_ece:
        k -= 1
    while expected_ece_bound(k, delta) > target_expected_ece:
        k += 1
    return k
