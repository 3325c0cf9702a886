#!/usr/bin/env python3
"""
Temperature scaling baseline

Fits one temperature T by minimizing the mean negative log-likelihood of
softmax(logits / T) on the calibration split. When only probabilities are
available, their logarithms serve as logits.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_softmax, softmax

from core_data import ProbMatrix
from utils import ClassCountMismatch, EmptyInput, InvalidHyperparameters, LabelOutOfRange, NonFinite

T_MIN = 0.01
T_MAX = 100.0
LOG_T_TOL = 1e-4
FLAT_TOL = 1e-12
LOG_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True)
class TemperatureModel:
    T: float
    search_range: Tuple[float, float] = (T_MIN, T_MAX)
    fit_nll: float = float("nan")
    nll_at_one: float = float("nan")
    converged: bool = True
    n_classes: int = 0

    notion = "temperature"

    def __post_init__(self):
        t_min, t_max = self.search_range
        if not 0 < t_min <= t_max:
            raise InvalidHyperparameters(f"Invalid temperature range {self.search_range}")
        if not t_min <= self.T <= t_max:
            raise InvalidHyperparameters(f"Temperature {self.T} outside {self.search_range}")


def log_scores(scores: ProbMatrix) -> np.ndarray:
    """Logits equivalent to the probabilities (softmax is shift invariant)."""
    return np.log(np.clip(scores.values, LOG_FLOOR, None))


def _as_logits(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ClassCountMismatch(f"Logits must be an n x L matrix with L >= 2, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFinite("Logits contain NaN or infinite values")
    return logits


def mean_nll(logits: np.ndarray, labels: np.ndarray, T: float) -> float:
    """Mean negative log-likelihood of softmax(logits / T) at 0-based labels."""
    log_probs = log_softmax(logits / T, axis=1)
    return float(-log_probs[np.arange(labels.size), labels].mean())


def fit_temperature(logits, labels) -> TemperatureModel:
    """
    Fit a temperature on held-out logits.

    Brent's bounded method searches log T over [log 0.01, log 100]. The best
    of T=1, the optimizer result and both endpoints is kept, so the fitted NLL
    never exceeds the NLL at T=1 or at either endpoint. A flat objective
    (e.g. all-zero logits) returns T=1.

    Args:
        logits: n x L real values
        labels: n 0-based labels

    Returns:
        TemperatureModel: Fitted temperature

    Raises:
        EmptyInput: n == 0
        NonFinite: logits contain NaN or infinities
    """
    if np.asarray(logits).size == 0:
        raise EmptyInput("Cannot fit a temperature on zero rows")
    logits = _as_logits(logits)
    labels = np.asarray(labels)
    n, L = logits.shape
    if labels.shape != (n,):
        raise ClassCountMismatch(f"{labels.size} labels for {n} logit rows")
    if labels.min() < 0 or labels.max() >= L:
        raise LabelOutOfRange(f"Labels must lie in 1..{L}")

    objective = lambda log_t: mean_nll(logits, labels, math.exp(log_t))
    lo, hi = math.log(T_MIN), math.log(T_MAX)
    nll_one = objective(0.0)
    endpoints = [objective(lo), objective(hi)]

    if max(endpoints + [nll_one]) - min(endpoints + [nll_one]) <= FLAT_TOL:
        logging.info("Temperature objective is flat; keeping T=1")
        return TemperatureModel(1.0, (T_MIN, T_MAX), nll_one, nll_one, True, L)

    result = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": LOG_T_TOL})
    candidates = [(nll_one, 1.0), (float(result.fun), math.exp(result.x)),
                  (endpoints[0], T_MIN), (endpoints[1], T_MAX)]
    best_nll, best_t = min(candidates, key=lambda c: c[0])
    best_t = min(max(best_t, T_MIN), T_MAX)

    logging.info(f"Fitted temperature T={best_t:.4f} (NLL {nll_one:.4f} -> {best_nll:.4f})")
    return TemperatureModel(best_t, (T_MIN, T_MAX), best_nll, nll_one, bool(result.success), L)


def apply_temperature(model: TemperatureModel, logits) -> ProbMatrix:
    """softmax(logits / T) row-wise."""
    logits = _as_logits(logits)
    if model.n_classes and logits.shape[1] != model.n_classes:
        raise ClassCountMismatch(
            f"The temperature model was fitted with {model.n_classes} classes but the input has {logits.shape[1]}"
        )
    return ProbMatrix(softmax(logits / model.T, axis=1))
