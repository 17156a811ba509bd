"""Predictive distributions, variance tempering and evaluation metrics."""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .errors import EmptyInput, EmptyValidation, InvalidVariance, LengthMismatch, NonPositiveNoise
from .loss import class_probabilities_S
from .numerics import gauss_hermite

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
Z95 = float(norm.ppf(0.975))


@dataclass
class Calibration:
    """Tempering factors: ``alpha_t`` for regression, ``alpha_class`` (one per class) otherwise."""

    alpha_t: float = 1.0
    alpha_class: np.ndarray = None

    def __post_init__(self):
        if not self.alpha_t > 0:
            raise ValueError("tempering factor must be positive")
        if self.alpha_class is not None:
            self.alpha_class = np.asarray(self.alpha_class, dtype=np.float64)
            if np.any(~(self.alpha_class > 0)):
                raise ValueError("tempering factors must be positive")


@dataclass
class MetricsReport:
    nll: float
    nll_std: float = 0.0
    rmse: float = None
    accuracy: float = None
    ood_auc: float = None
    coverage: float = None
    n: int = 0

    def as_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def tempering_grid(size=200, low=0.01, high=2.0):
    return np.geomspace(low, high, size)


# ------------------------------------------------------------------ regression


def predictive_regression(mean, r, sigma2, alpha_t=1.0):
    """Tempered predictive ``(mean, alpha_t * (r + sigma2))``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise InvalidVariance("latent variance must be finite and non-negative")
    if not sigma2 > 0:
        raise NonPositiveNoise(f"noise variance must be positive, got {sigma2}")
    if not alpha_t > 0:
        raise InvalidVariance(f"tempering factor must be positive, got {alpha_t}")
    return np.asarray(mean, dtype=np.float64), alpha_t * (r + sigma2)


def regression_nll_points(y, mean, variance, y_std=1.0):
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(~(variance > 0)):
        raise InvalidVariance("predictive variance must be positive")
    if not y_std > 0:
        raise InvalidVariance("target scale must be positive")
    resid = np.asarray(y, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    return 0.5 * np.log(variance) + resid * resid / (2.0 * variance) + HALF_LOG_2PI + math.log(y_std)


def regression_nll(y, mean, variance, y_std=1.0):
    """Mean Gaussian NLL on the standardized scale plus ``log(y_std)``."""
    return float(np.mean(regression_nll_points(y, mean, variance, y_std)))


def select_tempering(mean, variance, y, grid=None, y_std=1.0):
    """Grid factor minimising mean validation NLL of ``N(mean, alpha * variance)``.

    Ties go to the smaller factor.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise EmptyValidation("validation set is empty")
    grid = tempering_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    scores = [regression_nll(y, mean, a * np.asarray(variance), y_std) for a in grid]
    return float(grid[int(np.argmin(scores))])


# ------------------------------------------------------------------ classification


def predict_class(means, variances, alpha=None, label_noise=0.01, rule=None):
    """Class probabilities ``(1-eps) S + eps/(J-1) (1-S)`` and labels (ties to the lowest class)."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    J = means.shape[1]
    if alpha is not None:
        variances = variances * np.asarray(alpha, dtype=np.float64)[None, :]
    rule = rule or gauss_hermite(32)
    S = class_probabilities_S(means, variances, rule)
    probs = (1.0 - label_noise) * S + (label_noise / (J - 1)) * (1.0 - S)
    return probs, np.argmax(probs, axis=1)


def class_nll(probs, y):
    """Mean of ``-log p_{y_n}``."""
    probs = np.atleast_2d(probs)
    y = np.asarray(y, dtype=int)
    if probs.shape[0] != y.size:
        raise LengthMismatch("probabilities and labels differ in length")
    return float(np.mean(-np.log(probs[np.arange(y.size), y])))


def select_class_tempering(means, variances, y, grid=None, label_noise=0.01, rule=None, sweeps=2):
    """Coordinate descent over per-class factors on mean validation NLL."""
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise EmptyValidation("validation set is empty")
    grid = tempering_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    rule = rule or gauss_hermite(32)
    J = np.atleast_2d(means).shape[1]
    alpha = np.ones(J)
    if grid.size == 1:
        return np.full(J, grid[0])
    for _ in range(sweeps):
        for j in range(J):
            scores = []
            for a in grid:
                trial = alpha.copy()
                trial[j] = a
                probs, _ = predict_class(means, variances, trial, label_noise, rule)
                scores.append(class_nll(probs, y))
            alpha[j] = grid[int(np.argmin(scores))]
    return alpha


def entropy(probs):
    """Natural-log entropy per row with ``0 log 0 = 0``."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=1)


def ood_auc(id_scores, ood_scores):
    """Probability that an OOD score ranks above an ID score (ties count one half)."""
    a = np.asarray(id_scores, dtype=np.float64).ravel()
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both score sets must be nonempty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


# ------------------------------------------------------------------ generic metrics


def _pair(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape[0] != target.shape[0]:
        raise LengthMismatch(f"{pred.shape[0]} predictions for {target.shape[0]} targets")
    if target.shape[0] == 0:
        raise EmptyInput("no targets")
    return pred, target


def rmse(pred, target):
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((pred.astype(float) - target.astype(float)) ** 2)))


def accuracy(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean(pred == target))


def coverage(mean, variance, target, level_z=Z95):
    """Fraction of targets inside ``mean +- level_z * sqrt(variance)``."""
    mean, target = _pair(mean, target)
    half = level_z * np.sqrt(np.asarray(variance, dtype=np.float64))
    return float(np.mean(np.abs(target - mean) <= half))


def summarize(values):
    """``(mean, std)`` of per-split values; std is the population std."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.mean(v)), float(np.std(v))


# ------------------------------------------------------------------ model-level evaluation


def evaluate_model(model, calibration, X, y, y_std=1.0, label_noise=0.01, quad_order=32):
    """Tempered test metrics for a fitted model; regression targets on the standardized scale.

    RMSE is reported on the original scale (standardized RMSE times ``y_std``).
    """
    means, r = model.latent(X)
    if model.task == "regression":
        mean, var = predictive_regression(means[:, 0], r[:, 0], model.sigma2, calibration.alpha_t)
        return MetricsReport(
            nll=regression_nll(y, mean, var, y_std),
            rmse=rmse(mean, y) * y_std,
            coverage=coverage(mean, var, y),
            n=int(len(y)),
        )
    probs, labels = predict_class(means, r, calibration.alpha_class, label_noise, gauss_hermite(quad_order))
    return MetricsReport(nll=class_nll(probs, y), accuracy=accuracy(labels, y), n=int(len(y)))


def predictive_entropy(model, calibration, X, label_noise=0.01, quad_order=32):
    """Class-probability entropy, or Gaussian differential entropy for regression."""
    means, r = model.latent(X)
    if model.task == "regression":
        _, var = predictive_regression(means[:, 0], r[:, 0], model.sigma2, calibration.alpha_t)
        return 0.5 * np.log(2.0 * math.pi * math.e * var)
    probs, _ = predict_class(means, r, calibration.alpha_class, label_noise, gauss_hermite(quad_order))
    return entropy(probs)
