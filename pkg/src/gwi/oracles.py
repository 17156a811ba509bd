"""Brute-force references for the test suite: Monte Carlo and finite differences.

Nothing here is used by training; the estimators are deliberately naive so
they share no code with the quantities they check.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLoss
from .loss import exact_discrete_w2
from .numerics import make_rng
from .variational import ParamVector

__all__ = ["OracleConfig", "mc_expected_loglik", "mc_argmax_prob", "fd_gradient", "exact_discrete_w2"]

CHUNK = 100_000


@dataclass
class OracleConfig:
    samples: int = 1_000_000
    step: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.samples < 10_000:
            raise ValueError("oracles need at least 1e4 samples")
        if not 1e-8 <= self.step <= 1e-3:
            raise ValueError("finite-difference step must lie in [1e-8, 1e-3]")


def _chunks(total):
    done = 0
    while done < total:
        n = min(CHUNK, total - done)
        yield n
        done += n


def mc_expected_loglik(mQ, rdiag, y, sigma2, samples=1_000_000, seed=0):
    """Monte Carlo ``sum_n E[log N(y_n | f_n, sigma2)]`` with ``f_n ~ N(mQ_n, r_n)``.

    Returns ``(estimate, standard_error)``.
    """
    mQ = np.atleast_1d(np.asarray(mQ, dtype=np.float64))
    sd = np.sqrt(np.atleast_1d(np.asarray(rdiag, dtype=np.float64)))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    rng = make_rng(seed)
    const = -0.5 * math.log(2.0 * math.pi * sigma2)
    total = 0.0
    total_sq = 0.0
    for n in _chunks(samples):
        f = mQ[None, :] + sd[None, :] * rng.standard_normal((n, mQ.size))
        vals = np.sum(const - (y[None, :] - f) ** 2 / (2.0 * sigma2), axis=1)
        total += vals.sum()
        total_sq += np.sum(vals * vals)
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return float(mean), float(math.sqrt(var / samples))


def mc_argmax_prob(means, variances, j, samples=1_000_000, seed=0):
    """Fraction of independent Gaussian draws whose argmax is ``j``; ``(p, se)``."""
    means = np.asarray(means, dtype=np.float64)
    sd = np.sqrt(np.asarray(variances, dtype=np.float64))
    if means.size < 2:
        raise ValueError("need at least two classes")
    rng = make_rng(seed)
    hits = 0
    for n in _chunks(samples):
        draws = means[None, :] + sd[None, :] * rng.standard_normal((n, means.size))
        hits += int(np.sum(np.argmax(draws, axis=1) == j))
    p = hits / samples
    return float(p), float(math.sqrt(p * (1.0 - p) / samples))


def fd_gradient(closure, params, step=1e-5):
    """Central differences of a scalar closure at ``params``.

    ``params`` may be a :class:`ParamVector` (the closure then receives a
    ParamVector and the result is one) or a flat array.
    """
    is_pv = isinstance(params, ParamVector)
    x0 = (params.values if is_pv else np.asarray(params, dtype=np.float64)).copy()

    def f(x):
        val = closure(params.with_values(x) if is_pv else x)
        if not np.isfinite(val):
            raise NonFiniteLoss(f"closure returned {val}")
        return float(val)

    grad = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        grad.flat[i] = (f(xp) - f(xm)) / (2.0 * step)
    return params.with_values(grad) if is_pv else grad
