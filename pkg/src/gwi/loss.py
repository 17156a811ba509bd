"""Generalized GWI loss: expected log-likelihood plus empirical Wasserstein term.

The regression and classification objectives share one structured evaluator,
:func:`gwi_loss`, which also returns analytic gradients for every trainable
array of a :class:`~gwi.variational.GwiModel`. The free functions
(:func:`wasserstein_hat`, :func:`regression_loss`, ...) work on arbitrary
:class:`~gwi.variational.GaussianMeasureSpec` pairs and are what the tests and
reports use.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .errors import ConvergenceFailure, InvalidVariance, NonFiniteLoss, NonPositiveNoise
from .kernels import ard_gram, ard_gram_backward
from .numerics import cho_solve, cholesky, eig_real_parts, gauss_hermite, psd_sqrt
from .variational import mlp_backward, mlp_forward

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class LossConfig:
    n_s: int = 100
    n_b: int = 1000
    quad_order: int = 32
    eps_lambda: float = 0.0
    label_noise: float = 0.01
    # X_S drawn from the current batch (True) or from the whole training set
    xs_from_batch: bool = True
    eig_floor_rel: float = 1e-10

    def __post_init__(self):
        if self.n_s < 1 or self.n_b < 1:
            raise ValueError("n_s and n_b must be >= 1")
        if self.quad_order < 1:
            raise ValueError("quad_order must be >= 1")
        if not 0.0 <= self.eps_lambda <= 1e-6:
            raise ValueError("eps_lambda must lie in [0, 1e-6]")
        if not 0.0 < self.label_noise < 1.0:
            raise ValueError("label_noise must lie in (0, 1)")


@dataclass
class LossBreakdown:
    """Loss components; ``total = -ell + mean_term + trace_p + trace_q - 2 cross_term``.

    For classification the Wasserstein components are summed over classes and
    the per-class Wasserstein values are kept in ``per_class``.
    """

    ell: float
    mean_term: float
    trace_p: float
    trace_q: float
    cross_term: float
    total: float
    per_class: list = field(default_factory=list)

    @property
    def wasserstein(self):
        return self.mean_term + self.trace_p + self.trace_q - 2.0 * self.cross_term

    def reconstruct(self):
        return -self.ell + self.wasserstein

    def as_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ ELL


def expected_loglik_regression(y_B, mQ_B, rdiag_B, sigma2, N, N_B):
    """Closed-form ``E_Q[log N(y | F(x), sigma^2)]``, batch-scaled by ``N / N_B``."""
    if sigma2 <= 0:
        raise NonPositiveNoise(f"noise variance must be positive, got {sigma2}")
    y_B, mQ_B, rdiag_B = (np.asarray(a, dtype=np.float64) for a in (y_B, mQ_B, rdiag_B))
    if np.any(rdiag_B < 0):
        raise InvalidVariance("variational variances must be non-negative")
    resid = (y_B - mQ_B) ** 2 + rdiag_B
    return -0.5 * N * math.log(2.0 * math.pi * sigma2) - (N / N_B) * float(np.sum(resid)) / (2.0 * sigma2)


# ------------------------------------------------------------------ spectra


def _product_transform(K_BS):
    """Factors turning ``R K_BS`` into a similar ``S x S`` matrix.

    With ``K_BS = U diag(s) V^T`` the spectrum of ``R_SB K_BS`` equals that
    of ``diag(sqrt s) V^T R_SB U diag(sqrt s)``. Tiny eigenvalues then carry
    absolute errors proportional to ``s`` instead of ``||R K||``.
    """
    U, s, Vt = np.linalg.svd(K_BS, full_matrices=False)
    return U, np.sqrt(s), Vt


def _transformed(R_SB, U, sqrt_s, Vt):
    return sqrt_s[:, None] * (Vt @ R_SB @ U) * sqrt_s[None, :]


def cross_spectrum(R_SB, K_BS):
    """Real parts of the eigenvalues of ``R_SB @ K_BS``, descending."""
    U, sqrt_s, Vt = _product_transform(np.asarray(K_BS, dtype=np.float64))
    return eig_real_parts(_transformed(np.asarray(R_SB, dtype=np.float64), U, sqrt_s, Vt))


def _sqrt_sum(lam, eps_lambda):
    return float(np.sum(np.sqrt(np.maximum(lam, eps_lambda))))


# ------------------------------------------------------------------ Wasserstein


def wasserstein_hat(prior, var, X_B, X_S, eps_lambda=0.0):
    """Empirical squared 2-Wasserstein distance between two Gaussian measures.

    Parameters
    ----------
    prior, var : GaussianMeasureSpec
    X_B : (N_B, D) array
        Points carrying the empirical measure.
    X_S : (N_S, D) array
        Comparison points for the spectral cross term.
    eps_lambda : float
        Eigenvalues are replaced by ``max(lambda, eps_lambda)`` before the root.

    Returns
    -------
    LossBreakdown
        With ``ell = 0`` and ``total`` equal to the raw (possibly slightly
        negative) Wasserstein estimate.
    """
    X_B = np.atleast_2d(np.asarray(X_B, dtype=np.float64))
    X_S = np.atleast_2d(np.asarray(X_S, dtype=np.float64))
    n_b, n_s = X_B.shape[0], X_S.shape[0]
    diff = prior.mean(X_B) - var.mean(X_B)
    mean_term = float(np.mean(diff * diff))
    trace_p = float(np.mean(prior.kernel.diag(X_B)))
    trace_q = float(np.mean(var.kernel.diag(X_B)))
    lam = cross_spectrum(var.kernel.gram(X_S, X_B), prior.kernel.gram(X_B, X_S))
    cross = _sqrt_sum(lam, eps_lambda) / math.sqrt(n_b * n_s)
    w = mean_term + trace_p + trace_q - 2.0 * cross
    return LossBreakdown(0.0, mean_term, trace_p, trace_q, cross, w)


def exact_discrete_w2(mP_X, mQ_X, K, R, N):
    """Bures-Wasserstein distance for covariance operators ``K/N`` and ``R/N``.

    The root trace ``tr[(K^1/2 R K^1/2)^1/2]`` is evaluated as the nuclear
    norm of ``R^1/2 K^1/2``, which avoids square roots of rounding noise.
    """
    mP_X = np.asarray(mP_X, dtype=np.float64)
    mQ_X = np.asarray(mQ_X, dtype=np.float64)
    Kn = np.asarray(K, dtype=np.float64) / N
    Rn = np.asarray(R, dtype=np.float64) / N
    d = mP_X - mQ_X
    root_trace = float(np.sum(np.linalg.svd(psd_sqrt(Rn) @ psd_sqrt(Kn), compute_uv=False)))
    return float(d @ d) / N + float(np.trace(Kn)) + float(np.trace(Rn)) - 2.0 * root_trace


def regression_loss(prior, var, X_B, y_B, X_S, sigma2, N, cfg=None):
    """``-ELL + W_hat`` for one batch, with all components reported."""
    cfg = cfg or LossConfig()
    X_B = np.atleast_2d(X_B)
    w = wasserstein_hat(prior, var, X_B, X_S, cfg.eps_lambda)
    rdiag = np.maximum(var.kernel.diag(X_B), 0.0)
    ell = expected_loglik_regression(y_B, var.mean(X_B), rdiag, sigma2, N, X_B.shape[0])
    return LossBreakdown(ell, w.mean_term, w.trace_p, w.trace_q, w.cross_term, -ell + w.total)


# ------------------------------------------------------------------ classification


def _class_prob_parts(means, variances, labels, rule, need_grad):
    """Gauss-Hermite argmax probability for each row and its label.

    ``means``/``variances`` are ``(n, J)``; ``labels`` holds one class index
    per row. Returns ``S`` and, if asked, ``dS/dmeans`` and ``dS/dvariances``.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    n, J = means.shape
    if np.any(~np.isfinite(variances)) or np.any(variances < -1e-8):
        raise InvalidVariance("class variances must be finite and non-negative")
    floored = variances < VAR_FLOOR
    v = np.where(floored, VAR_FLOOR, variances)
    rows = np.arange(n)
    mj = means[rows, labels]
    vj = v[rows, labels]
    xi = rule.nodes
    sd = np.sqrt(v)
    # u[n, i, l]
    shift = np.sqrt(2.0 * vj)[:, None] * xi[None, :]
    u = (shift[:, :, None] + mj[:, None, None] - means[:, None, :]) / sd[:, None, :]
    phi_cdf = ndtr(u)
    own = np.zeros((n, J), dtype=bool)
    own[rows, labels] = True
    phi_cdf[own[:, None, :].repeat(xi.size, axis=1)] = 1.0
    prod = np.prod(phi_cdf, axis=2)
    S = _INV_SQRT_PI * prod @ rule.weights
    if not need_grad:
        return S, None, None
    ones = np.ones((n, xi.size, 1))
    prefix = np.concatenate([ones, np.cumprod(phi_cdf, axis=2)[:, :, :-1]], axis=2)
    suffix = np.concatenate([np.cumprod(phi_cdf[:, :, ::-1], axis=2)[:, :, -2::-1], ones], axis=2)
    excl = prefix * suffix
    dens = np.exp(-0.5 * u * u) * _INV_SQRT_2PI
    D = _INV_SQRT_PI * rule.weights[None, :, None] * dens * excl
    D[own[:, None, :].repeat(xi.size, axis=1)] = 0.0
    Dsum = D.sum(axis=1)  # (n, J)
    dS_dm = -Dsum / sd
    dS_dm[rows, labels] = 0.0
    dS_dm[rows, labels] = -dS_dm.sum(axis=1)
    dS_dv = -np.einsum("nil,nil->nl", D, u) / (2.0 * v)
    dS_dv[rows, labels] = 0.0
    own_v = np.einsum("nil,i->nl", D, xi) / sd
    dS_dv[rows, labels] = own_v.sum(axis=1) / np.sqrt(2.0 * vj)
    dS_dv[floored] = 0.0
    return S, dS_dm, dS_dv


def class_prob_S(means, variances, j, rule):
    """``Q(argmax_l F_l(x) = j)`` via Gauss-Hermite quadrature.

    Accepts one point (1-D ``means``/``variances`` of length J) or ``n x J``
    arrays; ``j`` may be a scalar or one class index per row.
    """
    means = np.asarray(means, dtype=np.float64)
    single = means.ndim == 1
    means = np.atleast_2d(means)
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if means.shape[1] < 2:
        raise ValueError("need at least two classes")
    labels = np.broadcast_to(np.asarray(j, dtype=int), (means.shape[0],))
    S, _, _ = _class_prob_parts(means, variances, labels, rule, False)
    return float(S[0]) if single else S


def class_probabilities_S(means, variances, rule):
    """``S(x, j)`` for every class, shape ``(n, J)``."""
    means = np.atleast_2d(means)
    n, J = means.shape
    return np.stack([class_prob_S(means, variances, np.full(n, j), rule) for j in range(J)], axis=1)


def classification_ell(S, label_noise, N, N_B, num_classes):
    """Batch-scaled two-term approximation of the multiclass expected log-likelihood."""
    S = np.asarray(S, dtype=np.float64)
    a = math.log(1.0 - label_noise)
    b = math.log(label_noise / (num_classes - 1))
    return (N / N_B) * float(np.sum(a * S + b * (1.0 - S)))


def classification_loss(priors, variationals, X_B, y_B, X_S, N, cfg=None):
    """``-ELL + sum_j W_hat(P_j, Q_j)`` for independent class measures."""
    cfg = cfg or LossConfig()
    X_B = np.atleast_2d(X_B)
    J = len(variationals)
    means = np.stack([q.mean(X_B) for q in variationals], axis=1)
    variances = np.stack([q.kernel.diag(X_B) for q in variationals], axis=1)
    S = class_prob_S(means, variances, np.asarray(y_B, dtype=int), gauss_hermite(cfg.quad_order))
    ell = classification_ell(S, cfg.label_noise, N, X_B.shape[0], J)
    parts = [wasserstein_hat(p, q, X_B, X_S, cfg.eps_lambda) for p, q in zip(priors, variationals)]
    return LossBreakdown(
        ell,
        sum(w.mean_term for w in parts),
        sum(w.trace_p for w in parts),
        sum(w.trace_q for w in parts),
        sum(w.cross_term for w in parts),
        -ell + sum(w.total for w in parts),
        [w.total for w in parts],
    )


# ------------------------------------------------------------------ structured loss + gradient


def _eig_with_vectors(T):
    try:
        w, vl, vr = scipy.linalg.eig(T, left=True, right=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return w, vl, vr


def gwi_loss(model, params, X_B, y_B, X_S, N, cfg, rule=None, need_grad=True):
    """Batch loss and analytic gradient for a :class:`GwiModel`.

    Parameters
    ----------
    model : GwiModel
        Supplies the frozen prior, noise, task and the fixed ``Z``.
    params : dict
        Trainable arrays (``beta`` or MLP weights, ``L`` of shape ``(J, M, M)``,
        optionally ``Z`` and ``log_sigma2``).
    X_B, y_B : batch inputs and targets (class indices for classification)
    X_S : comparison points for the spectral term
    N : int
        Training-set size used for batch scaling.

    Returns
    -------
    (LossBreakdown, dict or None)
    """
    prior = model.prior
    Z = params["Z"] if "Z" in params else model.Z
    X_B = np.atleast_2d(X_B)
    X_S = np.atleast_2d(X_S)
    n_b, n_s = X_B.shape[0], X_S.shape[0]
    M = Z.shape[0]
    L_all = np.tril(params["L"])
    J = L_all.shape[0]
    sigma2 = math.exp(params["log_sigma2"]) if "log_sigma2" in params else model.sigma2

    Kzz = ard_gram(prior, Z)
    Lk = cholesky(Kzz)
    Kinv = cho_solve(Lk, np.eye(M))
    Kinv = 0.5 * (Kinv + Kinv.T)
    Kzb = ard_gram(prior, Z, X_B)
    Kzs = ard_gram(prior, Z, X_S)
    K_SB = ard_gram(prior, X_S, X_B)
    kdiag = prior.variance
    U, sqrt_s, Vt = _product_transform(K_SB.T)

    if model.variant == "svgp":
        mQ = (Kzb.T @ params["beta"])[:, None]
        mlp = cache = None
    else:
        mlp = model.mlp_from(params)
        mQ, cache = mlp_forward(mlp, model.net_input(X_B))
    mP = np.zeros_like(mQ)

    scale = 1.0 / math.sqrt(n_b * n_s)
    rdiag = np.empty((n_b, J))
    mean_terms, trace_qs, crosses = [], [], []
    eig_parts = []
    for j in range(J):
        A = L_all[j] @ L_all[j].T - Kinv
        KA = A @ Kzb
        rdiag[:, j] = kdiag + np.sum(Kzb * KA, axis=0)
        R_SB = K_SB + Kzs.T @ KA
        T = _transformed(R_SB, U, sqrt_s, Vt)
        w, vl, vr = _eig_with_vectors(T)
        lam = w.real
        norm = np.linalg.norm(T)
        if w.size and np.max(np.abs(w.imag)) > 1e-6 * max(norm, 1e-300):
            logger.debug("cross-Gram eigenvalues have imaginary parts up to %.3e", np.max(np.abs(w.imag)))
        crosses.append(_sqrt_sum(lam, cfg.eps_lambda) * scale)
        diff = mQ[:, j] - mP[:, j]
        mean_terms.append(float(np.mean(diff * diff)))
        trace_qs.append(float(np.mean(rdiag[:, j])))
        eig_parts.append((A, w, vl, vr))

    trace_p = float(kdiag)
    per_class = [m + trace_p + t - 2.0 * c for m, t, c in zip(mean_terms, trace_qs, crosses)]

    if model.task == "regression":
        y = np.asarray(y_B, dtype=np.float64)
        ell = expected_loglik_regression(y, mQ[:, 0], np.maximum(rdiag[:, 0], 0.0), sigma2, N, n_b)
        rule_S = None
    else:
        rule = rule or gauss_hermite(cfg.quad_order)
        labels = np.asarray(y_B, dtype=int)
        S, dS_dm, dS_dv = _class_prob_parts(mQ, rdiag, labels, rule, need_grad)
        ell = classification_ell(S, cfg.label_noise, N, n_b, J)
        rule_S = (S, dS_dm, dS_dv)

    total = -ell + sum(per_class)
    breakdown = LossBreakdown(
        ell, sum(mean_terms), trace_p * J, sum(trace_qs), sum(crosses), total,
        per_class if model.task == "classification" else [],
    )
    if not np.isfinite(total):
        raise NonFiniteLoss(f"loss is not finite: {breakdown}")
    if not need_grad:
        return breakdown, None

    # d total / d mQ and d total / d rdiag
    g_m = 2.0 * (mQ - mP) / n_b
    g_r = np.full((n_b, J), 1.0 / n_b)
    grads = {}
    if model.task == "regression":
        g_m[:, 0] += (N / n_b) * (mQ[:, 0] - y) / sigma2
        g_r[:, 0] += (N / n_b) / (2.0 * sigma2)
        if "log_sigma2" in params:
            resid = float(np.sum((y - mQ[:, 0]) ** 2 + rdiag[:, 0]))
            grads["log_sigma2"] = np.asarray(0.5 * N - (N / n_b) * resid / (2.0 * sigma2))
    else:
        S, dS_dm, dS_dv = rule_S
        dneg_ell_dS = -(N / n_b) * (math.log(1.0 - cfg.label_noise) - math.log(cfg.label_noise / (J - 1)))
        g_m += dneg_ell_dS * dS_dm
        g_r += dneg_ell_dS * dS_dv

    g_L = np.zeros_like(L_all)
    G_Kzz = np.zeros((M, M))
    G_Kzb = np.zeros_like(Kzb)
    G_Kzs = np.zeros_like(Kzs)
    for j, (A, w, vl, vr) in enumerate(eig_parts):
        lam = w.real
        lam_max = float(np.max(lam)) if lam.size else 0.0
        floor = max(cfg.eps_lambda, cfg.eig_floor_rel * max(lam_max, 0.0))
        active = lam > floor
        G_R = np.zeros((n_s, n_b))
        if np.any(active):
            a = np.conj(vl[:, active])
            v = vr[:, active]
            c = np.sum(a * v, axis=0)
            degenerate = np.abs(c) <= 1e-12
            if np.any(degenerate):
                logger.warning("dropping %d degenerate eigenpairs from the gradient", int(degenerate.sum()))
                c = np.where(degenerate, 1.0, c)
            coef = -scale / np.sqrt(lam[active]) / c
            coef = np.where(degenerate, 0.0, coef)
            P = Vt.T @ (sqrt_s[:, None] * a)
            Q = U @ (sqrt_s[:, None] * v)
            G_R = np.real((P * coef[None, :]) @ Q.T)
        G_A = Kzs @ G_R @ Kzb.T + (Kzb * g_r[:, j][None, :]) @ Kzb.T
        G_A = 0.5 * (G_A + G_A.T)
        g_L[j] = np.tril(2.0 * G_A @ L_all[j])
        G_Kzz += Kinv @ G_A @ Kinv
        G_Kzs += A @ Kzb @ G_R.T
        G_Kzb += A.T @ Kzs @ G_R + 2.0 * (A @ Kzb) * g_r[:, j][None, :]
    grads["L"] = g_L

    if model.variant == "svgp":
        grads["beta"] = Kzb @ g_m[:, 0]
        G_Kzb += np.outer(params["beta"], g_m[:, 0])
    else:
        grads.update(mlp_backward(mlp, cache, g_m))

    if "Z" in params:
        _, _, dZ1, dZ2 = ard_gram_backward(prior, Z, Z, Kzz, G_Kzz)
        _, _, dZ3, _ = ard_gram_backward(prior, Z, X_B, Kzb, G_Kzb)
        _, _, dZ4, _ = ard_gram_backward(prior, Z, X_S, Kzs, G_Kzs)
        grads["Z"] = dZ1 + dZ2 + dZ3 + dZ4
    return breakdown, grads
