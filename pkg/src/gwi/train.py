"""Prior fitting by marginal likelihood, Adam, and the variational training loop."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataio import batch_iter
from .errors import ConvergenceFailure, GwiError, InvalidLabels, ShapeMismatch
from .evalcal import (
    Calibration, class_nll, predict_class, regression_nll, select_class_tempering,
    select_tempering, tempering_grid,
)
from .kernels import ArdParams, ard_gram, ard_gram_backward
from .loss import LossConfig, gwi_loss
from .numerics import cho_solve, cholesky, gauss_hermite, make_rng
from .variational import GwiModel, ParamVector, init_mlp, init_sigma

logger = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS = {
    ("regression", "dnn"): (0.5, 1.0, 1.5, 2.0),
    ("regression", "svgp"): (1.0, 2.0, 3.0, 4.0, 5.0),
    ("classification", "dnn"): (0.5, 0.75, 1.0),
}
DEFAULT_EPOCHS = {"regression": 1000, "classification": 100}


# ------------------------------------------------------------------ Adam


@dataclass
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params, grad, state, t, config):
    """One bias-corrected Adam descent step on a :class:`ParamVector`.

    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    if t < 1:
        raise ValueError("step counter starts at 1")
    g = grad.values if isinstance(grad, ParamVector) else np.asarray(grad, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {params.values.shape}")
    if state is None:
        state = AdamState.zeros(g.size)
    if state.m.shape != g.shape:
        raise ShapeMismatch("optimizer state does not match parameters")
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    step = config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return params.with_values(params.values - step), AdamState(m, v)


# ------------------------------------------------------------------ prior MLL


def prior_mll(y_Z, K_ZZ, sigma2):
    """``-1/2 log det(K + s2 I) - 1/2 y^T (K + s2 I)^{-1} y`` (no 2 pi constant).

    ``y_Z`` may be a matrix, in which case the columns are independent outputs
    sharing the kernel and the values add up.
    """
    y = np.asarray(y_Z, dtype=np.float64)
    Y = y[:, None] if y.ndim == 1 else y
    L = cholesky(np.asarray(K_ZZ, dtype=np.float64) + sigma2 * np.eye(Y.shape[0]))
    alpha = cho_solve(L, Y)
    return float(-Y.shape[1] * np.sum(np.log(np.diag(L))) - 0.5 * np.sum(Y * alpha))


def prior_mll_grad(y_Z, Z, prior, sigma2):
    """MLL and its gradient in ``(log_sf, log_alpha, log_sigma)``."""
    y = np.asarray(y_Z, dtype=np.float64)
    Y = y[:, None] if y.ndim == 1 else y
    M, J = Y.shape
    K = ard_gram(prior, Z)
    L = cholesky(K + sigma2 * np.eye(M))
    A = cho_solve(L, Y)
    mll = float(-J * np.sum(np.log(np.diag(L))) - 0.5 * np.sum(Y * A))
    Kyinv = cho_solve(L, np.eye(M))
    G = 0.5 * (A @ A.T - J * Kyinv)
    g_sf, g_alpha, _, _ = ard_gram_backward(prior, Z, Z, K, G)
    g_log_sigma = 2.0 * sigma2 * float(np.trace(G))
    return mll, np.concatenate([[g_sf], g_alpha, [g_log_sigma]])


def default_prior_init(Z):
    """Unit signal scale and per-dimension input spread as lengthscales."""
    spread = np.std(Z, axis=0)
    spread = np.where(spread > 0, spread, 1.0)
    return ArdParams(0.0, np.log(spread))


def fit_prior_hyperparams(y_Z, Z, init=None, sigma2_init=0.1, max_iter=2000, lr=0.01,
                          grad_tol=1e-6, return_info=False):
    """Adam ascent on :func:`prior_mll` over ``(log sf, log alpha, log sigma)``.

    Stops at ``max_iter`` or when the gradient norm falls to ``grad_tol``. The
    best iterate seen is returned, so the result never has lower MLL than the
    starting point. Numerical failure mid-run also returns the best so far.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[0] < 2:
        raise ValueError("need at least two inducing inputs to fit the prior")
    init = init or default_prior_init(Z)
    D = Z.shape[1]
    theta = np.concatenate([[init.log_sf], init.log_alpha, [0.5 * math.log(sigma2_init)]])

    def unpack(th):
        return ArdParams(th[0], th[1:1 + D]), math.exp(2.0 * th[-1])

    pv = ParamVector(["theta"], [theta.shape], theta)
    cfg = AdamConfig(lr=lr)
    state = None
    best = (-math.inf, theta.copy())
    initial = None
    it = 0
    for it in range(1, max_iter + 1):
        try:
            mll, grad = prior_mll_grad(y_Z, Z, *unpack(pv.values))
        except GwiError as exc:
            logger.warning("prior fit stopped at iteration %d: %s", it, exc)
            break
        if initial is None:
            initial = mll
        if not math.isfinite(mll):
            break
        if mll > best[0]:
            best = (mll, pv.values.copy())
        if np.linalg.norm(grad) <= grad_tol:
            break
        pv, state = adam_step(pv, -grad, state, it, cfg)
    else:
        try:
            mll = prior_mll(y_Z, ard_gram(unpack(pv.values)[0], Z), unpack(pv.values)[1])
            if mll > best[0]:
                best = (mll, pv.values.copy())
        except GwiError:
            pass
    if initial is None:
        raise ConvergenceFailure("prior marginal likelihood could not be evaluated at the initial point")
    prior, sigma2 = unpack(best[1])
    if return_info:
        return prior, sigma2, {"mll": best[0], "initial_mll": initial, "iterations": it}
    return prior, sigma2


# ------------------------------------------------------------------ training loop


@dataclass
class TrainConfig:
    """Training hyperparameters; ``None`` fields resolve to task-dependent defaults.

    ``num_inducing`` lists explicit grid values of M and overrides
    ``grid_multipliers`` (which scale ``sqrt(N_train)``).
    """

    epochs: int = None
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    grid_multipliers: tuple = None
    num_inducing: tuple = None
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mll_iters: int = 2000
    mll_lr: float = 0.01
    sigma2_init: float = 0.1
    train_noise: bool = False
    hidden_width: int = 10
    hidden_layers: int = 2
    tempering_points: int = 200
    threads: int = 1

    def __post_init__(self):
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.grid_multipliers is not None and len(self.grid_multipliers) == 0:
            raise ValueError("inducing grid must be nonempty")
        if self.num_inducing is not None and len(self.num_inducing) == 0:
            raise ValueError("inducing grid must be nonempty")

    def adam(self):
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps_adam)

    def epochs_for(self, task):
        return DEFAULT_EPOCHS[task] if self.epochs is None else int(self.epochs)

    def grid_for(self, task, variant, n_train):
        if self.num_inducing is not None:
            values = [int(m) for m in self.num_inducing]
        else:
            mult = self.grid_multipliers or DEFAULT_MULTIPLIERS[(task, variant)]
            values = [int(round(c * math.sqrt(n_train))) for c in mult]
        values = sorted({min(max(m, 2), n_train) for m in values})
        return values


@dataclass
class TrainReport:
    task: str
    variant: str
    model: GwiModel
    params: ParamVector
    history: list
    chosen_m: int
    calibration: Calibration
    validation: dict
    grid: list
    seed: int
    timings: dict = field(default_factory=dict)
    failed: dict = field(default_factory=dict)


def _record(epoch, parts, elapsed_ms):
    keys = ("total", "ell", "mean_term", "trace_p", "trace_q", "cross_term")
    rec = {"epoch": epoch}
    for k in keys:
        rec[k] = float(np.mean([getattr(p, k) for p in parts]))
    if parts and parts[0].per_class:
        rec["per_class"] = [float(v) for v in np.mean([p.per_class for p in parts], axis=0)]
    rec["wall_ms"] = elapsed_ms
    return rec


def _initial_model(task, variant, X, y, M, cfg, rng):
    """Subsample Z, fit the prior on it and initialise the variational arrays."""
    N, D = X.shape
    idx = np.sort(rng.choice(N, size=M, replace=False))
    Z = X[idx].copy()
    if task == "classification":
        J = int(y.max()) + 1
        y_Z = np.eye(J)[y[idx]] - 1.0 / J
    else:
        J = 1
        y_Z = y[idx]
    prior, sigma2 = fit_prior_hyperparams(
        y_Z, Z, sigma2_init=cfg.sigma2_init, max_iter=cfg.mll_iters, lr=cfg.mll_lr,
    )
    n_b = min(cfg.loss.n_b, N)
    sub = np.sort(rng.choice(N, size=n_b, replace=False))
    L0 = init_sigma(prior, Z, X[sub], sigma2, N, n_b)
    params = {"L": np.repeat(L0[None], J, axis=0)}
    if variant == "svgp":
        Kzb = ard_gram(prior, Z, X[sub])
        params["beta"] = (N / n_b) / sigma2 * (L0 @ (L0.T @ (Kzb @ y[sub])))
        params["Z"] = Z.copy()
    else:
        widths = [D] + [cfg.hidden_width] * cfg.hidden_layers + [J]
        params.update(init_mlp(widths, rng).to_dict())
    if cfg.train_noise and task == "regression":
        params["log_sigma2"] = np.array(math.log(sigma2))
    shift, scale = input_normalizer(X) if variant == "dnn" else (None, None)
    return GwiModel(task, variant, prior, sigma2, Z, params, shift, scale)


def input_normalizer(X):
    """Training-set mean and std per feature (unit scale for constant features)."""
    scale = np.std(X, axis=0)
    return np.mean(X, axis=0), np.where(scale > 0, scale, 1.0)


def fit_variational(model, X, y, cfg, rng, epochs):
    """Adam on the GWI loss; returns ``(final ParamVector, per-epoch history)``."""
    N = X.shape[0]
    rule = gauss_hermite(cfg.loss.quad_order) if model.task == "classification" else None
    pv = ParamVector.from_dict(model.params)
    adam = cfg.adam()
    state = None
    history = []
    t = 0
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        parts = []
        for batch in batch_iter(np.arange(N), cfg.loss.n_b, rng):
            X_B, y_B = X[batch], y[batch]
            if cfg.loss.xs_from_batch:
                X_S = X_B[rng.choice(batch.size, size=min(cfg.loss.n_s, batch.size), replace=False)]
            else:
                X_S = X[rng.choice(N, size=min(cfg.loss.n_s, N), replace=False)]
            breakdown, grads = gwi_loss(model, pv.to_dict(), X_B, y_B, X_S, N, cfg.loss, rule)
            t += 1
            pv, state = adam_step(pv, pv.like(grads), state, t, adam)
            parts.append(breakdown)
        history.append(_record(epoch, parts, (time.perf_counter() - start) * 1e3))
    return pv, history


def _finalize(model, pv):
    params = pv.to_dict()
    params["L"] = np.tril(params["L"])
    out = GwiModel(model.task, model.variant, model.prior, model.sigma2, model.Z, params,
                   model.input_shift, model.input_scale)
    if "log_sigma2" in params:
        out.sigma2 = float(math.exp(params["log_sigma2"]))
    return out


def validate(model, X_val, y_val, cfg, y_std=1.0):
    """Tempering on the validation split; returns ``(Calibration, validation NLL)``."""
    grid = tempering_grid(cfg.tempering_points)
    means, r = model.latent(X_val)
    if model.task == "regression":
        var = r[:, 0] + model.sigma2
        alpha = select_tempering(means[:, 0], var, y_val, grid, y_std)
        return Calibration(alpha_t=alpha), regression_nll(y_val, means[:, 0], alpha * var, y_std)
    rule = gauss_hermite(cfg.loss.quad_order)
    alpha = select_class_tempering(means, r, y_val, grid, cfg.loss.label_noise, rule)
    probs, _ = predict_class(means, r, alpha, cfg.loss.label_noise, rule)
    return Calibration(alpha_class=alpha), class_nll(probs, y_val)


def _run_grid_point(task, variant, M, X, y, X_val, y_val, cfg, seed, y_std):
    rng = make_rng([seed, M])
    start = time.perf_counter()
    model = _initial_model(task, variant, X, y, M, cfg, rng)
    pv, history = fit_variational(model, X, y, cfg, rng, cfg.epochs_for(task))
    model = _finalize(model, pv)
    calib, val_nll = validate(model, X_val, y_val, cfg, y_std)
    if not math.isfinite(val_nll):
        raise ConvergenceFailure(f"validation NLL is {val_nll}")
    return model, pv, history, calib, val_nll, time.perf_counter() - start


def _train(dataset, task, variant, cfg):
    X, y = dataset.part("train")
    X_val, y_val = dataset.part("val")
    grid = cfg.grid_for(task, variant, X.shape[0])
    y_std = dataset.y_std if task == "regression" else 1.0

    def job(M):
        try:
            return M, _run_grid_point(task, variant, M, X, y, X_val, y_val, cfg, cfg.seed, y_std), None
        except (GwiError, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.warning("grid point M=%d failed: %s", M, exc)
            return M, None, str(exc)

    if cfg.threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, grid))
    else:
        results = [job(M) for M in grid]

    best = None
    validation, timings, failed = {}, {}, {}
    for M, res, err in results:
        if res is None:
            failed[M] = err
            continue
        validation[M] = res[4]
        timings[M] = res[5]
        if best is None or res[4] < best[1][4]:
            best = (M, res)
    if best is None:
        raise ConvergenceFailure(f"all grid points failed: {failed}")
    M, (model, pv, history, calib, _, _) = best
    return TrainReport(
        task, variant, model, pv, history, M, calib, validation, grid, cfg.seed, timings, failed,
    )


def train_regression(dataset, variant="dnn", cfg=None):
    """Grid search over M for a split, standardized regression dataset."""
    cfg = cfg or TrainConfig()
    if not dataset.is_split:
        raise ValueError("dataset must be split before training")
    return _train(dataset, "regression", variant, cfg)


def train_classification(dataset, cfg=None):
    """Shared ``Z`` and prior, one variational kernel per class, MLP with one head per class."""
    cfg = cfg or TrainConfig()
    if not dataset.is_split:
        raise ValueError("dataset must be split before training")
    if len(np.unique(dataset.y)) < 2:
        raise InvalidLabels("classification needs at least two classes")
    return _train(dataset, "classification", "dnn", cfg)
