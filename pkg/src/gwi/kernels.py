"""ARD prior kernel, SVGP variational kernel and their parameter gradients."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .numerics import cho_solve, cholesky


@dataclass
class ArdParams:
    """Squared-exponential ARD hyperparameters, stored in log space.

    ``k(x, x') = sf^2 exp(-0.5 sum_d (x_d - x'_d)^2 / alpha_d^2)``
    """

    log_sf: float
    log_alpha: np.ndarray

    def __post_init__(self):
        self.log_sf = float(self.log_sf)
        self.log_alpha = np.atleast_1d(np.asarray(self.log_alpha, dtype=np.float64)).copy()

    @classmethod
    def from_values(cls, sf, alpha):
        return cls(np.log(sf), np.log(np.atleast_1d(np.asarray(alpha, dtype=np.float64))))

    @property
    def sf(self):
        return float(np.exp(self.log_sf))

    @property
    def variance(self):
        return float(np.exp(2.0 * self.log_sf))

    @property
    def alpha(self):
        return np.exp(self.log_alpha)

    @property
    def dim(self):
        return self.log_alpha.size

    def copy(self):
        return ArdParams(self.log_sf, self.log_alpha.copy())


def _as_points(A, dim):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] != dim:
        raise DimensionMismatch(f"expected points with {dim} columns, got shape {A.shape}")
    return A


def ard_gram(params, A, B=None):
    A = _as_points(A, params.dim) / params.alpha
    B = A if B is None else _as_points(B, params.dim) / params.alpha
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return params.variance * np.exp(-0.5 * sq)


def ard_eval(params, x, x2):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != (params.dim,) or x2.shape != (params.dim,):
        raise DimensionMismatch(f"points must have dimension {params.dim}")
    d = (x - x2) / params.alpha
    return params.variance * float(np.exp(-0.5 * np.dot(d, d)))


def ard_gram_backward(params, A, B, K, G):
    """Pull a gradient ``G = dloss/dK`` for ``K = ard_gram(params, A, B)`` back.

    Returns ``(d_log_sf, d_log_alpha, d_A, d_B)``. When ``A`` and ``B`` are the
    same array the caller must add ``d_A`` and ``d_B`` itself.
    """
    A = _as_points(A, params.dim)
    B = _as_points(B, params.dim)
    W = G * K
    inv_a2 = np.exp(-2.0 * params.log_alpha)
    row = W.sum(axis=1)
    col = W.sum(axis=0)
    WB = W @ B
    d_log_sf = 2.0 * float(W.sum())
    d_log_alpha = (row @ (A * A) + col @ (B * B) - 2.0 * np.sum(A * WB, axis=0)) * inv_a2
    d_A = -(row[:, None] * A - WB) * inv_a2
    d_B = (W.T @ A - col[:, None] * B) * inv_a2
    return d_log_sf, d_log_alpha, d_A, d_B


class ArdKernel:
    """Callable Gram-matrix wrapper around :class:`ArdParams`."""

    def __init__(self, params):
        self.params = params

    def gram(self, A, B=None):
        return ard_gram(self.params, A, B)

    def diag(self, A):
        A = _as_points(A, self.params.dim)
        return np.full(A.shape[0], self.params.variance)


@dataclass
class SvgpKernelParams:
    """Inducing inputs ``Z``, lower-triangular ``L`` (``Sigma = L L^T``) and prior."""

    Z: np.ndarray
    L: np.ndarray
    prior: ArdParams
    _chol: np.ndarray = field(default=None, repr=False, compare=False)
    _chol_key: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.L = np.tril(np.atleast_2d(np.asarray(self.L, dtype=np.float64)))
        if self.L.shape != (self.Z.shape[0], self.Z.shape[0]):
            raise DimensionMismatch(f"L must be {self.Z.shape[0]}x{self.Z.shape[0]}, got {self.L.shape}")
        if self.Z.shape[1] != self.prior.dim:
            raise DimensionMismatch("Z columns must match prior dimension")

    @property
    def num_inducing(self):
        return self.Z.shape[0]

    @property
    def sigma(self):
        return self.L @ self.L.T

    def kzz_cholesky(self):
        """Cholesky factor of ``k(Z, Z)`` (plus jitter), cached on Z and prior."""
        key = (self.Z.tobytes(), self.prior.log_sf, self.prior.log_alpha.tobytes())
        if self._chol is None or self._chol_key != key:
            self._chol = cholesky(ard_gram(self.prior, self.Z))
            self._chol_key = key
        return self._chol

    def kzz_inverse(self):
        Lk = self.kzz_cholesky()
        Kinv = cho_solve(Lk, np.eye(self.num_inducing))
        return 0.5 * (Kinv + Kinv.T)

    def correction(self):
        """``Sigma - k(Z,Z)^{-1}``, the matrix sandwiched between ``k_Z`` vectors."""
        return self.sigma - self.kzz_inverse()


class SvgpKernel:
    """Variational kernel ``r(x,x') = k(x,x') - k_Z(x)^T Kzz^{-1} k_Z(x') + k_Z(x)^T Sigma k_Z(x')``."""

    def __init__(self, params):
        self.params = params

    def gram(self, A, B=None):
        p = self.params
        Kza = ard_gram(p.prior, p.Z, A)
        Kzb = Kza if B is None else ard_gram(p.prior, p.Z, B)
        base = ard_gram(p.prior, A, B)
        return base + Kza.T @ p.correction() @ Kzb

    def diag(self, A):
        p = self.params
        Kza = ard_gram(p.prior, p.Z, A)
        C = p.correction()
        return p.prior.variance + np.einsum("mi,mn,ni->i", Kza, C, Kza)


def svgp_r_eval(params, x, x2):
    return float(SvgpKernel(params).gram(np.atleast_2d(x), np.atleast_2d(x2))[0, 0])


def trace_estimate(kernel, X):
    """Empirical-measure trace of the covariance operator: mean of ``k(x_n, x_n)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 1:
        raise ValueError("trace_estimate needs at least one point")
    return float(np.mean(kernel.diag(X)))


def kernel_grad(params, x, x2):
    """Analytic gradient of a single kernel value with respect to its parameters.

    For :class:`ArdParams` the keys are ``log_sf`` and ``log_alpha``; for
    :class:`SvgpKernelParams` also ``L`` and ``Z`` (prior hyperparameters enter
    through ``k``, ``k_Z`` and ``k(Z,Z)``).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    prior = params if isinstance(params, ArdParams) else params.prior
    one = np.ones((1, 1))
    k = ard_gram(prior, x, x2)
    g_sf, g_alpha, _, _ = ard_gram_backward(prior, x, x2, k, one)
    if isinstance(params, ArdParams):
        return {"log_sf": g_sf, "log_alpha": g_alpha}

    p = params
    Z = p.Z
    a = ard_gram(prior, Z, x)[:, 0]
    b = ard_gram(prior, Z, x2)[:, 0]
    C = p.correction()
    Kinv = p.kzz_inverse()
    G_C = np.outer(a, b)
    g_L = np.tril((G_C + G_C.T) @ p.L)
    # C = Sigma - Kzz^{-1}  =>  dC = Kinv dKzz Kinv
    G_kzz = Kinv @ G_C @ Kinv
    Kzz = ard_gram(prior, Z)
    s1, a1, dZ1, dZ2 = ard_gram_backward(prior, Z, Z, Kzz, G_kzz)
    ga = (C @ b)[:, None]
    gb = (C.T @ a)[:, None]
    s2, a2, dZ3, _ = ard_gram_backward(prior, Z, x, a[:, None], ga)
    s3, a3, dZ4, _ = ard_gram_backward(prior, Z, x2, b[:, None], gb)
    return {
        "log_sf": g_sf + s1 + s2 + s3,
        "log_alpha": g_alpha + a1 + a2 + a3,
        "L": g_L,
        "Z": dZ1 + dZ2 + dZ3 + dZ4,
    }
