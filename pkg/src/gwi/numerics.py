"""Dense float64 linear algebra, Gauss-Hermite nodes and seeded generators.

Everything here is a thin, contract-checking layer over LAPACK (via numpy and
scipy). The jitter policy of :func:`cholesky` is the one place where we add
behaviour of our own.
"""

import logging

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
SYMMETRY_TOL = 1e-10
IMAG_WARN_REL = 1e-6


def make_rng(seed):
    """Return a PCG64-backed generator; equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(seed))


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def _check_symmetric(A, name="A"):
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric")


def cholesky(A, return_jitter=False):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    A plain factorisation is attempted first. On failure a diagonal jitter of
    ``1e-10 * mean(diag(A))`` is added and grown tenfold up to
    ``1e-4 * mean(diag(A))`` before giving up.

    Parameters
    ----------
    A : (n, n) array
    return_jitter : bool
        Also return the jitter that was finally added.

    Raises
    ------
    NotPositiveDefinite
        If no jitter in the ladder makes the factorisation succeed.
    """
    A = _as_square(A)
    _check_symmetric(A)
    n = A.shape[0]
    mean_diag = float(np.mean(np.diag(A)))
    scale = mean_diag if mean_diag > 0 else 1.0
    jitters = [0.0]
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-12):
        jitters.append(j * scale)
        j *= 10.0
    eye = np.eye(n)
    for jitter in jitters:
        try:
            L = np.linalg.cholesky(A + jitter * eye if jitter else A)
        except np.linalg.LinAlgError:
            continue
        if jitter:
            logger.debug("cholesky needed jitter %.3e", jitter)
        return (L, jitter) if return_jitter else L
    raise NotPositiveDefinite(
        f"matrix of size {n} not positive definite after jitter {jitters[-1]:.3e}"
    )


def cho_solve(L, B):
    """Solve ``(L L^T) X = B`` given a lower Cholesky factor."""
    return scipy.linalg.cho_solve((L, True), B, check_finite=False)


def solve_psd(A, B):
    """Solve ``A X = B`` for symmetric positive-definite ``A``."""
    L = cholesky(A)
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"B has {B.shape[0]} rows, A is {L.shape[0]}x{L.shape[0]}")
    return cho_solve(L, B)


def sym_eig(A):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns
    -------
    eigenvalues : (n,) array
    eigenvectors : (n, n) array, columns orthonormal
    """
    A = _as_square(A)
    _check_symmetric(A)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return w[::-1].copy(), V[:, ::-1].copy()


def eig_real_parts(M):
    """Real parts of the eigenvalues of a general square matrix, descending.

    Imaginary parts larger than ``1e-6 * ||M||`` are reported through the
    logger; they are expected to be rounding noise for products of PSD
    matrices.
    """
    M = _as_square(M, "M")
    try:
        w = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    norm = np.linalg.norm(M)
    imag = np.max(np.abs(w.imag)) if w.size else 0.0
    if imag > IMAG_WARN_REL * norm:
        logger.warning("eigenvalues with imaginary part %.3e (|M|=%.3e)", imag, norm)
    return np.sort(w.real)[::-1]


def psd_sqrt(A):
    """Symmetric square root of a PSD matrix; small negative eigenvalues clamp to 0."""
    w, V = sym_eig(A)
    if w.size and w[-1] < -1e-10 * max(1.0, abs(w[0])):
        logger.warning("psd_sqrt: clamping eigenvalue %.3e", w[-1])
    root = np.sqrt(np.clip(w, 0.0, None))
    S = (V * root) @ V.T
    return 0.5 * (S + S.T)


class QuadratureRule:
    """Physicists' Gauss-Hermite rule: integrates against ``exp(-t^2)``."""

    def __init__(self, nodes, weights):
        self.nodes = np.asarray(nodes, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)

    @property
    def order(self):
        return self.nodes.size

    def __repr__(self):
        return f"QuadratureRule(order={self.order})"


def gauss_hermite(order):
    if not 1 <= int(order) <= 100:
        raise ValueError(f"quadrature order must be in [1, 100], got {order}")
    nodes, weights = np.polynomial.hermite.hermgauss(int(order))
    return QuadratureRule(nodes, weights)
