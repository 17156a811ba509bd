"""Variational mean functions, the tanh MLP, parameter packing and Sigma init."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch
from .kernels import ArdKernel, ArdParams, SvgpKernel, SvgpKernelParams, ard_gram, trace_estimate
from .numerics import cho_solve, cholesky, solve_psd


class ZeroMean:
    """The zero prior mean ``m_P = 0``."""

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.zeros(X.shape[0])


@dataclass
class GaussianMeasureSpec:
    """A Gaussian measure ``N(m, C)`` given by a mean callable and a kernel.

    ``kernel`` must expose ``gram(A, B)`` and ``diag(A)``.
    """

    mean: object
    kernel: object

    def trace(self, X):
        """Empirical trace of the covariance operator; must be finite."""
        t = trace_estimate(self.kernel, X)
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"kernel is not trace class on the sample (trace={t})")
        return t


def prior_measure(params):
    return GaussianMeasureSpec(ZeroMean(), ArdKernel(params))


# ---------------------------------------------------------------- SVGP mean


@dataclass
class SvgpMeanParams:
    beta: np.ndarray
    Z: np.ndarray
    prior: ArdParams
    prior_mean: object = None

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        if self.beta.size != self.Z.shape[0]:
            raise DimensionMismatch("beta length must equal the number of inducing points")
        if self.prior_mean is None:
            self.prior_mean = ZeroMean()


def svgp_mean_eval(params, X):
    """``m_P(x) + sum_m beta_m k(x, z_m)``; accepts one point or a row matrix."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != params.Z.shape[1]:
        raise DimensionMismatch(f"x has {X.shape[1]} features, Z has {params.Z.shape[1]}")
    out = params.prior_mean(X) + ard_gram(params.prior, X, params.Z) @ params.beta
    return float(out[0]) if single else out


class SvgpMean:
    def __init__(self, params):
        self.params = params

    def __call__(self, X):
        return svgp_mean_eval(self.params, np.atleast_2d(X))


# ---------------------------------------------------------------- MLP


@dataclass
class MlpParams:
    """Fully connected tanh network; the output layer is affine."""

    weights: list
    biases: list

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def copy(self):
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_dict(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_dict(cls, d):
        n = sum(1 for k in d if k.startswith("W"))
        return cls([d[f"W{i}"] for i in range(n)], [d[f"b{i}"] for i in range(n)])


def init_mlp(widths, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def mlp_forward(params, X):
    """Forward pass. Returns ``(output, cache)``.

    ``X`` may be a single input vector (output is then 1-D) or an ``n x D``
    matrix (output ``n x outputs``).
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    h = np.atleast_2d(X)
    if h.shape[1] != params.weights[0].shape[1]:
        raise DimensionMismatch(f"input has {h.shape[1]} features, network expects {params.weights[0].shape[1]}")
    inputs = []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        g = h @ W.T + b
        h = g if i == last else np.tanh(g)
    cache = {"inputs": inputs, "single": single}
    return (h[0] if single else h), cache


def mlp_backward(params, cache, output_gradient):
    """Gradient of ``sum(output * output_gradient)`` with respect to all weights.

    Returns a dict keyed ``W0, b0, W1, ...`` matching :meth:`MlpParams.to_dict`.
    """
    G = np.asarray(output_gradient, dtype=np.float64)
    if cache["single"]:
        G = G[None, :] if G.ndim == 1 else G
    inputs = cache["inputs"]
    if G.shape != (inputs[0].shape[0], params.weights[-1].shape[0]):
        raise ShapeMismatch(f"output gradient has shape {G.shape}")
    grads = {}
    for i in range(len(params.weights) - 1, -1, -1):
        h_in = inputs[i]
        grads[f"W{i}"] = G.T @ h_in
        grads[f"b{i}"] = G.sum(axis=0)
        if i > 0:
            # h_in = tanh(g_{i-1}), so dtanh = 1 - h_in^2
            G = (G @ params.weights[i]) * (1.0 - h_in * h_in)
    return grads


def dnn_mean_eval(mlp, prior_mean, X):
    """Variational mean ``m_P(x) + g(x)``; per-class columns for multi-output nets."""
    out, _ = mlp_forward(mlp, X)
    X2 = np.atleast_2d(X)
    base = prior_mean(X2)
    if np.ndim(out) == 1 and np.asarray(X).ndim == 1:
        return out + base[0]
    return out + base[:, None]


class DnnMean:
    """``m_P(x) + g(input_map(x))``, optionally selecting one output head."""

    def __init__(self, mlp, prior_mean=None, head=None, input_map=None):
        self.mlp = mlp
        self.prior_mean = prior_mean or ZeroMean()
        self.head = head
        self.input_map = input_map

    def __call__(self, X):
        X = np.atleast_2d(X)
        out, _ = mlp_forward(self.mlp, self.input_map(X) if self.input_map else X)
        out = out + self.prior_mean(X)[:, None]
        return out[:, 0 if self.head is None else self.head]


# ---------------------------------------------------------------- packing


class ParamVector:
    """Flat float64 view of a named collection of arrays.

    >>> pv = ParamVector.from_dict({"a": np.ones(2), "b": np.zeros((2, 2))})
    >>> pv.values.size
    6
    """

    def __init__(self, names, shapes, values):
        self.names = list(names)
        self.shapes = [tuple(s) for s in shapes]
        self.values = np.asarray(values, dtype=np.float64)
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        if self.values.size != self.offsets[-1]:
            raise ShapeMismatch("values length does not match shapes")

    @classmethod
    def from_dict(cls, arrays):
        names = list(arrays)
        shapes = [np.shape(arrays[k]) for k in names]
        values = np.concatenate([np.ravel(np.asarray(arrays[k], dtype=np.float64)) for k in names]) if names else np.zeros(0)
        return cls(names, shapes, values)

    def to_dict(self, values=None):
        v = self.values if values is None else values
        return {
            k: v[self.offsets[i]:self.offsets[i + 1]].reshape(self.shapes[i]).copy()
            for i, k in enumerate(self.names)
        }

    def like(self, arrays):
        """Flatten ``arrays`` in this vector's name order (missing names are zeros)."""
        out = np.zeros(self.values.size)
        for i, k in enumerate(self.names):
            if k in arrays:
                a = np.asarray(arrays[k], dtype=np.float64)
                if a.shape != self.shapes[i]:
                    raise ShapeMismatch(f"{k}: expected {self.shapes[i]}, got {a.shape}")
                out[self.offsets[i]:self.offsets[i + 1]] = a.ravel()
        return out

    def with_values(self, values):
        return ParamVector(self.names, self.shapes, np.asarray(values, dtype=np.float64).copy())

    def __len__(self):
        return self.values.size


# ---------------------------------------------------------------- Sigma init


def init_sigma(prior, Z, X_batch, sigma2, N, N_B):
    """Cholesky factor of ``(k(Z,Z) + (N / (N_B sigma^2)) k(Z,X_B) k(X_B,Z))^{-1}``.

    This is the batch approximation of the optimal SVGP covariance.
    """
    Kzz = ard_gram(prior, Z)
    Kzb = ard_gram(prior, Z, X_batch)
    inner = Kzz + (N / N_B) / sigma2 * (Kzb @ Kzb.T)
    inner = 0.5 * (inner + inner.T)
    sigma = solve_psd(inner, np.eye(Z.shape[0]))
    sigma = 0.5 * (sigma + sigma.T)
    return cholesky(sigma)


# ---------------------------------------------------------------- model


class GwiModel:
    """A trained or trainable GWI posterior: prior, noise and variational arrays.

    Parameters
    ----------
    task : {"regression", "classification"}
    variant : {"svgp", "dnn"}
        ``svgp`` uses the kernel-expansion mean (``beta``) and trains ``Z``;
        ``dnn`` uses a tanh MLP mean with ``Z`` fixed.
    prior : ArdParams
    sigma2 : float
        Observation noise variance (regression).
    Z : (M, D) array
    params : dict
        ``L`` of shape ``(J, M, M)`` plus ``beta`` or ``W0, b0, ...``; for the
        ``svgp`` variant also ``Z``.
    input_shift, input_scale : (D,) arrays, optional
        Fixed affine map applied to inputs before the mean network only; the
        kernels always see raw inputs.
    """

    def __init__(self, task, variant, prior, sigma2, Z, params, input_shift=None, input_scale=None):
        if task not in ("regression", "classification"):
            raise ValueError(f"unknown task {task!r}")
        if variant not in ("svgp", "dnn"):
            raise ValueError(f"unknown variant {variant!r}")
        if task == "classification" and variant != "dnn":
            raise ValueError("classification uses the dnn variant")
        self.task = task
        self.variant = variant
        self.prior = prior
        self.sigma2 = float(sigma2)
        self.Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        D = self.Z.shape[1]
        self.input_shift = np.zeros(D) if input_shift is None else np.asarray(input_shift, dtype=np.float64)
        self.input_scale = np.ones(D) if input_scale is None else np.asarray(input_scale, dtype=np.float64)

    @property
    def num_outputs(self):
        return self.params["L"].shape[0]

    @property
    def input_dim(self):
        return self.Z.shape[1]

    @property
    def num_inducing(self):
        return self.Z.shape[0]

    def inducing(self):
        return self.params["Z"] if "Z" in self.params else self.Z

    def net_input(self, X):
        return (np.atleast_2d(X) - self.input_shift) / self.input_scale

    def mlp_from(self, params):
        return MlpParams.from_dict({k: v for k, v in params.items() if k[0] in "Wb" and k[1:].isdigit()})

    def kernel_params(self, j=0):
        return SvgpKernelParams(self.inducing(), self.params["L"][j], self.prior)

    def variational_measure(self, j=0):
        if self.variant == "svgp":
            mean = SvgpMean(SvgpMeanParams(self.params["beta"], self.inducing(), self.prior))
        else:
            mean = DnnMean(self.mlp_from(self.params), head=j, input_map=self.net_input)
        return GaussianMeasureSpec(mean, SvgpKernel(self.kernel_params(j)))

    def prior_measure(self):
        return prior_measure(self.prior)

    def latent(self, X):
        """Variational means and variances at ``X``, both ``(n, J)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"inputs have {X.shape[1]} features, model expects {self.input_dim}")
        Z = self.inducing()
        Kzx = ard_gram(self.prior, Z, X)
        Lk = cholesky(ard_gram(self.prior, Z))
        Kinv = cho_solve(Lk, np.eye(Z.shape[0]))
        if self.variant == "svgp":
            means = (Kzx.T @ self.params["beta"])[:, None]
        else:
            means, _ = mlp_forward(self.mlp_from(self.params), self.net_input(X))
        variances = np.empty((X.shape[0], self.num_outputs))
        for j in range(self.num_outputs):
            Lj = np.tril(self.params["L"][j])
            C = Lj @ Lj.T - Kinv
            variances[:, j] = self.prior.variance + np.sum(Kzx * (C @ Kzx), axis=0)
        return means, np.maximum(variances, 0.0)

    def copy(self):
        return GwiModel(self.task, self.variant, self.prior.copy(), self.sigma2, self.Z.copy(), self.params,
                        self.input_shift.copy(), self.input_scale.copy())
