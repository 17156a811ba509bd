import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwi.errors import DimensionMismatch, ShapeMismatch
from gwi.kernels import ArdParams, ard_gram
from gwi.numerics import make_rng
from gwi.variational import (
    DnnMean, GwiModel, MlpParams, ParamVector, SvgpMeanParams, ZeroMean, dnn_mean_eval,
    init_mlp, init_sigma, mlp_backward, mlp_forward, svgp_mean_eval,
)

from conftest import random_prior


def fd(f, x0, h=1e-5):
    x0 = np.array(x0, dtype=float)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class ConstMean:
    def __init__(self, c):
        self.c = c

    def __call__(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.c)


class TestSvgpMean:
    def test_zero_beta(self, rng):
        p = random_prior(rng, 2)
        params = SvgpMeanParams(np.zeros(3), rng.normal(size=(3, 2)), p)
        assert svgp_mean_eval(params, rng.normal(size=2)) == 0.0

    def test_single_inducing_at_point(self):
        p = ArdParams.from_values(1.4, [0.9])
        params = SvgpMeanParams([1.0], [[0.3]], p)
        assert svgp_mean_eval(params, np.array([0.3])) == pytest.approx(1.4 ** 2)

    def test_beta_gradient(self, rng):
        p = random_prior(rng, 2)
        Z = rng.normal(size=(4, 2))
        x = rng.normal(size=2)
        beta = rng.normal(size=4)
        g = fd(lambda b: svgp_mean_eval(SvgpMeanParams(b, Z, p), x), beta)
        np.testing.assert_allclose(g, ard_gram(p, x[None, :], Z)[0], atol=1e-6)

    def test_length_check(self, rng):
        with pytest.raises(DimensionMismatch):
            SvgpMeanParams(np.zeros(2), np.zeros((3, 1)), ArdParams(0.0, [0.0]))


class TestMlp:
    def test_zero_network(self):
        mlp = MlpParams([np.zeros((4, 2)), np.zeros((1, 4))], [np.zeros(4), np.zeros(1)])
        out, _ = mlp_forward(mlp, np.array([0.3, -2.0]))
        np.testing.assert_array_equal(out, [0.0])

    def test_affine_layer(self):
        mlp = MlpParams([np.array([[2.0]])], [np.array([1.0])])
        out, _ = mlp_forward(mlp, np.array([3.0]))
        np.testing.assert_array_equal(out, [7.0])

    def test_output_bound(self, rng):
        mlp = init_mlp([2, 10, 10, 1], rng)
        for b in mlp.biases:
            b[:] = rng.normal(size=b.shape)
        out, _ = mlp_forward(mlp, 100 * rng.normal(size=(50, 2)))
        assert np.all(np.isfinite(out))
        assert np.all(np.abs(out) <= np.abs(mlp.weights[-1]).sum() + np.abs(mlp.biases[-1]).sum())

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            mlp_forward(init_mlp([3, 4, 1], rng), np.zeros(2))

    def test_backward_zero_gradient(self, rng):
        mlp = init_mlp([2, 5, 2], rng)
        _, cache = mlp_forward(mlp, rng.normal(size=(6, 2)))
        grads = mlp_backward(mlp, cache, np.zeros((6, 2)))
        assert all(np.all(g == 0) for g in grads.values())

    def test_backward_affine(self):
        mlp = MlpParams([np.array([[2.0, -1.0]])], [np.array([0.5])])
        x = np.array([3.0, 4.0])
        _, cache = mlp_forward(mlp, x)
        grads = mlp_backward(mlp, cache, np.array([1.5]))
        np.testing.assert_allclose(grads["W0"], 1.5 * x[None, :])
        np.testing.assert_allclose(grads["b0"], [1.5])

    def test_backward_shape_mismatch(self, rng):
        mlp = init_mlp([2, 3, 1], rng)
        _, cache = mlp_forward(mlp, rng.normal(size=(4, 2)))
        with pytest.raises(ShapeMismatch):
            mlp_backward(mlp, cache, np.zeros((3, 1)))

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_matches_fd(self, seed):
        r = make_rng(seed)
        mlp = init_mlp([3, 10, 10, 2], r)
        X = r.normal(size=(7, 3))
        G = r.normal(size=(7, 2))
        _, cache = mlp_forward(mlp, X)
        grads = mlp_backward(mlp, cache, G)
        pv = ParamVector.from_dict(mlp.to_dict())

        def objective(v):
            out, _ = mlp_forward(MlpParams.from_dict(pv.to_dict(v)), X)
            return float(np.sum(out * G))

        np.testing.assert_allclose(pv.like(grads), fd(objective, pv.values), rtol=1e-5, atol=1e-9)


class TestDnnMean:
    def test_zero_network_zero_prior(self, rng):
        mlp = init_mlp([2, 4, 1], rng)
        mlp = MlpParams([0 * W for W in mlp.weights], [0 * b for b in mlp.biases])
        np.testing.assert_array_equal(dnn_mean_eval(mlp, ZeroMean(), rng.normal(size=(3, 2))), 0.0)

    def test_prior_mean_added(self, rng):
        mlp = init_mlp([2, 4, 1], rng)
        X = rng.normal(size=(5, 2))
        out, _ = mlp_forward(mlp, X)
        np.testing.assert_allclose(dnn_mean_eval(mlp, ConstMean(0.7), X) - 0.7, out)
        np.testing.assert_allclose(DnnMean(mlp, ConstMean(0.7))(X), out[:, 0] + 0.7)

    def test_smooth_in_x(self, rng):
        mlp = init_mlp([1, 10, 10, 1], rng)
        x = np.linspace(-3, 3, 601)[:, None]
        out, _ = mlp_forward(mlp, x)
        second = np.diff(out[:, 0], 2) / (x[1, 0] - x[0, 0]) ** 2
        assert np.all(np.isfinite(second))
        assert np.max(np.abs(np.diff(second))) < 0.1 * max(1.0, np.max(np.abs(second)))


class TestParamVector:
    @given(shapes=st.lists(st.lists(st.integers(1, 4), min_size=0, max_size=3), min_size=1, max_size=5),
           seed=st.integers(0, 1000))
    def test_round_trip(self, shapes, seed):
        r = make_rng(seed)
        arrays = {f"a{i}": r.normal(size=tuple(s)) for i, s in enumerate(shapes)}
        pv = ParamVector.from_dict(arrays)
        back = pv.to_dict()
        for k, v in arrays.items():
            np.testing.assert_array_equal(back[k], v)
        np.testing.assert_array_equal(pv.like(back), pv.values)

    def test_shape_mismatch(self):
        pv = ParamVector.from_dict({"a": np.zeros(3)})
        with pytest.raises(ShapeMismatch):
            pv.like({"a": np.zeros(2)})
        with pytest.raises(ShapeMismatch):
            ParamVector(["a"], [(3,)], np.zeros(4))


class TestInitSigma:
    def test_scalar(self):
        p = ArdParams.from_values(1.0, [1.0])
        Z = np.array([[0.0]])
        X = np.array([[0.0]])
        # k(z,z) = 1, (N/N_B) k(z,x)^2 = 3 with N=3, N_B=1
        L = init_sigma(p, Z, X, 1.0, 3, 1)
        np.testing.assert_allclose(L, [[0.5]])

    def test_no_data_limit(self, rng):
        p = random_prior(rng, 2)
        Z = rng.normal(size=(5, 2))
        L = init_sigma(p, Z, rng.normal(size=(20, 2)), 1e9, 100, 20)
        Kinv = np.linalg.inv(ard_gram(p, Z))
        assert np.linalg.norm(L @ L.T - Kinv) / np.linalg.norm(Kinv) <= 1e-6

    def test_spd(self, rng):
        p = random_prior(rng, 3)
        Z = rng.normal(size=(6, 3))
        L = init_sigma(p, Z, rng.normal(size=(30, 3)), 0.1, 300, 30)
        assert np.linalg.eigvalsh(L @ L.T).min() > 0
        np.testing.assert_array_equal(L, np.tril(L))


class TestGwiModel:
    def _model(self, rng, variant="dnn"):
        p = random_prior(rng, 2)
        Z = rng.normal(size=(4, 2))
        params = {"L": np.tril(rng.normal(size=(1, 4, 4)))}
        if variant == "svgp":
            params["beta"] = rng.normal(size=4)
            params["Z"] = Z.copy()
        else:
            params.update(init_mlp([2, 5, 1], rng).to_dict())
        return GwiModel("regression", variant, p, 0.1, Z, params)

    @pytest.mark.parametrize("variant", ["dnn", "svgp"])
    def test_latent_matches_measure(self, rng, variant):
        m = self._model(rng, variant)
        X = rng.normal(size=(8, 2))
        means, var = m.latent(X)
        q = m.variational_measure(0)
        np.testing.assert_allclose(means[:, 0], q.mean(X), atol=1e-12)
        np.testing.assert_allclose(var[:, 0], np.maximum(q.kernel.diag(X), 0), atol=1e-10)

    def test_input_map_only_affects_mean(self, rng):
        m = self._model(rng)
        X = rng.normal(size=(5, 2))
        _, v0 = m.latent(X)
        m.input_shift = np.array([1.0, -2.0])
        m.input_scale = np.array([3.0, 0.5])
        means, v1 = m.latent(X)
        np.testing.assert_array_equal(v0, v1)
        out, _ = mlp_forward(m.mlp_from(m.params), (X - m.input_shift) / m.input_scale)
        np.testing.assert_allclose(means, out)

    def test_dimension_check(self, rng):
        with pytest.raises(DimensionMismatch):
            self._model(rng).latent(np.zeros((2, 3)))

    def test_classification_requires_dnn(self, rng):
        with pytest.raises(ValueError):
            GwiModel("classification", "svgp", random_prior(rng, 1), 1.0, np.zeros((2, 1)),
                     {"L": np.zeros((2, 2, 2)), "beta": np.zeros(2)})
