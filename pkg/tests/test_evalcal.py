import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwi.errors import EmptyInput, EmptyValidation, InvalidVariance, LengthMismatch, NonPositiveNoise
from gwi.evalcal import (
    Calibration, accuracy, class_nll, coverage, entropy, ood_auc, predict_class, predictive_regression,
    regression_nll, regression_nll_points, rmse, select_class_tempering, select_tempering, summarize,
    tempering_grid,
)
from gwi.numerics import gauss_hermite, make_rng


class TestPredictiveRegression:
    def test_identity_tempering(self):
        _, v = predictive_regression([0.0], [0.3], 0.2, 1.0)
        np.testing.assert_allclose(v, [0.5])

    def test_noise_only(self):
        _, v = predictive_regression([0.0], [0.0], 0.2, 3.0)
        np.testing.assert_allclose(v, [0.6])

    def test_far_from_data_reversion(self):
        from gwi.kernels import ArdParams, SvgpKernel, SvgpKernelParams

        p = ArdParams.from_values(1.3, [0.5])
        Z = np.linspace(-1, 1, 5)[:, None]
        L = np.tril(make_rng(0).normal(scale=0.3, size=(5, 5)))
        k = SvgpKernel(SvgpKernelParams(Z, L, p))
        x = np.array([[1.0 + 20 * 0.5]])
        _, v = predictive_regression([0.0], k.diag(x), 0.1, 0.7)
        assert v[0] == pytest.approx(0.7 * (1.3 ** 2 + 0.1), rel=0.05)

    def test_errors(self):
        with pytest.raises(InvalidVariance):
            predictive_regression([0.0], [-1.0], 0.1)
        with pytest.raises(NonPositiveNoise):
            predictive_regression([0.0], [1.0], 0.0)


class TestRegressionNll:
    def test_standard_normal(self):
        assert regression_nll([0.0], [0.0], [1.0]) == pytest.approx(0.918939, abs=1e-6)

    def test_offset(self):
        a = regression_nll([0.3], [0.0], [1.0])
        assert regression_nll([0.3], [0.0], [1.0], y_std=math.e) - a == pytest.approx(1.0, abs=1e-14)

    def test_matches_scipy(self, rng):
        from scipy.stats import norm

        y, m, v = rng.normal(size=200), rng.normal(size=200), rng.uniform(0.1, 3, 200)
        direct = -np.mean(norm.logpdf(y, m, np.sqrt(v)))
        assert abs(regression_nll(y, m, v) - direct) <= 1e-10

    def test_rejects_zero_variance(self):
        with pytest.raises(InvalidVariance):
            regression_nll_points([0.0], [0.0], [0.0])


class TestSelectTempering:
    def test_calibrated(self, rng):
        v = rng.uniform(0.2, 2.0, 5000)
        y = rng.normal(size=5000) * np.sqrt(v)
        assert 0.8 <= select_tempering(np.zeros(5000), v, y) <= 1.25

    def test_too_wide(self, rng):
        v = rng.uniform(0.2, 2.0, 20000)
        y = rng.normal(size=20000) * np.sqrt(v)
        grid = tempering_grid()
        a = select_tempering(np.zeros(20000), 4 * v, y, grid)
        step = grid[1] / grid[0]
        assert 0.25 / step <= a <= 0.25 * step

    def test_single_candidate(self, rng):
        assert select_tempering(np.zeros(3), np.ones(3), rng.normal(size=3), [1.0]) == 1.0

    def test_empty(self):
        with pytest.raises(EmptyValidation):
            select_tempering([], [], [])

    def test_grid(self):
        g = tempering_grid()
        assert g.size == 200 and g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(2.0)


class TestClassification:
    def test_symmetric(self):
        J, eps = 4, 0.01
        probs, label = predict_class(np.zeros((1, J)), np.ones((1, J)), label_noise=eps, rule=gauss_hermite(64))
        expect = (1 - eps) / J + (eps / (J - 1)) * (1 - 1 / J)
        np.testing.assert_allclose(probs[0], expect, atol=1e-10)
        assert label[0] == 0

    def test_certain(self):
        probs, _ = predict_class([[50.0, 0.0, 0.0]], [[1e-6, 1e-6, 1e-6]], label_noise=0.05)
        assert probs[0, 0] == pytest.approx(0.95)

    @given(st.integers(2, 5), st.integers(0, 1000))
    def test_sum_identity(self, J, seed):
        from gwi.loss import class_probabilities_S

        r = make_rng(seed)
        m, v = r.normal(size=(4, J)), r.uniform(0.3, 2, size=(4, J))
        eps = 0.02
        probs, _ = predict_class(m, v, label_noise=eps)
        S = class_probabilities_S(m, v, gauss_hermite(32))
        np.testing.assert_allclose(probs.sum(1), (1 - eps) * S.sum(1) + eps / (J - 1) * (J - S.sum(1)), atol=1e-12)
        np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-4)

    def test_nll_values(self):
        assert class_nll([[0.99, 0.01]], [0]) == pytest.approx(-math.log(0.99))
        assert class_nll([[0.5 * 0.99 + 0.5 * 0.01, 0.5]], [0]) == pytest.approx(math.log(2))

    def test_nll_matches_probability(self, rng):
        probs, _ = predict_class(rng.normal(size=(5, 3)), np.ones((5, 3)))
        y = rng.integers(0, 3, 5)
        assert class_nll(probs, y) == pytest.approx(np.mean(-np.log(probs[np.arange(5), y])), abs=0)

    def test_nll_length(self):
        with pytest.raises(LengthMismatch):
            class_nll([[0.5, 0.5]], [0, 1])

    def test_class_tempering_returns_grid_values(self, rng):
        m = rng.normal(size=(30, 3))
        y = np.argmax(m + 0.3 * rng.normal(size=m.shape), axis=1)
        grid = tempering_grid(20)
        a = select_class_tempering(m, np.ones_like(m), y, grid)
        assert a.shape == (3,) and all(x in grid for x in a)
        assert np.all(select_class_tempering(m, np.ones_like(m), y, [1.0]) == 1.0)

    def test_calibration_validation(self):
        with pytest.raises(ValueError):
            Calibration(0.0)
        with pytest.raises(ValueError):
            Calibration(1.0, [1.0, -1.0])


class TestEntropyAuc:
    def test_entropy(self):
        np.testing.assert_allclose(entropy([[1.0, 0.0], [0.5, 0.5]]), [0.0, math.log(2)])

    def test_perfect(self):
        assert ood_auc([0.1, 0.2], [0.3, 0.4]) == 1.0

    def test_ties(self):
        assert ood_auc([0.5] * 4, [0.5] * 3) == 0.5

    def test_enumerated(self):
        assert ood_auc([0.1, 0.3], [0.2, 0.4]) == pytest.approx(0.75)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            ood_auc([], [1.0])


class TestMetrics:
    def test_perfect(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert accuracy([1, 0], [1, 0]) == 1.0

    def test_half(self):
        assert accuracy(np.ones(10), np.r_[np.ones(5), -np.ones(5)]) == 0.5

    def test_coverage(self):
        y = make_rng(0).standard_normal(100_000)
        assert 0.945 <= coverage(np.zeros_like(y), np.ones_like(y), y) <= 0.955

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(EmptyInput):
            accuracy([], [])

    def test_summarize(self):
        assert summarize([1.0, 3.0]) == (2.0, 1.0)
