import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwi.errors import DimensionMismatch
from gwi.kernels import (
    ArdKernel, ArdParams, SvgpKernel, SvgpKernelParams, ard_eval, ard_gram, kernel_grad,
    svgp_r_eval, trace_estimate,
)
from gwi.numerics import make_rng

from conftest import random_prior, random_svgp


def fd_kernel(f, x0, h=1e-5):
    x0 = np.array(x0, dtype=float)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestArd:
    def test_diagonal_value(self):
        p = ArdParams.from_values(1.7, [0.3, 2.0])
        assert ard_eval(p, [1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.7 ** 2, rel=1e-15)

    def test_unit_distance(self):
        p = ArdParams.from_values(1.0, [1.0])
        assert ard_eval(p, [0.0], [1.0]) == pytest.approx(math.exp(-0.5), rel=1e-14)

    def test_symmetry(self, rng):
        p = random_prior(rng, 3)
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert ard_eval(p, x, y) == ard_eval(p, y, x)

    def test_dimension_mismatch(self):
        p = ArdParams.from_values(1.0, [1.0, 1.0])
        with pytest.raises(DimensionMismatch):
            ard_eval(p, [0.0], [1.0])
        with pytest.raises(DimensionMismatch):
            ard_gram(p, np.zeros((3, 3)))

    def test_gram_single_point(self):
        p = ArdParams.from_values(2.0, [1.0])
        np.testing.assert_allclose(ard_gram(p, np.array([[0.4]])), [[4.0]])

    def test_gram_transpose(self, rng):
        p = random_prior(rng, 2)
        A, B = rng.normal(size=(4, 2)), rng.normal(size=(6, 2))
        np.testing.assert_allclose(ard_gram(p, A, B), ard_gram(p, B, A).T, rtol=1e-14)

    def test_gram_matches_pointwise(self, rng):
        p = random_prior(rng, 2)
        A, B = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
        K = ard_gram(p, A, B)
        for i in range(3):
            for j in range(4):
                assert K[i, j] == pytest.approx(ard_eval(p, A[i], B[j]), rel=1e-12)

    def test_gram_psd_5x5(self, rng):
        p = random_prior(rng, 2)
        K = ard_gram(p, rng.normal(size=(5, 2)))
        assert np.linalg.eigvalsh(K).min() >= -1e-10

    @given(n=st.integers(1, 30), seed=st.integers(0, 10_000))
    def test_gram_psd_property(self, n, seed):
        r = make_rng(seed)
        p = random_prior(r, 3)
        K = ard_gram(p, r.normal(size=(n, 3)))
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


class TestSvgpKernel:
    def test_identity_recovery(self, rng):
        p = random_prior(rng, 2)
        Z = rng.normal(size=(5, 2))
        Kzz = ard_gram(p, Z)
        L = np.linalg.cholesky(np.linalg.inv(Kzz))
        sp = SvgpKernelParams(Z, L, p)
        for _ in range(10):
            x, y = rng.normal(size=2), rng.normal(size=2)
            assert abs(svgp_r_eval(sp, x, y) - ard_eval(p, x, y)) <= 1e-9

    def test_interpolation_zero_sigma(self, rng):
        p = random_prior(rng, 2)
        Z = rng.normal(size=(4, 2)) * 2
        sp = SvgpKernelParams(Z, np.zeros((4, 4)), p)
        assert abs(svgp_r_eval(sp, Z[1], Z[1])) <= 1e-9

    def test_prior_reversion(self, rng):
        p = ArdParams.from_values(1.3, [0.5, 0.8])
        sp = random_svgp(rng, p, 6)
        x = sp.Z.max(axis=0) + 20 * p.alpha
        kz = ard_gram(p, sp.Z, x[None, :])
        assert kz.max() <= 1e-8 * p.variance
        assert abs(svgp_r_eval(sp, x, x) - p.variance) <= 1e-6 * p.variance

    def test_reversion_bound_scales_with_delta(self, rng):
        p = ArdParams.from_values(1.0, [1.0])
        sp = random_svgp(rng, p, 4)
        C = np.linalg.norm(sp.correction(), 2) * sp.num_inducing * p.variance
        for dist in [3.0, 5.0, 8.0]:
            x = np.array([sp.Z.max() + dist])
            delta = ard_gram(p, sp.Z, x[None, :]).max() / p.variance
            assert abs(svgp_r_eval(sp, x, x) - p.variance) <= C * delta * delta + 1e-15

    def test_gram_psd_and_nonnegative_diag(self, rng):
        p = random_prior(rng, 2)
        sp = random_svgp(rng, p, 5)
        X = rng.normal(size=(12, 2))
        R = SvgpKernel(sp).gram(X)
        assert np.linalg.eigvalsh(0.5 * (R + R.T)).min() >= -1e-8 * abs(np.trace(R))
        np.testing.assert_allclose(SvgpKernel(sp).diag(X), np.diag(R), atol=1e-12)
        assert np.all(SvgpKernel(sp).diag(X) >= -1e-10)

    def test_lower_triangle_enforced(self, rng):
        p = random_prior(rng, 1)
        sp = SvgpKernelParams(rng.normal(size=(3, 1)), np.ones((3, 3)), p)
        np.testing.assert_array_equal(sp.L, np.tril(np.ones((3, 3))))

    def test_cholesky_cache_invalidation(self, rng):
        p = random_prior(rng, 1)
        sp = random_svgp(rng, p, 3)
        first = sp.kzz_cholesky().copy()
        sp.Z = sp.Z * 1.7
        assert not np.allclose(first, sp.kzz_cholesky())
        np.testing.assert_allclose(sp.kzz_cholesky() @ sp.kzz_cholesky().T, ard_gram(p, sp.Z), atol=1e-12)
        sp.prior = ArdParams(p.log_sf + 0.3, p.log_alpha)
        np.testing.assert_allclose(sp.kzz_cholesky() @ sp.kzz_cholesky().T, ard_gram(sp.prior, sp.Z), atol=1e-12)


class TestTraceEstimate:
    def test_ard_constant(self, rng):
        p = ArdParams.from_values(1.9, [0.7])
        assert trace_estimate(ArdKernel(p), rng.normal(size=(9, 1))) == pytest.approx(1.9 ** 2, rel=1e-15)

    def test_svgp_identity_case(self, rng):
        p = random_prior(rng, 2)
        Z = rng.normal(size=(4, 2))
        L = np.linalg.cholesky(np.linalg.inv(ard_gram(p, Z)))
        X = rng.normal(size=(7, 2))
        assert trace_estimate(SvgpKernel(SvgpKernelParams(Z, L, p)), X) == pytest.approx(
            trace_estimate(ArdKernel(p), X), rel=1e-9)

    def test_svgp_interpolation(self, rng):
        p = random_prior(rng, 2)
        Z = 3 * rng.normal(size=(4, 2))
        assert abs(trace_estimate(SvgpKernel(SvgpKernelParams(Z, np.zeros((4, 4)), p)), Z)) <= 1e-9

    def test_permutation_invariant(self, rng):
        p = random_prior(rng, 2)
        k = SvgpKernel(random_svgp(rng, p, 3))
        X = rng.normal(size=(10, 2))
        assert trace_estimate(k, X) == pytest.approx(trace_estimate(k, X[rng.permutation(10)]), rel=1e-14)


class TestKernelGrad:
    def test_diagonal_ard(self):
        p = ArdParams.from_values(1.5, [0.4, 2.0])
        g = kernel_grad(p, [1.0, 1.0], [1.0, 1.0])
        assert g["log_sf"] == pytest.approx(2 * 1.5 ** 2)
        np.testing.assert_allclose(g["log_alpha"], 0.0, atol=1e-15)

    def test_ard_matches_fd(self, rng):
        p = random_prior(rng, 3)
        x, y = rng.normal(size=3), rng.normal(size=3)
        g = kernel_grad(p, x, y)
        theta = np.concatenate([[p.log_sf], p.log_alpha])
        fd = fd_kernel(lambda t: ard_eval(ArdParams(t[0], t[1:]), x, y), theta)
        np.testing.assert_allclose(np.concatenate([[g["log_sf"]], g["log_alpha"]]), fd, rtol=1e-5)

    def test_svgp_matches_fd(self, rng):
        p = random_prior(rng, 2)
        sp = random_svgp(rng, p, 4)
        x, y = rng.normal(size=2), rng.normal(size=2)
        g = kernel_grad(sp, x, y)

        def value(log_sf=p.log_sf, log_alpha=p.log_alpha, L=sp.L, Z=sp.Z):
            return svgp_r_eval(SvgpKernelParams(Z, L, ArdParams(log_sf, log_alpha)), x, y)

        checks = {
            "log_sf": fd_kernel(lambda v: value(log_sf=v[0]), [p.log_sf])[0],
            "log_alpha": fd_kernel(lambda v: value(log_alpha=v), p.log_alpha),
            "L": np.tril(fd_kernel(lambda v: value(L=v), sp.L)),
            "Z": fd_kernel(lambda v: value(Z=v), sp.Z),
        }
        for k, fd in checks.items():
            np.testing.assert_allclose(g[k], fd, rtol=1e-5, atol=1e-8, err_msg=k)
