import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gwi.kernels import ArdParams, SvgpKernelParams, ard_gram
from gwi.numerics import make_rng

settings.register_profile("gwi", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("gwi")


@pytest.fixture
def rng():
    return make_rng(1234)


def random_prior(rng, dim):
    return ArdParams(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5, size=dim))


def random_svgp(rng, prior, M, scale=0.5):
    Z = rng.normal(size=(M, prior.dim))
    L = np.tril(rng.normal(scale=scale, size=(M, M)))
    return SvgpKernelParams(Z, L, prior)


def spd(rng, n, shift=1.0):
    A = rng.normal(size=(n, n))
    return A @ A.T + shift * np.eye(n)


def gram(prior, X):
    return ard_gram(prior, X)


def toy_model(seed, task="regression", variant="dnn", n=12, n_s=5, M=4, D=2, J=3, train_noise=True):
    """Small random GwiModel with a batch, comparison points and targets."""
    from gwi.variational import GwiModel, init_mlp

    r = make_rng(seed)
    prior = ArdParams(r.uniform(-0.3, 0.3), r.uniform(-0.3, 0.3, size=D))
    Z = r.normal(size=(M, D))
    out = 1 if task == "regression" else J
    L = np.stack([np.tril(r.normal(scale=0.3, size=(M, M))) + 0.5 * np.eye(M) for _ in range(out)])
    params = {"L": L}
    if variant == "svgp":
        params["beta"] = r.normal(size=M)
        params["Z"] = Z + 0.1 * r.normal(size=Z.shape)
    else:
        params.update(init_mlp([D, 6, 6, out], r).to_dict())
    if task == "regression" and train_noise:
        params["log_sigma2"] = np.array(np.log(0.3))
    model = GwiModel(task, variant, prior, 0.3, Z, params,
                     input_shift=r.normal(size=D), input_scale=r.uniform(0.5, 2.0, size=D))
    X_B = r.normal(size=(n, D))
    X_S = r.normal(size=(n_s, D))
    y_B = r.normal(size=n) if task == "regression" else r.integers(0, J, size=n)
    return model, X_B, y_B, X_S


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
