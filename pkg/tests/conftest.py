from importlib import resources

import numpy as np
import pytest

from markov_lsa.config import build_model, load_config
from markov_lsa.markov import TransitionKernel
from markov_lsa.models import NoiseSpec, TabularModel


def data_path(name):
    return str(resources.files("markov_lsa") / "data" / name)


def random_kernel(rng, S, floor=0.05):
    P = rng.random((S, S)) + floor
    return TransitionKernel(P / P.sum(axis=1, keepdims=True))


def random_tabular(rng, S=3, d=2, scale=0.4, noisy=True):
    """Tabular model whose tables keep kappa well below one."""
    P = random_kernel(rng, S)
    L = rng.uniform(-1, 1, (S, d, d))
    L *= scale / np.max(np.linalg.norm(L, ord=2, axis=(1, 2)))
    b = rng.normal(size=(S, d))
    noise = NoiseSpec(L_std=0.1, b_std=0.5) if noisy else None
    return TabularModel(P, L, b, noise)


def random_td_instance(rng, S=5, d=3):
    P = random_kernel(rng, S)
    Phi = rng.normal(size=(S, d))
    r = rng.normal(size=S)
    return P, Phi, r


@pytest.fixture(scope="session")
def bundled_cfg():
    return load_config(data_path("td0_5state.toml"))


@pytest.fixture(scope="session")
def bundled(bundled_cfg):
    return build_model(bundled_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
