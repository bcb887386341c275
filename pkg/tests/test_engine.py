import math
import warnings

import numpy as np
import pytest

from markov_lsa.diagnostics import sigma_mg_exact, sigma_mkv_exact
from markov_lsa.engine import (
    InstanceConstants,
    SAConfig,
    instance_constants,
    leading_trace,
    prop1_bound,
    sa_replay,
    sa_run,
    sa_run_batch,
    solve_fixed_point,
    theorem1_bound,
    theorem1_schedule,
)
from markov_lsa.errors import NumericalBlowup, SingularSystem, Unstable
from markov_lsa.markov import TransitionKernel
from markov_lsa.models import TabularModel

ONE = TransitionKernel(np.ones((1, 1)))

# bundled instance, from an independent pair-chain lag-sum oracle (notes/oracle_bundled.py)
BUNDLED_LEAD = 32.91045905229192
BUNDLED_SIGMA_BAR = 1.0517727636923573
BUNDLED_THETA = [0.2400000000000001, 0.24410564394282216, -0.5214984211505749]


def constant_model(L, b):
    L = np.atleast_2d(np.asarray(L, dtype=float))
    return TabularModel(ONE, L[None], np.atleast_1d(np.asarray(b, dtype=float))[None])


class TestSARun:
    def test_noiseless_geometric(self):
        m = constant_model(0.5 * np.eye(2), [1.0, -2.0])
        tr = sa_run(m, SAConfig(0.1, 0, 200, record_iterates=True))
        err = np.linalg.norm(tr.iterates - m.theta_bar, axis=1)
        np.testing.assert_allclose(err[1:50] / err[:49], 0.95, rtol=1e-10)
        np.testing.assert_allclose(m.theta_bar, [2.0, -4.0])

    def test_fixed_point_start(self):
        b = np.array([0.3, -1.1])
        m = constant_model(np.zeros((2, 2)), b)
        tr = sa_run(m, SAConfig(0.2, 10, 100, theta0=b, record_iterates=True))
        np.testing.assert_array_equal(tr.iterates, np.tile(b, (101, 1)))

    def test_averaging_identity(self, bundled):
        cfg = SAConfig(0.01, 300, 1000, seed=4, record_iterates=True)
        tr = sa_run(bundled, cfg)
        np.testing.assert_allclose(tr.average, tr.iterates[300:1000].mean(axis=0), rtol=1e-12)
        np.testing.assert_array_equal(tr.last_iterate, tr.iterates[-1])

    def test_deterministic(self, bundled):
        cfg = SAConfig(0.01, 500, 2000, seed=9)
        a, b = sa_run(bundled, cfg), sa_run(bundled, cfg)
        assert a.average.tobytes() == b.average.tobytes()
        assert a.last_iterate.tobytes() == b.last_iterate.tobytes()

    def test_batch_matches_single(self, bundled):
        cfg = SAConfig(0.02, 1000, 3000)
        seeds = [5, 17, 99]
        batch = sa_run_batch(bundled, cfg, seeds)
        for i, s in enumerate(seeds):
            single = sa_run(bundled, SAConfig(0.02, 1000, 3000, seed=s))
            assert single.average.tobytes() == batch.averages[i].tobytes()

    def test_replay_matches(self, bundled):
        tr = sa_run(bundled, SAConfig(0.05, 100, 800, seed=2), record_observations=True)
        last, avg = sa_replay(bundled, tr.observations, 0.05, 100)
        np.testing.assert_allclose(avg, tr.average, rtol=1e-12)
        np.testing.assert_allclose(last, tr.last_iterate, rtol=1e-12)

    def test_blowup_guard(self):
        m = constant_model(-30.0 * np.eye(1), [1.0])
        with pytest.raises(NumericalBlowup):
            sa_run(m, SAConfig(0.9, 0, 500))

    @pytest.mark.parametrize("bad", [dict(stepsize=0.0), dict(stepsize=1.0), dict(burn_in=10, horizon=10)])
    def test_config_validation(self, bad):
        kw = dict(stepsize=0.1, burn_in=0, horizon=10) | bad
        with pytest.raises(ValueError):
            SAConfig(**kw)

    def test_noiseless_contraction_symmetric(self, rng):
        for _ in range(5):
            X = rng.normal(size=(3, 3))
            L = 0.5 * (X + X.T)
            L *= 0.8 / np.max(np.abs(np.linalg.eigvalsh(L)))
            m = constant_model(L, rng.normal(size=3))
            k = instance_constants(m).kappa
            eta = 0.3
            tr = sa_run(m, SAConfig(eta, 0, 60, record_iterates=True))
            err = np.linalg.norm(tr.iterates - m.theta_bar, axis=1)
            assert np.all(err[1:] <= (1 - eta * (1 - k)) * err[:-1] + 1e-12)

    def test_averaged_error_vs_leading_term(self, bundled):
        n = 2 ** 16
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            eta, n0 = theorem1_schedule(1.0, instance_constants(bundled), n)
        res = sa_run_batch(bundled, SAConfig(eta, n0, n), np.arange(100) + 31)
        mse = np.mean(np.sum((res.averages - bundled.theta_bar) ** 2, axis=1))
        ratio = n * mse / BUNDLED_LEAD
        assert 1 / 3 <= ratio <= 3


class TestFixedPoint:
    def test_zero(self):
        np.testing.assert_allclose(solve_fixed_point(np.zeros((2, 2)), [1.0, 2.0]), [1.0, 2.0])

    def test_scalar(self):
        assert solve_fixed_point(0.5, 1.0)[0] == pytest.approx(2.0, abs=1e-14)

    def test_neumann_oracle(self, rng):
        for _ in range(5):
            L = rng.normal(size=(4, 4))
            L *= 0.6 / np.linalg.norm(L, 2)
            b = rng.normal(size=4)
            acc, term = np.zeros(4), b.copy()
            for _ in range(200):
                acc += term
                term = L @ term
            np.testing.assert_allclose(solve_fixed_point(L, b), acc, atol=1e-10)

    def test_singular(self):
        with pytest.raises(SingularSystem):
            solve_fixed_point(np.eye(2), [1.0, 1.0])

    def test_bundled(self, bundled):
        np.testing.assert_allclose(bundled.exact_solution(), BUNDLED_THETA, atol=1e-12)


class TestConstants:
    def test_diag(self):
        k = instance_constants(constant_model(np.diag([0.3, 0.5]), [0.0, 0.0]))
        assert k.kappa == pytest.approx(0.5) and k.gamma_max == pytest.approx(0.5)

    def test_nilpotent(self):
        k = instance_constants(constant_model([[0.0, 1.0], [0.0, 0.0]], [0.0, 0.0]))
        assert k.kappa == pytest.approx(0.5) and k.gamma_max == pytest.approx(1.0)

    def test_zero_noise(self):
        k = instance_constants(constant_model(0.2 * np.eye(2), [1.0, 1.0]))
        assert k.sigma_bar == 0.0 and k.sigma_L == 0.0 and k.sigma_b == 0.0

    def test_unstable(self):
        with pytest.raises(Unstable):
            instance_constants(constant_model([[1.5]], [0.0]))

    def test_bundled(self, bundled):
        k = instance_constants(bundled)
        assert k.kappa == pytest.approx(0.5, abs=1e-12)
        assert k.t_mix == 2
        assert k.sigma_bar == pytest.approx(BUNDLED_SIGMA_BAR, rel=1e-12)


def unit_constants(**kw):
    base = dict(kappa=0.0, gamma_max=1.0, sigma_L=0.0, sigma_b=0.0, sigma_bar=0.0, d=1, t_mix=1)
    return InstanceConstants(**(base | kw))


class TestSchedule:
    def test_spot_value(self):
        eta, n0 = theorem1_schedule(1.0, unit_constants(), 1000)
        assert eta == 0.01
        assert n0 == 500

    def test_homogeneity_in_c(self):
        k = unit_constants(kappa=0.3, sigma_L=0.7, d=3, t_mix=4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            e1, _ = theorem1_schedule(1.0, k, 5000)
            e2, _ = theorem1_schedule(2.0, k, 5000)
        assert e2 / e1 == pytest.approx(2 ** (-1 / 3), rel=1e-14)

    def test_sample_size_warning(self):
        k = unit_constants(sigma_L=3.0, d=4, t_mix=10, kappa=0.9)
        with pytest.warns(RuntimeWarning):
            theorem1_schedule(1.0, k, 1000)


class TestBounds:
    def test_zero_covariance(self):
        k = unit_constants(sigma_bar=0.5, d=2, t_mix=3, kappa=0.2)
        z = np.zeros((2, 2))
        n = 4096
        hot = (0.25 * 2 * 3 / (0.64 * n)) ** (4 / 3) * math.log(n) ** 2
        assert theorem1_bound(k, z, z, 0.1 * np.eye(2), n) == pytest.approx(hot, rel=1e-13)

    def test_leading_quarters(self):
        k = unit_constants(sigma_bar=0.0, d=2)
        S = np.diag([1.0, 2.0])
        L = np.array([[0.2, 0.1], [0.0, 0.3]])
        b1 = theorem1_bound(k, S, S, L, 1000)
        b4 = theorem1_bound(k, S, S, L, 4000)
        assert b4 == pytest.approx(b1 / 4, rel=1e-14)

    def test_bundled_recomputation(self, bundled):
        n, c_prime = 2 ** 16, 2.0
        k = instance_constants(bundled)
        got = theorem1_bound(k, sigma_mg_exact(bundled), sigma_mkv_exact(bundled), bundled.L_bar, n, c_prime)
        # d = 3, t_mix = 2, kappa = 1/2
        hot = (BUNDLED_SIGMA_BAR ** 2 * 3 * 2 / (0.25 * n)) ** (4 / 3) * math.log(n) ** 2
        assert got == pytest.approx(c_prime * (BUNDLED_LEAD / n + hot), rel=1e-10)

    def test_leading_trace_bundled(self, bundled):
        lead = leading_trace(sigma_mg_exact(bundled), sigma_mkv_exact(bundled), bundled.L_bar)
        assert lead == pytest.approx(BUNDLED_LEAD, rel=1e-10)

    def test_prop1(self):
        k = unit_constants(sigma_bar=1.0, d=2, t_mix=2, kappa=0.5, gamma_max=0.5, n_states=3)
        plateau = prop1_bound(k, 0.0, 0.01, t=0)
        assert prop1_bound(k, 2.0, 0.01, t=0) == pytest.approx(4.0 + plateau)
        assert prop1_bound(k, 0.0, 0.005) == pytest.approx(plateau / 2)
        # e-folding time 2 / (eta (1 - kappa))
        t_e = 2 / (0.01 * 0.5)
        decay = prop1_bound(k, 1.0, 0.01, t=t_e) - plateau
        assert decay == pytest.approx(math.exp(-1), rel=1e-12)
