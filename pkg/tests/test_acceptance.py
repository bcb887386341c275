"""Acceptance checks 1-11, one PASS/FAIL line each.

The lines are printed as they are produced and repeated in the pytest
terminal summary. ``python tests/test_acceptance.py`` runs the same checks
without pytest.
"""
import time
import warnings

import numpy as np
import pytest

from markov_lsa.config import build_model, load_config
from markov_lsa.diagnostics import (
    empirical_sigmas,
    lag0_covariance,
    lambda_matrix,
    sigma_mg_exact,
    sigma_mkv_exact,
)
from markov_lsa.engine import (
    InstanceConstants,
    SAConfig,
    instance_constants,
    leading_trace,
    sa_run,
    sa_run_batch,
    theorem1_schedule,
)
from markov_lsa.errors import UnstableSystem
from markov_lsa.harness import ExperimentSpec, run_sweep, write_csv
from markov_lsa.markov import TransitionKernel
from markov_lsa.models import TabularModel, TD0Model, TDLambdaModel, var_exact_covariances, var_model
from markov_lsa.selection import build_M_lambda, contraction_bound, kappa_of

from conftest import data_path, random_tabular, random_td_instance

RESULTS: dict[int, str] = {}


def report(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k:2d}: {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def bundled():
    return build_model(load_config(data_path("td0_5state.toml")))


@pytest.fixture(scope="module")
def bundled_sweep(bundled):
    cfg = load_config(data_path("td0_5state.toml"))
    exp = cfg.section("experiment")
    spec = ExperimentSpec(horizons=exp["horizons"], replications=exp["replications"], base_seed=exp["base_seed"],
                          c=cfg.section("schedule")["c"], c_prime=exp["c_prime"])
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_sweep(bundled, spec)
    return res, time.perf_counter() - t0


def random_var(rng, m):
    A = rng.normal(size=(m, m))
    A *= rng.uniform(0.2, 0.9) / max(abs(np.linalg.eigvals(A)))
    return var_model(A, np.eye(m))


def test_c01_fixed_point_residual():
    rng = np.random.default_rng(101)
    builders = {
        "tabular": lambda: random_tabular(rng, S=4, d=3),
        "td0": lambda: TD0Model(*random_td_instance(rng), 0.9),
        "tdlambda": lambda: TDLambdaModel(*random_td_instance(rng), 0.9, rng.uniform(0, 1)),
        "var": lambda: random_var(rng, int(rng.integers(1, 4))),
    }
    t0 = time.perf_counter()
    worst = {}
    for name, make in builders.items():
        res = 0.0
        for _ in range(20):
            m = make()
            th = m.exact_solution()
            res = max(res, float(np.max(np.abs(th - m.L_bar @ th - m.b_bar))))
        worst[name] = res
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    report(1, top <= 1e-9 and elapsed < 1.0,
           f"max residual {top:.2e} (<= 1e-9) over 4x20 instances in {elapsed:.2f}s (< 1s)")


def test_c02_averaged_rate(bundled_sweep):
    res, elapsed = bundled_sweep
    lo, hi = res.slope_ci
    report(2, -1.25 <= res.slope <= -0.80 and elapsed <= 300,
           f"log-log slope {res.slope:.4f} in [-1.25, -0.80] (95% CI [{lo:.3f}, {hi:.3f}]), "
           f"R={res.sq_errors.shape[1]}, sweep {elapsed:.1f}s")


def test_c03_leading_term(bundled_sweep, bundled):
    res, _ = bundled_sweep
    n = res.horizons[-1]
    lead = leading_trace(sigma_mg_exact(bundled), sigma_mkv_exact(bundled), bundled.L_bar)
    ratio = n * res.means[-1] / lead
    report(3, 1 / 3 <= ratio <= 3, f"n*MSE/lead = {ratio:.3f} at n={n} (lead {lead:.4f}), within factor 3")


def test_c04_plateau(bundled):
    n, R = 2 ** 14, 50
    plateaus = []
    for eta in (0.05, 0.025):
        out = sa_run_batch(bundled, SAConfig(eta, n // 2, n, theta0=bundled.theta_bar), np.arange(R) + 700,
                           reference=bundled.theta_bar)
        plateaus.append(float(np.mean(out.tail_mse)))
    ratio = plateaus[0] / plateaus[1]
    report(4, 1.0 <= ratio <= 4.0,
           f"plateau(0.05)/plateau(0.025) = {ratio:.3f} in [1, 4] "
           f"({plateaus[0]:.3e} vs {plateaus[1]:.3e}, R={R})")


def test_c05_green_identity():
    rng = np.random.default_rng(505)
    models = [random_tabular(rng, S=int(rng.integers(2, 6)), d=int(rng.integers(1, 4))) for _ in range(20)]
    t0 = time.perf_counter()
    worst = 0.0
    for m in models:
        lhs = np.trace(lambda_matrix(m))
        # lag-sum route, no Green operator
        rhs = leading_trace(np.zeros((m.dim, m.dim)), sigma_mkv_exact(m), m.L_bar)
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    elapsed = time.perf_counter() - t0
    report(5, worst <= 1e-8 and elapsed < 1.0, f"max relative gap {worst:.2e} (<= 1e-8) on 20 instances in "
                                               f"{elapsed:.2f}s (< 1s)")


def test_c06_tdlambda():
    rng = np.random.default_rng(606)
    gap, slack = 0.0, -np.inf
    for _ in range(10):
        P, Phi, r = random_td_instance(rng)
        gamma = rng.uniform(0.3, 0.95)
        gap = max(gap, float(np.max(np.abs(TDLambdaModel(P, Phi, r, gamma, 0.0).exact_solution()
                                           - TD0Model(P, Phi, r, gamma).exact_solution()))))
        for lam in np.linspace(0.0, 0.95, 20):
            k = kappa_of(build_M_lambda(TDLambdaModel(P, Phi, r, gamma, lam)))
            slack = max(slack, k - contraction_bound(lam, gamma))
    report(6, gap <= 1e-10 and slack <= 1e-10,
           f"|theta(lam=0) - theta_TD0| = {gap:.1e} (<= 1e-10); max kappa - bound = {slack:.2e} (<= 1e-10)")


def test_c07_iid():
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(10):
        S = int(rng.integers(2, 6))
        xi = rng.dirichlet(np.ones(S))
        m = random_tabular(rng, S=S, d=3)
        m = TabularModel(TransitionKernel(np.tile(xi, (S, 1))), m.L_table, m.b_table, m.noise)
        worst = max(worst, float(np.max(np.abs(sigma_mkv_exact(m) - lag0_covariance(m)))))
    report(7, worst <= 1e-10, f"max |Sigma_Mkv - lag-0| = {worst:.1e} (<= 1e-10) on 10 rank-one kernels")


def test_c08_var():
    model = var_model(0.5, 1.0)
    n, R, eta = 2 ** 16, 20, 1e-3
    est = sa_run_batch(model, SAConfig(eta, n // 2, n), np.arange(R) + 800).averages[:, 0]
    med = float(np.median(np.abs(est - 0.5)))
    gamma0 = var_exact_covariances(model, 0)[0][0, 0]
    series = sum(0.25 ** k for k in range(200))  # sigma^2 sum a^{2k}
    g_err = abs(gamma0 - series)
    try:
        var_model(1.01, 1.0)
        rejected = False
    except UnstableSystem:
        rejected = True
    report(8, med <= 0.02 and g_err <= 1e-10 and rejected,
           f"median |a_hat - 0.5| = {med:.4f} (<= 0.02, eta={eta}); |Gamma0 - 4/3| = {g_err:.1e}; "
           f"a=1.01 rejected: {rejected}")


def test_c09_plugin(bundled):
    n = 2 ** 16
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        eta, n0 = theorem1_schedule(1.0, instance_constants(bundled), n)
    traces = []
    for s in range(20):
        tr = sa_run(bundled, SAConfig(eta, n0, n, seed=900 + s), record_observations=True)
        traces.append(np.trace(empirical_sigmas(bundled, tr.observations, tr.average).sigma_mkv))
    exact = np.trace(sigma_mkv_exact(bundled))
    rel = abs(np.median(traces) - exact) / exact
    report(9, rel <= 0.2, f"median plug-in tr Sigma_Mkv {np.median(traces):.4f} vs exact {exact:.4f}, "
                          f"relative {rel:.3f} (<= 0.2)")


def test_c10_stepsize():
    k = InstanceConstants(kappa=0.0, gamma_max=1.0, sigma_L=0.0, sigma_b=0.0, sigma_bar=0.0, d=1, t_mix=1)
    eta, n0 = theorem1_schedule(1.0, k, 1000)
    report(10, eta == 0.01, f"eta = {eta!r} (exactly 0.01), burn-in {n0}")


def test_c11_determinism(bundled, tmp_path):
    spec = ExperimentSpec(horizons=[1024, 2048, 4096], replications=8, base_seed=11)
    blobs = []
    for name in ("a.csv", "b.csv"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            write_csv(run_sweep(bundled, spec), tmp_path / name)
        blobs.append((tmp_path / name).read_bytes())
    report(11, blobs[0] == blobs[1], f"two sweeps, {len(blobs[0])} bytes each, byte-identical: "
                                     f"{blobs[0] == blobs[1]}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
