"""Recovering an AR(1) coefficient with averaged stochastic approximation.

The regression target is built from the process itself, so the noise in
the update is Markovian. A small constant stepsize leaves an O(eta) bias
in the averaged estimate, visible in the mean over replications as eta
shrinks. The median error at this horizon is mostly sampling noise.
"""
import numpy as np

from markov_lsa import SAConfig, sa_run_batch
from markov_lsa.models import var_exact_covariances, var_model

model = var_model(0.5, noise_cov=1.0)
print("Gamma_0 =", var_exact_covariances(model, 0)[0][0, 0], "(expected 4/3)")
print("mixing-time proxy:", model.t_mix)

n, R = 2 ** 16, 20
for eta in (4e-3, 2e-3, 1e-3):
    est = sa_run_batch(model, SAConfig(eta, n // 2, n), np.arange(R)).averages[:, 0]
    err = est - 0.5
    print(f"eta={eta:.0e}: mean a_hat {est.mean():.4f}, median |err| {np.median(np.abs(err)):.4f}")
