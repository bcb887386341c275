"""Picking the trace-decay parameter from data.

Scores a grid of lambda values on the bundled six-state ring from one
simulated trajectory. With no approximation-error prior the variance term
drives the choice; with a large prior the approximation factor dominates
and the largest lambda wins. The exact objective is printed alongside.
"""
from importlib import resources

from markov_lsa.config import build_model, load_config
from markov_lsa.models import TDLambdaModel
from markov_lsa.selection import exact_candidate, select_lambda

cfg = load_config(str(resources.files("markov_lsa") / "data" / "tdlambda_select.toml"))
model = build_model(cfg)
n = 2 ** 15
grid = [0.0, 0.3, 0.6, 0.9]

for prior in (0.0, 1e3):
    res = select_lambda(model, n, prior, grid=grid, seed=0)
    print(f"prior = {prior:g}: lambda* = {res.lam_star}")
    print(f"  {'lam':>4s} {'kappa':>7s} {'alpha':>8s} {'plug-in':>10s} {'exact':>10s}")
    for cand in res.candidates:
        ex = exact_candidate(TDLambdaModel(model.P, model.Phi, model.r, model.gamma, cand.lam, model.reward_std),
                             prior, n)
        print(f"  {cand.lam:>4.1f} {cand.kappa:>7.4f} {cand.alpha:>8.4f} "
              f"{cand.total_error:>10.4e} {ex.total_error:>10.4e}")
    print()
