"""How fast does the averaged TD(0) estimate converge on a small chain?

Runs the bundled five-state instance over a ladder of horizons, prints the
mean squared error next to the instance-dependent leading term and the
full bound, and fits the log-log slope.

    python demos/td0_rate.py            # R = 30, about 5 seconds
    python demos/td0_rate.py --reps 100 # the full study
"""
import argparse
import warnings
from importlib import resources

from markov_lsa.config import build_model, load_config
from markov_lsa.diagnostics import instance_report
from markov_lsa.harness import ExperimentSpec, run_sweep

parser = argparse.ArgumentParser()
parser.add_argument("--reps", type=int, default=30)
parser.add_argument("--seed", type=int, default=2024)
args = parser.parse_args()

cfg = load_config(str(resources.files("markov_lsa") / "data" / "td0_5state.toml"))
model = build_model(cfg)
report = instance_report(model, horizons=(2 ** 17,), c_prime=2.0)
print(report.to_text())
print()

lead = report.summary()["leading_trace"]
spec = ExperimentSpec(horizons=[2 ** k for k in range(12, 18)], replications=args.reps,
                      base_seed=args.seed, c_prime=2.0)
with warnings.catch_warnings():
    # the small horizons sit below the sample-size requirement; that is the point
    warnings.simplefilter("ignore", RuntimeWarning)
    res = run_sweep(model, spec)

print(f"{'n':>7s} {'mean MSE':>11s} {'stderr':>10s} {'n*MSE/lead':>11s} {'bound':>10s}")
for n, m, se, b in zip(res.horizons, res.means, res.stderrs, res.theorem1_bounds):
    print(f"{n:>7d} {m:>11.4e} {se:>10.2e} {n * m / lead:>11.3f} {b:>10.3e}")

lo, hi = res.slope_ci
print(f"\nslope {res.slope:.3f}, 95% CI [{lo:.3f}, {hi:.3f}]")
