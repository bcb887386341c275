"""Seeded, replicated sweeps over horizons with a fixed CSV schema."""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .diagnostics import local_radius, sigma_mg_exact, sigma_mkv_exact
from .engine import SAConfig, instance_constants, sa_run, sa_run_batch, theorem1_bound, theorem1_schedule
from .errors import ConfigError, MarkovLSAError

__all__ = ["ExperimentSpec", "SweepResult", "run_sweep", "derive_seed", "fit_slope", "write_csv", "CSV_FIELDS"]

THREADS_ENV = "MARKOV_LSA_THREADS"

CSV_FIELDS = [
    "kind", "n", "replication", "seed", "sq_error", "mean", "stderr",
    "theorem1_bound", "eps_n2", "slope", "slope_ci_low", "slope_ci_high", "status",
]


def derive_seed(base_seed: int, n: int, replication: int) -> int:
    """Stable 64-bit seed for one ``(n, replication)`` cell."""
    return int(np.random.SeedSequence([int(base_seed), int(n), int(replication)]).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentSpec:
    """Sweep definition.

    ``schedule`` is ``"theorem1"`` (with constant ``c``) or an explicit
    ``(stepsize, burn_in_fraction)`` pair.
    """

    horizons: list
    replications: int
    base_seed: int = 0
    schedule: str | tuple = "theorem1"
    c: float = 1.0
    norm: str = "euclidean"
    c_prime: float = 1.0
    csv_path: str | None = None
    model_ref: str | None = None

    def __post_init__(self):
        self.horizons = [int(n) for n in self.horizons]
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError("horizons must be strictly increasing")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.norm not in ("euclidean", "weighted"):
            raise ConfigError(f"unknown error norm {self.norm!r}")


@dataclass
class SweepResult:
    horizons: list
    sq_errors: np.ndarray  # (len(horizons), R); NaN where a cell failed
    seeds: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    theorem1_bounds: np.ndarray
    eps_n2: np.ndarray
    slope: float
    slope_ci: tuple
    failures: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def fit_slope(horizons, means, level: float = 0.95):
    """OLS slope of ``log mean`` on ``log n`` with a t-interval."""
    x = np.log(np.asarray(horizons, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    ok = np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 2:
        return math.nan, (math.nan, math.nan)
    fit = stats.linregress(x, y)
    if len(x) < 3:
        return float(fit.slope), (math.nan, math.nan)
    half = stats.t.ppf(0.5 + level / 2, len(x) - 2) * fit.stderr
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def _sq_error(diff: np.ndarray, weight: np.ndarray | None) -> np.ndarray:
    if weight is None:
        return np.einsum("ri,ri->r", diff, diff)
    return np.einsum("ri,ij,rj->r", diff, weight, diff)


def _schedule(spec: ExperimentSpec, constants, n: int):
    if spec.schedule == "theorem1":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return theorem1_schedule(spec.c, constants, n)
    eta, frac = spec.schedule
    return float(eta), int(frac * n)


def _run_horizon(model, spec, constants, theta_bar, weight, n):
    eta, n0 = _schedule(spec, constants, n)
    seeds = [derive_seed(spec.base_seed, n, r) for r in range(spec.replications)]
    cfg = SAConfig(stepsize=eta, burn_in=n0, horizon=n)
    failures = {}
    try:
        avg = sa_run_batch(model, cfg, seeds).averages
    except MarkovLSAError:
        # isolate the failing replications; the rest are bit-identical to the batch
        avg = np.full((len(seeds), model.dim), np.nan)
        for r, s in enumerate(seeds):
            try:
                avg[r] = sa_run(model, SAConfig(eta, n0, n, seed=s)).average
            except MarkovLSAError as exc:
                failures[(n, r)] = f"{exc.category}: {exc}"
    return np.array(seeds, dtype=np.uint64), _sq_error(avg - theta_bar, weight), failures


def run_sweep(model, spec: ExperimentSpec) -> SweepResult:
    """Replicated SA runs over ``spec.horizons``; deterministic end to end.

    Horizons may run concurrently when ``MARKOV_LSA_THREADS`` > 1; results are
    assembled in horizon order either way.
    """
    theta_bar = model.exact_solution()
    weight = None
    if spec.norm == "weighted":
        weight = model.error_weight
        if weight is None:
            raise ConfigError(f"{type(model).__name__} declares no error weight; use norm = 'euclidean'")
    constants = instance_constants(model)
    S_mg, S_mkv = sigma_mg_exact(model), sigma_mkv_exact(model)

    threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
    job = lambda n: _run_horizon(model, spec, constants, theta_bar, weight, n)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, spec.horizons))
    else:
        results = [job(n) for n in spec.horizons]

    seeds = np.stack([r[0] for r in results])
    errs = np.stack([r[1] for r in results])
    failures = {}
    for r in results:
        failures.update(r[2])
    means = np.array([np.nanmean(e) if np.isfinite(e).any() else np.nan for e in errs])
    counts = np.isfinite(errs).sum(axis=1)
    stderrs = np.array([np.nanstd(e, ddof=1) / math.sqrt(c) if c > 1 else np.nan for e, c in zip(errs, counts)])
    bounds = np.array([theorem1_bound(constants, S_mg, S_mkv, model.L_bar, n, spec.c_prime) for n in spec.horizons])
    eps2 = np.array([local_radius(model, n, S_mkv) ** 2 for n in spec.horizons])
    slope, ci = fit_slope(spec.horizons, means)
    return SweepResult(horizons=list(spec.horizons), sq_errors=errs, seeds=seeds, means=means, stderrs=stderrs,
                       theorem1_bounds=bounds, eps_n2=eps2, slope=slope, slope_ci=ci, failures=failures)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(result: SweepResult, path) -> None:
    """Header, one ``cell`` row per ``(n, replication)``, then one ``agg`` row per ``n``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for i, n in enumerate(result.horizons):
            for r, (seed, err) in enumerate(zip(result.seeds[i], result.sq_errors[i])):
                status = result.failures.get((n, r), "ok")
                w.writerow(["cell", n, r, int(seed), _fmt(float(err)), "", "", "", "", "", "", "", status])
        lo, hi = result.slope_ci
        for i, n in enumerate(result.horizons):
            w.writerow(["agg", n, "", "", "", _fmt(result.means[i]), _fmt(result.stderrs[i]),
                        _fmt(result.theorem1_bounds[i]), _fmt(result.eps_n2[i]), _fmt(result.slope),
                        _fmt(lo), _fmt(hi), "partial" if result.partial else "ok"])
