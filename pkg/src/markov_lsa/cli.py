"""Command-line entry point: ``markov-lsa <subcommand> CONFIG [--set key=value ...]``."""

from __future__ import annotations

import argparse
import csv
import sys
import warnings

import numpy as np

from .config import build_model, load_config
from .errors import MarkovLSAError

EXIT_ERROR = 2


def _schedule(cfg):
    """``(kind, c)`` for theorem1, or ``("explicit", (eta, burn_in_fraction))``."""
    sec = cfg.section("schedule")
    kind = sec.get("kind", "theorem1")
    if kind == "theorem1":
        return "theorem1", float(sec.get("c", 1.0))
    if kind == "explicit":
        return "explicit", (float(cfg.get("schedule.stepsize")), float(sec.get("burn_in", 0.5)))
    raise cfg.error("schedule.kind", f"expected 'theorem1' or 'explicit', got {kind!r}")


def _csv_path(args, cfg, key):
    return args.csv or cfg.section("output").get(key)


def _write_rows(path, rows):
    rows = list(rows)
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _single_run(model, cfg, n, seed):
    from .engine import SAConfig, instance_constants, sa_run, theorem1_schedule

    kind, par = _schedule(cfg)
    if kind == "theorem1":
        eta, n0 = theorem1_schedule(par, instance_constants(model), n)
    else:
        eta, n0 = par[0], int(par[1] * n)
    return sa_run(model, SAConfig(stepsize=eta, burn_in=n0, horizon=n, seed=seed)), eta, n0


# -- subcommands ---------------------------------------------------------------------


def cmd_diagnose(args, cfg):
    from .diagnostics import instance_report

    model = build_model(cfg)
    horizons = cfg.section("diagnose").get("horizons", [2 ** 16])
    c_prime = float(cfg.section("experiment").get("c_prime", 1.0))
    report = instance_report(model, horizons, c_prime=c_prime)
    print(report.to_text())
    path = _csv_path(args, cfg, "diagnose_csv")
    if path:
        _write_rows(path, report.csv_rows())


def cmd_run(args, cfg):
    model = build_model(cfg)
    sec = cfg.section("run")
    n, seed = int(sec.get("n", 2 ** 14)), int(sec.get("seed", 0))
    trace, eta, n0 = _single_run(model, cfg, n, seed)
    theta_bar = model.exact_solution()
    err = trace.average - theta_bar
    print(f"n={n} seed={seed} stepsize={eta!r} burn_in={n0}")
    print("theta_hat  ", np.array2string(trace.average, precision=6))
    print("theta_bar  ", np.array2string(theta_bar, precision=6))
    print(f"sq_error    {float(err @ err)!r}")
    path = _csv_path(args, cfg, "run_csv")
    if path:
        rows = [{"coord": i, "theta_hat": float(a), "theta_last": float(l), "theta_bar": float(b)}
                for i, (a, l, b) in enumerate(zip(trace.average, trace.last_iterate, theta_bar))]
        _write_rows(path, rows)


def cmd_sweep(args, cfg):
    from .harness import ExperimentSpec, run_sweep, write_csv

    model = build_model(cfg)
    sec = cfg.section("experiment")
    kind, par = _schedule(cfg)
    spec = ExperimentSpec(
        horizons=cfg.get("experiment.horizons"),
        replications=int(sec.get("replications", 10)),
        base_seed=int(sec.get("base_seed", 0)),
        schedule="theorem1" if kind == "theorem1" else par,
        c=par if kind == "theorem1" else 1.0,
        norm=sec.get("norm", "euclidean"),
        c_prime=float(sec.get("c_prime", 1.0)),
        model_ref=str(cfg.path),
    )
    res = run_sweep(model, spec)
    print(f"{'n':>8s}  {'mean_sq_error':>14s}  {'stderr':>10s}  {'theorem1_bound':>14s}  {'eps_n^2':>10s}")
    for i, n in enumerate(res.horizons):
        print(f"{n:>8d}  {res.means[i]:>14.6e}  {res.stderrs[i]:>10.3e}  "
              f"{res.theorem1_bounds[i]:>14.6e}  {res.eps_n2[i]:>10.3e}")
    lo, hi = res.slope_ci
    print(f"log-log slope {res.slope:.4f}  95% CI [{lo:.4f}, {hi:.4f}]")
    if res.partial:
        print(f"partial: {len(res.failures)} failed cells")
    path = _csv_path(args, cfg, "sweep_csv")
    if path:
        write_csv(res, path)


def cmd_select_lambda(args, cfg):
    from .selection import select_lambda

    model = build_model(cfg)
    sec = cfg.section("selection")
    if not hasattr(model, "gamma"):
        raise cfg.error("model.kind", "select-lambda needs a td0 or tdlambda model")
    res = select_lambda(model, n=int(sec.get("n", 2 ** 16)), approx_error_prior=float(sec.get("prior", 0.0)),
                        grid=sec.get("grid"), seed=int(sec.get("seed", 0)), c=float(sec.get("c", 1.0)))
    print(f"{'lambda':>8s}  {'kappa':>8s}  {'alpha':>8s}  {'cov_trace':>12s}  {'total_error':>12s}")
    for cand in res.candidates:
        if cand.failed:
            print(f"{cand.lam:>8.4f}  failed: {cand.failure}")
            continue
        mark = "  *" if cand.lam == res.lam_star else ""
        print(f"{cand.lam:>8.4f}  {cand.kappa:>8.4f}  {cand.alpha:>8.4f}  {cand.est_cov_trace:>12.5e}  "
              f"{cand.total_error:>12.5e}{mark}")
    print(f"lambda* = {res.lam_star!r}")
    path = _csv_path(args, cfg, "selection_csv")
    if path:
        res.write_csv(path)


def cmd_var_fit(args, cfg):
    from .engine import simulate
    from .models import VARModel, var_exact_covariances

    model = build_model(cfg)
    if not isinstance(model, VARModel):
        raise cfg.error("model.kind", "var-fit needs a var model")
    sec = cfg.section("run")
    n, seed = int(sec.get("n", 2 ** 16)), int(sec.get("seed", 0))
    trace, eta, n0 = _single_run(model, cfg, n, seed)
    k, m = model.order, model.m
    est = trace.average.reshape(k, m, m)
    print(f"n={n} seed={seed} stepsize={eta!r} burn_in={n0}")
    for j in range(k):
        print(f"A_{j + 1} estimate\n{np.array2string(est[j], precision=5)}")
        print(f"A_{j + 1} true\n{np.array2string(model.coefs[j], precision=5)}")

    max_lag = int(cfg.section("var").get("max_lag", k))
    exact = var_exact_covariances(model, max_lag)
    x = simulate(model, n, seed)["next"]
    x = x - x.mean(axis=0)
    rows = []
    print(f"{'lag':>4s}  {'max|Gamma_exact - Gamma_emp|':>30s}")
    for h, G in enumerate(exact):
        emp = x[h:].T @ x[:n - h] / n
        print(f"{h:>4d}  {np.max(np.abs(G - emp)):>30.4e}")
        for i in range(m):
            for j in range(m):
                rows.append({"lag": h, "i": i, "j": j, "exact": float(G[i, j]), "empirical": float(emp[i, j])})
    path = _csv_path(args, cfg, "var_csv")
    if path:
        _write_rows(path, rows)


def cmd_mixing(args, cfg):
    from .markov import load_kernel, tv_mixing_time

    if cfg is not None:
        from .config import _kernel
        P = _kernel(cfg, cfg.section("model"))
    else:
        P = load_kernel(args.config)
    cert = tv_mixing_time(P, threshold=args.threshold, t_cap=args.t_cap)
    print(f"t_mix = {cert.t_mix}")
    print(f"threshold = {cert.threshold!r}")
    print(f"max TV at t_mix = {cert.max_tv_at_tmix!r}")
    print(f"max TV one step earlier = {cert.max_tv_before!r}")
    if args.csv:
        _write_rows(args.csv, [{"t_mix": cert.t_mix, "threshold": cert.threshold,
                                "max_tv_at_tmix": cert.max_tv_at_tmix, "max_tv_before": cert.max_tv_before}])


COMMANDS = {
    "diagnose": (cmd_diagnose, "exact instance report: constants, covariances, radii, bounds"),
    "run": (cmd_run, "one averaged SA run"),
    "sweep": (cmd_sweep, "replicated sweep over horizons with CSV output"),
    "select-lambda": (cmd_select_lambda, "plug-in TD(lambda) selection on one trajectory"),
    "var-fit": (cmd_var_fit, "VAR coefficient estimation and autocovariance report"),
    "mixing": (cmd_mixing, "total-variation mixing time of a kernel"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markov-lsa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML config (for mixing, also a bare kernel file)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set experiment.replications=20")
        p.add_argument("--csv", help="CSV output path (overrides [output])")
        if name == "mixing":
            p.add_argument("--threshold", type=float, default=0.5)
            p.add_argument("--t-cap", type=int, default=10_000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    warnings.simplefilter("default", RuntimeWarning)
    try:
        if args.command == "mixing" and not args.config.endswith(".toml"):
            cfg = None
        else:
            cfg = load_config(args.config, args.overrides)
            if args.command == "mixing" and "model" not in cfg.data:
                cfg = None
        func(args, cfg)
    except MarkovLSAError as exc:
        print(f"error: {exc.category}: {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: invalid_input: {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
