"""Constant-stepsize linear stochastic approximation with Polyak-Ruppert averaging.

The recursion is

    theta_{t+1} = (1 - eta) theta_t + eta (L_{t+1} theta_t + b_{t+1}),

whose attractor is the solution of ``theta = L_bar theta + b_bar``.  Runs are
batched over replications internally; every replication owns a PCG64 stream,
so a batched run reproduces the corresponding single runs bit for bit.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalBlowup, SingularSystem, Unstable

__all__ = [
    "SAConfig",
    "SATrace",
    "BatchResult",
    "InstanceConstants",
    "UniformStream",
    "sa_run",
    "sa_run_batch",
    "sa_replay",
    "simulate",
    "solve_fixed_point",
    "instance_constants",
    "theorem1_schedule",
    "theorem1_bound",
    "prop1_bound",
    "default_tau",
]

log = logging.getLogger(__name__)

CHUNK = 1024
GUARD_EVERY = 64


class UniformStream:
    """Per-replication uniform rows, drawn in fixed-size chunks.

    Row ``i`` of every call depends only on ``seeds[i]`` and the number of
    previous calls, never on the batch size.
    """

    def __init__(self, seeds, width: int, chunk: int = CHUNK):
        self.gens = [np.random.default_rng(int(s)) for s in seeds]
        self.width = width
        self.chunk = chunk
        self._buf = None
        self._pos = chunk

    def __call__(self) -> np.ndarray:
        if self._pos == self.chunk:
            self._buf = np.stack([g.random((self.chunk, self.width)) for g in self.gens], axis=1)
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return row


@dataclass(frozen=True)
class SAConfig:
    """Run parameters.  ``theta0`` defaults to the zero vector."""

    stepsize: float
    burn_in: int
    horizon: int
    seed: int = 0
    record_iterates: bool = False
    theta0: np.ndarray | None = None
    blowup_guard: float = 1e12

    def __post_init__(self):
        if not 0.0 < self.stepsize < 1.0:
            raise ValueError(f"stepsize must lie in (0, 1), got {self.stepsize}")
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError(f"need 0 <= burn_in < horizon, got {self.burn_in}, {self.horizon}")


@dataclass
class SATrace:
    last_iterate: np.ndarray
    average: np.ndarray
    seed: int
    iterates: np.ndarray | None = None
    observations: dict | None = None
    provenance: dict = field(default_factory=dict)

    def error(self, theta_bar) -> np.ndarray:
        """``Delta_n = theta_n - theta_bar``."""
        return self.last_iterate - np.asarray(theta_bar)


@dataclass
class BatchResult:
    averages: np.ndarray
    last_iterates: np.ndarray
    seeds: np.ndarray
    tail_mse: np.ndarray | None = None
    observations: dict | None = None

    def replication(self, i: int) -> dict:
        """Observation log of replication ``i``."""
        return {k: v[:, i] for k, v in self.observations.items()}


def _initial_theta(model, theta0, R):
    if theta0 is None:
        return np.zeros((R, model.dim))
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (model.dim,):
        raise ValueError(f"theta0 must have shape ({model.dim},)")
    return np.tile(theta0, (R, 1))


def _check_guard(theta, guard, t):
    norms = np.sqrt(np.einsum("ri,ri->r", theta, theta))
    if not np.all(norms <= guard):
        raise NumericalBlowup(f"iterate norm exceeded {guard:.3g} by step {t}; stepsize too large")


def _run(model, seeds, cfg: SAConfig, *, record=False, keep_obs=False, reference=None, tail_start=None):
    R = len(seeds)
    stream = UniformStream(seeds, model.stream_width)
    state = model.initial_state(stream)
    theta = _initial_theta(model, cfg.theta0, R)
    eta, n0, n = cfg.stepsize, cfg.burn_in, cfg.horizon
    # Kahan-compensated running sum keeps the average exact to rounding
    total = np.zeros_like(theta)
    comp = np.zeros_like(theta)
    iterates = np.empty((n + 1, R, model.dim)) if record else None
    obs_log = [] if keep_obs else None
    tail = np.zeros(R) if reference is not None else None
    t0 = n - n // 4 if tail_start is None else tail_start
    for t in range(n):
        if record:
            iterates[t] = theta
        if t >= n0:
            y = theta - comp
            s = total + y
            comp = (s - total) - y
            total = s
        if tail is not None and t >= t0:
            diff = theta - reference
            tail += np.einsum("ri,ri->r", diff, diff)
        state, obs = model.advance(state, stream())
        if keep_obs:
            obs_log.append(obs)
        theta = (1.0 - eta) * theta + eta * model.apply(obs, theta)
        if t % GUARD_EVERY == 0:
            _check_guard(theta, cfg.blowup_guard, t + 1)
    _check_guard(theta, cfg.blowup_guard, n)
    if record:
        iterates[n] = theta
    if tail is not None:
        diff = theta - reference
        tail += np.einsum("ri,ri->r", diff, diff)
        tail /= n + 1 - t0
    average = total / (n - n0)
    observations = None
    if keep_obs:
        observations = {k: np.stack([o[k] for o in obs_log]) for k in obs_log[0]}
    return theta, average, iterates, observations, tail


def sa_run(model, config: SAConfig, *, record_observations: bool = False) -> SATrace:
    """Single SA run along one trajectory started from stationarity.

    Raises
    ------
    NumericalBlowup
        If an iterate norm exceeds ``config.blowup_guard``.
    """
    last, avg, its, obs, _ = _run(model, [config.seed], config, record=config.record_iterates,
                                  keep_obs=record_observations)
    return SATrace(
        last_iterate=last[0],
        average=avg[0],
        seed=config.seed,
        iterates=None if its is None else its[:, 0],
        observations=None if obs is None else {k: v[:, 0] for k, v in obs.items()},
        provenance={"bit_generator": "PCG64", "seed": int(config.seed), "stream_width": model.stream_width},
    )


def sa_run_batch(model, config: SAConfig, seeds, *, reference=None, tail_start=None,
                 record_observations: bool = False) -> BatchResult:
    """Independent replications, one per seed, advanced in lockstep.

    ``config.seed`` is ignored in favour of ``seeds``.  With ``reference`` set,
    also returns the mean of ``||theta_t - reference||^2`` over ``t`` in
    ``[tail_start, n]`` (default: last quarter).  Recorded observations have
    shape ``(n, R, ...)``.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    ref = None if reference is None else np.asarray(reference, dtype=float)[None, :]
    last, avg, _, obs, tail = _run(model, seeds, config, reference=ref, tail_start=tail_start,
                                   keep_obs=record_observations)
    return BatchResult(averages=avg, last_iterates=last, seeds=seeds, tail_mse=tail, observations=obs)


def simulate(model, n: int, seed: int) -> dict:
    """Observation log of length ``n`` without running the recursion."""
    stream = UniformStream([seed], model.stream_width)
    state = model.initial_state(stream)
    log_ = []
    for _ in range(n):
        state, obs = model.advance(state, stream())
        log_.append(obs)
    return {k: np.stack([o[k][0] for o in log_]) for k in log_[0]}


def sa_replay(model, observations: dict, stepsize: float, burn_in: int, theta0=None):
    """Run the recursion over a stored observation log; returns ``(last, average)``."""
    n = len(next(iter(observations.values())))
    if not 0 <= burn_in < n:
        raise ValueError("need 0 <= burn_in < number of observations")
    theta = _initial_theta(model, theta0, 1)
    total = np.zeros_like(theta)
    for t in range(n):
        if t >= burn_in:
            total += theta
        obs = {k: v[t:t + 1] for k, v in observations.items()}
        theta = (1.0 - stepsize) * theta + stepsize * model.apply(obs, theta)
    return theta[0], total[0] / (n - burn_in)


def solve_fixed_point(L_bar, b_bar) -> np.ndarray:
    """``theta_bar = (I - L_bar)^{-1} b_bar``.

    Raises
    ------
    SingularSystem
        If the smallest singular value of ``I - L_bar`` is at most ``1e-10``.
    """
    L_bar = np.atleast_2d(np.asarray(L_bar, dtype=float))
    b_bar = np.atleast_1d(np.asarray(b_bar, dtype=float))
    A = np.eye(L_bar.shape[0]) - L_bar
    smin = np.linalg.svd(A, compute_uv=False)[-1]
    if smin <= 1e-10:
        raise SingularSystem(f"I - L_bar is singular (sigma_min = {smin:.3e})")
    theta = np.linalg.solve(A, b_bar)
    theta += np.linalg.solve(A, b_bar - A @ theta)
    return theta


@dataclass(frozen=True)
class InstanceConstants:
    """Problem constants at moment order 2.

    ``sigma_L``/``sigma_b`` are the maxima of the moment-derived and
    Lipschitz-derived values, both kept in ``details``.
    """

    kappa: float
    gamma_max: float
    sigma_L: float
    sigma_b: float
    sigma_bar: float
    d: int
    t_mix: int
    n_states: int = 1
    details: dict = field(default_factory=dict, compare=False)


def _row_moment_max(dev: np.ndarray, weights: np.ndarray) -> float:
    """``max_j lambda_max(sum_w w * dev[:, j, :] dev[:, j, :]^T)`` for row deviations."""
    M = np.einsum("w,wji,wjk->jik", weights, dev, dev)
    return float(max(np.linalg.eigvalsh(Mj)[-1] for Mj in M)) if M.size else 0.0


PAIRWISE_LIMIT = 400


def _table_spans(L_table, b_table) -> tuple[float, float]:
    """``max_{x,y} ||L(x) - L(y)||_op`` and the ``b`` analogue.

    Exact over pairs for small tables, otherwise twice the largest deviation
    from the mean (a valid upper bound).
    """
    if len(L_table) <= PAIRWISE_LIMIT:
        iu, ju = np.triu_indices(len(L_table), k=1)
        if len(iu) == 0:
            return 0.0, 0.0
        span_L = float(np.max(np.linalg.norm(L_table[iu] - L_table[ju], ord=2, axis=(1, 2))))
        span_b = float(np.max(np.linalg.norm(b_table[iu] - b_table[ju], axis=1)))
        return span_L, span_b
    dL = L_table - L_table.mean(axis=0)
    db = b_table - b_table.mean(axis=0)
    return (2 * float(np.max(np.linalg.norm(dL, ord=2, axis=(1, 2)))),
            2 * float(np.max(np.linalg.norm(db, axis=1))))


def instance_constants(model, *, n_mc: int = 200_000, seed: int = 0) -> InstanceConstants:
    """Constants for ``model``.

    Finite models are evaluated exactly over the observation chain; other
    models use ``n_mc`` independent stationary samples for ``sigma_L`` and
    ``sigma_b`` and exact covariances for ``sigma_bar``.

    Raises
    ------
    Unstable
        If ``kappa >= 1``.
    """
    from .diagnostics import _sigma_bar
    from .models.base import FiniteObservationModel

    L_bar, b_bar = model.L_bar, model.b_bar
    d = model.dim
    kappa = 0.5 * float(np.linalg.eigvalsh(L_bar + L_bar.T)[-1])
    if kappa >= 1.0:
        raise Unstable(f"kappa = {kappa:.6g} >= 1")
    gamma_max = float(np.linalg.svd(L_bar, compute_uv=False)[0])

    if isinstance(model, FiniteObservationModel):
        w = model.obs_stationary
        dL = model.L_table - L_bar
        db = model.b_table - b_bar
        mkv_L = _row_moment_max(dL, w)
        mkv_b = float(np.max(w @ db ** 2))
        sL2 = max(model.mg_L_row_moment(), mkv_L) / 2.0
        sb2 = float(max(np.max(model.mg_b_moment()), mkv_b)) / 2.0
        sup_L, sup_b = model.noise_sup()
        span_L, span_b = _table_spans(model.L_table, model.b_table)
        lip_L = (span_L + 2 * sup_L) / d
        lip_b = (span_b + 2 * sup_b) / math.sqrt(d)
        n_states = model.obs_kernel.n_states
        source = "exact"
    else:
        L, b = model.materialize(model.sample_stationary(n_mc, seed))
        dL = L - L_bar
        db = b - b_bar
        w = np.full(len(L), 1.0 / len(L))
        sL2 = _row_moment_max(dL, w) / 2.0
        sb2 = float(np.max(w @ db ** 2)) / 2.0
        lip_L = 2 * float(np.max(np.linalg.norm(dL, ord=2, axis=(1, 2)))) / d
        lip_b = 2 * float(np.max(np.linalg.norm(db, axis=1))) / math.sqrt(d)
        n_states = getattr(getattr(model, "P", None), "n_states", 1)
        source = f"monte_carlo[{n_mc}]"

    moment_L, moment_b = math.sqrt(sL2), math.sqrt(sb2)
    sigma_bar, _ = _sigma_bar(model)
    return InstanceConstants(
        kappa=kappa,
        gamma_max=gamma_max,
        sigma_L=max(moment_L, lip_L),
        sigma_b=max(moment_b, lip_b),
        sigma_bar=sigma_bar,
        d=d,
        t_mix=int(model.t_mix),
        n_states=int(n_states),
        details={"sigma_L_moment": moment_L, "sigma_b_moment": moment_b,
                 "sigma_L_lipschitz": lip_L, "sigma_b_lipschitz": lip_b, "source": source},
    )


def theorem1_schedule(c: float, constants: InstanceConstants, n: int, c0: float | None = None):
    """``(eta, n0)`` with ``eta = (c (sigma_L^2 d + gamma_max^2)(1 - kappa) n^2 t_mix)^{-1/3}``, ``n0 = n // 2``.

    Warns when ``n / log^2 n`` falls below the sample-size requirement.
    """
    k = constants
    scale = k.sigma_L ** 2 * k.d + k.gamma_max ** 2
    # cbrt is correctly rounded; x ** (-1/3) is not
    eta = 1.0 / float(np.cbrt(c * scale * (1.0 - k.kappa) * n * n * k.t_mix))
    c0 = 1.0 if c0 is None else float(c0)
    need = 2 * k.t_mix * scale * math.log(c0 * k.d) / (1.0 - k.kappa) ** 2
    if n > 1 and n / math.log(n) ** 2 < need:
        warnings.warn(f"horizon n={n} below the sample-size requirement (n/log^2 n = "
                      f"{n / math.log(n) ** 2:.3g} < {need:.3g})", RuntimeWarning, stacklevel=2)
    return eta, n // 2


def theorem1_bound(constants: InstanceConstants, sigma_mg, sigma_mkv, L_bar, n: int, c_prime: float = 1.0) -> float:
    """Leading trace term over ``n`` plus the higher-order ``n^{-4/3} log^2 n`` term, both scaled by ``c_prime``."""
    lead = leading_trace(sigma_mg, sigma_mkv, L_bar)
    k = constants
    hot = (k.sigma_bar ** 2 * k.d * k.t_mix / ((1.0 - k.kappa) ** 2 * n)) ** (4.0 / 3.0) * math.log(n) ** 2
    return c_prime * lead / n + c_prime * hot


def leading_trace(sigma_mg, sigma_mkv, L_bar) -> float:
    """``tr((I - L_bar)^{-1} (Sigma_MG + Sigma_Mkv) (I - L_bar)^{-T})``."""
    L_bar = np.atleast_2d(L_bar)
    A = np.eye(L_bar.shape[0]) - L_bar
    if np.linalg.svd(A, compute_uv=False)[-1] <= 1e-10:
        raise SingularSystem("I - L_bar is singular")
    Ainv = np.linalg.inv(A)
    return float(np.trace(Ainv @ (np.asarray(sigma_mg) + np.asarray(sigma_mkv)) @ Ainv.T))


def default_tau(constants: InstanceConstants) -> int:
    return math.ceil(2 * constants.t_mix * math.log(constants.d * constants.n_states))


def prop1_bound(constants: InstanceConstants, delta0_norm: float, eta: float, tau: int | None = None,
                t: float = 0.0, c: float = 1.0) -> float:
    """Last-iterate bound ``exp(-eta (1 - kappa) t / 2) ||Delta_0||^2 + c eta sigma_bar^2 tau d / (1 - kappa)``."""
    k = constants
    if tau is None:
        tau = default_tau(k)
    if eta * tau * (k.sigma_L ** 2 * k.d + k.gamma_max ** 2) > (1.0 - k.kappa):
        log.warning("stepsize %.3g outside the last-iterate bound's validity range", eta)
    decay = math.exp(-0.5 * eta * (1.0 - k.kappa) * t) * delta0_norm ** 2
    return decay + c * eta * k.sigma_bar ** 2 * tau * k.d / (1.0 - k.kappa)
