"""Finite-state Markov chain primitives.

Kernels are dense row-stochastic matrices.  Stationary distributions and
Green-operator applications are exact linear solves; total-variation mixing
times are computed from matrix powers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, NonErgodic, NotMixedWithinCap

__all__ = [
    "TransitionKernel",
    "MixingCertificate",
    "stationary_distribution",
    "tv_mixing_time",
    "sample_trajectory",
    "green_apply",
    "pair_kernel",
    "load_kernel",
]

ROW_SUM_TOL = 1e-12
SPECTRAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Row-stochastic transition matrix ``probs[x, y] = P(x, y)``.

    The array is copied and made read-only on construction.
    """

    probs: np.ndarray

    def __post_init__(self):
        P = np.array(self.probs, dtype=float, copy=True)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ValueError(f"transition matrix must be square, got shape {P.shape}")
        if not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0:
            raise ValueError("transition probabilities must lie in [0, 1]")
        dev = np.abs(P.sum(axis=1) - 1.0).max()
        if dev > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 (max deviation {dev:.3e})")
        P.setflags(write=False)
        object.__setattr__(self, "probs", P)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @cached_property
    def ergodic(self) -> bool:
        """Spectral test: exactly one eigenvalue of modulus ~1.

        This rules out both reducibility (repeated eigenvalue 1) and
        periodicity (other eigenvalues on the unit circle).
        """
        ev = np.linalg.eigvals(self.probs)
        return int(np.sum(np.abs(ev) >= 1.0 - SPECTRAL_TOL)) == 1

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary_distribution(self)

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Row-wise CDF used for inverse-transform sampling."""
        cum = np.cumsum(self.probs, axis=1)
        cum[:, -1] = 1.0
        cum.setflags(write=False)
        return cum

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vectorised transition: next state for each ``states[i]`` given uniform ``u[i]``."""
        cum = self.cumulative[states]
        return np.sum(cum <= u[..., None], axis=-1)

    def matrix_power(self, t: int) -> np.ndarray:
        return np.linalg.matrix_power(self.probs, t)


@dataclass(frozen=True)
class MixingCertificate:
    t_mix: int
    threshold: float
    max_tv_at_tmix: float
    max_tv_before: float = field(default=1.0)


# TV values that equal the threshold analytically land on either side of it in floating point
TV_ROUNDOFF = 1e-12


def _worst_pair_tv(Pt: np.ndarray) -> float:
    diff = np.abs(Pt[:, None, :] - Pt[None, :, :]).sum(axis=-1)
    return 0.5 * float(diff.max())


def stationary_distribution(P: TransitionKernel) -> np.ndarray:
    """Stationary distribution of an ergodic kernel.

    Solves ``(P^T - I) xi = 0`` stacked with the normalisation row
    ``1^T xi = 1`` as one least-squares system.

    Raises
    ------
    NonErgodic
        If the spectral test fails.
    """
    if not P.ergodic:
        raise NonErgodic("kernel has a repeated unit eigenvalue or is periodic")
    S = P.n_states
    A = np.vstack([P.probs.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    xi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    xi = np.clip(xi, 0.0, None)
    xi /= xi.sum()
    resid = np.abs(xi @ P.probs - xi).max()
    if resid > 1e-10:
        raise NonErgodic(f"stationary solve residual {resid:.2e} too large; kernel is nearly reducible")
    xi.setflags(write=False)
    return xi


def tv_mixing_time(P: TransitionKernel, threshold: float = 0.5, t_cap: int = 10_000) -> MixingCertificate:
    """Smallest ``t <= t_cap`` with ``max_{x,y} TV(P^t(x,.), P^t(y,.)) <= threshold``.

    Raises
    ------
    NotMixedWithinCap
        If no such ``t`` exists up to ``t_cap`` (e.g. periodic chains).
    """
    if t_cap < 1:
        raise ValueError("t_cap must be >= 1")
    Pt = np.eye(P.n_states)
    prev = _worst_pair_tv(Pt)
    for t in range(1, t_cap + 1):
        Pt = Pt @ P.probs
        tv = _worst_pair_tv(Pt)
        if tv <= threshold + TV_ROUNDOFF:
            return MixingCertificate(t_mix=t, threshold=threshold, max_tv_at_tmix=tv, max_tv_before=prev)
        prev = tv
    raise NotMixedWithinCap(f"worst-pair TV still {prev:.3g} > {threshold} after {t_cap} steps")


def sample_trajectory(P: TransitionKernel, init, n: int, seed: int) -> np.ndarray:
    """Sample ``s_0, ..., s_{n-1}``.

    ``init`` is either a state index or a probability vector for ``s_0``.
    The output depends only on ``(P, init, n, seed)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u0 = rng.random()
    if np.ndim(init) == 0:
        s = int(init)
        if not 0 <= s < P.n_states:
            raise ValueError(f"initial state {s} out of range")
    else:
        mu = np.asarray(init, dtype=float)
        cum = np.cumsum(mu)
        cum[-1] = 1.0
        s = int(np.sum(cum <= u0))
    out = np.empty(n, dtype=np.int64)
    out[0] = s
    u = rng.random(n - 1)
    cum = P.cumulative
    chunk = max(1, min(n, 2**22 // max(P.n_states, 1)))
    for start in range(0, n - 1, chunk):
        uc = u[start:start + chunk]
        # next-state lookup table for every state, then walk it sequentially
        table = np.sum(cum[:, None, :] <= uc[None, :, None], axis=-1).tolist()
        for j in range(len(uc)):
            s = table[s][j]
            out[start + j + 1] = s
    return out


def green_apply(P: TransitionKernel, xi: np.ndarray | None, f: np.ndarray) -> np.ndarray:
    """Apply the Green (fundamental) operator to ``f``.

    Returns ``g`` with ``(I - P) g = f - E_xi[f]`` and ``E_xi[g] = 0``.
    ``f`` may be a vector over states or a stack ``(S, k)`` of such vectors.
    """
    if xi is None:
        xi = P.stationary
    elif not P.ergodic:
        raise NonErgodic("Green operator requires an ergodic kernel")
    f = np.asarray(f, dtype=float)
    S = P.n_states
    if f.shape[0] != S:
        raise ValueError(f"f has {f.shape[0]} rows, kernel has {S} states")
    centred = f - np.tensordot(xi, f, axes=(0, 0))
    A = np.vstack([np.eye(S) - P.probs, xi[None, :]])
    rhs = np.concatenate([centred.reshape(S, -1), np.zeros((1, centred.reshape(S, -1).shape[1]))])
    g = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return g.reshape(f.shape)


def pair_kernel(P: TransitionKernel) -> TransitionKernel:
    """Kernel of the pair chain ``(s_t, s_{t+1})`` on ``S**2`` states, index ``s * S + s'``."""
    S = P.n_states
    Q = np.zeros((S * S, S * S))
    for s in range(S):
        for sp in range(S):
            Q[s * S + sp, sp * S:(sp + 1) * S] = P.probs[sp]
    return TransitionKernel(Q)


def load_kernel(path) -> TransitionKernel:
    """Read a kernel file: whitespace text rows, or JSON/TOML with a ``probs`` list of rows."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            rows = data["probs"] if isinstance(data, dict) else data
        elif path.suffix == ".toml":
            from .config import load_toml
            rows = load_toml(path)["probs"]
        else:
            rows = np.loadtxt(path, ndmin=2)
        return TransitionKernel(np.asarray(rows, dtype=float))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
