"""Observation-model interface and the generic tabular model."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from ..engine import solve_fixed_point
from ..markov import TransitionKernel, tv_mixing_time

__all__ = ["ObservationModel", "FiniteObservationModel", "NoiseSpec", "TabularModel", "tabular_model"]

SQRT3 = np.sqrt(3.0)


def unit_noise(u: np.ndarray, dist: str) -> np.ndarray:
    """Map uniforms to zero-mean, unit-variance noise."""
    if dist == "uniform":
        return SQRT3 * (2.0 * u - 1.0)
    if dist == "gaussian":
        return ndtri(np.clip(u, 1e-300, 1.0))
    raise ValueError(f"unknown noise distribution {dist!r}")


class ObservationModel(ABC):
    """Generator of ``(L_{t+1}, b_{t+1})`` along a single Markov trajectory.

    Simulation is batched over independent replications.  Each step consumes
    one row of ``stream_width`` uniforms per replication; ``initial_state``
    may consume several rows (e.g. warm-up).  ``advance`` returns the next
    state and an observation record, and ``apply`` evaluates ``L theta + b``
    for a record without forming ``L``.
    """

    dim: int
    stream_width: int

    @abstractmethod
    def initial_state(self, draw):
        """Draw a stationary starting state; ``draw()`` returns an ``(R, stream_width)`` block."""

    @abstractmethod
    def advance(self, state, u: np.ndarray):
        """Return ``(next_state, obs)`` for uniforms ``u`` of shape ``(R, stream_width)``."""

    @abstractmethod
    def apply(self, obs, theta: np.ndarray) -> np.ndarray:
        """``L theta + b`` for every record in the batch; ``theta`` has shape ``(R, d)``."""

    @abstractmethod
    def materialize(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """Explicit ``(L, b)`` with shapes ``(R, d, d)`` and ``(R, d)``."""

    @property
    @abstractmethod
    def L_bar(self) -> np.ndarray: ...

    @property
    @abstractmethod
    def b_bar(self) -> np.ndarray: ...

    @property
    @abstractmethod
    def t_mix(self) -> int: ...

    @property
    def error_weight(self) -> np.ndarray | None:
        """Optional matrix ``Q`` for reporting errors in the ``Q``-weighted norm."""
        return None

    @cached_property
    def theta_bar(self) -> np.ndarray:
        return solve_fixed_point(self.L_bar, self.b_bar)

    def exact_solution(self) -> np.ndarray:
        return self.theta_bar

    def sample_stationary(self, n: int, seed: int = 0):
        """``n`` independent stationary observation records (batched)."""
        from ..engine import UniformStream

        stream = UniformStream(np.random.SeedSequence(seed).generate_state(n, np.uint64), self.stream_width)
        state = self.initial_state(stream)
        _, obs = self.advance(state, stream())
        return obs


class FiniteObservationModel(ObservationModel):
    """Model whose observations are driven by a finite observation chain.

    The observation chain ``omega_t`` lives on ``obs_kernel``; conditionally
    on ``omega`` the observation has mean ``(L_table[omega], b_table[omega])``.
    """

    @property
    @abstractmethod
    def obs_kernel(self) -> TransitionKernel: ...

    @property
    @abstractmethod
    def L_table(self) -> np.ndarray: ...

    @property
    @abstractmethod
    def b_table(self) -> np.ndarray: ...

    @abstractmethod
    def mg_covariance(self, theta: np.ndarray) -> np.ndarray:
        """Per observation-state covariance of ``(b_1 - b) + (L_1 - L) theta``; shape ``(Omega, d, d)``."""

    @abstractmethod
    def mg_L_row_moment(self) -> float:
        """``max_{omega, j} lambda_max(E[z_j z_j^T | omega])`` for rows ``z_j`` of ``L_1 - L``."""

    @abstractmethod
    def mg_b_moment(self) -> np.ndarray:
        """Per-coordinate ``E_xi E[(b_1 - b)_j^2 | omega]``."""

    @abstractmethod
    def noise_sup(self) -> tuple[float, float]:
        """Almost-sure bounds on ``||L_1 - L||_op`` and ``||b_1 - b||_2``."""

    @cached_property
    def obs_stationary(self) -> np.ndarray:
        return self.obs_kernel.stationary

    @cached_property
    def L_bar(self) -> np.ndarray:
        return np.tensordot(self.obs_stationary, self.L_table, axes=(0, 0))

    @cached_property
    def b_bar(self) -> np.ndarray:
        return self.obs_stationary @ self.b_table

    def mean_L(self, omega) -> np.ndarray:
        return self.L_table[omega]

    def mean_b(self, omega) -> np.ndarray:
        return self.b_table[omega]

    def obs_index(self, obs) -> np.ndarray:
        """Observation-chain state of each record."""
        return obs["state"]


@dataclass(frozen=True)
class NoiseSpec:
    """I.i.d. per-entry observation noise.

    ``L_std`` and ``b_std`` are standard deviations, scalar or one per state.
    ``uniform`` noise is bounded (half-width ``sqrt(3) * std``); ``gaussian``
    is available but violates almost-sure boundedness.
    """

    L_std: float | np.ndarray = 0.0
    b_std: float | np.ndarray = 0.0
    dist: str = "uniform"

    def __post_init__(self):
        if self.dist not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise distribution {self.dist!r}")
        if np.any(np.asarray(self.L_std) < 0) or np.any(np.asarray(self.b_std) < 0):
            raise ValueError("noise standard deviations must be nonnegative")


class TabularModel(FiniteObservationModel):
    """``L_{t+1} = L_table[s_t] + Z``, ``b_{t+1} = b_table[s_t] + zeta``."""

    def __init__(self, P: TransitionKernel, L_table, b_table, noise: NoiseSpec | None = None):
        self.P = P
        self._L = np.array(L_table, dtype=float)
        self._b = np.array(b_table, dtype=float)
        S = P.n_states
        if self._L.ndim != 3 or self._L.shape[0] != S or self._L.shape[1] != self._L.shape[2]:
            raise ValueError(f"L_table must have shape ({S}, d, d)")
        self.dim = d = self._L.shape[1]
        if self._b.shape != (S, d):
            raise ValueError(f"b_table must have shape ({S}, {d})")
        if not (np.all(np.isfinite(self._L)) and np.all(np.isfinite(self._b))):
            raise ValueError("tables must be finite")
        self.noise = noise or NoiseSpec()
        self._L_std = np.broadcast_to(np.asarray(self.noise.L_std, dtype=float), (S,)).copy()
        self._b_std = np.broadcast_to(np.asarray(self.noise.b_std, dtype=float), (S,)).copy()
        self._noisy = bool(self._L_std.any() or self._b_std.any())
        self.stream_width = 1 + (d * d + d if self._noisy else 0)
        P.stationary  # fail early on non-ergodic kernels

    @property
    def obs_kernel(self) -> TransitionKernel:
        return self.P

    @property
    def L_table(self) -> np.ndarray:
        return self._L

    @property
    def b_table(self) -> np.ndarray:
        return self._b

    @cached_property
    def t_mix(self) -> int:
        return tv_mixing_time(self.P).t_mix

    def initial_state(self, draw):
        u = draw()[:, 0]
        cum = np.cumsum(self.P.stationary)
        cum[-1] = 1.0
        return np.sum(cum[None, :] <= u[:, None], axis=1)

    def advance(self, state, u):
        d = self.dim
        L = self._L[state]
        b = self._b[state]
        if self._noisy:
            z = unit_noise(u[:, 1:1 + d * d], self.noise.dist).reshape(-1, d, d)
            zeta = unit_noise(u[:, 1 + d * d:], self.noise.dist)
            L = L + self._L_std[state][:, None, None] * z
            b = b + self._b_std[state][:, None] * zeta
        nxt = self.P.step(state, u[:, 0])
        return nxt, {"state": state, "L": L, "b": b}

    def apply(self, obs, theta):
        return np.einsum("rij,rj->ri", obs["L"], theta) + obs["b"]

    def materialize(self, obs):
        return obs["L"], obs["b"]

    def mg_covariance(self, theta):
        theta = np.asarray(theta, dtype=float)
        var = self._b_std ** 2 + self._L_std ** 2 * float(theta @ theta)
        return var[:, None, None] * np.eye(self.dim)[None]

    def mg_L_row_moment(self) -> float:
        return float(np.max(self._L_std ** 2))

    def mg_b_moment(self) -> np.ndarray:
        return np.full(self.dim, float(self.P.stationary @ self._b_std ** 2))

    def noise_sup(self) -> tuple[float, float]:
        if self.noise.dist == "gaussian":
            return np.inf if self._L_std.any() else 0.0, np.inf if self._b_std.any() else 0.0
        d = self.dim
        # entrywise half-width sqrt(3)*std; Frobenius bounds the operator norm
        return float(SQRT3 * self._L_std.max() * d), float(SQRT3 * self._b_std.max() * np.sqrt(d))


def tabular_model(P: TransitionKernel, L_table, b_table, noise: NoiseSpec | None = None) -> TabularModel:
    return TabularModel(P, L_table, b_table, noise)
