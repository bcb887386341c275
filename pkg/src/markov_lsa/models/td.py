"""Temporal-difference policy evaluation with linear features.

Both TD(0) and TD(lambda) observe the base chain ``s_t`` together with a
noisy reward ``R_t = r(s_t) + noise`` and emit

    L = I - nu * g (phi(s_t) - gamma phi(s_{t+1}))^T,    b = nu * R_t * g,

with ``g = phi(s_t)`` for TD(0) and the eligibility trace for TD(lambda).
``nu = 1 / lambda_max(B)`` and ``B = Phi^T D Phi``.
"""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from ..errors import DegenerateFeatures, SingularSystem
from ..markov import TransitionKernel, green_apply, pair_kernel, tv_mixing_time
from .base import SQRT3, FiniteObservationModel, ObservationModel

__all__ = [
    "TD0Model",
    "TDLambdaModel",
    "td0_model",
    "tdlambda_model",
    "td0_exact_solution",
    "tdlambda_exact_solution",
    "trace_warmup",
]

FEATURE_TOL = 1e-10


def trace_warmup(rho: float) -> int:
    """Steps after which ``rho**k < 1e-12``; 0 when the trace has no memory."""
    if rho <= 0.0:
        return 0
    return math.ceil(math.log(1e-12) / math.log(rho))


class _TDBase:
    """Shared construction and the observation map common to TD(0) and TD(lambda)."""

    def _setup(self, P, features, rewards, gamma, reward_noise):
        if not 0.0 <= gamma < 1.0:
            raise ValueError("discount gamma must lie in [0, 1)")
        self.P = P
        Phi = np.array(features, dtype=float)
        if Phi.ndim == 1:
            Phi = Phi[:, None]
        S = P.n_states
        if Phi.shape[0] != S:
            raise ValueError(f"feature matrix needs {S} rows, got {Phi.shape[0]}")
        r = np.array(rewards, dtype=float).reshape(-1)
        if r.shape != (S,):
            raise ValueError(f"rewards must have length {S}")
        self.Phi = Phi
        self.r = r
        self.gamma = float(gamma)
        self.dim = Phi.shape[1]
        std = np.broadcast_to(np.asarray(reward_noise, dtype=float), (S,)).copy()
        if np.any(std < 0):
            raise ValueError("reward noise must be nonnegative")
        self.reward_std = std
        xi = P.stationary
        self.xi = xi
        B = Phi.T @ (xi[:, None] * Phi)
        ev = np.linalg.eigvalsh(B)
        if ev[0] <= FEATURE_TOL:
            raise DegenerateFeatures(f"lambda_min(Phi^T D Phi) = {ev[0]:.3e}")
        self.B = B
        self.mu = float(ev[0])
        self.beta = float(ev[-1])
        self.nu = 1.0 / self.beta
        self.stream_width = 2

    @property
    def error_weight(self) -> np.ndarray:
        return self.B

    def _reward(self, s, u):
        return self.r[s] + self.reward_std[s] * SQRT3 * (2.0 * u - 1.0)

    def _start(self, draw):
        u = draw()[:, 0]
        cum = np.cumsum(self.xi)
        cum[-1] = 1.0
        return np.sum(cum[None, :] <= u[:, None], axis=1)

    def apply(self, obs, theta):
        g = obs["g"]
        td = np.einsum("rj,rj->r", obs["phi"] - self.gamma * obs["phi_next"], theta)
        return theta + self.nu * g * (obs["R"] - td)[:, None]

    def materialize(self, obs):
        g = obs["g"]
        diff = obs["phi"] - self.gamma * obs["phi_next"]
        L = np.eye(self.dim)[None] - self.nu * g[:, :, None] * diff[:, None, :]
        b = self.nu * obs["R"][:, None] * g
        return L, b

    def value_function(self, theta) -> np.ndarray:
        return self.Phi @ np.asarray(theta, dtype=float)


class TD0Model(_TDBase, FiniteObservationModel):
    """TD(0) as a finite observation model over the pair chain ``(s_t, s_{t+1})``.

    Simulation walks the base chain; the ``S**2``-state pair kernel is built
    only for exact functionals.  Pair index is ``s * S + s'``.
    """

    def __init__(self, P: TransitionKernel, features, rewards, gamma: float, reward_noise=0.0):
        self._setup(P, features, rewards, gamma, reward_noise)

    @cached_property
    def obs_kernel(self) -> TransitionKernel:
        return pair_kernel(self.P)

    @cached_property
    def obs_stationary(self) -> np.ndarray:
        return (self.xi[:, None] * self.P.probs).reshape(-1)

    @cached_property
    def _pairs(self):
        S = self.P.n_states
        return np.repeat(np.arange(S), S), np.tile(np.arange(S), S)

    @cached_property
    def L_table(self) -> np.ndarray:
        s, sp = self._pairs
        obs = {"g": self.Phi[s], "phi": self.Phi[s], "phi_next": self.Phi[sp], "R": self.r[s]}
        L, _ = self.materialize(obs)
        return L

    @cached_property
    def b_table(self) -> np.ndarray:
        s, _ = self._pairs
        return self.nu * self.r[s][:, None] * self.Phi[s]

    @cached_property
    def L_bar(self) -> np.ndarray:
        Sigma0 = self.B
        Sigma1 = self.Phi.T @ (self.xi[:, None] * (self.P.probs @ self.Phi))
        return np.eye(self.dim) - self.nu * (Sigma0 - self.gamma * Sigma1)

    @cached_property
    def b_bar(self) -> np.ndarray:
        return self.nu * self.Phi.T @ (self.xi * self.r)

    @cached_property
    def t_mix(self) -> int:
        # the pair chain at time t is (s_t, s_{t+1}); its worst-pair TV after t
        # steps equals the base chain's after t - 1
        return tv_mixing_time(self.P).t_mix + 1

    def obs_index(self, obs):
        return obs["s"] * self.P.n_states + obs["sp"]

    def initial_state(self, draw):
        return self._start(draw)

    def advance(self, state, u):
        sp = self.P.step(state, u[:, 0])
        phi = self.Phi[state]
        obs = {"s": state, "sp": sp, "g": phi, "phi": phi, "phi_next": self.Phi[sp],
               "R": self._reward(state, u[:, 1])}
        return sp, obs

    def mg_covariance(self, theta):
        s, _ = self._pairs
        var = self.nu ** 2 * self.reward_std[s] ** 2
        return var[:, None, None] * np.einsum("pi,pj->pij", self.Phi[s], self.Phi[s])

    def mg_L_row_moment(self) -> float:
        return 0.0

    def mg_b_moment(self) -> np.ndarray:
        return self.nu ** 2 * (self.xi * self.reward_std ** 2) @ self.Phi ** 2

    def noise_sup(self) -> tuple[float, float]:
        phi_norm = np.linalg.norm(self.Phi, axis=1)
        return 0.0, float(self.nu * SQRT3 * np.max(self.reward_std * phi_norm))


class TDLambdaModel(_TDBase, ObservationModel):
    """TD(lambda) with eligibility trace ``g_t = phi(s_t) + gamma*lambda*g_{t-1}``.

    The trace starts at zero and runs for ``trace_warmup(gamma*lambda)`` steps
    inside ``initial_state`` so the first emitted observation is stationary to
    within ``1e-12`` in trace weight.
    """

    def __init__(self, P: TransitionKernel, features, rewards, gamma: float, lam: float, reward_noise=0.0):
        self._setup(P, features, rewards, gamma, reward_noise)
        if not 0.0 <= lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")
        self.lam = float(lam)
        self.rho = self.gamma * self.lam
        self.warmup = trace_warmup(self.rho)

    # -- exact population quantities -------------------------------------

    @cached_property
    def _resolvent(self) -> np.ndarray:
        """``(I - rho P)^{-1}``."""
        S = self.P.n_states
        return np.linalg.inv(np.eye(S) - self.rho * self.P.probs)

    @cached_property
    def A(self) -> np.ndarray:
        """``Phi^T D (I - rho P)^{-1} (I - gamma P) Phi``."""
        S = self.P.n_states
        DPhi = self.xi[:, None] * self.Phi
        return DPhi.T @ self._resolvent @ (np.eye(S) - self.gamma * self.P.probs) @ self.Phi

    @cached_property
    def L_bar(self) -> np.ndarray:
        return np.eye(self.dim) - self.nu * self.A

    @cached_property
    def b_bar(self) -> np.ndarray:
        DPhi = self.xi[:, None] * self.Phi
        return self.nu * DPhi.T @ self._resolvent @ self.r

    @cached_property
    def t_mix(self) -> int:
        """Mixing-time bound for the augmented chain ``(s_t, s_{t+1}, g_t)``."""
        return math.ceil(4 * (tv_mixing_time(self.P).t_mix + 1.0 / (1.0 - self.rho)))

    @cached_property
    def trace_moments(self):
        """Exact stationary ``m[s] = E[g 1{s_t=s}]`` and ``W[s] = E[g g^T 1{s_t=s}]``."""
        S, d = self.P.n_states, self.dim
        Pt = self.P.probs.T
        m = np.linalg.solve(np.eye(S) - self.rho * Pt, self.xi[:, None] * self.Phi)
        m_prev = Pt @ m
        base = (self.xi[:, None, None] * np.einsum("si,sj->sij", self.Phi, self.Phi)
                + self.rho * (np.einsum("si,sj->sij", self.Phi, m_prev)
                              + np.einsum("si,sj->sij", m_prev, self.Phi)))
        W = np.linalg.solve(np.eye(S) - self.rho ** 2 * Pt, base.reshape(S, d * d)).reshape(S, d, d)
        W = 0.5 * (W + W.transpose(0, 2, 1))
        return m, W

    @cached_property
    def _td_error(self) -> np.ndarray:
        """``delta[s, s'] = (phi(s) - gamma phi(s'))^T theta_bar - r(s)``."""
        v = self.Phi @ self.theta_bar
        return v[:, None] - self.gamma * v[None, :] - self.r[:, None]

    def exact_sigma_mg(self) -> np.ndarray:
        _, W = self.trace_moments
        return self.nu ** 2 * np.einsum("s,sij->ij", self.reward_std ** 2, W)

    def exact_lag0_mkv(self) -> np.ndarray:
        _, W = self.trace_moments
        h2 = np.sum(self.P.probs * self._td_error ** 2, axis=1)
        return self.nu ** 2 * np.einsum("s,sij->ij", h2, W)

    def exact_sigma_mkv(self) -> np.ndarray:
        """Long-run covariance of the trace-chain drift by geometric resummation.

        Uses ``sum_{t>=1} E[delta_t g_t | s_1, g_0] = G(s_1) + q(s_1) g_0`` where
        ``G`` applies the Green operator to ``Phi * u`` and ``q = rho u`` with
        ``u = (I - rho P)^{-1} h``, ``h(s) = E[delta | s]``.
        """
        m, W = self.trace_moments
        P, delta = self.P.probs, self._td_error
        h = np.sum(P * delta, axis=1)
        u = self._resolvent @ h
        G = green_apply(self.P, self.xi, self.Phi * u[:, None])
        q = self.rho * u
        wdelta = P * delta  # P(s0, s1) delta(s0, s1)
        cross = np.einsum("ab,bi,aj->ij", wdelta, G, m) + np.einsum("ab,b,aij->ij", wdelta, q, W)
        C0 = self.exact_lag0_mkv()
        out = C0 + self.nu ** 2 * (cross + cross.T)
        return 0.5 * (out + out.T)

    # -- simulation -------------------------------------------------------

    def initial_state(self, draw):
        s = self._start(draw)
        g = np.zeros((len(s), self.dim))
        for _ in range(self.warmup):
            u = draw()
            g = self.Phi[s] + self.rho * g
            s = self.P.step(s, u[:, 0])
        return s, g

    def advance(self, state, u):
        s, g_prev = state
        phi = self.Phi[s]
        g = phi + self.rho * g_prev
        sp = self.P.step(s, u[:, 0])
        obs = {"s": s, "sp": sp, "g": g, "phi": phi, "phi_next": self.Phi[sp],
               "R": self._reward(s, u[:, 1])}
        return (sp, g), obs

    def trace_bound(self) -> float:
        return float(np.linalg.norm(self.Phi, axis=1).max() / (1.0 - self.rho))


def td0_model(P: TransitionKernel, features, rewards, gamma: float, reward_noise=0.0) -> TD0Model:
    return TD0Model(P, features, rewards, gamma, reward_noise)


def tdlambda_model(P: TransitionKernel, features, rewards, gamma: float, lam: float,
                   reward_noise=0.0) -> TDLambdaModel:
    return TDLambdaModel(P, features, rewards, gamma, lam, reward_noise)


def td0_exact_solution(model: TD0Model) -> np.ndarray:
    """Solve ``Sigma_0 theta = gamma Sigma_1 theta + Phi^T D r``."""
    Phi, xi = model.Phi, model.xi
    Sigma0 = Phi.T @ (xi[:, None] * Phi)
    Sigma1 = Phi.T @ (xi[:, None] * (model.P.probs @ Phi))
    return _solve_checked(Sigma0 - model.gamma * Sigma1, Phi.T @ (xi * model.r))


def tdlambda_exact_solution(model: TDLambdaModel) -> np.ndarray:
    """Solve the resummed system ``A(lambda) theta = Phi^T D (I - rho P)^{-1} r``."""
    DPhi = model.xi[:, None] * model.Phi
    return _solve_checked(model.A, DPhi.T @ model._resolvent @ model.r)


def _solve_checked(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if np.linalg.svd(A, compute_uv=False)[-1] <= 1e-10:
        raise SingularSystem("projected Bellman system is singular")
    theta = np.linalg.solve(A, rhs)
    # one step of iterative refinement keeps the residual near machine precision
    theta += np.linalg.solve(A, rhs - A @ theta)
    return theta

