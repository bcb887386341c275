"""Vector autoregression estimated by stochastic approximation on Yule-Walker moments.

The parameter is the stacked coefficient tensor ``theta = (A_1, ..., A_k)``
of shape ``(k, m, m)``, flattened row-major to ``d = k m^2``.  The covariance
convention is ``Gamma_i = E[X_t X_{t-i}^T]``, so ``Gamma_{-i} = Gamma_i^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import UnstableSystem
from .base import SQRT3, ObservationModel

__all__ = [
    "VARModel",
    "var_model",
    "var_exact_covariances",
    "companion_matrix",
    "lyapunov_certificate",
    "LyapunovCertificate",
    "discrete_lyapunov",
]

DOUBLING_TOL = 1e-12
MAX_DOUBLINGS = 64


def companion_matrix(coefs: np.ndarray) -> np.ndarray:
    """Companion matrix of ``X_{t+1} = sum_j A_j X_{t-j+1} + eps``."""
    k, m, _ = coefs.shape
    R = np.zeros((k * m, k * m))
    R[:m, :] = np.concatenate(list(coefs), axis=1)
    R[m:, :-m] = np.eye((k - 1) * m)
    return R


def spectral_radius(R: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(R)))) if R.size else 0.0


def discrete_lyapunov(R: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``S = R S R^T + Q`` by the doubling iteration.

    ``S_{j+1} = S_j + A_j S_j A_j^T`` with ``A_{j+1} = A_j^2`` sums the series
    ``sum_i R^i Q (R^T)^i`` in ``2^j`` terms after ``j`` doublings.
    """
    if spectral_radius(R) >= 1.0:
        raise UnstableSystem(f"spectral radius {spectral_radius(R):.6g} >= 1")
    S = np.array(Q, dtype=float)
    A = np.array(R, dtype=float)
    for _ in range(MAX_DOUBLINGS):
        inc = A @ S @ A.T
        S = S + inc
        if np.abs(inc).max() <= DOUBLING_TOL * max(1.0, np.abs(S).max()):
            break
        A = A @ A
    else:
        raise UnstableSystem("Lyapunov series did not converge")
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class LyapunovCertificate:
    P: np.ndarray
    Q: np.ndarray
    beta: float
    mu: float
    t_mix_bound: int
    residual: float


def lyapunov_certificate(R, order: int = 1, c: float = 1.0) -> LyapunovCertificate:
    """Certificate ``R^T P R = P - I`` with ``P = sum_i (R^T)^i R^i``.

    Raises
    ------
    UnstableSystem
        If the spectral radius of ``R`` is at least one.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Q = np.eye(R.shape[0])
    P = discrete_lyapunov(R.T, Q)
    residual = float(np.abs(R.T @ P @ R - (P - Q)).max())
    beta = float(np.linalg.eigvalsh(P)[-1])
    mu = 1.0
    ratio = beta / mu
    t_mix = math.ceil(c * order + c * ratio * (1.0 + math.log(ratio)))
    return LyapunovCertificate(P=P, Q=Q, beta=beta, mu=mu, t_mix_bound=t_mix, residual=residual)


class VARModel(ObservationModel):
    """Yule-Walker stochastic approximation for a stable VAR(k) in ``R^m``.

    Noise is ``eps = C u`` with ``u`` uniform on ``[-sqrt(3), sqrt(3)]^m`` and
    ``C`` the Cholesky factor of ``noise_cov``, so ``eps`` is bounded with the
    requested covariance.
    """

    def __init__(self, coefs, noise_cov=1.0):
        A = np.asarray(coefs, dtype=float)
        if A.ndim == 2:
            A = A[None]
        elif A.ndim == 0 or A.ndim == 1:
            A = np.asarray(A, dtype=float).reshape(-1, 1, 1)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("coefficients must have shape (k, m, m)")
        self.coefs = A
        self.order, self.m = A.shape[0], A.shape[1]
        self.dim = self.order * self.m * self.m
        cov = np.asarray(noise_cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(self.m)
        if cov.shape != (self.m, self.m):
            raise ValueError(f"noise covariance must be {self.m}x{self.m}")
        self.noise_cov = 0.5 * (cov + cov.T)
        self.noise_chol = np.linalg.cholesky(self.noise_cov)
        self.companion = companion_matrix(A)
        self.radius = spectral_radius(self.companion)
        if self.radius >= 1.0:
            raise UnstableSystem(f"companion spectral radius {self.radius:.6g} >= 1")
        self.stream_width = self.m

    # -- exact population quantities -------------------------------------

    @cached_property
    def state_covariance(self) -> np.ndarray:
        """Stationary covariance of the companion state ``(X_t, ..., X_{t-k+1})``."""
        km = self.order * self.m
        Q = np.zeros((km, km))
        Q[:self.m, :self.m] = self.noise_cov
        return discrete_lyapunov(self.companion, Q)

    @cached_property
    def nu(self) -> float:
        return 1.0 / float(np.linalg.eigvalsh(self.state_covariance)[-1])

    @cached_property
    def L_bar(self) -> np.ndarray:
        k, m = self.order, self.m
        H = self.state_covariance.reshape(k, m, k, m)
        # block (l, j): I_m kron Gamma_{l-j}^T, i.e. entry [(l,a,b),(j,a',c)] = delta_aa' H[l,b,j,c]
        T = np.einsum("ac,lbjd->labjcd", np.eye(m), H).reshape(self.dim, self.dim)
        return np.eye(self.dim) - self.nu * T

    @cached_property
    def b_bar(self) -> np.ndarray:
        G = var_exact_covariances(self, self.order)
        return self.nu * np.stack(G[1:]).reshape(-1)

    @cached_property
    def certificate(self) -> LyapunovCertificate:
        return lyapunov_certificate(self.companion, order=self.order)

    @property
    def t_mix(self) -> int:
        return self.certificate.t_mix_bound

    def exact_sigma_mg(self) -> np.ndarray:
        return np.zeros((self.dim, self.dim))

    def exact_lag0_mkv(self) -> np.ndarray:
        k, m = self.order, self.m
        H = self.state_covariance.reshape(k, m, k, m)
        C0 = self.nu ** 2 * np.einsum("ac,lbjd->labjcd", self.noise_cov, H)
        return C0.reshape(self.dim, self.dim)

    def exact_sigma_mkv(self) -> np.ndarray:
        # the drift is nu * eps_{t+1} (x) window_t; later innovations are
        # independent of it, so every cross-lag term vanishes
        return self.exact_lag0_mkv()

    # -- simulation -------------------------------------------------------

    @cached_property
    def warmup(self) -> int:
        if self.radius == 0.0:
            return self.order
        return max(self.order, math.ceil(math.log(1e-12) / math.log(self.radius)))

    def _innovation(self, u):
        return (SQRT3 * (2.0 * u - 1.0)) @ self.noise_chol.T

    def initial_state(self, draw):
        first = draw()
        W = np.zeros((first.shape[0], self.order, self.m))
        state, _ = self.advance(W, first)
        for _ in range(self.warmup - 1):
            state, _ = self.advance(state, draw())
        return state

    def advance(self, state, u):
        W = state
        x_next = np.einsum("jab,rjb->ra", self.coefs, W) + self._innovation(u)
        new = np.concatenate([x_next[:, None, :], W[:, :-1]], axis=1)
        return new, {"window": W, "next": x_next}

    def apply(self, obs, theta):
        W, x_next = obs["window"], obs["next"]
        R = theta.shape[0]
        A = theta.reshape(R, self.order, self.m, self.m)
        resid = x_next - np.einsum("rjab,rjb->ra", A, W)
        out = A + self.nu * np.einsum("ra,rlb->rlab", resid, W)
        return out.reshape(R, self.dim)

    def materialize(self, obs):
        W, x_next = obs["window"], obs["next"]
        R, m = W.shape[0], self.m
        T = np.einsum("ac,rlb,rjd->rlabjcd", np.eye(m), W, W).reshape(R, self.dim, self.dim)
        L = np.eye(self.dim)[None] - self.nu * T
        b = self.nu * np.einsum("ra,rlb->rlab", x_next, W).reshape(R, self.dim)
        return L, b

    def exact_solution(self) -> np.ndarray:
        return self.theta_bar


def var_model(coefs, noise_cov=1.0) -> VARModel:
    return VARModel(coefs, noise_cov)


def var_exact_covariances(model: VARModel, max_lag: int) -> list[np.ndarray]:
    """``[Gamma_0, ..., Gamma_max_lag]`` from the Lyapunov fixed point and Yule-Walker propagation."""
    k, m = model.order, model.m
    S = model.state_covariance
    gam = [S[:m, j * m:(j + 1) * m].copy() for j in range(min(k, max_lag + 1))]

    def lag(i):
        return gam[i] if i >= 0 else gam[-i].T

    for i in range(len(gam), max_lag + 1):
        gam.append(sum(model.coefs[j] @ lag(i - 1 - j) for j in range(k)))
    return gam
