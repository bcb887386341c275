"""Instance-dependent choice of the trace parameter in TD(lambda).

Each candidate on the grid is scored by the three-term total error

    alpha(M_lam, z_lam) * prior
      + c (beta^2 sigma_bar^2 d (t_mix + 1/(1 - gamma lam))
           / (mu^2 (1 - kappa_lam)^2 (1 - gamma lam)^2 n))^{4/3} log^2 n
      + c tr((I - M_lam)^{-1} (Sigma_Mkv + Sigma_MG) (I - M_lam)^{-T}) / n,

with ``z_lam = (1 - lam) gamma / (1 - lam gamma)``.  Matrices are expressed
in the feature basis whitened by ``B = Phi^T D Phi``.  All terms are plug-in
estimates from one shared trajectory; only ``t_mix`` is taken from the kernel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .diagnostics import default_window, long_run_covariance, sigma_mg_exact, sigma_mkv_exact
from .engine import simulate
from .errors import DegenerateFeatures, MarkovLSAError, NumericalBlowup, SingularSystem, Unstable
from .markov import tv_mixing_time
from .models.td import FEATURE_TOL, TD0Model, TDLambdaModel

__all__ = [
    "LambdaCandidate",
    "SelectionResult",
    "approximation_factor",
    "build_M_lambda",
    "M_lambda_series",
    "kappa_of",
    "contraction_bound",
    "whitened_covariances",
    "exact_candidate",
    "select_lambda",
]


def approximation_factor(M, z: float) -> float:
    """``1 + lambda_max((I - M)^{-1} (z^2 I - M M^T) (I - M)^{-T})``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    A = np.eye(M.shape[0]) - M
    if np.linalg.svd(A, compute_uv=False)[-1] <= 1e-12:
        raise SingularSystem("I - M is singular")
    Ainv = np.linalg.inv(A)
    inner = Ainv @ (z * z * np.eye(M.shape[0]) - M @ M.T) @ Ainv.T
    return 1.0 + float(np.linalg.eigvalsh(0.5 * (inner + inner.T))[-1])


def contraction_bound(lam: float, gamma: float) -> float:
    """``(1 - lam) gamma / (1 - lam gamma)``."""
    return (1.0 - lam) * gamma / (1.0 - lam * gamma)


def kappa_of(M) -> float:
    M = np.atleast_2d(M)
    return 0.5 * float(np.linalg.eigvalsh(M + M.T)[-1])


def _inv_sqrt(B):
    w, V = np.linalg.eigh(B)
    if w[0] <= FEATURE_TOL:
        raise DegenerateFeatures(f"lambda_min(B) = {w[0]:.3e}")
    return (V / np.sqrt(w)) @ V.T


def build_M_lambda(model: TDLambdaModel) -> np.ndarray:
    """``(1 - lam) gamma B^{-1/2} Phi^T D P (I - gamma lam P)^{-1} Phi B^{-1/2}``."""
    Bi = _inv_sqrt(model.B)
    DPhi = model.xi[:, None] * model.Phi
    core = DPhi.T @ model.P.probs @ model._resolvent @ model.Phi
    return (1.0 - model.lam) * model.gamma * Bi @ core @ Bi


def M_lambda_series(model: TDLambdaModel, tol: float = 1e-14) -> np.ndarray:
    """Truncated series ``(1 - lam) sum_t lam^t gamma^{t+1} B^{-1/2} E[phi(s_0) phi(s_{t+1})^T] B^{-1/2}``."""
    Bi = _inv_sqrt(model.B)
    DPhi = model.xi[:, None] * model.Phi
    V = model.P.probs @ model.Phi
    out = np.zeros((model.dim, model.dim))
    weight = (1.0 - model.lam) * model.gamma
    while True:
        out += weight * DPhi.T @ V
        weight *= model.lam * model.gamma
        if weight < tol:
            break
        V = model.P.probs @ V
    return Bi @ out @ Bi


def whitened_covariances(model) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(Sigma_Mkv, Sigma_MG)`` in the whitened basis, without the ``1/beta`` scaling."""
    Bi = _inv_sqrt(model.B)
    scale = 1.0 / model.nu ** 2
    mkv = scale * Bi @ sigma_mkv_exact(model) @ Bi
    mg = scale * Bi @ sigma_mg_exact(model) @ Bi
    return mkv, mg


def _cov_trace(M, sigma) -> float:
    Ainv = np.linalg.inv(np.eye(M.shape[0]) - M)
    return float(np.trace(Ainv @ sigma @ Ainv.T))


def _higher_order(beta, mu, sigma_bar2, d, t_mix, kappa, rho, n) -> float:
    base = beta ** 2 * sigma_bar2 * d * (t_mix + 1.0 / (1.0 - rho)) / (mu ** 2 * (1.0 - kappa) ** 2 * (1.0 - rho) ** 2 * n)
    return base ** (4.0 / 3.0) * math.log(n) ** 2


@dataclass
class LambdaCandidate:
    lam: float
    M: np.ndarray | None = None
    kappa: float = math.nan
    alpha: float = math.nan
    est_cov_trace: float = math.nan
    total_error: float = math.nan
    theta_hat: np.ndarray | None = None
    higher_order: float = math.nan
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass
class SelectionResult:
    lam_star: float
    candidates: list
    provenance: dict = field(default_factory=dict)

    @property
    def index(self) -> int:
        return next(i for i, c in enumerate(self.candidates) if c.lam == self.lam_star)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "kappa", "alpha", "est_cov_trace", "total_error", "selected", "failure"])
            for c in self.candidates:
                w.writerow([repr(c.lam), repr(c.kappa), repr(c.alpha), repr(c.est_cov_trace),
                            repr(c.total_error), int(c.lam == self.lam_star), c.failure or ""])


def exact_candidate(model: TDLambdaModel, prior: float, n: int, c: float = 1.0) -> LambdaCandidate:
    """The selection objective evaluated with exact population quantities."""
    M = build_M_lambda(model)
    kappa = kappa_of(M)
    alpha = approximation_factor(M, contraction_bound(model.lam, model.gamma))
    mkv, mg = whitened_covariances(model)
    trace = _cov_trace(M, mkv + mg)
    Bi = _inv_sqrt(model.B)
    psi = model.Phi @ Bi
    varsigma = _varsigma(psi, np.abs(model.r) + math.sqrt(3.0) * model.reward_std, model.dim)
    delta = model._td_error
    # E[(delta + reward noise)^4] for uniform noise with variance v: d^4 + 6 d^2 v + 9v^2/5
    v = model.reward_std[:, None] ** 2
    m4 = np.sum(model.xi[:, None] * model.P.probs * (delta ** 4 + 6 * delta ** 2 * v + 1.8 * v ** 2))
    sb2 = varsigma ** 2 * math.sqrt(m4)
    hot = _higher_order(model.beta, model.mu, sb2, model.dim, tv_mixing_time(model.P).t_mix, kappa, model.rho, n)
    total = c * alpha * prior + c * hot + c * trace / n
    return LambdaCandidate(lam=model.lam, M=M, kappa=kappa, alpha=alpha, est_cov_trace=trace,
                           total_error=total, theta_hat=model.theta_bar, higher_order=hot)


def _varsigma(psi, reward_abs, d) -> float:
    norms = np.linalg.norm(psi, axis=1)
    return float(max(norms.max() / math.sqrt(d), np.max(reward_abs), math.sqrt(norms.max())))


def _td_average(G, diff, R, step, n0):
    """Averaged TD iterate ``theta += step * g (R - diff . theta)`` over a stored path."""
    d = G.shape[1]
    theta = np.zeros(d)
    total = np.zeros(d)
    for t in range(len(R)):
        if t >= n0:
            total += theta
        theta = theta + step * G[t] * (R[t] - diff[t] @ theta)
    if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > 1e12:
        raise NumericalBlowup("TD iterate diverged during selection")
    return total / (len(R) - n0)


def _evaluate(lam, obs, gamma, prior, t_mix, S, c, stepsize, window, kernel):
    s, R = obs["s"], obs["R"]
    Phi_s, Phi_next = obs["phi"], obs["phi_next"]
    n, d = Phi_s.shape
    rho = gamma * lam
    G = lfilter([1.0], [1.0, -rho], Phi_s, axis=0) if rho > 0 else Phi_s
    diff = Phi_s - gamma * Phi_next
    B_hat = Phi_s.T @ Phi_s / n
    w_B = np.linalg.eigvalsh(B_hat)
    if w_B[0] <= FEATURE_TOL:
        raise DegenerateFeatures("empirical feature covariance is singular")
    mu_hat, beta_hat = float(w_B[0]), float(w_B[-1])
    Bi = _inv_sqrt(B_hat)
    A_hat = G.T @ diff / n
    M_hat = np.eye(d) - Bi @ A_hat @ Bi
    kappa = kappa_of(M_hat)
    if kappa >= 1.0:
        raise Unstable(f"plug-in kappa_lambda = {kappa:.4g} >= 1")
    alpha = approximation_factor(M_hat, contraction_bound(lam, gamma))

    psi_norm_max = float(np.max(np.linalg.norm(Phi_s @ Bi, axis=1)))
    varsigma = max(psi_norm_max / math.sqrt(d), float(np.max(np.abs(R))), math.sqrt(psi_norm_max))
    tm = t_mix + 1.0 / (1.0 - rho)
    if stepsize is None:
        eta = (1.0 - rho) ** (2.0 / 3.0) / (c * (varsigma ** 4 + 1) * d * (1.0 - kappa) * n * n * tm) ** (1.0 / 3.0)
        eta = min(eta, 0.5)
    else:
        eta = float(stepsize)
    theta_hat = _td_average(G, diff, R, eta / beta_hat, n // 2)

    td_res = diff @ theta_hat
    counts = np.bincount(s, minlength=S).astype(float)
    r_hat = np.bincount(s, weights=R, minlength=S) / np.maximum(counts, 1.0)
    mkv = (td_res - r_hat[s])[:, None] * G
    mg = (R - r_hat[s])[:, None] * G
    w = default_window(int(math.ceil(tm)), n) if window is None else window
    S_mkv = Bi @ long_run_covariance(mkv, w, kernel) @ Bi
    S_mg = Bi @ (mg.T @ mg / n) @ Bi
    trace = _cov_trace(M_hat, S_mkv + S_mg)

    m4 = float(np.mean((td_res - R) ** 4))
    sb2 = varsigma ** 2 * math.sqrt(m4)
    hot = _higher_order(beta_hat, mu_hat, sb2, d, t_mix, kappa, rho, n)
    total = c * alpha * prior + c * hot + c * trace / n
    return LambdaCandidate(lam=lam, M=M_hat, kappa=kappa, alpha=alpha, est_cov_trace=trace,
                           total_error=total, theta_hat=theta_hat, higher_order=hot)


def select_lambda(model, n: int, approx_error_prior: float, grid=None, seed: int = 0, c: float = 1.0,
                  stepsize: float | None = None, window: int | None = None, kernel: str = "bartlett",
                  observations: dict | None = None) -> SelectionResult:
    """Score every ``lam`` on ``grid`` (default ``{0, 0.1 gamma, ..., gamma}``) and pick the minimiser.

    ``model`` is any TD model; its kernel, features, rewards, discount and
    reward noise define the trajectory, which is simulated once and shared
    by all candidates unless ``observations`` is supplied.  Candidates that
    raise are kept in the table with ``failure`` set.  Ties go to the
    smaller ``lam``.
    """
    if approx_error_prior < 0:
        raise ValueError("approximation-error prior must be nonnegative")
    gamma = model.gamma
    if grid is None:
        grid = [round(0.1 * i * gamma, 12) for i in range(11)]
    grid = sorted(float(x) for x in grid)
    if grid and (grid[0] < 0 or grid[-1] > gamma + 1e-12):
        raise ValueError(f"grid must lie in [0, gamma={gamma}]")
    if observations is None:
        base = TD0Model(model.P, model.Phi, model.r, gamma, model.reward_std)
        observations = simulate(base, n, seed)
    t_mix = tv_mixing_time(model.P).t_mix
    cands = []
    for lam in grid:
        try:
            cands.append(_evaluate(lam, observations, gamma, approx_error_prior, t_mix, model.P.n_states,
                                   c, stepsize, window, kernel))
        except (MarkovLSAError, np.linalg.LinAlgError, ValueError) as exc:
            cands.append(LambdaCandidate(lam=lam, failure=f"{type(exc).__name__}: {exc}"))
    ok = [i for i, cand in enumerate(cands) if not cand.failed]
    if not ok:
        raise MarkovLSAError("every lambda candidate failed")
    scores = np.array([cands[i].total_error for i in ok])
    best = ok[int(np.argmin(scores))]  # first minimiser, i.e. smallest lambda on ties
    return SelectionResult(lam_star=cands[best].lam, candidates=cands,
                           provenance={"n": n, "seed": seed, "t_mix_source": "kernel", "lag_kernel": kernel})

