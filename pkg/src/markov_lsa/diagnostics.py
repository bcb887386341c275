"""Instance-dependent noise functionals.

Finite observation models are handled generically through the observation
chain: ``eps_mkv(w) = b(w) + L(w) theta_bar - theta_bar`` and the per-state
conditional covariance of the martingale part.  The long-run covariance is
summed lag by lag up to a certified truncation point; the Green-operator
closed form is provided separately as an independent route.
TD(lambda) and VAR models supply their own exact covariances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import InstanceConstants, instance_constants, leading_trace, theorem1_bound
from .errors import InsufficientData, NonErgodic, SingularSystem
from .markov import green_apply
from .models.base import FiniteObservationModel

__all__ = [
    "NoiseDecomposition",
    "EffectiveNoise",
    "InstanceReport",
    "noise_decomposition",
    "sigma_mg_exact",
    "sigma_mkv_exact",
    "sigma_mkv_green",
    "lag0_covariance",
    "effective_noise",
    "lambda_matrix",
    "local_radius",
    "combined_radius",
    "empirical_sigmas",
    "EmpiricalSigmas",
    "instance_report",
    "truncation_lag",
]

TAIL_TOL = 1e-10


@dataclass(frozen=True)
class NoiseDecomposition:
    """Per observation-state drift ``eps_mkv`` (Omega, d) and martingale covariance (Omega, d, d)."""

    eps_mkv: np.ndarray
    eps_mg_cov: np.ndarray
    weights: np.ndarray


def _require_finite(model, what):
    if not isinstance(model, FiniteObservationModel):
        raise TypeError(f"{what} needs a finite observation model, got {type(model).__name__}")


def noise_decomposition(model, theta=None) -> NoiseDecomposition:
    _require_finite(model, "noise_decomposition")
    theta = model.theta_bar if theta is None else np.asarray(theta, dtype=float)
    eps = model.b_table + model.L_table @ theta - theta
    return NoiseDecomposition(eps_mkv=eps, eps_mg_cov=model.mg_covariance(theta), weights=model.obs_stationary)


def _sym(M):
    return 0.5 * (M + M.T)


def sigma_mg_exact(model) -> np.ndarray:
    """Stationary average of the conditional martingale-noise covariance."""
    if hasattr(model, "exact_sigma_mg"):
        return _sym(model.exact_sigma_mg())
    dec = noise_decomposition(model)
    return _sym(np.tensordot(dec.weights, dec.eps_mg_cov, axes=(0, 0)))


def truncation_lag(model, eps: np.ndarray, tol: float = TAIL_TOL) -> int:
    """Lag ``K`` with ``sum_{k>K} 2 |C_k| <= tol``.

    Uses ``|C_k| <= 2 max|eps|^2 2^{-floor(k / t_mix)}`` entrywise.
    """
    t_mix = int(model.t_mix)
    amp = 2.0 * float(np.max(np.sum(eps ** 2, axis=1)))
    if amp == 0.0:
        return 0
    # tail of the block-geometric series: 2 * amp * t_mix * 2^{-floor(K/t_mix)} * 2
    blocks = math.ceil(math.log2(max(4.0 * amp * t_mix / tol, 1.0)))
    return (blocks + 1) * t_mix


def sigma_mkv_exact(model, lag_cap: int | None = None) -> np.ndarray:
    """Long-run covariance ``C_0 + sum_{k>=1} (C_k + C_k^T)`` of the Markov drift.

    For finite models ``C_k = E^T D P^k E`` summed up to ``truncation_lag``
    (or ``lag_cap``).  Other models return their own exact value.
    """
    if hasattr(model, "exact_sigma_mkv"):
        return _sym(model.exact_sigma_mkv())
    dec = noise_decomposition(model)
    E, w = dec.eps_mkv, dec.weights
    P = model.obs_kernel.probs
    K = truncation_lag(model, E) if lag_cap is None else lag_cap
    DE = w[:, None] * E
    out = E.T @ DE
    V = E.copy()
    cross = np.zeros_like(out)
    for _ in range(K):
        V = P @ V
        cross += DE.T @ V
    return _sym(out + cross + cross.T)


def sigma_mkv_green(model) -> np.ndarray:
    """Green-operator closed form ``E^T D E + E^T D P G + (E^T D P G)^T`` with ``G = green(E)``."""
    _require_finite(model, "sigma_mkv_green")
    dec = noise_decomposition(model)
    E, w = dec.eps_mkv, dec.weights
    kern = model.obs_kernel
    G = green_apply(kern, w, E)
    X = (w[:, None] * E).T @ (kern.probs @ G)
    return _sym(E.T @ (w[:, None] * E) + X + X.T)


def lag0_covariance(model) -> np.ndarray:
    """``C_0``, the stationary covariance of the Markov drift."""
    if hasattr(model, "exact_lag0_mkv"):
        return _sym(model.exact_lag0_mkv())
    dec = noise_decomposition(model)
    return _sym(dec.eps_mkv.T @ (dec.weights[:, None] * dec.eps_mkv))


@dataclass(frozen=True)
class EffectiveNoise:
    sigma_bar: float
    coordinate_scales: np.ndarray
    upper_bound: float | None = None


def _sigma_bar(model) -> tuple[float, np.ndarray]:
    # (L_1 - L_bar) theta_bar + (b_1 - b_bar) = eps_mkv + eps_mg and the two are orthogonal
    total = lag0_covariance(model) + sigma_mg_exact(model)
    scales = 0.5 * np.sqrt(np.clip(np.diag(total), 0.0, None))
    return float(scales.max()), scales


def effective_noise(model, constants: InstanceConstants | None = None) -> EffectiveNoise:
    """``max_j (1/2) E[<e_j, (L_1 - L_bar) theta_bar + (b_1 - b_bar)>^2]^{1/2}``.

    When ``constants`` is given, ``upper_bound`` is ``sigma_L ||theta_bar|| + sigma_b``.
    """
    value, scales = _sigma_bar(model)
    bound = None
    if constants is not None:
        bound = constants.sigma_L * float(np.linalg.norm(model.theta_bar)) + constants.sigma_b
    return EffectiveNoise(sigma_bar=value, coordinate_scales=scales, upper_bound=bound)


def _solve_left(L_bar, M):
    A = np.eye(L_bar.shape[0]) - L_bar
    if np.linalg.svd(A, compute_uv=False)[-1] <= 1e-10:
        raise SingularSystem("I - L_bar is singular")
    return np.linalg.solve(A, M)


def lambda_matrix(model) -> np.ndarray:
    """``E_{X~xi} Cov_{Y~P(X,.)}(g0(Y))`` with ``g0 = (I - L_bar)^{-1} green(L(.) theta_bar + b(.))``."""
    _require_finite(model, "lambda_matrix")
    kern = model.obs_kernel
    if not kern.ergodic:
        raise NonErgodic("observation chain is not ergodic")
    f = model.L_table @ model.theta_bar + model.b_table
    G = green_apply(kern, model.obs_stationary, f)
    g0 = _solve_left(model.L_bar, G.T).T
    P, w = kern.probs, model.obs_stationary
    mean = P @ g0
    second = np.einsum("xy,yi,yj->xij", P, g0, g0)
    cov = second - np.einsum("xi,xj->xij", mean, mean)
    return _sym(np.tensordot(w, cov, axes=(0, 0)))


def local_radius(model, n: int, sigma_mkv: np.ndarray | None = None) -> float:
    """``sqrt(tr((I - L_bar)^{-1} Sigma_Mkv (I - L_bar)^{-T}) / n)``."""
    S = sigma_mkv_exact(model) if sigma_mkv is None else sigma_mkv
    return math.sqrt(max(leading_trace(np.zeros_like(S), S, model.L_bar), 0.0) / n)


def combined_radius(model, n: int) -> float:
    """Radius with the martingale covariance included."""
    return math.sqrt(max(leading_trace(sigma_mg_exact(model), sigma_mkv_exact(model), model.L_bar), 0.0) / n)


# -- plug-in estimates ------------------------------------------------------------


@dataclass
class EmpiricalSigmas:
    sigma_mg: np.ndarray
    sigma_mkv: np.ndarray
    window: int
    provenance: dict = field(default_factory=dict)


def default_window(t_mix: int, n: int) -> int:
    return 4 * t_mix * math.ceil(math.log(n))


def _lag_weights(w: int, kernel: str) -> np.ndarray:
    if kernel == "bartlett":
        return 1.0 - np.arange(1, w + 1) / (w + 1.0)
    if kernel == "truncated":
        return np.ones(w)
    raise ValueError(f"unknown lag kernel {kernel!r}")


def long_run_covariance(x: np.ndarray, w: int, kernel: str = "bartlett") -> np.ndarray:
    """Demeaned lag-window estimate ``Gamma_0 + sum_k k(k) (Gamma_k + Gamma_k^T)``."""
    x = x - x.mean(axis=0)
    n = len(x)
    out = x.T @ x / n
    for k, wk in enumerate(_lag_weights(w, kernel), start=1):
        if k >= n:
            break
        G = x[k:].T @ x[:-k] / n
        out += wk * (G + G.T)
    return _sym(out)


def empirical_sigmas(model, observations: dict, theta_hat, window: int | None = None,
                     kernel: str = "bartlett") -> EmpiricalSigmas:
    """Plug-in ``(Sigma_MG, Sigma_Mkv)`` from one stored trajectory.

    The residual ``eta_t = L_{t+1} theta_hat + b_{t+1} - theta_hat`` is split
    into a conditional-mean part and a martingale part using
    ``model.residual_split``; the conditional mean is pooled per observed
    state for finite models.

    Raises
    ------
    InsufficientData
        If fewer than ``10 * window`` observations are available.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    n = len(next(iter(observations.values())))
    w = default_window(model.t_mix, n) if window is None else int(window)
    if n < 10 * max(w, 1):
        raise InsufficientData(f"{n} observations but lag window {w} needs at least {10 * max(w, 1)}")
    mkv, mg, variant = residual_split(model, observations, theta_hat)
    sigma_mg = _sym(mg.T @ mg / n) if mg is not None else np.zeros((model.dim, model.dim))
    sigma_mkv = long_run_covariance(mkv, w, kernel)
    return EmpiricalSigmas(sigma_mg=sigma_mg, sigma_mkv=sigma_mkv, window=w,
                           provenance={"mg_estimator": variant, "lag_kernel": kernel, "n": n})


def _pool(index, values, n_groups):
    """Group means of ``values`` rows by ``index``."""
    counts = np.bincount(index, minlength=n_groups).astype(float)
    sums = np.zeros((n_groups,) + values.shape[1:])
    np.add.at(sums, index, values)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts.reshape((-1,) + (1,) * (values.ndim - 1))
    return np.nan_to_num(means)


def residual_split(model, observations, theta_hat):
    """``(mkv_part, mg_part_or_None, variant_label)`` of the residuals along the log."""
    theta = np.broadcast_to(theta_hat, (len(next(iter(observations.values()))), model.dim))
    eta = model.apply(observations, theta) - theta
    if "R" in observations and "g" in observations:
        # TD family: pool rewards by base state; the trace multiplies both parts
        s = observations["s"]
        S = model.P.n_states
        r_hat = _pool(s, observations["R"], S)
        g = observations["g"]
        td = np.einsum("tj,tj->t", observations["phi"] - model.gamma * observations["phi_next"], theta)
        mkv = model.nu * (r_hat[s] - td)[:, None] * g
        mg = model.nu * (observations["R"] - r_hat[s])[:, None] * g
        return mkv, mg, "reward_pooled_by_state"
    if isinstance(model, FiniteObservationModel):
        idx = model.obs_index(observations)
        means = _pool(idx, eta, model.obs_kernel.n_states)
        mkv = means[idx]
        return mkv, eta - mkv, "state_pooled"
    return eta, None, "instantaneous_no_martingale"


# -- reports ------------------------------------------------------------------------


@dataclass
class InstanceReport:
    constants: InstanceConstants
    sigma_mg: np.ndarray
    sigma_mkv: np.ndarray
    leading_trace: float
    lambda_matrix: np.ndarray | None
    horizons: list
    local_radius: list
    combined_radius: list
    theorem1_bound: list
    provenance: dict = field(default_factory=dict)

    def summary(self) -> dict:
        k = self.constants
        return {
            "kappa": k.kappa,
            "gamma_max": k.gamma_max,
            "sigma_L": k.sigma_L,
            "sigma_b": k.sigma_b,
            "sigma_bar": k.sigma_bar,
            "d": k.d,
            "t_mix": k.t_mix,
            "trace_sigma_mg": float(np.trace(self.sigma_mg)),
            "trace_sigma_mkv": float(np.trace(self.sigma_mkv)),
            "leading_trace": self.leading_trace,
            "trace_lambda": None if self.lambda_matrix is None else float(np.trace(self.lambda_matrix)),
        }

    def to_text(self) -> str:
        lines = [f"{key:>16s}  {val!r}" for key, val in self.summary().items()]
        lines.append("")
        lines.append(f"{'n':>10s}  {'eps_n':>14s}  {'eps_n_combined':>14s}  {'theorem1_bound':>14s}")
        for row in zip(self.horizons, self.local_radius, self.combined_radius, self.theorem1_bound):
            lines.append(f"{row[0]:>10d}  {row[1]:>14.6e}  {row[2]:>14.6e}  {row[3]:>14.6e}")
        lines.append("")
        lines.append("provenance: " + json.dumps(self.provenance, sort_keys=True))
        return "\n".join(lines)

    def csv_rows(self):
        head = self.summary()
        for n, eps, comb, bound in zip(self.horizons, self.local_radius, self.combined_radius, self.theorem1_bound):
            yield {**head, "n": n, "eps_n": eps, "eps_n_combined": comb, "theorem1_bound": bound}


def instance_report(model, horizons=(2 ** 16,), c_prime: float = 1.0) -> InstanceReport:
    constants = instance_constants(model)
    S_mg = sigma_mg_exact(model)
    S_mkv = sigma_mkv_exact(model)
    lead = leading_trace(S_mg, S_mkv, model.L_bar)
    mkv_only = leading_trace(np.zeros_like(S_mkv), S_mkv, model.L_bar)
    lam = lambda_matrix(model) if isinstance(model, FiniteObservationModel) else None
    horizons = [int(n) for n in horizons]
    prov = {"covariances": "exact", "constants": constants.details.get("source", "exact")}
    if isinstance(model, FiniteObservationModel) and not hasattr(model, "exact_sigma_mkv"):
        prov["truncation_lag"] = truncation_lag(model, noise_decomposition(model).eps_mkv)
    return InstanceReport(
        constants=constants,
        sigma_mg=S_mg,
        sigma_mkv=S_mkv,
        leading_trace=lead,
        lambda_matrix=lam,
        horizons=horizons,
        local_radius=[math.sqrt(max(mkv_only, 0.0) / n) for n in horizons],
        combined_radius=[math.sqrt(max(lead, 0.0) / n) for n in horizons],
        theorem1_bound=[theorem1_bound(constants, S_mg, S_mkv, model.L_bar, n, c_prime) for n in horizons],
        provenance=prov,
    )
