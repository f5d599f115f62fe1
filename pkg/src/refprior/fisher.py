"""Fisher information for the nuisance/latent parameter vector.

All matrices use the packed ordering ``(phi2, log q, Jtilde_1..T, psi2, log C_1..T)``
(dimension ``2T + 3``), which makes the information block diagonal across the
groups ``{phi2}``, ``{log q, Jtilde}`` and ``{psi2, log C}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelConfig,
    ModelError,
    NuisanceParams,
    ObservedData,
    PopulationState,
    draw_catch_noise,
    draw_survey,
)


@dataclass(frozen=True)
class FisherMatrix:
    entries: np.ndarray
    T: int
    A: int

    @property
    def dim(self) -> int:
        return 2 * self.T + 3

    def blocks(self):
        """Index slices of the three parameter groups."""
        T = self.T
        return slice(0, 1), slice(1, T + 2), slice(T + 2, 2 * T + 3)

    def labels(self) -> list[str]:
        T = self.T
        return (["phi2", "logq"] + [f"Jt_{t}" for t in range(1, T + 1)]
                + ["psi2"] + [f"logC_{t}" for t in range(1, T + 1)])


def _check_positive(params: NuisanceParams) -> None:
    if not (params.psi2 > 0 and params.phi2 > 0 and params.q > 0):
        raise ModelError("psi2, phi2 and q must be > 0")


def hessian_from_residuals(r, d, phi2: float, psi2: float, A: int) -> np.ndarray:
    """Second derivatives of the log-likelihood given survey residuals
    ``r_t = J*_t - A log q - Jtilde_t`` and catch log-ratios ``d_t = log C*_t - log C_t``.

    ``r`` and ``d`` may carry leading batch dimensions; the result has shape
    ``batch + (2T+3, 2T+3)``. The Hessian does not depend on whether the catch
    errors carry the -psi2/2 mean shift.
    """
    r = np.asarray(r, dtype=float)
    d = np.asarray(d, dtype=float)
    T = r.shape[-1]
    batch = r.shape[:-1]
    n = 2 * T + 3
    H = np.zeros(batch + (n, n))
    jt = np.arange(2, T + 2)
    lc = np.arange(T + 3, 2 * T + 3)
    ip = T + 2

    H[..., 0, 0] = T / (2 * phi2 ** 2) - np.sum(r * r, axis=-1) / phi2 ** 3
    H[..., 0, 1] = H[..., 1, 0] = -A * np.sum(r, axis=-1) / phi2 ** 2
    H[..., 0, jt] = H[..., jt, 0] = -r / phi2 ** 2
    H[..., 1, 1] = -T * A * A / phi2
    H[..., 1, jt] = H[..., jt, 1] = -A / phi2
    H[..., jt, jt] = -1.0 / phi2

    H[..., ip, ip] = T / (2 * psi2 ** 2) - np.sum(d * d, axis=-1) / psi2 ** 3
    H[..., ip, lc] = H[..., lc, ip] = -d / psi2 ** 2
    H[..., lc, lc] = -1.0 / psi2
    return H


def analytic_hessian(state: PopulationState, params: NuisanceParams, data: ObservedData,
                     config: ModelConfig) -> np.ndarray:
    """Exact Hessian of the log-likelihood, summed over the ``T`` observations."""
    _check_positive(params)
    if data.T != state.T or state.A != config.A:
        raise ModelError("state, data and config dimensions disagree")
    r = data.Jstar - config.A * params.log_q - state.Jtilde
    d = np.log(data.Cstar) - state.log_C
    return hessian_from_residuals(r, d, params.phi2, params.psi2, config.A)


def sigma_a(T: int, A: int) -> np.ndarray:
    S = np.eye(T + 1)
    S[0, :] = 1.0
    S[:, 0] = 1.0
    S[0, 0] = A
    return S


def sigma_b(T: int, psi2: float) -> np.ndarray:
    S = 2.0 * np.eye(T + 1)
    S[0, :] = -1.0
    S[:, 0] = -1.0
    S[0, 0] = (2.0 + psi2) / (2.0 * psi2)
    return S


def assemble_sigma(params: NuisanceParams, T: int, A: int) -> np.ndarray:
    """Block information matrix as displayed (any ``T >= 1``)."""
    phi2, psi2 = params.phi2, params.psi2
    n = 2 * T + 3
    S = np.zeros((n, n))
    S[0, 0] = 0.5 / phi2 ** 2
    S[1:T + 2, 1:T + 2] = (A / phi2) * sigma_a(T, A)
    S[T + 2:, T + 2:] = sigma_b(T, psi2) / (2.0 * psi2)
    return S


def expected_fisher(params: NuisanceParams, T: int, A: int) -> FisherMatrix:
    _check_positive(params)
    if int(T) != T or T < 2 or int(A) != A or A < 1:
        raise ModelError(f"need integer T >= 2 and A >= 1, got T={T}, A={A}")
    return FisherMatrix(entries=assemble_sigma(params, T, A), T=T, A=A)


def det_sigma_closed(params: NuisanceParams, T: int, A: int) -> float:
    """Signed determinant of the block information matrix, as a product of block determinants."""
    if T < 2:
        raise ModelError("T must be >= 2")
    phi2, psi2 = params.phi2, params.psi2
    det_a = A - T
    det_b = 2.0 ** T * (1.0 / psi2 + 0.5 - T / 2.0)
    return ((0.5 / phi2 ** 2) * (A / phi2) ** (T + 1) * det_a
            * (0.5 / psi2) ** (T + 1) * det_b)


def det_sigma_shape(params: NuisanceParams, T: int) -> float:
    """phi^-(6+2T) psi^-2(T+2) |(T-1) psi^2 - 2|."""
    phi2, psi2 = params.phi2, params.psi2
    return phi2 ** (-(3 + T)) * psi2 ** (-(T + 2)) * abs((T - 1) * psi2 - 2.0)


def sigma2_matrix(params: NuisanceParams, T: int) -> np.ndarray:
    return np.diag(np.concatenate([np.full(T, 1.0 / params.phi2), np.full(T, 1.0 / params.psi2)]))


def det_sigma2_closed(params: NuisanceParams, T: int) -> float:
    return params.phi2 ** (-T) * params.psi2 ** (-T)


def qb_factor(T: int, psi2: float) -> np.ndarray:
    """Lower-triangular factor with ``Q^T Q = Sigma_b`` while ``Sigma_b[0,0] >= T/2``.

    Outside that regime the top-left entry uses the absolute value and the
    product no longer reproduces ``Sigma_b[0, 0]``.
    """
    if T < 2 or psi2 <= 0:
        raise ModelError("need T >= 2 and psi2 > 0")
    Q = math.sqrt(2.0) * np.eye(T + 1)
    Q[0, 0] = math.sqrt(abs((2.0 + psi2) / (2.0 * psi2) - T / 2.0))
    Q[1:, 0] = -1.0 / math.sqrt(2.0)
    return Q


def partial_jeffreys_log(params: NuisanceParams, T: int, A: int = 1) -> float:
    """Unnormalised log density of the partial Jeffreys prior in (psi2, phi2, log q).

    ``A`` does not enter; it is accepted for call-site symmetry with the
    determinant functions.
    """
    if T <= 1:
        raise ModelError("T must be > 1")
    gap = abs((T - 1) * params.psi2 - 2.0)
    if gap == 0.0:
        return -math.inf
    return -1.5 * math.log(params.phi2) - math.log(params.psi2) + 0.5 * math.log(gap)


def mc_expected_hessian(params: NuisanceParams, state: PopulationState, config: ModelConfig,
                        n_samples: int, seed, laurent: bool = True, chunk: int = 100_000):
    """Monte Carlo estimate of ``E[-Hessian]`` at fixed parameters.

    Returns ``(mean, stderr)``, both ``(2T+3, 2T+3)``, with ``T`` taken from ``state``.
    """
    if n_samples < 10_000:
        raise ModelError("n_samples must be >= 1e4")
    _check_positive(params)
    A, T = config.A, state.T
    sigma2, tau2 = params.survey_components(A)
    rng = np.random.default_rng(seed)
    dim = 2 * T + 3
    total = np.zeros((dim, dim))
    m2 = np.zeros((dim, dim))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        # residuals only: log I* - log I summed over ages, one column per (replicate, t)
        eps = draw_survey(rng, np.zeros((A, m * T)), sigma2, tau2)
        r = eps.sum(axis=0).reshape(m, T)
        d = draw_catch_noise(rng, (m, T), params.psi2, laurent)
        negH = -hessian_from_residuals(r, d, params.phi2, params.psi2, A)
        # pairwise (Chan et al.) merge of per-chunk sums of squares
        c_total = negH.sum(axis=0)
        c_mean = c_total / m
        c_m2 = ((negH - c_mean) ** 2).sum(axis=0)
        if done:
            delta = c_mean - total / done
            m2 += c_m2 + delta ** 2 * (done * m / (done + m))
        else:
            m2 = c_m2
        total += c_total
        done += m
    var = m2 / (n_samples - 1)
    return total / n_samples, np.sqrt(var / n_samples)
