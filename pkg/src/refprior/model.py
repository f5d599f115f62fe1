"""Sequential age-structured population model and its two observation channels.

Survey channel: per-age log indices ``log I*_{a,t} = log(q s_a N_{a,t}) + eps_{a,t} + eta_t``
summed over ages into ``J*_t``; only the ``T`` summed values enter the likelihood.

Catch channel: ``C*_t = C_t exp(nu_t)`` with ``nu_t ~ N(-psi2/2, psi2)`` so that
``E[C*_t] = C_t``.

Parameter vector ordering used by every derivative routine in the package::

    (phi2, log q, Jtilde_1..Jtilde_T, psi2, log C_1..log C_T)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
ABUNDANCE_FLOOR = 1e-9


class ModelError(ValueError):
    """Invalid model inputs (shapes, signs, non-finite values)."""


class DomainError(ModelError):
    """A recursion left its valid domain, e.g. Pope abundance below the floor."""


class Dynamics(str, enum.Enum):
    POPE = "pope"
    BARANOV = "baranov"
    DIRECT = "direct"


def _as_vector(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ModelError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ModelConfig:
    A: int
    T: int
    s: np.ndarray = None
    M: np.ndarray = None
    dynamics: Dynamics = Dynamics.BARANOV
    mu1_sd: float = 0.0
    mu2_sd: float = 0.0

    def __post_init__(self):
        if int(self.A) != self.A or self.A < 1:
            raise ModelError(f"A must be an integer >= 1, got {self.A}")
        if int(self.T) != self.T or self.T < 2:
            raise ModelError(f"T must be an integer >= 2, got {self.T}")
        s = _as_vector(1.0 if self.s is None else self.s, self.A, "s")
        M = _as_vector(0.0 if self.M is None else self.M, self.A, "M")
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ModelError("selectivities s_a must be > 0")
        if np.any(~np.isfinite(M)) or np.any(M < 0):
            raise ModelError("natural mortality M_a must be >= 0")
        if self.mu1_sd < 0 or self.mu2_sd < 0:
            raise ModelError("process-noise standard deviations must be >= 0")
        s.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "dynamics", Dynamics(self.dynamics))


@dataclass(frozen=True)
class PopulationState:
    """Latent quantities (theta_I). ``N`` and ``F`` are A x T; ``C`` and ``Jtilde`` length T.

    ``C`` may contain zeros when no fishing happens; the catch channel needs C > 0.
    """

    N: np.ndarray
    F: np.ndarray
    C: np.ndarray
    Jtilde: np.ndarray

    def __post_init__(self):
        N = np.array(self.N, dtype=float)
        F = np.array(self.F, dtype=float)
        C = np.array(self.C, dtype=float)
        J = np.array(self.Jtilde, dtype=float)
        if N.ndim != 2 or F.shape != N.shape:
            raise ModelError("N and F must be matching A x T matrices")
        if C.shape != (N.shape[1],) or J.shape != C.shape:
            raise ModelError("C and Jtilde must have length T")
        if np.any(~np.isfinite(N)) or np.any(N <= 0):
            raise ModelError("abundances must be finite and > 0")
        if np.any(F < 0) or np.any(C < 0) or np.any(~np.isfinite(J)):
            raise ModelError("F and C must be >= 0 and Jtilde finite")
        for arr in (N, F, C, J):
            arr.setflags(write=False)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Jtilde", J)

    @property
    def A(self) -> int:
        return self.N.shape[0]

    @property
    def T(self) -> int:
        return self.N.shape[1]

    @property
    def log_C(self) -> np.ndarray:
        return np.log(self.C)

    @classmethod
    def direct(cls, C, Jtilde, s) -> "PopulationState":
        """Build a state straight from theta_I = (Jtilde, C).

        Abundances are spread so that ``sum_a log(s_a N_{a,t}) = Jtilde_t`` holds.
        """
        J = np.asarray(Jtilde, dtype=float)
        s = np.asarray(s, dtype=float)
        A = s.size
        N = np.exp(J / A)[None, :] / s[:, None]
        return cls(N=N, F=np.zeros_like(N), C=np.asarray(C, dtype=float), Jtilde=jtilde_from(N, s))


def jtilde_from(N: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.sum(np.log(s[:, None] * N), axis=0)


@dataclass(frozen=True)
class NuisanceParams:
    """Observation parameters theta_N = (psi2, phi2, q).

    ``sigma2`` and ``tau2`` split the survey variance into per-age and year
    effects; when both are given they must satisfy ``phi2 = A sigma2 + A^2 tau2``
    (checked by :meth:`validate`, which needs ``A``).
    """

    psi2: float
    phi2: float
    q: float
    sigma2: Optional[float] = None
    tau2: Optional[float] = None

    def __post_init__(self):
        for name in ("psi2", "phi2", "q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ModelError(f"{name} must be finite and > 0, got {v}")
        for name in ("sigma2", "tau2"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ModelError(f"{name} must be >= 0, got {v}")

    @classmethod
    def from_components(cls, psi2: float, sigma2: float, tau2: float, q: float, A: int) -> "NuisanceParams":
        return cls(psi2=psi2, phi2=A * sigma2 + A * A * tau2, q=q, sigma2=sigma2, tau2=tau2)

    def survey_components(self, A: int) -> tuple[float, float]:
        """(sigma2, tau2); without an explicit split all variance is per-age."""
        if self.sigma2 is None or self.tau2 is None:
            return self.phi2 / A, 0.0
        return self.sigma2, self.tau2

    def validate(self, A: int) -> None:
        if self.sigma2 is None or self.tau2 is None:
            return
        expected = A * self.sigma2 + A * A * self.tau2
        if not math.isclose(self.phi2, expected, rel_tol=1e-12, abs_tol=1e-300):
            raise ModelError(f"phi2={self.phi2} != A*sigma2 + A^2*tau2 = {expected}")

    @property
    def log_q(self) -> float:
        return math.log(self.q)


@dataclass(frozen=True)
class ObservedData:
    Istar: np.ndarray
    Cstar: np.ndarray
    Jstar: np.ndarray = field(default=None)

    def __post_init__(self):
        I = np.array(self.Istar, dtype=float)
        C = np.array(self.Cstar, dtype=float)
        if I.ndim != 2 or C.shape != (I.shape[1],):
            raise ModelError("Istar must be A x T and Cstar length T")
        if np.any(~np.isfinite(I)) or np.any(I <= 0):
            raise ModelError("observed indices must be finite and > 0")
        if np.any(~np.isfinite(C)) or np.any(C <= 0):
            raise ModelError("observed catches must be finite and > 0")
        J = np.sum(np.log(I), axis=0)
        if self.Jstar is not None and not np.array_equal(np.asarray(self.Jstar, dtype=float), J):
            raise ModelError("Jstar must equal the column sums of log Istar")
        for arr in (I, C, J):
            arr.setflags(write=False)
        object.__setattr__(self, "Istar", I)
        object.__setattr__(self, "Cstar", C)
        object.__setattr__(self, "Jstar", J)

    @property
    def A(self) -> int:
        return self.Istar.shape[0]

    @property
    def T(self) -> int:
        return self.Istar.shape[1]


# --------------------------------------------------------------------------
# Forward simulation
# --------------------------------------------------------------------------

def catch_at_age(N, F, M, dynamics: Dynamics):
    """Deterministic per-age catch f1(N, F) (no process noise)."""
    if dynamics is Dynamics.POPE:
        return N * (-np.expm1(-F)) * np.exp(-M / 2.0)
    Z = F + M
    # F/Z * (1 - e^{-Z}) with the Z -> 0 limit equal to F
    ratio = np.where(Z > 0, -np.expm1(-Z) / np.where(Z > 0, Z, 1.0), 1.0)
    return F * N * ratio


def survivors(N, F, M, C, dynamics: Dynamics):
    """Deterministic f2: abundance carried into the next age and step."""
    if dynamics is Dynamics.POPE:
        return N * np.exp(-M) - C * np.exp(-M / 2.0)
    return N * np.exp(-(F + M))


def simulate_dynamics(config: ModelConfig, N_init, F, seed: int,
                      floor: float = ABUNDANCE_FLOOR) -> PopulationState:
    """Run the cohort recursion forward over ``config.T`` steps.

    Ages shift by one per step. Recruitment into age 1 is ``N_init[0]`` (times
    process noise); the oldest class is a plus group collecting survivors of the
    last two ages, so with ``A == 1`` the single class carries itself forward.
    """
    if config.dynamics is Dynamics.DIRECT:
        raise ModelError("simulate_dynamics needs pope or baranov dynamics")
    A, T = config.A, config.T
    N0 = _as_vector(N_init, A, "N_init")
    if np.any(~np.isfinite(N0)) or np.any(N0 <= 0):
        raise ModelError("N_init must be > 0")
    F = np.asarray(F, dtype=float)
    if F.shape != (A, T):
        raise ModelError(f"F must have shape {(A, T)}, got {F.shape}")
    if np.any(F < 0) or np.any(~np.isfinite(F)):
        raise ModelError("fishing mortality must be >= 0")

    rng = np.random.default_rng(seed)
    mu1 = rng.normal(0.0, 1.0, size=(A, T)) * config.mu1_sd
    mu2 = rng.normal(0.0, 1.0, size=(A, T)) * config.mu2_sd
    M = config.M
    N = np.empty((A, T))
    Cat = np.empty((A, T))
    N[:, 0] = N0
    for t in range(T):
        Cat[:, t] = catch_at_age(N[:, t], F[:, t], M, config.dynamics) * np.exp(mu1[:, t])
        if t == T - 1:
            break
        surv = survivors(N[:, t], F[:, t], M, Cat[:, t], config.dynamics)
        bad = np.flatnonzero(surv < floor)
        if bad.size:
            a = int(bad[0])
            raise DomainError(
                f"abundance fell below floor {floor:g} at age {a + 1}, step {t + 1} "
                f"(value {surv[a]:.6g}); check F and M"
            )
        nxt = np.empty(A)
        if A == 1:
            nxt[0] = surv[0]
        else:
            nxt[0] = N0[0]
            nxt[1:] = surv[:-1]
            nxt[-1] += surv[-1]
        N[:, t + 1] = nxt * np.exp(mu2[:, t])
    C = Cat.sum(axis=0)
    return PopulationState(N=N, F=F, C=C, Jtilde=jtilde_from(N, config.s))


def _check_config_matches(state: PopulationState, config: ModelConfig) -> None:
    if state.A != config.A:
        raise ModelError(f"state has {state.A} ages but config has A={config.A}")


def draw_survey(rng: np.random.Generator, log_I: np.ndarray, sigma2: float, tau2: float) -> np.ndarray:
    """Per-age noisy log indices: iid age noise plus a year effect shared across ages."""
    A, T = log_I.shape
    eps = rng.standard_normal((A, T)) * math.sqrt(sigma2)
    eta = rng.standard_normal(T) * math.sqrt(tau2)
    return log_I + eps + eta[None, :]


def observe_survey(state: PopulationState, params: NuisanceParams, config: ModelConfig,
                   seed) -> tuple[np.ndarray, np.ndarray]:
    """Simulate survey indices; returns ``(Istar, Jstar)``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    _check_config_matches(state, config)
    sigma2, tau2 = params.survey_components(config.A)
    if sigma2 < 0 or tau2 < 0:
        raise ModelError("survey variances must be >= 0")
    rng = np.random.default_rng(seed)
    I = params.q * config.s[:, None] * state.N
    noise = draw_survey(rng, np.zeros_like(I), sigma2, tau2)
    Istar = I * np.exp(noise)
    return Istar, np.sum(np.log(Istar), axis=0)


def observe_catch(state: PopulationState, psi2: float, seed, laurent: bool = True) -> np.ndarray:
    """Simulate observed catches ``C* = C exp(nu)``.

    ``laurent=False`` drops the ``-psi2/2`` mean shift (used to model the
    uncorrected channel and to test the bias it introduces).
    """
    if not (psi2 > 0 and math.isfinite(psi2)):
        raise ModelError(f"psi2 must be > 0, got {psi2}")
    if np.any(state.C <= 0):
        raise ModelError("true catches must be > 0 to be observed")
    rng = np.random.default_rng(seed)
    return state.C * np.exp(draw_catch_noise(rng, state.T, psi2, laurent))


def draw_catch_noise(rng: np.random.Generator, size, psi2: float, laurent: bool = True) -> np.ndarray:
    """Log-scale catch errors nu ~ N(-psi2/2, psi2), or N(0, psi2) without the correction."""
    shift = -psi2 / 2.0 if laurent else 0.0
    return shift + math.sqrt(psi2) * rng.standard_normal(size)


# --------------------------------------------------------------------------
# Likelihood
# --------------------------------------------------------------------------

def survey_loglik(Jstar, Jtilde, A: int, log_q: float, phi2: float) -> float:
    r = np.asarray(Jstar, dtype=float) - np.asarray(Jtilde, dtype=float) - A * log_q
    return float(-0.5 * r.size * (LOG_2PI + math.log(phi2)) - 0.5 * np.dot(r, r) / phi2)


def catch_loglik(Cstar, log_C, psi2: float, laurent: bool = True) -> float:
    """Lognormal density of ``C*`` (includes the ``-log C*`` Jacobian)."""
    log_Cstar = np.log(np.asarray(Cstar, dtype=float))
    e = log_Cstar - np.asarray(log_C, dtype=float) + (psi2 / 2.0 if laurent else 0.0)
    return float(-0.5 * e.size * (LOG_2PI + math.log(psi2)) - 0.5 * np.dot(e, e) / psi2
                 - np.sum(log_Cstar))


def log_likelihood(state: PopulationState, params: NuisanceParams, data: ObservedData,
                   config: ModelConfig, laurent: bool = True) -> float:
    _check_config_matches(state, config)
    if data.T != state.T or data.A != config.A:
        raise ModelError("data and state dimensions disagree")
    if np.any(state.C <= 0):
        raise ModelError("likelihood needs true catches > 0")
    return (survey_loglik(data.Jstar, state.Jtilde, config.A, params.log_q, params.phi2)
            + catch_loglik(data.Cstar, state.log_C, params.psi2, laurent))


def pack_theta(state: PopulationState, params: NuisanceParams) -> np.ndarray:
    return np.concatenate([[params.phi2, params.log_q], state.Jtilde, [params.psi2], state.log_C])


def unpack_theta(theta, T: int):
    """Split a packed vector into ``(phi2, log_q, Jtilde, psi2, log_C)``."""
    theta = np.asarray(theta, dtype=float)
    return theta[0], theta[1], theta[2:2 + T], theta[2 + T], theta[3 + T:3 + 2 * T]


def loglik_theta(theta, data: ObservedData, A: int, laurent: bool = True) -> float:
    """Log-likelihood as a function of the packed parameter vector."""
    phi2, log_q, J, psi2, log_C = unpack_theta(theta, data.T)
    if phi2 <= 0 or psi2 <= 0:
        return -math.inf
    return survey_loglik(data.Jstar, J, A, log_q, phi2) + catch_loglik(data.Cstar, log_C, psi2, laurent)


def score(state: PopulationState, params: NuisanceParams, data: ObservedData,
          config: ModelConfig, laurent: bool = True) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` in packed ordering."""
    A, T = config.A, state.T
    r = data.Jstar - state.Jtilde - A * params.log_q
    e = np.log(data.Cstar) - state.log_C + (params.psi2 / 2.0 if laurent else 0.0)
    phi2, psi2 = params.phi2, params.psi2
    g = np.empty(2 * T + 3)
    g[0] = -T / (2 * phi2) + np.dot(r, r) / (2 * phi2 ** 2)
    g[1] = A * r.sum() / phi2
    g[2:2 + T] = r / phi2
    dpsi = -T / (2 * psi2) + np.dot(e, e) / (2 * psi2 ** 2)
    if laurent:
        dpsi -= e.sum() / (2 * psi2)
    g[2 + T] = dpsi
    g[3 + T:] = e / psi2
    return g


@dataclass(frozen=True)
class ObservationModel:
    """Observation model with theta_I held fixed at ``state``."""

    config: ModelConfig
    state: PopulationState

    def __post_init__(self):
        _check_config_matches(self.state, self.config)

    @property
    def A(self) -> int:
        return self.config.A

    @property
    def T(self) -> int:
        return self.state.T

    def simulate(self, params: NuisanceParams, rng: np.random.Generator, laurent: bool = True) -> ObservedData:
        Istar, _ = observe_survey(self.state, params, self.config, rng)
        Cstar = observe_catch(self.state, params.psi2, rng, laurent=laurent)
        return ObservedData(Istar=Istar, Cstar=Cstar)

    def loglik(self, params: NuisanceParams, data: ObservedData, laurent: bool = True) -> float:
        return log_likelihood(self.state, params, data, self.config, laurent=laurent)


def default_model(A: int = 4, T: int = 10, C: float = 100.0, Jtilde: float = 0.0,
                  s: Optional[Sequence[float]] = None) -> ObservationModel:
    """Fixed-latent model with constant catches and summed log abundances."""
    config = ModelConfig(A=A, T=T, s=s, dynamics=Dynamics.DIRECT)
    state = PopulationState.direct(np.full(T, C), np.full(T, Jtilde), config.s)
    return ObservationModel(config, state)
