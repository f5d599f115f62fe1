"""Within-Gibbs sampler over (psi2, phi2, q), optionally with latent abundances.

NuisanceOnly mode treats theta_I as known and alternates exact draws of
``log q``, ``phi2`` and ``psi2``. ``psi2`` is either drawn from its exact
non-conjugate conditional by slice sampling on ``log psi2`` or, in conjugate
mode, from the inverse-gamma obtained by dropping the catch mean shift (exact for
data generated without that shift).

Full mode adds single-site random-walk Metropolis updates of every
``log N[a, t]`` and ``log F[a, t]``; proposal scales adapt during burn-in only.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    Dynamics,
    ModelConfig,
    ModelError,
    NuisanceParams,
    ObservedData,
    PopulationState,
    catch_at_age,
    jtilde_from,
    survivors,
)
from .priors import (
    ConditionalPosterior,
    PriorSpec,
    logq_from_stats,
    phi2_from_stats,
    psi2_exact_logpdf,
    psi2_from_stats,
)

log = logging.getLogger(__name__)


class SamplerMode(str, enum.Enum):
    NUISANCE_ONLY = "nuisance"
    FULL = "full"


class Psi2Mode(str, enum.Enum):
    EXACT = "exact"
    CONJUGATE = "conjugate"


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 2000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    mode: SamplerMode = SamplerMode.NUISANCE_ONLY
    latent_step_sd: float = 0.1
    psi2_mode: Psi2Mode = Psi2Mode.EXACT
    latent_prior_sd: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplerMode(self.mode))
        object.__setattr__(self, "psi2_mode", Psi2Mode(self.psi2_mode))
        if self.iterations < 1 or self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ModelError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ModelError("thin must be >= 1")
        if not self.latent_step_sd > 0 or not self.latent_prior_sd > 0:
            raise ModelError("latent_step_sd and latent_prior_sd must be > 0")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    @property
    def laurent(self) -> bool:
        return self.psi2_mode is Psi2Mode.EXACT


# --------------------------------------------------------------------------
# Slice sampling
# --------------------------------------------------------------------------

def slice_sample(x0: float, logpdf, rng: np.random.Generator, width: float = 1.0,
                 max_doublings: int = 60, f0: Optional[float] = None) -> float:
    """One univariate slice-sampling update with the doubling procedure and the
    matching acceptance test, so the update is reversible."""
    if f0 is None:
        f0 = logpdf(x0)
    if not math.isfinite(f0):
        raise SamplerError(f"slice sampler started at a point of zero density ({x0})")
    y = f0 - rng.exponential()
    L = x0 - width * rng.random()
    R = L + width
    fL, fR = logpdf(L), logpdf(R)
    k = max_doublings
    while k > 0 and (y < fL or y < fR):
        if rng.random() < 0.5:
            L -= R - L
            fL = logpdf(L)
        else:
            R += R - L
            fR = logpdf(R)
        k -= 1

    lo, hi = L, R
    while True:
        x1 = lo + rng.random() * (hi - lo)
        if y < logpdf(x1) and _doubling_accepts(x0, x1, y, width, L, R, logpdf):
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
        if hi - lo < 1e-14 * max(1.0, abs(x0)):
            return x0


def _doubling_accepts(x0, x1, y, width, L, R, logpdf) -> bool:
    differ = False
    while R - L > 1.1 * width:
        mid = 0.5 * (L + R)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            R = mid
        else:
            L = mid
        if differ and y >= logpdf(L) and y >= logpdf(R):
            return False
    return True


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acov[0] == 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS via Geyer's initial monotone positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if not np.any(rho):
        return float(n)
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    tau = -1.0
    prev = math.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        tau += 2.0 * g
        prev = g
    tau = max(tau, 1.0 / math.log10(n))
    return float(n / tau)


# --------------------------------------------------------------------------
# Latent block (Full mode)
# --------------------------------------------------------------------------

class LatentBlock:
    """Random-walk Metropolis over log abundances and log fishing mortalities.

    Prior on theta_I: cells without a predecessor (the first step, and recruits
    when ``A > 1``) and every ``log F`` are Normal around the starting state with
    sd ``latent_prior_sd``; every other ``log N`` is Normal around the
    deterministic survivors with sd ``config.mu2_sd``. Catch process noise is
    not modelled here, so ``C_t`` is the deterministic sum of per-age catches.
    """

    target_rate = 0.44

    def __init__(self, config: ModelConfig, start: PopulationState, step_sd: float, prior_sd: float):
        if config.dynamics is Dynamics.DIRECT:
            raise ModelError("full mode needs pope or baranov dynamics")
        if not config.mu2_sd > 0:
            raise ModelError("full mode needs mu2_sd > 0")
        if np.any(start.F <= 0):
            raise ModelError("full mode needs F > 0 everywhere in the starting state")
        self.config = config
        self.A, self.T = start.A, start.T
        self.logN = np.log(start.N).copy()
        self.logF = np.log(start.F).copy()
        self.center_N = self.logN.copy()
        self.center_F = self.logF.copy()
        self.prior_sd = prior_sd
        self.free = np.zeros((self.A, self.T), dtype=bool)
        self.free[:, 0] = True
        if self.A > 1:
            self.free[0, :] = True
        shape = (2, self.A, self.T)
        self.step = np.full(shape, float(step_sd))
        self.accepted = np.zeros(shape)
        self.proposed = np.zeros(shape)
        self._batch_acc = np.zeros(shape)
        self._batch_n = 0
        self.logs = np.log(config.s)

    # derived theta_I
    def catches(self, logN=None, logF=None) -> np.ndarray:
        logN = self.logN if logN is None else logN
        logF = self.logF if logF is None else logF
        Cat = catch_at_age(np.exp(logN), np.exp(logF), self.config.M[:, None], self.config.dynamics)
        return Cat.sum(axis=0)

    def jtilde(self, logN=None) -> np.ndarray:
        logN = self.logN if logN is None else logN
        return np.sum(self.logs[:, None] + logN, axis=0)

    def state(self) -> PopulationState:
        N, F = np.exp(self.logN), np.exp(self.logF)
        return PopulationState(N=N, F=F, C=self.catches(), Jtilde=jtilde_from(N, self.config.s))

    def log_prior(self, logN, logF) -> float:
        cfg = self.config
        N, F = np.exp(logN), np.exp(logF)
        M = cfg.M[:, None]
        Cat = catch_at_age(N, F, M, cfg.dynamics)
        surv = survivors(N, F, M, Cat, cfg.dynamics)[:, :-1]
        if np.any(surv <= 0):
            return -math.inf
        if self.A == 1:
            expected = surv
        else:
            expected = np.empty((self.A, self.T - 1))
            expected[1:] = surv[:-1]
            expected[-1] += surv[-1]
            expected = expected[1:]
        mean = np.log(expected)
        tgt = logN[:, 1:] if self.A == 1 else logN[1:, 1:]
        z = (tgt - mean) / cfg.mu2_sd
        lp = -0.5 * float(np.sum(z * z))
        zf = (logN[self.free] - self.center_N[self.free]) / self.prior_sd
        zF = (logF - self.center_F) / self.prior_sd
        return lp - 0.5 * float(zf @ zf) - 0.5 * float(np.sum(zF * zF))

    def log_target(self, logN, logF, params: NuisanceParams, y_star, log_Cstar, laurent) -> float:
        lp = self.log_prior(logN, logF)
        if lp == -math.inf:
            return lp
        C = self.catches(logN, logF)
        if np.any(C <= 0):
            return -math.inf
        r = y_star - self.A * math.log(params.q) - self.jtilde(logN)
        e = log_Cstar - np.log(C) + (params.psi2 / 2.0 if laurent else 0.0)
        return lp - 0.5 * float(r @ r) / params.phi2 - 0.5 * float(e @ e) / params.psi2

    def sweep(self, params: NuisanceParams, data: ObservedData, rng: np.random.Generator,
              laurent: bool) -> None:
        y_star = data.Jstar
        log_Cstar = np.log(data.Cstar)
        arrays = (self.logN, self.logF)
        current = self.log_target(self.logN, self.logF, params, y_star, log_Cstar, laurent)
        for k in range(2):
            arr = arrays[k]
            for a in range(self.A):
                for t in range(self.T):
                    old = arr[a, t]
                    arr[a, t] = old + self.step[k, a, t] * rng.standard_normal()
                    prop = self.log_target(self.logN, self.logF, params, y_star, log_Cstar, laurent)
                    self.proposed[k, a, t] += 1
                    if math.log(rng.random()) < prop - current:
                        current = prop
                        self.accepted[k, a, t] += 1
                        self._batch_acc[k, a, t] += 1
                    else:
                        arr[a, t] = old
        self._batch_n += 1

    def adapt(self, iteration: int, batch: int = 25) -> None:
        if self._batch_n < batch:
            return
        rate = self._batch_acc / self._batch_n
        delta = min(0.5, 1.0 / math.sqrt(iteration / batch + 1))
        self.step *= np.exp(np.where(rate > self.target_rate, delta, -delta))
        self._batch_acc[:] = 0
        self._batch_n = 0

    def reset_counts(self) -> None:
        self.accepted[:] = 0
        self.proposed[:] = 0

    def acceptance(self) -> dict:
        out = {}
        for k, name in enumerate(("logN", "logF")):
            n = self.proposed[k].sum()
            out[name] = float(self.accepted[k].sum() / n) if n else math.nan
        return out


# --------------------------------------------------------------------------
# Gibbs step and chains
# --------------------------------------------------------------------------

def _survey_offsets(data: ObservedData, state: PopulationState) -> np.ndarray:
    return data.Jstar - state.Jtilde


def nuisance_update(params: NuisanceParams, y, d, A: int, prior: PriorSpec,
                    rng: np.random.Generator, psi2_mode: Psi2Mode = Psi2Mode.EXACT) -> NuisanceParams:
    """One sweep over (log q, phi2, psi2) given survey offsets ``y = J* - Jtilde``
    and catch log-ratios ``d = log C* - log C``."""
    T = len(y)
    logq = logq_conditional_draw(y, A, params.phi2, prior, rng)
    r = y - A * logq
    phi2 = phi2_from_stats(float(r @ r), T, prior).sample(rng)
    if Psi2Mode(psi2_mode) is Psi2Mode.EXACT:
        psi2 = _slice_psi2(params.psi2, d, prior, rng)
    else:
        psi2 = psi2_from_stats(d, prior, exact=False).sample(rng)
    return NuisanceParams(psi2=psi2, phi2=phi2, q=math.exp(logq))


def logq_conditional_draw(y, A, phi2, prior, rng) -> float:
    return logq_from_stats(y, A, phi2, prior).sample(rng)


def _slice_psi2(psi2: float, d, prior: PriorSpec, rng) -> float:
    g = psi2_exact_logpdf(d, prior)

    def on_log_scale(v: float) -> float:
        if v > 700 or v < -700:
            return -math.inf
        return g(math.exp(v)) + v

    return math.exp(slice_sample(math.log(psi2), on_log_scale, rng, width=1.0, max_doublings=60))


def gibbs_step(params: NuisanceParams, state: PopulationState, data: ObservedData,
               config: ModelConfig, prior: PriorSpec, rng: np.random.Generator,
               psi2_mode: Psi2Mode = Psi2Mode.EXACT,
               latent: Optional[LatentBlock] = None):
    """Draw log q, then phi2, then psi2; with ``latent`` also sweep theta_I.

    Returns ``(params, state)``.
    """
    if latent is not None:
        latent.sweep(params, data, rng, laurent=Psi2Mode(psi2_mode) is Psi2Mode.EXACT)
        state = latent.state()
    y = _survey_offsets(data, state)
    d = np.log(data.Cstar) - state.log_C
    params = nuisance_update(params, y, d, config.A, prior, rng, psi2_mode)
    return params, state


@dataclass
class Chain:
    psi2: np.ndarray
    phi2: np.ndarray
    q: np.ndarray
    acceptance_rates: dict
    seed: int
    logC: Optional[np.ndarray] = None
    Jtilde: Optional[np.ndarray] = None
    iterations: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.psi2.size

    @property
    def samples(self) -> list[NuisanceParams]:
        return [NuisanceParams(float(a), float(b), float(c)) for a, b, c in zip(self.psi2, self.phi2, self.q)]

    def column(self, name: str) -> np.ndarray:
        if name == "logq":
            return np.log(self.q)
        return getattr(self, name)

    def summary(self) -> dict:
        out = {}
        for name in ("psi2", "phi2", "q", "logq"):
            x = self.column(name)
            q025, q50, q975 = np.quantile(x, [0.025, 0.5, 0.975])
            out[name] = {
                "mean": float(x.mean()),
                "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
                "q2.5": float(q025),
                "q50": float(q50),
                "q97.5": float(q975),
                "ess": effective_sample_size(x),
            }
        out["n_samples"] = len(self)
        out["seed"] = self.seed
        out["acceptance_rates"] = self.acceptance_rates
        return out


def run_chain(config: SamplerConfig, data: ObservedData, model_config: ModelConfig,
              state: PopulationState, prior: PriorSpec,
              init: Optional[NuisanceParams] = None) -> Chain:
    """Run ``config.iterations`` Gibbs steps, drop burn-in, thin.

    ``state`` is the known theta_I in NuisanceOnly mode and the starting point
    in Full mode.
    """
    if config.mode is SamplerMode.FULL and prior.box is None:
        # free latent catches can absorb the catch noise, so psi2 -> 0 is unbounded
        raise ModelError("full mode requires proper (truncated) prior")
    rng = np.random.default_rng(config.seed)
    if init is None:
        init = _default_init(data, state, model_config, prior)
    params = init
    latent = None
    if config.mode is SamplerMode.FULL:
        latent = LatentBlock(model_config, state, config.latent_step_sd, config.latent_prior_sd)
    n = config.n_kept
    psi2 = np.empty(n)
    phi2 = np.empty(n)
    q = np.empty(n)
    logC = np.empty((n, state.T)) if latent else None
    Jt = np.empty((n, state.T)) if latent else None
    kept = []
    j = 0
    for it in range(config.iterations):
        if latent is not None and it == config.burn_in:
            latent.reset_counts()
        params, state = gibbs_step(params, state, data, model_config, prior, rng,
                                   config.psi2_mode, latent)
        if not all(math.isfinite(v) for v in (params.psi2, params.phi2, params.q)):
            raise SamplerError(f"non-finite state at iteration {it}")
        if latent is not None and it < config.burn_in:
            latent.adapt(it + 1)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            psi2[j], phi2[j], q[j] = params.psi2, params.phi2, params.q
            if latent is not None:
                logC[j] = state.log_C
                Jt[j] = state.Jtilde
            kept.append(it)
            j += 1
    rates = {"logq": 1.0, "phi2": 1.0, "psi2": 1.0}
    if latent is not None:
        rates.update(latent.acceptance())
    return Chain(psi2=psi2, phi2=phi2, q=q, acceptance_rates=rates, seed=config.seed,
                 logC=logC, Jtilde=Jt, iterations=kept)


def _default_init(data: ObservedData, state: PopulationState, config: ModelConfig,
                  prior: PriorSpec) -> NuisanceParams:
    """Moment-based starting point, clipped into the prior box."""
    A, T = config.A, state.T
    y = data.Jstar - state.Jtilde
    logq = float(np.mean(y)) / A
    phi2 = max(float(np.var(y)), 1e-6)
    d = np.log(data.Cstar) - state.log_C
    psi2 = max(float(np.mean(d * d)), 1e-6)
    vals = [psi2, phi2, math.exp(logq)]
    if prior.box is not None:
        vals = [min(max(v, lo), hi) for v, (lo, hi) in zip(vals, prior.box)]
    return NuisanceParams(psi2=vals[0], phi2=vals[1], q=vals[2])
