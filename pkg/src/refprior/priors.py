"""Priors on (psi2, phi2, q) and the full conditionals they induce.

Every prior here is a product of power laws, ``psi2^-a * phi2^-b * q^-c`` with
respect to ``d psi2 d phi2 d q``:

=========  =====  =====  ===
kind        a      b      c
=========  =====  =====  ===
reference  3/2    3/2    1
jeffreys   1      1      1
flat       0      0      0
=========  =====  =====  ===

A box truncation makes each factor proper with a closed-form normaliser.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .model import ModelConfig, ModelError, NuisanceParams, ObservedData, PopulationState

DEFAULT_BOX = ((1e-2, 1e2), (1e-2, 1e2), (1e-3, 1e3))


class PriorKind(str, enum.Enum):
    REFERENCE = "reference"
    JEFFREYS = "jeffreys"
    FLAT = "flat"


EXPONENTS = {
    PriorKind.REFERENCE: (1.5, 1.5, 1.0),
    PriorKind.JEFFREYS: (1.0, 1.0, 1.0),
    PriorKind.FLAT: (0.0, 0.0, 0.0),
}


class DegenerateConditional(ModelError):
    """A conditional posterior collapsed (e.g. inverse-gamma rate of zero)."""


def power_law_log_norm(p: float, lo: float, hi: float) -> float:
    """log of the integral of x^-p over [lo, hi]."""
    if p == 1.0:
        return math.log(math.log(hi / lo))
    k = 1.0 - p
    # (hi^k - lo^k)/k computed in log space
    a, b = k * math.log(hi), k * math.log(lo)
    if k > 0:
        return a + math.log(-math.expm1(b - a)) - math.log(k)
    return b + math.log(-math.expm1(a - b)) - math.log(-k)


def power_law_ppf(p: float, lo: float, hi: float, u):
    """Inverse CDF of the density proportional to x^-p on [lo, hi]."""
    u = np.asarray(u, dtype=float)
    if p == 1.0:
        return lo * (hi / lo) ** u
    k = 1.0 - p
    lk, hk = lo ** k, hi ** k
    return (lk + u * (hk - lk)) ** (1.0 / k)


@dataclass(frozen=True)
class PriorSpec:
    kind: PriorKind = PriorKind.REFERENCE
    box: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.box is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if len(box) != 3:
                raise ModelError("box needs three (lo, hi) pairs: psi2, phi2, q")
            for name, (lo, hi) in zip(("psi2", "phi2", "q"), box):
                if not (0 < lo < hi < math.inf):
                    raise ModelError(f"prior box for {name} needs 0 < lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, "box", box)

    @property
    def normalized(self) -> bool:
        return self.box is not None

    @property
    def exponents(self) -> tuple[float, float, float]:
        return EXPONENTS[self.kind]

    def log_normalizer(self) -> float:
        if self.box is None:
            raise ModelError("improper prior has no normaliser")
        return sum(power_law_log_norm(p, lo, hi) for p, (lo, hi) in zip(self.exponents, self.box))

    def bounds(self, i: int) -> tuple[float, float]:
        if self.box is None:
            return 0.0, math.inf
        return self.box[i]

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        """Exact inverse-CDF draws; columns are (psi2, phi2, q)."""
        if self.box is None:
            raise ModelError("cannot sample an improper prior")
        shape = (3,) if size is None else (size, 3)
        u = rng.random(shape)
        out = np.empty(shape)
        for i, (p, (lo, hi)) in enumerate(zip(self.exponents, self.box)):
            out[..., i] = np.clip(power_law_ppf(p, lo, hi, u[..., i]), lo, hi)
        return out

    def sample_params(self, rng: np.random.Generator) -> NuisanceParams:
        psi2, phi2, q = self.sample(rng)
        return NuisanceParams(psi2=float(psi2), phi2=float(phi2), q=float(q))


def log_prior(spec: PriorSpec, params: NuisanceParams) -> float:
    return log_prior_values(spec, params.psi2, params.phi2, params.q)


def log_prior_values(spec: PriorSpec, psi2, phi2, q):
    """Vectorised :func:`log_prior` over arrays of coordinates."""
    psi2, phi2, q = (np.asarray(v, dtype=float) for v in (psi2, phi2, q))
    a, b, c = spec.exponents
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -a * np.log(psi2) - b * np.log(phi2) - c * np.log(q)
    ok = (psi2 > 0) & (phi2 > 0) & (q > 0)
    if spec.box is not None:
        for v, (lo, hi) in zip((psi2, phi2, q), spec.box):
            ok &= (v >= lo) & (v <= hi)
        out = out - spec.log_normalizer()
    out = np.where(ok, out, -np.inf)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Conditionals
# --------------------------------------------------------------------------

class Family(str, enum.Enum):
    NORMAL = "normal"
    INVERSE_GAMMA = "inverse_gamma"
    NON_CONJUGATE = "non_conjugate"


@dataclass(frozen=True)
class ConditionalPosterior:
    """A full conditional. ``lower``/``upper`` bound its support (prior truncation).

    Normal: ``mean``, ``var`` (over log q). InverseGamma: ``shape``, ``rate``.
    NonConjugate: ``logpdf`` callable, unnormalised.
    """

    family: Family
    mean: float = math.nan
    var: float = math.nan
    shape: float = math.nan
    rate: float = math.nan
    logpdf: Optional[Callable[[float], float]] = None
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.family is Family.NORMAL and not self.var > 0:
            raise ModelError("normal conditional needs var > 0")
        if self.family is Family.INVERSE_GAMMA:
            if not self.shape > 0:
                raise ModelError(f"inverse-gamma shape must be > 0, got {self.shape}")
            if not self.rate > 0:
                raise DegenerateConditional(f"inverse-gamma rate must be > 0, got {self.rate}")

    def dist(self):
        if self.family is Family.NORMAL:
            return stats.norm(self.mean, math.sqrt(self.var))
        if self.family is Family.INVERSE_GAMMA:
            return stats.invgamma(self.shape, scale=self.rate)
        raise ModelError("non-conjugate conditional has no frozen distribution")

    def _raw_draw(self, rng: np.random.Generator) -> float:
        if self.family is Family.NORMAL:
            return self.mean + math.sqrt(self.var) * rng.standard_normal()
        return self.rate / rng.gamma(self.shape)

    def sample(self, rng: np.random.Generator, max_rejections: int = 8) -> float:
        """Exact draw; truncation is handled by rejection, then by inverse CDF."""
        if self.family is Family.NON_CONJUGATE:
            raise ModelError("sample non-conjugate conditionals with a slice sampler")
        for _ in range(max_rejections):
            x = self._raw_draw(rng)
            if self.lower <= x <= self.upper:
                return x
        return truncated_draw(self.dist(), self.lower, self.upper, rng)


def truncated_draw(dist, lo: float, hi: float, rng: np.random.Generator) -> float:
    """Inverse-CDF draw restricted to [lo, hi]; works from whichever tail keeps precision."""
    u = rng.random()
    median = dist.median()
    if hi <= median:
        a, b = dist.logcdf(lo), dist.logcdf(hi)
        # log(F(lo) + u (F(hi) - F(lo)))
        lp = b + math.log(u + (1 - u) * math.exp(a - b)) if b > -math.inf else -math.inf
        x = dist.ppf(math.exp(lp)) if lp > -700 else _bisect(dist.logcdf, lp, lo, hi)
    elif lo >= median:
        a, b = dist.logsf(lo), dist.logsf(hi)
        lp = a + math.log(u + (1 - u) * math.exp(b - a)) if a > -math.inf else -math.inf
        x = dist.isf(math.exp(lp)) if lp > -700 else _bisect(lambda v: -dist.logsf(v), -lp, lo, hi)
    else:
        Fa, Fb = dist.cdf(lo), dist.cdf(hi)
        x = dist.ppf(Fa + u * (Fb - Fa))
    return float(min(max(x, lo), hi))


def _bisect(f, target, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_dims(state: PopulationState, data: ObservedData, config: ModelConfig):
    if data.T != state.T or state.A != config.A or data.A != config.A:
        raise ModelError("state, data and config dimensions disagree")
    if state.T < 1:
        raise ModelError("need T >= 1")


def logq_from_stats(y, A: int, phi2: float, spec: PriorSpec) -> ConditionalPosterior:
    """Conditional of log q given survey offsets ``y_t = J*_t - Jtilde_t``."""
    T = len(y)
    var = phi2 / (A * A * T)
    mean = float(np.sum(y)) / (A * T)
    # q^-c dq = exp((1 - c) log q) d log q shifts the Gaussian mean
    mean += (1.0 - spec.exponents[2]) * var
    lo, hi = spec.bounds(2)
    return ConditionalPosterior(Family.NORMAL, mean=mean, var=var,
                                lower=math.log(lo) if lo > 0 else -math.inf, upper=math.log(hi))


def phi2_from_stats(ss: float, T: int, spec: PriorSpec) -> ConditionalPosterior:
    """Conditional of phi2 given the residual sum of squares ``ss``."""
    shape = T / 2.0 + spec.exponents[1] - 1.0
    lo, hi = spec.bounds(1)
    if ss <= 0:
        raise DegenerateConditional("all survey residuals are zero; phi2 conditional is degenerate")
    return ConditionalPosterior(Family.INVERSE_GAMMA, shape=shape, rate=0.5 * ss, lower=lo, upper=hi)


def psi2_exact_logpdf(d, spec: PriorSpec) -> Callable[[float], float]:
    """Unnormalised log density of psi2 given catch log-ratios ``d``, Laurent shift included."""
    d = np.asarray(d, dtype=float)
    T = d.size
    sum_d, sum_d2 = float(d.sum()), float(d @ d)
    power = T / 2.0 + spec.exponents[0]
    lo, hi = spec.bounds(0)

    def logpdf(psi2: float) -> float:
        if not (lo <= psi2 <= hi) or psi2 <= 0:
            return -math.inf
        # sum (d + psi2/2)^2 / (2 psi2) expanded
        return (-power * math.log(psi2) - sum_d2 / (2.0 * psi2) - sum_d / 2.0 - T * psi2 / 8.0)

    return logpdf


def psi2_from_stats(d, spec: PriorSpec, exact: bool = True) -> ConditionalPosterior:
    d = np.asarray(d, dtype=float)
    lo, hi = spec.bounds(0)
    if exact:
        return ConditionalPosterior(Family.NON_CONJUGATE, logpdf=psi2_exact_logpdf(d, spec),
                                    lower=lo, upper=hi)
    ss = float(d @ d)
    if ss <= 0:
        raise DegenerateConditional("all catch residuals are zero; psi2 conditional is degenerate")
    shape = d.size / 2.0 + spec.exponents[0] - 1.0
    return ConditionalPosterior(Family.INVERSE_GAMMA, shape=shape, rate=0.5 * ss, lower=lo, upper=hi)


def logq_conditional(state: PopulationState, data: ObservedData, params: NuisanceParams,
                     config: ModelConfig, prior: PriorSpec = PriorSpec()) -> ConditionalPosterior:
    """Normal conditional of log q. Its variance is ``phi2 / (A^2 T)``."""
    _check_dims(state, data, config)
    return logq_from_stats(data.Jstar - state.Jtilde, config.A, params.phi2, prior)


def phi2_conditional(state: PopulationState, data: ObservedData, params: NuisanceParams,
                     config: ModelConfig, prior: PriorSpec = PriorSpec()) -> ConditionalPosterior:
    """Inverse-gamma conditional of phi2; shape (T+1)/2 under the reference prior."""
    _check_dims(state, data, config)
    r = data.Jstar - config.A * params.log_q - state.Jtilde
    return phi2_from_stats(float(r @ r), state.T, prior)


def psi2_conditional(state: PopulationState, data: ObservedData, params: NuisanceParams,
                     config: ModelConfig, prior: PriorSpec = PriorSpec(),
                     exact: bool = True) -> ConditionalPosterior:
    """psi2 conditional: exact non-conjugate form, or the inverse-gamma obtained
    by dropping the -psi2/2 shift (``exact=False``)."""
    _check_dims(state, data, config)
    return psi2_from_stats(np.log(data.Cstar) - state.log_C, prior, exact=exact)


def inverse_gamma_logpdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    return shape * math.log(rate) - special.gammaln(shape) - (shape + 1) * np.log(x) - rate / x
