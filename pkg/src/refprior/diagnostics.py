"""Sampler correctness checks: Geweke joint-distribution test and simulation-based calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import partial

import numpy as np
from scipy import stats

from .gibbs import Psi2Mode, SamplerConfig, nuisance_update, run_chain
from .model import ModelError, NuisanceParams, ObservationModel
from .parallel import pmap
from .priors import PriorSpec

GEWEKE_STATISTICS = (
    "log_psi2",
    "log_phi2",
    "log_q",
    "logq_resid",
    "logq_resid_sq",
    "survey_ss_ratio",
    "catch_ss_ratio",
    "mean_catch_logratio",
)


def _require_proper(prior: PriorSpec, what: str) -> None:
    if prior.box is None:
        raise ModelError(f"{what} requires proper (truncated) prior")


def joint_statistics(params: NuisanceParams, y, d, A: int, laurent: bool) -> np.ndarray:
    """Functions of (theta, data) tracked by the Geweke test."""
    T = len(y)
    logq = math.log(params.q)
    resid = (float(np.mean(y)) / A - logq) * A * math.sqrt(T / params.phi2)
    r = y - A * logq
    e = d + (params.psi2 / 2.0 if laurent else 0.0)
    return np.array([
        math.log(params.psi2),
        math.log(params.phi2),
        logq,
        resid,
        resid * resid,
        float(r @ r) / (T * params.phi2),
        float(e @ e) / (T * params.psi2),
        float(np.mean(d)),
    ])


@dataclass(frozen=True)
class GewekeReport:
    names: tuple
    z: np.ndarray
    mean_marginal: np.ndarray
    mean_successive: np.ndarray
    n_cycles: int
    chain_length: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def rows(self):
        for name, z, a, b in zip(self.names, self.z, self.mean_marginal, self.mean_successive):
            yield name, float(a), float(b), float(z)


def _offsets(model: ObservationModel, params, rng, laurent):
    data = model.simulate(params, rng, laurent=laurent)
    return data.Jstar - model.state.Jtilde, np.log(data.Cstar) - model.state.log_C


def _geweke_pair(seed_seq, model, prior, chain_length, psi2_mode, laurent, update):
    rng = np.random.default_rng(seed_seq)
    theta = prior.sample_params(rng)
    y, d = _offsets(model, theta, rng, laurent)
    g_marginal = joint_statistics(theta, y, d, model.A, laurent)
    for _ in range(chain_length):
        theta = update(theta, y, d, model.A, prior, rng, psi2_mode)
        y, d = _offsets(model, theta, rng, laurent)
    return g_marginal, joint_statistics(theta, y, d, model.A, laurent)


def geweke_joint_test(model: ObservationModel, prior: PriorSpec, n_cycles: int,
                      chain_length: int = 5, psi2_mode: Psi2Mode = Psi2Mode.EXACT,
                      seed: int = 0, update=None) -> GewekeReport:
    """Compare the marginal-conditional and successive-conditional simulators.

    Each of the ``n_cycles`` marginal draws ``(theta, X)`` also seeds a short
    successive-conditional chain (``chain_length`` rounds of a Gibbs sweep on
    theta followed by a fresh ``X ~ f(. | theta)``). A correct sampler leaves the
    joint law unchanged, so the paired differences of every statistic have mean
    zero; z-scores use the paired standard error. With ``chain_length=0`` both
    simulators coincide and every z is 0.

    ``update`` replaces the sweep (for sensitivity experiments).
    """
    _require_proper(prior, "geweke test")
    psi2_mode = Psi2Mode(psi2_mode)
    laurent = psi2_mode is Psi2Mode.EXACT
    update = nuisance_update if update is None else update
    seeds = np.random.SeedSequence(seed).spawn(n_cycles)
    fn = partial(_geweke_pair, model=model, prior=prior, chain_length=chain_length,
                 psi2_mode=psi2_mode, laurent=laurent, update=update)
    pairs = pmap(fn, seeds)
    g_m = np.array([p[0] for p in pairs])
    g_s = np.array([p[1] for p in pairs])
    diff = g_s - g_m
    se = diff.std(axis=0, ddof=1) / math.sqrt(n_cycles)
    mean = diff.mean(axis=0)
    z = np.divide(mean, se, out=np.zeros_like(mean), where=se > 0)
    return GewekeReport(GEWEKE_STATISTICS, z, g_m.mean(axis=0), g_s.mean(axis=0),
                        n_cycles, chain_length)


# --------------------------------------------------------------------------
# Simulation-based calibration
# --------------------------------------------------------------------------

SBC_COMPONENTS = ("psi2", "phi2", "q")


def rank_statistic(truth: float, draws) -> int:
    """Number of posterior draws strictly below the true value."""
    return int(np.sum(np.asarray(draws) < truth))


def rank_histogram(ranks, n_draws: int, n_bins: int) -> np.ndarray:
    """Bin ranks in ``0..n_draws`` into ``n_bins`` equal groups."""
    ranks = np.asarray(ranks)
    if (n_draws + 1) % n_bins:
        raise ModelError(f"n_draws + 1 = {n_draws + 1} is not divisible by n_bins = {n_bins}")
    return np.bincount(ranks * n_bins // (n_draws + 1), minlength=n_bins)


@dataclass(frozen=True)
class SBCReport:
    ranks: dict
    counts: dict
    chi2: dict
    p_values: dict
    n_replicates: int
    n_draws: int
    n_bins: int


def _sbc_replicate(seed_seq, model, prior, sampler_prior, sampler, n_draws, laurent):
    rng = np.random.default_rng(seed_seq)
    theta = prior.sample_params(rng)
    data = model.simulate(theta, rng, laurent=laurent)
    chain_seed = int(rng.integers(2 ** 63))
    iterations = sampler.burn_in + n_draws * sampler.thin
    cfg = replace(sampler, iterations=iterations, seed=chain_seed)
    init = sampler_prior.sample_params(rng)
    chain = run_chain(cfg, data, model.config, model.state, sampler_prior, init=init)
    return tuple(rank_statistic(getattr(theta, c), chain.column(c)) for c in SBC_COMPONENTS)


def sbc(model: ObservationModel, prior: PriorSpec, sampler: SamplerConfig, n_replicates: int,
        n_posterior_draws: int = 99, n_bins: int = 20, seed: int = 0,
        sampler_prior: PriorSpec = None) -> SBCReport:
    """Rank of each prior-drawn truth among its posterior draws, per component.

    Data are generated from the sampler's own likelihood: with the Laurent shift
    in exact psi2 mode, without it in conjugate mode. ``sampler_prior`` (default
    ``prior``) lets the sampler assume a different prior than the simulator.
    """
    _require_proper(prior, "sbc")
    sampler_prior = prior if sampler_prior is None else sampler_prior
    _require_proper(sampler_prior, "sbc")
    if sampler.mode.value != "nuisance":
        raise ModelError("sbc runs the nuisance-only sampler")
    laurent = sampler.psi2_mode is Psi2Mode.EXACT
    seeds = np.random.SeedSequence(seed).spawn(n_replicates)
    fn = partial(_sbc_replicate, model=model, prior=prior, sampler_prior=sampler_prior,
                 sampler=sampler, n_draws=n_posterior_draws, laurent=laurent)
    rows = np.array(pmap(fn, seeds), dtype=int)
    ranks, counts, chi2, pvals = {}, {}, {}, {}
    for j, name in enumerate(SBC_COMPONENTS):
        ranks[name] = rows[:, j]
        counts[name] = rank_histogram(rows[:, j], n_posterior_draws, n_bins)
        res = stats.chisquare(counts[name])
        chi2[name] = float(res.statistic)
        pvals[name] = float(res.pvalue)
    return SBCReport(ranks, counts, chi2, pvals, n_replicates, n_posterior_draws, n_bins)
