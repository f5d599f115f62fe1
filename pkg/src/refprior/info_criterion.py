"""Monte Carlo estimate of the expected posterior-to-prior KL divergence.

For a proper prior on (psi2, phi2, q) and known theta_I, each outer replicate
draws theta from the prior, simulates data, normalises likelihood x prior on a
log-spaced lattice and evaluates KL(posterior || prior) by quadrature. The
average over replicates estimates the mutual information between theta_N and
the data, which the reference prior maximises asymptotically.

Priors and likelihood both factor into a psi2 part and a (phi2, q) part, so the
lattice posterior factors too and its KL is the sum of the two factor KLs. The
computation below uses that factorisation; it is the same quadrature as on the
full 3-D lattice.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import ModelError, ObservationModel, default_model
from .parallel import pmap
from .priors import PriorKind, PriorSpec

MI_BOX = ((0.1, 10.0), (0.1, 10.0), (0.1, 10.0))
DEFAULT_GRID = (64, 64, 512)


@dataclass(frozen=True)
class MIEstimate:
    value: float
    std_error: float
    n_outer: int
    n_inner: int
    grid_spec: str
    boundary_warning: bool = False
    boundary_mass: float = 0.0
    per_replicate: np.ndarray = field(default=None, repr=False, compare=False)


def log_lattice(lo: float, hi: float, n: int) -> np.ndarray:
    """Geometric midpoints of ``n`` equal cells in log coordinates."""
    edges = np.geomspace(lo, hi, n + 1)
    return np.sqrt(edges[:-1] * edges[1:])


def lattice_log_mass(nodes: np.ndarray, p: float) -> np.ndarray:
    """Normalised log prior mass per cell for a density proportional to x^-p.

    Midpoint rule on the log scale: mass ~ x^-p * x * dlogx with constant dlogx.
    """
    lm = (1.0 - p) * np.log(nodes)
    return lm - logsumexp(lm)


def _kl(log_post: np.ndarray, log_prior: np.ndarray) -> float:
    w = np.exp(log_post)
    return float(np.sum(w * (log_post - log_prior)))


def _normalise(a: np.ndarray) -> np.ndarray:
    return a - logsumexp(a)


def _boundary_mass_1d(log_w: np.ndarray) -> float:
    if log_w.size <= 2:
        return 1.0
    return float(np.exp(log_w[0]) + np.exp(log_w[-1]))


def _boundary_mass_2d(log_w: np.ndarray) -> float:
    if min(log_w.shape) <= 2:
        return 1.0
    w = np.exp(log_w)
    return float(1.0 - w[1:-1, 1:-1].sum())


class _Lattice:
    def __init__(self, prior: PriorSpec, grid):
        n_psi, n_phi, n_q = grid
        (a, b, c) = prior.exponents
        box = prior.box
        self.psi = log_lattice(*box[0], n_psi)
        self.phi = log_lattice(*box[1], n_phi)
        self.q = log_lattice(*box[2], n_q)
        self.lp_psi = lattice_log_mass(self.psi, a)
        self.lp_phi = lattice_log_mass(self.phi, b)
        self.lp_q = lattice_log_mass(self.q, c)
        self.lp_surv = self.lp_phi[:, None] + self.lp_q[None, :]
        self.log_psi = np.log(self.psi)
        self.log_phi = np.log(self.phi)
        self.log_qn = np.log(self.q)


def replicate_kl(lat: _Lattice, y, d, A: int, laurent: bool = True):
    """KL(posterior || prior) on the lattice for one dataset; returns (kl, boundary_mass)."""
    T = len(y)
    u = lat.psi
    sum_d, sum_d2 = float(np.sum(d)), float(np.dot(d, d))
    if laurent:
        ss_c = sum_d2 + u * sum_d + T * u * u / 4.0
    else:
        ss_c = np.full_like(u, sum_d2)
    ll_psi = -0.5 * T * lat.log_psi - ss_c / (2.0 * u)
    post_psi = _normalise(lat.lp_psi + ll_psi)

    sy, syy = float(np.sum(y)), float(np.dot(y, y))
    lq = lat.log_qn
    ss_s = syy - 2.0 * A * lq * sy + T * A * A * lq * lq
    ll_surv = -0.5 * T * lat.log_phi[:, None] - ss_s[None, :] / (2.0 * lat.phi[:, None])
    post_surv = _normalise(lat.lp_surv + ll_surv)

    kl = _kl(post_psi, lat.lp_psi) + _kl(post_surv, lat.lp_surv)
    b1, b2 = _boundary_mass_1d(post_psi), _boundary_mass_2d(post_surv)
    return kl, 1.0 - (1.0 - b1) * (1.0 - b2)


def _one(seed_seq, model, prior, lat, laurent):
    rng = np.random.default_rng(seed_seq)
    theta = prior.sample_params(rng)
    data = model.simulate(theta, rng, laurent=laurent)
    y = data.Jstar - model.state.Jtilde
    d = np.log(data.Cstar) - model.state.log_C
    return replicate_kl(lat, y, d, model.A, laurent)


def _grid_tuple(grid) -> tuple[int, int, int]:
    if isinstance(grid, int):
        grid = (grid, grid, grid)
    grid = tuple(int(g) for g in grid)
    if len(grid) != 3 or min(grid) < 1:
        raise ModelError("grid needs three positive node counts (psi2, phi2, q)")
    return grid


def estimate_expected_kl(prior: PriorSpec, model: ObservationModel, T: int = None,
                         n_outer: int = 400, grid=DEFAULT_GRID, seed: int = 0,
                         laurent: bool = True) -> MIEstimate:
    """Expected KL divergence from prior to posterior (nats) with standard error.

    ``grid`` gives node counts per axis (psi2, phi2, q) over the prior box. When
    ``T`` differs from ``model.T`` a constant-latent model with ``T`` steps and
    the same ages/selectivities is used; the latent values do not affect the
    divergence.
    """
    if prior.box is None:
        raise ModelError("expected KL needs a proper (truncated) prior")
    if n_outer < 2:
        raise ModelError("n_outer must be >= 2")
    if T is not None and T != model.T:
        model = default_model(A=model.A, T=T, s=model.config.s)
    grid = _grid_tuple(grid)
    lat = _Lattice(prior, grid)
    seeds = np.random.SeedSequence(seed).spawn(n_outer)
    out = np.array(pmap(partial(_one, model=model, prior=prior, lat=lat, laurent=laurent), seeds))
    kls, boundary = out[:, 0], out[:, 1]
    se = float(kls.std(ddof=1) / math.sqrt(n_outer))
    mean_boundary = float(boundary.mean())
    spec = (f"log-lattice psi2{list(prior.box[0])}x{grid[0]}, phi2{list(prior.box[1])}x{grid[1]}, "
            f"q{list(prior.box[2])}x{grid[2]}")
    return MIEstimate(value=float(kls.mean()), std_error=max(se, 1e-300), n_outer=n_outer,
                      n_inner=grid[0] * grid[1] * grid[2], grid_spec=spec,
                      boundary_warning=mean_boundary > 0.01, boundary_mass=mean_boundary,
                      per_replicate=kls)


def compare_priors(model: ObservationModel, T_list: Sequence[int], priors: Iterable[PriorSpec],
                   seed: int = 0, n_outer: int = 400, grid=DEFAULT_GRID) -> list[dict]:
    """One row per (prior, T). Every cell reuses ``seed`` so priors share random numbers."""
    rows = []
    for prior in priors:
        for T in T_list:
            est = estimate_expected_kl(prior, model, T=T, n_outer=n_outer, grid=grid, seed=seed)
            rows.append({"prior": PriorKind(prior.kind).value, "T": int(T),
                         "mi": est.value, "se": est.std_error,
                         "boundary_mass": est.boundary_mass})
    return rows


def write_comparison(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prior", "T", "mi", "se"])
        for row in rows:
            w.writerow([row["prior"], row["T"], repr(row["mi"]), repr(row["se"])])
