import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from refprior.info_criterion import (
    MI_BOX,
    compare_priors,
    estimate_expected_kl,
    lattice_log_mass,
    log_lattice,
    replicate_kl,
    write_comparison,
    _Lattice,
)
from refprior.model import ModelError, default_model
from refprior.priors import PriorKind, PriorSpec

MODEL = default_model(A=4, T=10)
SMALL = (32, 32, 128)


def _prior(kind=PriorKind.REFERENCE):
    return PriorSpec(kind, MI_BOX)


def test_log_lattice_midpoints():
    x = log_lattice(0.1, 10.0, 4)
    np.testing.assert_allclose(np.diff(np.log(x)), math.log(100) / 4, rtol=1e-12)
    assert x[0] == pytest.approx(0.1 * 100 ** (1 / 8), rel=1e-12)


def test_lattice_mass_normalised_and_shaped():
    x = log_lattice(0.1, 10.0, 50)
    lm = lattice_log_mass(x, 1.5)
    assert math.exp(logsumexp(lm)) == pytest.approx(1.0, abs=1e-12)
    # density x^-1.5 on a log lattice: mass ratio between nodes is (x_i / x_j)^-0.5
    assert lm[10] - lm[0] == pytest.approx(-0.5 * math.log(x[10] / x[0]), rel=1e-12)


def _brute_force_kl(prior, y, d, A, grid):
    """Same quadrature on the full 3-D lattice, with scipy normal log densities."""
    (a, b, c) = prior.exponents
    psi = log_lattice(*prior.box[0], grid[0])
    phi = log_lattice(*prior.box[1], grid[1])
    q = log_lattice(*prior.box[2], grid[2])
    P, F, Q = np.meshgrid(psi, phi, q, indexing="ij")
    lp = (1 - a) * np.log(P) + (1 - b) * np.log(F) + (1 - c) * np.log(Q)
    lp -= logsumexp(lp)
    ll = np.zeros_like(P)
    for t in range(len(y)):
        ll += stats.norm.logpdf(d[t], -P / 2, np.sqrt(P))
        ll += stats.norm.logpdf(y[t], A * np.log(Q), np.sqrt(F))
    post = lp + ll
    post -= logsumexp(post)
    assert math.exp(logsumexp(post)) == pytest.approx(1.0, abs=1e-8)
    return float(np.sum(np.exp(post) * (post - lp)))


def test_factorised_kl_matches_full_lattice():
    prior = _prior()
    grid = (12, 10, 16)
    rng = np.random.default_rng(0)
    lat = _Lattice(prior, grid)
    for _ in range(3):
        theta = prior.sample_params(rng)
        data = MODEL.simulate(theta, rng)
        y = data.Jstar - MODEL.state.Jtilde
        d = np.log(data.Cstar) - MODEL.state.log_C
        kl, _ = replicate_kl(lat, y, d, MODEL.A)
        assert kl == pytest.approx(_brute_force_kl(prior, y, d, MODEL.A, grid), rel=1e-9)


def test_single_node_grid_gives_zero():
    est = estimate_expected_kl(_prior(), MODEL, n_outer=5, grid=(1, 1, 1))
    assert est.value == 0.0
    assert est.boundary_warning


def test_determinism():
    a = estimate_expected_kl(_prior(), MODEL, n_outer=20, grid=SMALL, seed=7)
    b = estimate_expected_kl(_prior(), MODEL, n_outer=20, grid=SMALL, seed=7)
    assert a.value == b.value and a.std_error == b.std_error


def test_more_data_more_information():
    e10 = estimate_expected_kl(_prior(), MODEL, T=10, n_outer=200, grid=SMALL, seed=0)
    e20 = estimate_expected_kl(_prior(), MODEL, T=20, n_outer=200, grid=SMALL, seed=0)
    assert e20.value - e10.value > 2 * math.hypot(e10.std_error, e20.std_error)


@pytest.mark.parametrize("kind", list(PriorKind))
def test_nonnegative(kind):
    est = estimate_expected_kl(_prior(kind), MODEL, T=5, n_outer=100, grid=SMALL, seed=1)
    assert est.value > -3 * est.std_error
    assert np.all(est.per_replicate >= -1e-12)


def test_grid_refinement_stable():
    a = estimate_expected_kl(_prior(), MODEL, n_outer=200, grid=SMALL, seed=2)
    b = estimate_expected_kl(_prior(), MODEL, n_outer=200, grid=tuple(2 * g for g in SMALL), seed=2)
    assert abs(a.value - b.value) < 2 * a.std_error


def test_compare_priors_rows_and_monotone(tmp_path):
    priors = [_prior(k) for k in PriorKind]
    rows = compare_priors(MODEL, [5, 10, 20], priors, seed=0, n_outer=150, grid=SMALL)
    assert len(rows) == 9
    for kind in PriorKind:
        mi = [(r["mi"], r["se"]) for r in rows if r["prior"] == kind.value]
        for (m0, s0), (m1, s1) in zip(mi, mi[1:]):
            assert m1 >= m0 - 2 * math.hypot(s0, s1)
    again = compare_priors(MODEL, [5, 10, 20], priors, seed=0, n_outer=150, grid=SMALL)
    assert rows == again
    write_comparison(rows, tmp_path / "mi.csv")
    lines = (tmp_path / "mi.csv").read_text().splitlines()
    assert lines[0] == "prior,T,mi,se" and len(lines) == 10


def test_errors():
    with pytest.raises(ModelError, match="proper"):
        estimate_expected_kl(PriorSpec(), MODEL)
    with pytest.raises(ModelError):
        estimate_expected_kl(_prior(), MODEL, n_outer=1)
    with pytest.raises(ModelError):
        estimate_expected_kl(_prior(), MODEL, grid=(4, 4))
