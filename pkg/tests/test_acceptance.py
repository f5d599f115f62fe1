"""Acceptance suite: one pass/fail line per criterion, printed in the pytest summary.

Run alone with ``pytest tests/test_acceptance.py -v``; total runtime is under a minute.
"""

import math
import time

import numpy as np

from refprior.diagnostics import geweke_joint_test, sbc
from refprior.fisher_check import (
    check_derivatives,
    check_partial_jeffreys,
    det_shape_ratios,
    mc_check_rows,
    relative_spread,
)
from refprior.gibbs import Psi2Mode, SamplerConfig
from refprior.info_criterion import DEFAULT_GRID, MI_BOX, estimate_expected_kl
from refprior.model import NuisanceParams, default_model, draw_catch_noise, log_likelihood
from refprior.priors import (
    PriorKind,
    PriorSpec,
    inverse_gamma_logpdf,
    log_prior,
    phi2_conditional,
    psi2_conditional,
)

RESULTS = {}


def _record(n, ok, detail, t0):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - t0:.1f}s)"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_criterion_1_determinant_shape():
    t0 = time.perf_counter()
    spreads, singular = {}, 0.0
    for T, A in [(3, 2), (5, 4), (8, 6)]:
        ratios, sing = det_shape_ratios(T, A)
        spreads[(T, A)] = relative_spread(ratios)
        if sing.size:
            singular = max(singular, float(sing.max()))
    worst = max(spreads.values())
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and singular < 1e-12 and elapsed < 1.0
    _record(1, ok, f"max relative spread {worst:.2e} (< 1e-9), singular nodes {singular:.1e}", t0)


def test_criterion_2_hessian_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20)
    fd = check_derivatives(rng, T=5, A=4, n_points=20)
    hess = next(r for r in fd if r.identity == "hessian_vs_finite_difference")
    mc = mc_check_rows(NuisanceParams(0.7, 1.3, 2.0), A=4, n_samples=1_000_000, seed=rng)
    failed = [r.identity for r in fd + mc if not r.passed]
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed < 120
    _record(2, ok, f"FD Hessian rel err {hess.max_abs_error:.1e}, {len(mc)} MC entries at n=1e6, "
                   f"failed {failed}", t0)


def test_criterion_3_prior_shape():
    t0 = time.perf_counter()
    spec = PriorSpec(PriorKind.REFERENCE)
    base = log_prior(spec, NuisanceParams(1.0, 1.0, 1.0))
    exps = []
    for i in range(3):
        args = [1.0, 1.0, 1.0]
        args[i] = math.e
        exps.append(log_prior(spec, NuisanceParams(*args)) - base)
    err = max(abs(e - t) for e, t in zip(exps, (-1.5, -1.5, -1.0)))
    pj = []
    for T, A in [(3, 2), (5, 4), (8, 6)]:
        pj += check_partial_jeffreys(T, A)
    spread = max(r.max_abs_error for r in pj if r.identity.startswith("partial_jeffreys_eq"))
    ok = err <= 4 * np.finfo(float).eps and all(r.passed for r in pj)
    _record(3, ok, f"exponents {exps} (err {err:.1e}), partial Jeffreys spread {spread:.1e} (< 1e-10)", t0)


def _pointwise_spreads():
    model = default_model(A=3, T=8, C=40.0, Jtilde=0.7)
    truth = NuisanceParams(0.2, 0.6, 1.8)
    data = model.simulate(truth, np.random.default_rng(0))
    out = []
    for kind in PriorKind:
        spec = PriorSpec(kind)
        c = phi2_conditional(model.state, data, truth, model.config, spec)
        d = [log_likelihood(model.state, p, data, model.config) + log_prior(spec, p)
             - inverse_gamma_logpdf(p.phi2, c.shape, c.rate)
             for p in (NuisanceParams(truth.psi2, v, truth.q) for v in np.geomspace(0.05, 5, 25))]
        out.append(np.ptp(d))
        g = psi2_conditional(model.state, data, truth, model.config, spec).logpdf
        d = [log_likelihood(model.state, p, data, model.config) + log_prior(spec, p) - g(p.psi2)
             for p in (NuisanceParams(v, truth.phi2, truth.q) for v in np.geomspace(0.01, 3, 25))]
        out.append(np.ptp(d))
    return max(out)


def test_criterion_4_conjugacy_and_geweke():
    t0 = time.perf_counter()
    spread = _pointwise_spreads()
    model = default_model(A=4, T=10)
    prior = PriorSpec(PriorKind.REFERENCE, MI_BOX)
    zs = {m.value: geweke_joint_test(model, prior, 10_000, psi2_mode=m, seed=4).max_abs_z for m in Psi2Mode}
    elapsed = time.perf_counter() - t0
    ok = spread < 1e-8 and max(zs.values()) < 4 and elapsed < 300
    _record(4, ok, f"conditional spread {spread:.1e} (< 1e-8), Geweke max|z| "
                   + ", ".join(f"{k} {v:.2f}" for k, v in zs.items()) + " (< 4)", t0)


def test_criterion_5_sbc():
    t0 = time.perf_counter()
    model = default_model(A=4, T=10)
    prior = PriorSpec(PriorKind.REFERENCE, MI_BOX)
    pmin = {}
    for m in Psi2Mode:
        cfg = SamplerConfig(iterations=300, burn_in=200, psi2_mode=m)
        rep = sbc(model, prior, cfg, 500, n_posterior_draws=99, n_bins=20, seed=5)
        pmin[m.value] = min(rep.p_values.values())
    elapsed = time.perf_counter() - t0
    ok = min(pmin.values()) > 0.01 and elapsed < 1200
    _record(5, ok, "min chi-square p " + ", ".join(f"{k} {v:.3f}" for k, v in pmin.items()) + " (> 0.01)", t0)


def test_criterion_6_laurent():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for psi2 in (0.1, 0.5, 1.0):
        for laurent, target in ((True, 1.0), (False, math.exp(psi2 / 2))):
            ratio = np.exp(draw_catch_noise(rng, 1_000_000, psi2, laurent))
            se = ratio.std(ddof=1) / math.sqrt(ratio.size)
            worst = max(worst, abs(ratio.mean() - target) / se)
    elapsed = time.perf_counter() - t0
    ok = worst < 3 and elapsed < 30
    _record(6, ok, f"max |mean(C*/C) - target| = {worst:.2f} SE (< 3)", t0)


def test_criterion_7_reference_directional():
    t0 = time.perf_counter()
    model = default_model(A=4, T=30)
    est = {k: estimate_expected_kl(PriorSpec(k, MI_BOX), model, n_outer=400, grid=DEFAULT_GRID, seed=7)
           for k in PriorKind}
    ref = est[PriorKind.REFERENCE]
    margins = {}
    for k in (PriorKind.JEFFREYS, PriorKind.FLAT):
        se = math.hypot(ref.std_error, est[k].std_error)
        margins[k.value] = (ref.value - est[k].value) / se
    elapsed = time.perf_counter() - t0
    ok = min(margins.values()) >= -2 and elapsed < 1800
    _record(7, ok, "MI " + ", ".join(f"{k.value} {e.value:.3f}±{e.std_error:.3f}" for k, e in est.items())
            + "; reference minus other in combined SE: "
            + ", ".join(f"{k} {v:+.2f}" for k, v in margins.items()) + " (>= -2)", t0)
