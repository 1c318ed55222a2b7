"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from procova_cmh import (ContingencyPanel, DesignParams, HistoricalSummary, PowerSpec, StratumProfile,
                         VarianceEstimate, analyze_panel, asymptotic_variance, gr_variance, mh_risk_ratio,
                         plug_in_variance, power_at_n, required_sample_size, run_scenario)
from procova_cmh.fileio import load_scenarios
from procova_cmh.simulate import (build_population, draw_arrays, quantile_bounds, replicate_rng,
                                  solve_location, trunc_normal_mean)
from procova_cmh.stratify import assign_strata

PSIS = (1.0, 0.75, 1.25)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


_CACHE = {}


def _scenario(name):
    if name not in _CACHE:
        cfg = {c.name: c for c in load_scenarios("paper_table2")}[name]
        t0 = time.perf_counter()
        res = run_scenario(cfg)
        _CACHE[name] = (res, time.perf_counter() - t0)
    return _CACHE[name]


def test_criterion_01_scenario1_rejection(report):
    res, secs = _scenario("1_baseline")
    r = {(p, m): res.row(p, m).rejection_rate for p in PSIS for m in ("cmh", "unadjusted")}
    checks = [
        abs(r[1.0, "cmh"] - 0.057) <= 0.02,
        abs(r[1.0, "unadjusted"] - 0.055) <= 0.02,
        abs(r[0.75, "cmh"] - 0.899) <= 0.03,
        abs(r[0.75, "unadjusted"] - 0.821) <= 0.03,
        r[0.75, "cmh"] > r[0.75, "unadjusted"],
        r[1.25, "cmh"] > r[1.25, "unadjusted"],
        secs < 120,
    ]
    detail = (f"type I {r[1.0, 'cmh']:.3f}/{r[1.0, 'unadjusted']:.3f} (want 0.057/0.055 +-0.02); "
              f"power@0.75 {r[0.75, 'cmh']:.3f}/{r[0.75, 'unadjusted']:.3f} (want 0.899/0.821 +-0.03); "
              f"power@1.25 {r[1.25, 'cmh']:.3f}/{r[1.25, 'unadjusted']:.3f}; {secs:.1f}s")
    report(1, all(checks), detail)


def test_criterion_02_scenario1_coverage(report):
    res, _ = _scenario("1_baseline")
    c, u = res.row(1.0, "cmh").coverage, res.row(1.0, "unadjusted").coverage
    report(2, abs(c - 0.945) <= 0.02 and abs(u - 0.947) <= 0.02,
           f"coverage@1 {c:.3f}/{u:.3f} (want 0.945/0.947 +-0.02)")


def test_criterion_03_estimator_bias(report):
    res, _ = _scenario("1_baseline")
    worst = max(abs(getattr(res.row(p, m), f"{k}_bias")) for p in PSIS
                for m in ("cmh", "unadjusted") for k in ("plugin", "modeled"))
    report(3, worst <= 0.001, f"max |prospective - empirical variance| = {worst:.2e} (want <= 1e-3)")


def test_criterion_04_variance_reduction(report):
    res, _ = _scenario("1_baseline")
    row = res.row(1.0, "cmh")
    g, bias, r2 = row.observed_gamma, row.modeled_gamma_bias, row.r2_historical
    ok = abs(g - 0.2047) <= 0.03 and abs(bias) <= 0.01 and abs(g - 0.2074) <= 0.03 and abs(g - r2) <= 0.03
    report(4, ok, f"gamma {g:.4f} (want 0.2047 +-0.03), modeled bias {bias:+.4f} (<= 0.01), "
                  f"historical r2 {r2:.4f} (reference 0.2074)")


def test_criterion_05_unequal_randomization(report):
    res, _ = _scenario("6_randomization_2to1")
    g = res.row(1.0, "cmh").observed_gamma
    powers = {p: (res.row(p, "cmh").rejection_rate, res.row(p, "unadjusted").rejection_rate) for p in (0.75, 1.25)}
    ok = abs(g - 0.20) <= 0.03 and all(c >= u for c, u in powers.values())
    report(5, ok, f"gamma {g:.4f} (want 0.20 +-0.03); power cmh/unadj "
                  + ", ".join(f"{p}: {c:.3f}/{u:.3f}" for p, (c, u) in powers.items()))


def test_criterion_06_plug_in_oracle(report):
    rng = np.random.default_rng(606)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        J = int(rng.integers(1, 11))
        phi = rng.dirichlet(np.ones(J))
        phi[-1] = 1 - phi[:-1].sum()
        mu0 = rng.uniform(0.02, 0.9, J)
        psi = rng.uniform(0.3, 0.999 / mu0.max())
        pi1 = rng.uniform(0.1, 0.9)
        s = HistoricalSummary(J, tuple(phi), tuple(mu0), float(phi @ mu0), 0.0, 1000)
        d = DesignParams(psi=psi, pi1=pi1)
        a = plug_in_variance(s, d).sigma2_inf
        b = asymptotic_variance(StratumProfile(s.phi_hat, s.mu0j_hat, tuple(psi * mu0), pi1, psi)).sigma2_inf
        worst = max(worst, abs(a - b) / abs(b))
    secs = time.perf_counter() - t0
    report(6, worst <= 1e-12 and secs < 1, f"max relative error {worst:.1e} over 100 summaries in {secs:.3f}s")


def test_criterion_07_single_stratum_collapse(report):
    rng = np.random.default_rng(707)
    worst_rr = worst_var = 0.0
    for _ in range(100):
        n1, n0 = rng.integers(2, 5000, 2)
        z1, z0 = rng.integers(1, n1 + 1), rng.integers(1, n0 + 1)
        p = ContingencyPanel((int(n1),), (int(n0),), (int(z1),), (int(z0),))
        crude = (z1 / n1) / (z0 / n0)
        delta = 1 / z1 - 1 / n1 + 1 / z0 - 1 / n0
        worst_rr = max(worst_rr, abs(mh_risk_ratio(p).rr_hat - crude) / crude)
        v = gr_variance(p)
        worst_var = max(worst_var, abs(v - delta) / delta if delta > 0 else abs(v))
    report(7, worst_rr <= 1e-12 and worst_var <= 1e-12,
           f"max relative error rr {worst_rr:.1e}, variance {worst_var:.1e}")


def test_criterion_08_asymptotic_consistency(report):
    psi, n, reps = 0.75, 20_000, 500
    pop = build_population(0.5, 0.29, psi, 0.5, J=5, rr_mode="common_rr")
    target = asymptotic_variance(StratumProfile(pop.phi, pop.mu0j, pop.mu1j, pop.pi1, psi)).sigma2_inf
    t0 = time.perf_counter()
    logs = np.empty(reps)
    for i in range(reps):
        d = draw_arrays(pop, n, pop.pi1, replicate_rng(880, i, 1))
        panel = ContingencyPanel.from_arrays(assign_strata(d.scores, pop.strata), d.arms, d.outcomes, pop.J)
        logs[i] = analyze_panel(panel).log_rr
    secs = time.perf_counter() - t0
    scaled = n * np.var(logs, ddof=1)
    mean_ratio = float(np.mean(np.exp(logs)))
    ok = abs(scaled / target - 1) <= 0.10 and abs(mean_ratio / psi - 1) <= 0.01 and secs < 60
    report(8, ok, f"n*var {scaled:.4f} vs asymptotic {target:.4f} ({scaled / target - 1:+.2%}); "
                  f"mean rr {mean_ratio:.4f}; {secs:.1f}s")


def test_criterion_09_power_inversion(report):
    rng = np.random.default_rng(909)
    bad = 0
    for _ in range(50):
        psi = float(np.exp(rng.choice([-1, 1]) * rng.uniform(0.05, 1.0)))
        s2 = float(rng.uniform(0.5, 20))
        alpha = float(rng.uniform(0.005, 0.2))
        power = float(rng.uniform(0.5, 0.99))
        n = required_sample_size(DesignParams(psi=psi, alpha=alpha, target_power=power), VarianceEstimate(s2, "exact"))
        at = power_at_n(PowerSpec(math.log(psi), math.sqrt(s2), alpha, n))
        below = power_at_n(PowerSpec(math.log(psi), math.sqrt(s2), alpha, n - 1)) if n > 2 else -1
        bad += not (at >= power > below)
    report(9, bad == 0, f"{50 - bad}/50 designs satisfy power(n*) >= target > power(n*-1)")


def test_criterion_10_truncated_normal(report):
    round_trip = max(abs(trunc_normal_mean(solve_location(t, s)) - t)
                     for t in (0.2, 0.3, 0.5, 0.7) for s in (0.16, 0.29))
    mean_err = mass_err = 0.0
    for t in (0.3, 0.5):
        for s in (0.16, 0.29):
            law = solve_location(t, s)
            b = quantile_bounds(law, 5)
            normal = stats.norm(law.location, law.scale)
            z = normal.cdf(1) - normal.cdf(0)
            for k in range(5):
                num = integrate.quad(lambda x: x * normal.pdf(x), b[k], b[k + 1], epsabs=1e-14, epsrel=1e-13)[0]
                den = integrate.quad(normal.pdf, b[k], b[k + 1], epsabs=1e-14, epsrel=1e-13)[0]
                mean_err = max(mean_err, abs(trunc_normal_mean(law, b[k], b[k + 1]) - num / den))
                mass_err = max(mass_err, abs(den / z - 0.2))
    ok = round_trip <= 1e-10 and mean_err <= 1e-8 and mass_err <= 1e-8
    report(10, ok, f"round trip {round_trip:.1e}, conditional mean {mean_err:.1e}, quintile mass {mass_err:.1e}")
