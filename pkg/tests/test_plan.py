import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from procova_cmh import (DesignParams, HistoricalSummary, InputError, NumericalError, PowerSpec,
                         StratumProfile, VarianceEstimate, asymptotic_variance, modeled_probabilities,
                         modeled_variance, plug_in_variance, power_at_n, reduction_closed_form,
                         required_sample_size, unadjusted_variance, variance_reduction)
from procova_cmh.simulate import build_population


def _summary(phi, mu0j, r=0.0):
    return HistoricalSummary(len(phi), phi, mu0j, float(np.dot(phi, mu0j)), r, 1000)


def _two_arm(mu0, mu1, pi1):
    # delta-method variance of sqrt(n) log(p1/p0) for two independent binomials
    return (1 - mu1) / (pi1 * mu1) + (1 - mu0) / ((1 - pi1) * mu0)


def test_single_stratum_null_is_four():
    v = asymptotic_variance(StratumProfile((1.0,), (0.5,), (0.5,), 0.5, 1.0))
    assert v.sigma2_inf == pytest.approx(4.0, rel=1e-14)
    assert unadjusted_variance(0.5, DesignParams(psi=1.0)).sigma2_inf == pytest.approx(4.0, rel=1e-14)


def test_plug_in_hand_value():
    v = plug_in_variance(_summary((1.0,), (0.5,)), DesignParams(psi=1.25))
    assert v.sigma2_inf == pytest.approx(3.2, rel=1e-14)
    assert v.sigma2_inf == pytest.approx(_two_arm(0.5, 0.625, 0.5), rel=1e-14)


def test_unadjusted_closed_form():
    v = unadjusted_variance(0.3, DesignParams(psi=1.25))
    assert v.sigma2_inf == pytest.approx(_two_arm(0.3, 0.375, 0.5), rel=1e-14)
    assert v.sigma2_inf == pytest.approx(8.0, rel=1e-14)


def test_zero_control_stratum_rejected():
    with pytest.raises(NumericalError, match="zero control probability in stratum 2"):
        asymptotic_variance(StratumProfile((0.5, 0.5), (0.4, 0.0), (0.4, 0.0), 0.5, 1.0))


def test_merge_of_identical_strata():
    a = asymptotic_variance(StratumProfile((0.3, 0.3, 0.4), (0.2, 0.2, 0.6), (0.3, 0.3, 0.5), 0.4, 1.1))
    b = asymptotic_variance(StratumProfile((0.6, 0.4), (0.2, 0.6), (0.3, 0.5), 0.4, 1.1))
    assert a.sigma2_inf == pytest.approx(b.sigma2_inf, rel=1e-12)


def test_plug_in_infeasible():
    with pytest.raises(NumericalError, match="implied treatment probability exceeds 1 in stratum 2"):
        plug_in_variance(_summary((0.5, 0.5), (0.3, 0.9)), DesignParams(psi=1.2))
    v = plug_in_variance(_summary((0.5, 0.5), (0.3, 0.9)), DesignParams(psi=1.2), allow_infeasible=True)
    assert v.method == "plug_in"


def test_modeled_zero_correlation_is_flat():
    m = modeled_probabilities(_summary((0.25,) * 4, (0.1, 0.2, 0.3, 0.4)), 0.25, 0.0)
    np.testing.assert_allclose(m.mu_tilde, 0.25)


def test_modeled_quintile_hand_values():
    m = modeled_probabilities(_summary((0.2,) * 5, (0.5,) * 5), 0.5, math.sqrt(0.2))
    assert m.sigma_x == pytest.approx(math.sqrt(2), rel=1e-14)
    assert m.x_bar == 3.0
    assert m.beta1 == pytest.approx(0.15811388300841897, rel=1e-12)
    np.testing.assert_allclose(m.mu_tilde, [0.1838, 0.3419, 0.5, 0.6581, 0.8162], atol=5e-5)
    assert np.max(np.abs(np.diff(m.mu_tilde, 2))) < 1e-12


def test_modeled_out_of_range():
    # the slope pushes strata 4 and 5 past 1; the first offender is reported
    with pytest.raises(NumericalError, match="modeled probability out of \\(0,1\\) in stratum 4"):
        modeled_probabilities(_summary((0.2,) * 5, (0.95,) * 5), 0.95, 0.9)


def test_modeled_errors_name_the_arm():
    s = _summary((0.2,) * 5, (0.4,) * 5, r=0.3)
    with pytest.raises(NumericalError, match="treatment arm"):
        modeled_variance(s, DesignParams(psi=2.2))


def test_modeled_without_information_equals_unadjusted():
    s = _summary((0.2,) * 5, (0.1, 0.3, 0.4, 0.5, 0.7), r=0.0)
    d = DesignParams(psi=0.8, r1=0.0)
    assert modeled_variance(s, d).sigma2_inf == pytest.approx(unadjusted_variance(s.mu0_hat, d).sigma2_inf,
                                                              rel=1e-14)


def test_modeled_matches_plug_in_when_affine():
    mu = np.array([0.2, 0.35, 0.5, 0.65, 0.8])
    phi = (0.2,) * 5
    j = np.arange(1, 6)
    # choose r so the modeled slope reproduces the historical affine strata
    sx = math.sqrt(np.sum(0.2 * (j - 3) ** 2))
    r = 0.15 * sx / math.sqrt(0.25)
    s = _summary(phi, mu, r=r)
    d = DesignParams(psi=1.0)
    assert modeled_variance(s, d).sigma2_inf == pytest.approx(plug_in_variance(s, d).sigma2_inf, rel=1e-12)


def test_reduction_identity():
    u = VarianceEstimate(4.0, "unadjusted")
    assert variance_reduction(u, u) == 0.0


def test_power_null_is_alpha():
    assert power_at_n(PowerSpec(0.0, 2.0, 0.05, 100)) == pytest.approx(0.05, abs=1e-14)


def test_power_reference_design():
    d = DesignParams(psi=1.25)
    v = VarianceEstimate(4.0, "exact")
    n = required_sample_size(d, v)
    assert n == 631
    tau = math.log(1.25)
    assert power_at_n(PowerSpec(tau, 2.0, 0.05, 631)) >= 0.8 > power_at_n(PowerSpec(tau, 2.0, 0.05, 630))


def test_doubling_variance_quadruples_n():
    d = DesignParams(psi=1.25)
    n1 = required_sample_size(d, VarianceEstimate(4.0, "exact"))
    n2 = required_sample_size(d, VarianceEstimate(16.0, "exact"))
    assert 3.99 <= n2 / n1 <= 4.01


def test_higher_power_needs_more():
    v = VarianceEstimate(3.0, "exact")
    assert required_sample_size(DesignParams(psi=0.8, target_power=0.9), v) > \
        required_sample_size(DesignParams(psi=0.8, target_power=0.8), v)


def test_null_design_sample_size():
    with pytest.raises(NumericalError, match="null design"):
        required_sample_size(DesignParams(psi=1.0), VarianceEstimate(4.0, "exact"))


def test_per_trial_scaling():
    assert VarianceEstimate(4.0, "exact").per_trial(801) == 0.005
    with pytest.raises(InputError):
        VarianceEstimate(4.0, "exact").per_trial(1)


def test_scenario_one_modeled_reduction():
    # population-level historical summary of the baseline scenario
    pop = build_population(0.5, 0.29, 1.0, 0.5)
    phi, mu = np.array(pop.phi), np.array(pop.mu0j)
    j = np.arange(1, 6)
    cov = np.sum(phi * mu * (j - 3))
    # with equal-mass strata the midranks are affine in j and in Y, so Spearman equals Pearson
    r = cov / math.sqrt(np.sum(phi * (j - 3) ** 2) * 0.25)
    s = _summary(tuple(phi), tuple(mu), r=r)
    d = DesignParams(psi=1.0)
    gamma = variance_reduction(modeled_variance(s, d), unadjusted_variance(s.mu0_hat, d))
    assert abs(gamma - r ** 2) < 0.01
    assert abs(gamma - 0.207) < 0.01


@pytest.mark.parametrize("r2", [0.05, 0.1, 0.2, 0.3])
def test_modeled_reduction_tracks_r2(r2):
    s = _summary((0.2,) * 5, (0.5,) * 5, r=math.sqrt(r2))
    d = DesignParams(psi=1.0)
    gamma = variance_reduction(modeled_variance(s, d), unadjusted_variance(0.5, d))
    assert abs(gamma - r2) < 0.02


@st.composite
def summaries(draw, max_mu=0.95):
    J = draw(st.integers(1, 8))
    w = [draw(st.integers(1, 50)) for _ in range(J)]
    phi = [x / sum(w) for x in w]
    phi[-1] = 1 - sum(phi[:-1])
    mu = [draw(st.floats(0.01, max_mu)) for _ in range(J)]
    return _summary(tuple(phi), tuple(mu))


@st.composite
def feasible(draw):
    s = draw(summaries())
    psi = draw(st.floats(0.2, 0.999 / max(s.mu0j_hat)))
    pi1 = draw(st.floats(0.1, 0.9))
    return s, DesignParams(psi=psi, pi1=pi1)


@given(feasible())
@settings(max_examples=100)
def test_plug_in_equals_asymptotic_under_common_rr(case):
    s, d = case
    mu1 = tuple(d.psi * m for m in s.mu0j_hat)
    exact = asymptotic_variance(StratumProfile(s.phi_hat, s.mu0j_hat, mu1, d.pi1, d.psi))
    assert plug_in_variance(s, d).sigma2_inf == pytest.approx(exact.sigma2_inf, rel=1e-12)


@given(feasible())
def test_single_stratum_collapse(case):
    s, d = case
    mu0 = s.mu0_hat
    one = _summary((1.0,), (mu0,))
    u = unadjusted_variance(mu0, d).sigma2_inf
    assert plug_in_variance(one, d).sigma2_inf == pytest.approx(u, rel=1e-12)
    ex = asymptotic_variance(StratumProfile((1.0,), (mu0,), (d.psi * mu0,), d.pi1, d.psi)).sigma2_inf
    assert ex == pytest.approx(u, rel=1e-12)
    assert u == pytest.approx(_two_arm(mu0, d.psi * mu0, d.pi1), rel=1e-12)


@given(feasible())
def test_closed_form_reduction(case):
    s, d = case
    adj = plug_in_variance(s, d)
    un = unadjusted_variance(s.mu0_hat, d)
    mu1 = [d.psi * m for m in s.mu0j_hat]
    closed = reduction_closed_form(s.phi_hat, s.mu0j_hat, mu1, s.mu0_hat, d.psi, d.pi1)
    assert closed == pytest.approx(variance_reduction(adj, un), rel=1e-12, abs=1e-12)


designs = st.tuples(st.floats(0.3, 3.0).filter(lambda p: abs(math.log(p)) > 0.02),
                    st.floats(0.5, 20.0), st.floats(0.001, 0.2), st.floats(0.5, 0.99))


@given(designs)
def test_required_n_is_exact_threshold(case):
    psi, s2, alpha, power = case
    d = DesignParams(psi=psi, alpha=alpha, target_power=power)
    v = VarianceEstimate(s2, "exact")
    n = required_sample_size(d, v)
    tau, sig = math.log(psi), math.sqrt(s2)
    assert power_at_n(PowerSpec(tau, sig, alpha, n)) >= power
    if n > 2:
        assert power_at_n(PowerSpec(tau, sig, alpha, n - 1)) < power


@given(designs, st.integers(2, 10_000))
def test_power_increasing(case, n):
    psi, s2, alpha, _ = case
    a = power_at_n(PowerSpec(math.log(psi), math.sqrt(s2), alpha, n))
    b = power_at_n(PowerSpec(math.log(psi), math.sqrt(s2), alpha, n + 1))
    assert b >= a
