"""Prospective variance, variance reduction, power and sample size.

Every function here is a deterministic function of its arguments. Variances
are for ``sqrt(n) * log(psi_hat)``; divide by ``n - 1`` for a trial of size n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InputError, NumericalError
from .models import DesignParams, HistoricalSummary, as_float_tuple

METHODS = ("exact", "plug_in", "modeled", "unadjusted")


@dataclass(frozen=True)
class StratumProfile:
    """Population (or estimated) stratum parameters entering the asymptotic variance."""

    phi: tuple[float, ...]
    mu0: tuple[float, ...]
    mu1: tuple[float, ...]
    pi1: float
    psi: float

    def __post_init__(self):
        for name in ("phi", "mu0", "mu1"):
            object.__setattr__(self, name, as_float_tuple(getattr(self, name)))
        if not len(self.phi) == len(self.mu0) == len(self.mu1) >= 1:
            raise InputError("profile vectors must be non-empty and of equal length")
        if any(p <= 0 for p in self.phi) or abs(math.fsum(self.phi) - 1) > 1e-12:
            raise InputError("stratum propensities must be positive and sum to 1")
        if any(not 0 <= m <= 1 for m in self.mu0 + self.mu1):
            raise InputError("stratum probabilities must lie in [0, 1]")
        if not 0 < self.pi1 < 1 or not self.psi > 0:
            raise InputError("need 0 < pi1 < 1 and psi > 0")
        if np.dot(self.phi, self.mu0) <= 0:
            raise InputError("marginal control probability must be positive")


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2_inf: float
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown variance method {self.method!r}")
        if not self.sigma2_inf > 0:
            raise NumericalError(f"{self.method} asymptotic variance is not positive: {self.sigma2_inf}")

    def per_trial(self, n: int) -> float:
        """Prospective sampling variance of log(psi_hat) for a trial of ``n`` subjects."""
        if n < 2:
            raise InputError("trial size must be at least 2")
        return self.sigma2_inf / (n - 1)


@dataclass(frozen=True)
class ModeledProbabilities:
    """Affine-in-stratum-index model of one arm's stratum event probabilities."""

    beta0: float
    beta1: float
    mu_tilde: tuple[float, ...]
    mu_tilde_marginal: float
    sigma_y: float
    sigma_x: float
    x_bar: float
    r_xy: float


@dataclass(frozen=True)
class PowerSpec:
    tau: float  # log risk ratio
    sigma: float  # sqrt of the asymptotic variance
    alpha: float
    n: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise InputError("sigma must be positive")
        if self.n < 2:
            raise InputError("n must be at least 2")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")


def _eq2(phi, mu0, mu1, pi1, psi) -> float:
    phi, mu0, mu1 = (np.asarray(v, dtype=float) for v in (phi, mu0, mu1))
    pi0 = 1.0 - pi1
    psi_j = mu1 / mu0
    top = np.sum(phi * psi_j * (pi0 * mu0 + pi1 * mu1 - mu0 * mu1))
    return float(top / (psi ** 2 * pi1 * pi0 * np.dot(phi, mu0) ** 2))


def asymptotic_variance(profile: StratumProfile) -> VarianceEstimate:
    """Asymptotic variance of sqrt(n) log(psi_hat) at the given stratum parameters.

    Stratum risk ratios are taken as ``mu1_j / mu0_j``; a stratum with zero
    control probability makes them undefined and is rejected.
    """
    zero = [j for j, m in enumerate(profile.mu0, start=1) if m == 0]
    if zero:
        raise NumericalError(f"zero control probability in stratum {zero[0]}")
    return VarianceEstimate(_eq2(profile.phi, profile.mu0, profile.mu1, profile.pi1, profile.psi), "exact")


def _common_rr_form(phi, mu0, mu1, pi1, psi) -> float:
    # asymptotic variance with one psi cancelled, valid under a common risk ratio
    phi, mu0, mu1 = (np.asarray(v, dtype=float) for v in (phi, mu0, mu1))
    pi0 = 1.0 - pi1
    top = np.sum(phi * (pi0 * mu0 + pi1 * mu1 - mu0 * mu1))
    return float(top / (psi * pi0 * pi1 * np.dot(phi, mu0) ** 2))


def plug_in_variance(summary: HistoricalSummary, design: DesignParams, *,
                     allow_infeasible: bool = False) -> VarianceEstimate:
    """Plug-in prospective variance: historical strata with ``mu1_j = psi * mu0_j``.

    With ``allow_infeasible`` the formula is still evaluated when some implied
    treatment probability exceeds 1 (the simulator uses this to report the
    estimator at designs the common-ratio assumption cannot reach).
    """
    mu0 = np.asarray(summary.mu0j_hat)
    zero = np.flatnonzero(mu0 == 0)
    if zero.size:
        raise NumericalError(f"zero control probability in stratum {zero[0] + 1}; coarsen the strata")
    mu1 = design.psi * mu0
    over = np.flatnonzero(mu1 > 1)
    if over.size and not allow_infeasible:
        j = int(over[0]) + 1
        raise NumericalError(
            f"implied treatment probability exceeds 1 in stratum {j} "
            f"(psi * mu0 = {mu1[over[0]]:.4f})"
        )
    return VarianceEstimate(_common_rr_form(summary.phi_hat, mu0, mu1, design.pi1, design.psi), "plug_in")


def modeled_probabilities(summary: HistoricalSummary, arm_mean: float, r_xy: float) -> ModeledProbabilities:
    """Stratum probabilities modeled as affine in the stratum index.

    The slope is ``r * sigma_y / sigma_x`` with ``sigma_y`` the Bernoulli sd
    at ``arm_mean`` and ``sigma_x`` the propensity-weighted sd of the index
    around its unweighted mean ``(J + 1) / 2``.
    """
    J = summary.J
    if J < 2:
        raise InputError("the modeled estimator needs at least two strata")
    if not 0 < arm_mean < 1:
        raise InputError(f"arm mean must lie in (0, 1), got {arm_mean}")
    if not -1 <= r_xy <= 1:
        raise InputError(f"correlation must lie in [-1, 1], got {r_xy}")
    j = np.arange(1, J + 1, dtype=float)
    phi = np.asarray(summary.phi_hat)
    x_bar = float(j.mean())
    sigma_x = float(np.sqrt(np.sum(phi * (j - x_bar) ** 2)))
    sigma_y = math.sqrt(arm_mean * (1 - arm_mean))
    beta1 = r_xy * sigma_y / sigma_x
    beta0 = arm_mean - beta1 * x_bar
    mu = beta0 + beta1 * j
    bad = np.flatnonzero((mu <= 0) | (mu >= 1))
    if bad.size:
        k = int(bad[0])
        raise NumericalError(
            f"modeled probability out of (0,1) in stratum {k + 1} ({mu[k]:.4f}); "
            "reduce J or r, or revisit the marginal rate"
        )
    return ModeledProbabilities(beta0=beta0, beta1=beta1, mu_tilde=tuple(mu.tolist()),
                                mu_tilde_marginal=float(mu.mean()), sigma_y=sigma_y,
                                sigma_x=sigma_x, x_bar=x_bar, r_xy=r_xy)


def modeled_arms(summary: HistoricalSummary, design: DesignParams):
    """Control and treatment affine models; treatment uses ``psi * mu0_hat``."""
    try:
        control = modeled_probabilities(summary, summary.mu0_hat, summary.r_xy)
    except NumericalError as exc:
        raise NumericalError(f"control arm: {exc}") from None
    r1 = summary.r_xy if design.r1 is None else design.r1
    try:
        treated = modeled_probabilities(summary, design.psi * summary.mu0_hat, r1)
    except (NumericalError, InputError) as exc:
        raise NumericalError(f"treatment arm: {exc}") from None
    return control, treated


def modeled_variance(summary: HistoricalSummary, design: DesignParams) -> VarianceEstimate:
    """Modeled prospective variance.

    The modeled propensities are taken equal to the historical ones, since no
    separate modeled propensity is ever defined.
    """
    control, treated = modeled_arms(summary, design)
    value = _common_rr_form(summary.phi_hat, control.mu_tilde, treated.mu_tilde, design.pi1, design.psi)
    return VarianceEstimate(value, "modeled")


def unadjusted_variance(mu0: float, design: DesignParams) -> VarianceEstimate:
    """Asymptotic variance of the unstratified log risk ratio with ``mu1 = psi * mu0``."""
    if not 0 < mu0 < 1:
        raise InputError(f"control probability must lie in (0, 1), got {mu0}")
    mu1 = design.psi * mu0
    if mu1 >= 1:
        raise NumericalError(f"implied treatment probability exceeds 1 (psi * mu0 = {mu1:.4f})")
    pi0, pi1, psi = design.pi0, design.pi1, design.psi
    value = psi * (pi0 * mu0 + pi1 * mu1 - mu0 * mu1) / (pi0 * pi1 * mu0 ** 2) / psi ** 2
    return VarianceEstimate(value, "unadjusted")


def variance_reduction(adjusted: VarianceEstimate, unadjusted: VarianceEstimate) -> float:
    if not unadjusted.sigma2_inf > 0:
        raise InputError("unadjusted variance must be positive")
    return 1.0 - adjusted.sigma2_inf / unadjusted.sigma2_inf


def reduction_closed_form(phi: Sequence[float], mu0j: Sequence[float], mu1j: Sequence[float],
                          mu0: float, psi: float, pi1: float) -> float:
    """Variance reduction written as a single ratio of stratified to pooled terms."""
    phi, mu0j, mu1j = (np.asarray(v, dtype=float) for v in (phi, mu0j, mu1j))
    pi0 = 1.0 - pi1
    mu1 = psi * mu0
    psi_j = mu1j / mu0j
    strat = np.sum(phi * psi_j * (pi0 * mu0j + pi1 * mu1j - mu0j * mu1j))
    pooled = psi * (pi0 * mu0 + pi1 * mu1 - mu0 * mu1)
    return float(1.0 - mu0 ** 2 * strat / (pooled * np.dot(phi, mu0j) ** 2))


def power_at_n(spec: PowerSpec) -> float:
    """Asymptotic probability that a two-sided level-alpha Wald test rejects."""
    z = ndtri(spec.alpha / 2)
    shift = math.sqrt(spec.n) * spec.tau / spec.sigma
    return float(ndtr(z + shift) + ndtr(z - shift))


def required_sample_size(design: DesignParams, variance: VarianceEstimate) -> int:
    """Smallest n whose asymptotic power reaches ``design.target_power``."""
    tau = math.log(design.psi)
    if tau == 0:
        raise NumericalError("null design has no finite sample size (psi = 1)")
    sigma = math.sqrt(variance.sigma2_inf)
    alpha = design.alpha

    def power(n):
        return power_at_n(PowerSpec(tau, sigma, alpha, n))

    if design.target_power <= power(2):
        return 2
    z_a = ndtri(1 - alpha / 2)
    z_b = ndtri(design.target_power)
    n = max(2, math.ceil(variance.sigma2_inf * (z_a + z_b) ** 2 / tau ** 2))
    while n > 2 and power(n - 1) >= design.target_power:
        n -= 1
    while power(n) < design.target_power:
        n += 1
    return n
