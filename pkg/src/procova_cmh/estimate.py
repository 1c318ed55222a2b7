"""Mantel-Haenszel risk ratio, Greenland-Robins variance and Wald inference."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InputError, NumericalError
from .models import AnalysisResult, ContingencyPanel, StrataSpec, TrialRecord, validate_panel
from .stratify import assign_strata


@dataclass(frozen=True)
class MhEstimate:
    numerator: float  # sum_j Z_1j N_0j / N_j
    denominator: float  # sum_j Z_0j N_1j / N_j

    @property
    def rr_hat(self) -> float:
        return self.numerator / self.denominator

    @property
    def log_rr(self) -> float:
        return math.log(self.numerator) - math.log(self.denominator)


def _mh_sums(panel: ContingencyPanel):
    n1, n0, z1, z0 = panel.arrays()
    n = n1 + n0
    keep = n > 0
    n1, n0, z1, z0, n = n1[keep], n0[keep], z1[keep], z0[keep], n[keep]
    num = float(np.sum(z1 * n0 / n))
    den = float(np.sum(z0 * n1 / n))
    if num <= 0 or den <= 0:
        raise NumericalError(
            f"zero MH numerator and/or denominator (numerator={num:g}, denominator={den:g}); "
            "no continuity correction is applied"
        )
    return num, den, (n1, n0, z1, z0, n)


def mh_risk_ratio(panel: ContingencyPanel) -> MhEstimate:
    """Mantel-Haenszel estimate of the common risk ratio. Empty strata are skipped."""
    validate_panel(panel)
    num, den, _ = _mh_sums(panel)
    return MhEstimate(num, den)


def gr_variance(panel: ContingencyPanel) -> float:
    """Greenland-Robins estimate of Var(log MH risk ratio)."""
    validate_panel(panel)
    num, den, (n1, n0, z1, z0, n) = _mh_sums(panel)
    z = z1 + z0
    top = float(np.sum((n1 * n0 * z - z1 * z0 * n) / n ** 2))
    return top / (num * den)


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


def wald_inference(est: MhEstimate, var_log: float, alpha: float = 0.05, *,
                   n_analyzed: int = 0, n_missing_excluded: int = 0,
                   n_strata: int = 1) -> AnalysisResult:
    """Wald confidence interval and two-sided z-test p-value on the log scale.

    A zero variance with a non-null estimate cannot be tested; the p-value is
    then reported as 0 and ``degenerate_variance`` is set.
    """
    if not 0 < alpha < 1:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if var_log < 0 or math.isnan(var_log):
        raise InputError(f"variance must be non-negative, got {var_log}")
    log_rr = est.log_rr
    se = math.sqrt(var_log)
    z_crit = normal_quantile(1 - alpha / 2)
    degenerate = False
    if se > 0:
        stat = log_rr / se
        p = float(2 * ndtr(-abs(stat)))
    elif log_rr == 0:
        p = 1.0
    else:
        p = 0.0
        degenerate = True
    rr = math.exp(log_rr)
    lo = math.exp(log_rr - z_crit * se)
    hi = math.exp(log_rr + z_crit * se)
    return AnalysisResult(
        rr_hat=rr, log_rr=log_rr, se_log_rr=se, ci_low=min(lo, rr), ci_high=max(hi, rr),
        p_value=min(1.0, p), n_analyzed=n_analyzed, n_missing_excluded=n_missing_excluded,
        alpha=alpha, n_strata=n_strata, degenerate_variance=degenerate,
    )


def analyze_panel(panel: ContingencyPanel, alpha: float = 0.05, *, n_missing_excluded: int = 0) -> AnalysisResult:
    est = mh_risk_ratio(panel)
    var = gr_variance(panel)
    return wald_inference(est, var, alpha, n_analyzed=panel.total,
                          n_missing_excluded=n_missing_excluded, n_strata=panel.J)


def build_panel(records: Sequence[TrialRecord], spec: StrataSpec) -> tuple[ContingencyPanel, int]:
    """Complete-case contingency panel plus the number of records dropped for missing outcome."""
    complete = [r for r in records if r.outcome is not None]
    n_missing = len(records) - len(complete)
    if not complete:
        raise InputError("no complete records: every outcome is missing")
    scores = np.fromiter((r.score for r in complete), dtype=float, count=len(complete))
    arms = np.fromiter((r.arm for r in complete), dtype=np.int64, count=len(complete))
    outcomes = np.fromiter((r.outcome for r in complete), dtype=np.int64, count=len(complete))
    strata = assign_strata(scores, spec)
    return ContingencyPanel.from_arrays(strata, arms, outcomes, spec.J), n_missing


def analyze_trial(records: Sequence[TrialRecord], spec: StrataSpec, alpha: float = 0.05) -> AnalysisResult:
    """Stratified MH analysis of a trial (pass ``StrataSpec.single()`` for the unadjusted one)."""
    panel, n_missing = build_panel(records, spec)
    if sum(panel.n_treated) == 0 or sum(panel.n_control) == 0:
        raise InputError("need at least one complete record in each arm")
    try:
        return analyze_panel(panel, alpha, n_missing_excluded=n_missing)
    except NumericalError as exc:
        raise NumericalError(f"{spec.J}-stratum analysis failed: {exc}") from None
