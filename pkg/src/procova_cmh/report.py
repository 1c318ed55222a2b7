"""Deterministic text and delimited (CSV) reports.

Delimited column orders are fixed by the ``*_COLUMNS`` tuples below and are
part of the public interface.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import InputError
from .models import AnalysisResult, HistoricalSummary
from .simulate import ROW_COLUMNS, ScenarioResult

ANALYSIS_COLUMNS = ("method", "n_strata", "rr_hat", "log_rr", "se_log_rr", "ci_low", "ci_high",
                    "p_value", "alpha", "n_analyzed", "n_missing_excluded", "degenerate_variance")
PLAN_COLUMNS = ("method", "sigma2_inf", "n_candidate", "per_trial_variance", "gamma_vs_unadjusted",
                "required_n", "psi", "pi1", "alpha", "target_power")
SUMMARY_COLUMNS = ("stratum", "phi_hat", "mu0j_hat", "mean_score")


@dataclass(frozen=True)
class TrialReport:
    cmh: AnalysisResult
    unadjusted: Optional[AnalysisResult] = None

    @property
    def variance_reduction(self) -> Optional[float]:
        if self.unadjusted is None or self.unadjusted.var_log_rr == 0:
            return None
        return 1.0 - self.cmh.var_log_rr / self.unadjusted.var_log_rr


@dataclass(frozen=True)
class PlanEntry:
    method: str
    sigma2_inf: float
    per_trial_variance: Optional[float]
    gamma: Optional[float]
    required_n: Optional[int]


@dataclass(frozen=True)
class PlanReport:
    psi: float
    pi1: float
    alpha: float
    target_power: float
    n_candidate: Optional[int]
    entries: tuple[PlanEntry, ...]


def _num(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "NA"
    return repr(float(x))


def _short(x, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return f"{x:.{digits}f}"


def _csv(header: Sequence[str], rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _num(v) for v in row])
    return buf.getvalue().encode()


def _analysis_row(method: str, r: AnalysisResult):
    return (method, r.n_strata, r.rr_hat, r.log_rr, r.se_log_rr, r.ci_low, r.ci_high, r.p_value,
            r.alpha, r.n_analyzed, r.n_missing_excluded, r.degenerate_variance)


def _analysis_text(label: str, r: AnalysisResult) -> list[str]:
    level = round(100 * (1 - r.alpha), 6)
    lines = [
        f"[{label}] strata={r.n_strata}",
        f"  risk ratio        {r.rr_hat:.4f}",
        f"  log risk ratio    {r.log_rr:.4f}  (SE {r.se_log_rr:.4f})",
        f"  {level:g}% CI         ({r.ci_low:.4f}, {r.ci_high:.4f})",
        f"  p-value           {r.p_value:.4g}",
        f"  n analyzed        {r.n_analyzed}",
        f"  missing excluded  {r.n_missing_excluded}",
    ]
    if r.degenerate_variance:
        lines.append("  WARNING: zero variance estimate; p-value set to 0")
    return lines


def emit_report(result, format: str = "text") -> bytes:
    """Render an analysis, plan, summary or simulation result.

    ``format`` is ``"text"`` for people or ``"delimited"`` for CSV.
    """
    if format not in ("text", "delimited"):
        raise InputError(f"unknown report format {format!r}")
    if isinstance(result, AnalysisResult):
        result = TrialReport(result)
    if isinstance(result, TrialReport):
        return _trial(result, format)
    if isinstance(result, PlanReport):
        return _plan(result, format)
    if isinstance(result, HistoricalSummary):
        return _summary(result, format)
    if isinstance(result, ScenarioResult):
        result = [result]
    if isinstance(result, (list, tuple)) and all(isinstance(r, ScenarioResult) for r in result):
        return _scenarios(result, format)
    raise InputError(f"cannot report on {type(result).__name__}")


def _trial(rep: TrialReport, format: str) -> bytes:
    pairs = [("procova_cmh", rep.cmh)]
    if rep.unadjusted is not None:
        pairs.append(("unadjusted", rep.unadjusted))
    if format == "delimited":
        return _csv(ANALYSIS_COLUMNS, (_analysis_row(m, r) for m, r in pairs))
    lines = []
    for m, r in pairs:
        lines += _analysis_text(m, r)
    if rep.variance_reduction is not None:
        lines.append(f"observed variance reduction (1 - var_cmh / var_unadj): {rep.variance_reduction:.4f}")
    lines.append("variances are Greenland-Robins estimates of Var(log RR)")
    return ("\n".join(lines) + "\n").encode()


def _plan(rep: PlanReport, format: str) -> bytes:
    if format == "delimited":
        rows = ((e.method, e.sigma2_inf, rep.n_candidate, e.per_trial_variance, e.gamma,
                 e.required_n, rep.psi, rep.pi1, rep.alpha, rep.target_power) for e in rep.entries)
        return _csv(PLAN_COLUMNS, rows)
    lines = [f"design: psi={rep.psi:g} pi1={rep.pi1:g} alpha={rep.alpha:g} power={rep.target_power:g}"]
    for e in rep.entries:
        lines.append(f"[{e.method}] asymptotic variance of sqrt(n) log RR = {e.sigma2_inf:.6f}")
        if e.per_trial_variance is not None:
            lines.append(f"  per-trial variance at n={rep.n_candidate} (sigma2 / (n - 1)) = {e.per_trial_variance:.6f}")
        if e.gamma is not None:
            lines.append(f"  variance reduction vs unadjusted = {e.gamma:.4f}")
        lines.append(f"  required n = {_short(e.required_n)}")
    return ("\n".join(lines) + "\n").encode()


def _summary(s: HistoricalSummary, format: str) -> bytes:
    means = s.mean_scores or (math.nan,) * s.J
    rows = [(j + 1, s.phi_hat[j], s.mu0j_hat[j], means[j]) for j in range(s.J)]
    if format == "delimited":
        return _csv(SUMMARY_COLUMNS, rows)
    lines = [f"historical records: {s.n_historical}", f"strata: {s.J}",
             f"marginal control rate: {s.mu0_hat:.4f}",
             f"spearman r_xy: {s.r_xy:.4f} (r^2 = {s.r_xy ** 2:.4f})",
             "stratum  phi_hat  mu0j_hat  mean_score"]
    lines += [f"{j:>7}  {p:.4f}   {m:.4f}    {_short(ms)}" for j, p, m, ms in rows]
    return ("\n".join(lines) + "\n").encode()


_TEXT_COLUMNS = (("scenario", 22), ("psi", 5), ("method", 10), ("mse", 8), ("rejection_rate", 8),
                 ("coverage", 8), ("plugin_bias", 8), ("modeled_bias", 8), ("observed_gamma", 8),
                 ("modeled_gamma_bias", 8), ("plugin_gamma_bias", 8), ("r2_historical", 8),
                 ("r2_trial_shift", 8))


def _scenarios(results: Sequence[ScenarioResult], format: str) -> bytes:
    rows = [r for res in results for r in res.rows]
    if format == "delimited":
        return _csv(ROW_COLUMNS, ([getattr(r, c) for c in ROW_COLUMNS] for r in rows))
    head = " ".join(name[:w].rjust(w) for name, w in _TEXT_COLUMNS)
    lines = [head]
    for r in rows:
        cells = []
        for name, w in _TEXT_COLUMNS:
            v = getattr(r, name)
            cells.append((v if isinstance(v, str) else _short(v, 2 if name == "psi" else 4)).rjust(w))
        lines.append(" ".join(cells))
    for res in results:
        if res.flagged:
            lines.append(f"WARNING: {res.config.name}: {res.n_failed} of {res.config.n_reps} replicates failed")
    lines.append("MSE and coverage are on the log risk-ratio scale; prospective variances are sigma2 / (n - 1)")
    return ("\n".join(lines) + "\n").encode()
