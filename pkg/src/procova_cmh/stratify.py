"""Strata definition from historical scores and the historical summary statistics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InputError, NumericalError
from .models import HistoricalRecord, HistoricalSummary, StrataSpec, check_score


def quantile_cutpoints(scores: Sequence[float], J: int) -> StrataSpec:
    """Equal-frequency strata from a historical score sample.

    Interior cutpoints are the empirical k/J quantiles (linear interpolation
    between order statistics, the usual "type 7" rule). The outer cutpoints
    are pinned to 0 and 1 so trial scores beyond the historical range still
    land in an edge stratum.
    """
    if J < 1:
        raise InputError(f"number of strata must be >= 1, got {J}")
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise InputError("no scores to stratify")
    if np.any((scores < 0) | (scores > 1)) or np.any(np.isnan(scores)):
        raise InputError("prognostic scores must lie in [0, 1]")
    if J == 1:
        return StrataSpec((0.0, 1.0))
    if np.unique(scores).size < J:
        raise NumericalError(f"degenerate quantiles: fewer than {J} distinct scores")
    interior = np.quantile(scores, np.arange(1, J) / J, method="linear")
    cuts = np.concatenate(([0.0], interior, [1.0]))
    if np.any(np.diff(cuts) <= 0):
        raise NumericalError(
            f"degenerate quantiles: score distribution too discrete for {J} strata "
            f"(cutpoints {np.round(cuts, 6).tolist()})"
        )
    return StrataSpec(tuple(cuts.tolist()))


def assign_strata(scores, spec: StrataSpec) -> np.ndarray:
    """Vectorised step function: 1-based stratum index for each score.

    Intervals are ``[v_{j-1}, v_j)`` except the last, which is closed.
    """
    scores = np.asarray(scores, dtype=float)
    cuts = spec.cutpoints
    bad = (scores < cuts[0]) | (scores > cuts[-1]) | np.isnan(scores)
    if np.any(bad):
        first = scores[bad][0]
        raise InputError(f"score out of range: {first!r} not in [{cuts[0]}, {cuts[-1]}]")
    return np.searchsorted(np.asarray(cuts[1:-1]), scores, side="right") + 1


def assign_stratum(score: float, spec: StrataSpec) -> int:
    return int(assign_strata(np.array([score]), spec)[0])


def midranks(values) -> np.ndarray:
    """Ranks 1..n with tied values sharing the average of their positions."""
    values = np.asarray(values)
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    return (upper - (counts - 1) / 2.0)[inverse.ravel()]


def spearman(x, y) -> float:
    """Spearman correlation with the midrank tie correction.

    This is the Pearson correlation of the midranks, which stays exact when
    ``y`` is binary and ties are everywhere.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("spearman needs two 1-d sequences of equal length")
    if x.size < 2:
        raise InputError("spearman needs at least two observations")
    rx = midranks(x)
    ry = midranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        raise NumericalError("zero variance: spearman correlation undefined for constant input")
    r = float(rx @ ry) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def summarize_arrays(scores, outcomes, spec: StrataSpec) -> HistoricalSummary:
    """Array form of :func:`summarize_historical` (used by the simulator)."""
    scores = np.asarray(scores, dtype=float)
    outcomes = np.asarray(outcomes, dtype=np.int64)
    n = scores.size
    if n == 0:
        raise InputError("no historical records")
    J = spec.J
    strata = assign_strata(scores, spec)
    counts = np.bincount(strata - 1, minlength=J)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise NumericalError(f"empty stratum {int(empty[0]) + 1}: no historical records")
    events = np.bincount(strata - 1, weights=outcomes, minlength=J)
    score_sums = np.bincount(strata - 1, weights=scores, minlength=J)
    if J == 1:
        r_xy = 0.0  # no stratification, no association to measure
    else:
        r_xy = spearman(strata, outcomes)
    return HistoricalSummary(
        J=J,
        phi_hat=tuple((counts / n).tolist()),
        mu0j_hat=tuple((events / counts).tolist()),
        mu0_hat=float(outcomes.sum() / n),
        r_xy=r_xy,
        n_historical=int(n),
        mean_scores=tuple((score_sums / counts).tolist()),
    )


def summarize_historical(records: Sequence[HistoricalRecord], spec: StrataSpec) -> HistoricalSummary:
    """Stratum propensities, stratum and marginal event rates, and the
    stratum/outcome Spearman correlation of a historical control sample."""
    scores = np.fromiter((check_score(r.score) for r in records), dtype=float, count=len(records))
    outcomes = np.fromiter((r.outcome for r in records), dtype=np.int64, count=len(records))
    return summarize_arrays(scores, outcomes, spec)
