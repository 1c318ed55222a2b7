"""Core value types shared across the package.

Stratum indices are 1-based everywhere. Counts are plain ints, probabilities
and variances are floats. Every type here is a frozen dataclass, so values are
safe to share between threads once built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError


def check_score(value: float, where: str = "score") -> float:
    """Validate a prognostic score (a probability in [0, 1])."""
    v = float(value)
    if not (0.0 <= v <= 1.0) or math.isnan(v):
        raise InputError(f"{where}: prognostic score {value!r} outside [0, 1]")
    return v


def _check_binary(value, what: str) -> int:
    if value not in (0, 1):
        raise InputError(f"{what} must be 0 or 1, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class TrialRecord:
    subject_id: str
    score: float
    arm: int
    outcome: Optional[int] = None  # None marks a missing outcome

    def __post_init__(self):
        object.__setattr__(self, "score", check_score(self.score, f"subject {self.subject_id}"))
        object.__setattr__(self, "arm", _check_binary(self.arm, "arm"))
        if self.outcome is not None:
            object.__setattr__(self, "outcome", _check_binary(self.outcome, "outcome"))


@dataclass(frozen=True)
class HistoricalRecord:
    subject_id: str
    score: float
    outcome: int

    def __post_init__(self):
        object.__setattr__(self, "score", check_score(self.score, f"subject {self.subject_id}"))
        if self.outcome is None:
            raise InputError(f"subject {self.subject_id}: historical outcome must be observed")
        object.__setattr__(self, "outcome", _check_binary(self.outcome, "outcome"))


@dataclass(frozen=True)
class StrataSpec:
    """Cutpoints ``(v_min, v_1, ..., v_{J-1}, v_max)`` of the score step function."""

    cutpoints: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cutpoints)
        if len(cuts) < 2:
            raise InputError("strata spec needs at least two cutpoints (J >= 1)")
        if any(math.isnan(c) for c in cuts):
            raise InputError("strata cutpoints must be finite")
        for k in range(1, len(cuts)):
            if not cuts[k - 1] < cuts[k]:
                raise InputError(
                    f"strata cutpoints must be strictly increasing (position {k}: "
                    f"{cuts[k - 1]!r} >= {cuts[k]!r})"
                )
        object.__setattr__(self, "cutpoints", cuts)

    @property
    def J(self) -> int:
        return len(self.cutpoints) - 1

    @classmethod
    def single(cls) -> "StrataSpec":
        """The unadjusted analysis: one stratum spanning [0, 1]."""
        return cls((0.0, 1.0))

    def to_dict(self) -> dict:
        return {"cutpoints": list(self.cutpoints)}

    @classmethod
    def from_dict(cls, d: dict) -> "StrataSpec":
        try:
            return cls(tuple(d["cutpoints"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed strata spec: {exc}") from None


@dataclass(frozen=True)
class ContingencyPanel:
    """Per-stratum 2x2 counts. Entry ``k`` of each tuple is stratum ``k + 1``."""

    n_treated: tuple[int, ...]
    n_control: tuple[int, ...]
    events_treated: tuple[int, ...]
    events_control: tuple[int, ...]

    def __post_init__(self):
        for name in ("n_treated", "n_control", "events_treated", "events_control"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        lengths = {len(self.n_treated), len(self.n_control),
                   len(self.events_treated), len(self.events_control)}
        if len(lengths) != 1:
            raise InputError("contingency panel columns have unequal lengths")

    @property
    def J(self) -> int:
        return len(self.n_treated)

    @property
    def n_stratum(self) -> tuple[int, ...]:
        return tuple(a + b for a, b in zip(self.n_treated, self.n_control))

    @property
    def events_stratum(self) -> tuple[int, ...]:
        return tuple(a + b for a, b in zip(self.events_treated, self.events_control))

    @property
    def total(self) -> int:
        return sum(self.n_stratum)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(N_1j, N_0j, Z_1j, Z_0j) as float arrays."""
        return (np.asarray(self.n_treated, dtype=float), np.asarray(self.n_control, dtype=float),
                np.asarray(self.events_treated, dtype=float),
                np.asarray(self.events_control, dtype=float))

    @classmethod
    def from_arrays(cls, strata, arms, outcomes, J: int) -> "ContingencyPanel":
        """Tabulate complete cases; ``strata`` holds 1-based indices."""
        strata = np.asarray(strata, dtype=np.int64) - 1
        arms = np.asarray(arms, dtype=bool)
        outcomes = np.asarray(outcomes, dtype=np.int64)
        n1 = np.bincount(strata[arms], minlength=J)
        n0 = np.bincount(strata[~arms], minlength=J)
        z1 = np.bincount(strata[arms], weights=outcomes[arms], minlength=J)
        z0 = np.bincount(strata[~arms], weights=outcomes[~arms], minlength=J)
        return cls(tuple(n1.tolist()), tuple(n0.tolist()),
                   tuple(int(v) for v in z1), tuple(int(v) for v in z0))

    def to_dict(self) -> dict:
        return {"n_treated": list(self.n_treated), "n_control": list(self.n_control),
                "events_treated": list(self.events_treated),
                "events_control": list(self.events_control)}

    @classmethod
    def from_dict(cls, d: dict) -> "ContingencyPanel":
        return cls(d["n_treated"], d["n_control"], d["events_treated"], d["events_control"])


def validate_panel(panel: ContingencyPanel) -> ContingencyPanel:
    """Return ``panel`` unchanged if its counts are consistent.

    Raises InputError naming the first offending stratum otherwise. Empty
    strata are allowed; the estimators skip them.
    """
    if panel.J < 1:
        raise InputError("contingency panel has no strata")
    rows = zip(panel.n_treated, panel.n_control, panel.events_treated, panel.events_control)
    for j, (n1, n0, z1, z0) in enumerate(rows, start=1):
        if min(n1, n0, z1, z0) < 0:
            raise InputError(f"stratum {j}: negative count")
        if z1 > n1:
            raise InputError(f"stratum {j}: treated events exceed subjects ({z1} > {n1})")
        if z0 > n0:
            raise InputError(f"stratum {j}: control events exceed subjects ({z0} > {n0})")
    return panel


@dataclass(frozen=True)
class DesignParams:
    """Trial design constants.

    ``r1`` is the assumed treatment-arm stratum/outcome correlation for the
    modeled estimator; ``None`` means "same as the control arm".
    """

    psi: float
    pi1: float = 0.5
    alpha: float = 0.05
    target_power: float = 0.8
    r1: Optional[float] = None

    def __post_init__(self):
        if not self.psi > 0:
            raise InputError(f"psi must be > 0, got {self.psi}")
        for name in ("pi1", "alpha", "target_power"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise InputError(f"{name} must lie in (0, 1), got {v}")
        if self.r1 is not None and not -1 <= self.r1 <= 1:
            raise InputError(f"r1 must lie in [-1, 1], got {self.r1}")

    @property
    def pi0(self) -> float:
        return 1.0 - self.pi1


@dataclass(frozen=True)
class AnalysisResult:
    rr_hat: float
    log_rr: float
    se_log_rr: float
    ci_low: float
    ci_high: float
    p_value: float
    n_analyzed: int = 0
    n_missing_excluded: int = 0
    alpha: float = 0.05
    n_strata: int = 1
    degenerate_variance: bool = False

    @property
    def var_log_rr(self) -> float:
        return self.se_log_rr ** 2


@dataclass(frozen=True)
class HistoricalSummary:
    """Stratum-level quantities estimated from control-only historical data."""

    J: int
    phi_hat: tuple[float, ...]
    mu0j_hat: tuple[float, ...]
    mu0_hat: float
    r_xy: float
    n_historical: int
    mean_scores: tuple[float, ...] = field(default=(), compare=True)

    def __post_init__(self):
        object.__setattr__(self, "phi_hat", tuple(float(v) for v in self.phi_hat))
        object.__setattr__(self, "mu0j_hat", tuple(float(v) for v in self.mu0j_hat))
        object.__setattr__(self, "mean_scores", tuple(float(v) for v in self.mean_scores))
        if len(self.phi_hat) != self.J or len(self.mu0j_hat) != self.J:
            raise InputError("historical summary vectors must have length J")
        if any(p <= 0 for p in self.phi_hat) or abs(sum(self.phi_hat) - 1.0) > 1e-9:
            raise InputError("stratum propensities must be positive and sum to 1")
        if any(not 0 <= m <= 1 for m in self.mu0j_hat) or not 0 <= self.mu0_hat <= 1:
            raise InputError("event probabilities must lie in [0, 1]")
        if not -1 <= self.r_xy <= 1:
            raise InputError(f"r_xy must lie in [-1, 1], got {self.r_xy}")

    def to_dict(self) -> dict:
        return {"J": self.J, "phi_hat": list(self.phi_hat), "mu0j_hat": list(self.mu0j_hat),
                "mu0_hat": self.mu0_hat, "r_xy": self.r_xy, "n_historical": self.n_historical,
                "mean_scores": list(self.mean_scores)}

    @classmethod
    def from_dict(cls, d: dict) -> "HistoricalSummary":
        try:
            return cls(J=int(d["J"]), phi_hat=d["phi_hat"], mu0j_hat=d["mu0j_hat"],
                       mu0_hat=float(d["mu0_hat"]), r_xy=float(d["r_xy"]),
                       n_historical=int(d["n_historical"]),
                       mean_scores=d.get("mean_scores", ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed historical summary: {exc}") from None


def as_float_tuple(values: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in values)
