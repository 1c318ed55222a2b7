"""Monte Carlo study of the stratified and unadjusted analyses.

Prognostic scores follow a normal law truncated to (0, 1). Strata are the J
equal-mass quantile intervals of that law and each stratum's event
probability is the law's conditional mean on the interval.

Random numbers come from numpy's PCG64 bit generator. Replicate ``i`` of a
scenario with base seed ``s`` draws its historical sample from
``SeedSequence([s, i, 0])`` and its trial sample from ``SeedSequence([s, i, 1])``;
the same trial stream is reused for every risk ratio in the scenario. Within
a dataset the draws are, in order: n uniforms for stratum and score, n for
arm, n for Y(0) and n for Y(1).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import erfcx, ndtr, ndtri

from .errors import ConfigError, InputError, NumericalError
from .estimate import analyze_panel
from .models import ContingencyPanel, DesignParams, StrataSpec, TrialRecord
from .plan import modeled_variance, plug_in_variance, unadjusted_variance
from .stratify import assign_strata, quantile_cutpoints, spearman, summarize_arrays

RR_MODES = ("common_rr", "rederived")
THREADS_ENV = "PROCOVA_THREADS"

_SQRT_2PI = math.sqrt(2 * math.pi)


def _pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


def _mass(alpha, beta):
    # Phi(beta) - Phi(alpha), computed in the tail where it does not cancel.
    if alpha > 0:
        return float(ndtr(-alpha) - ndtr(-beta))
    return float(ndtr(beta) - ndtr(alpha))


@dataclass(frozen=True)
class TruncNormalSpec:
    """Normal(location, scale) truncated to (0, 1)."""

    location: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InputError(f"scale must be positive, got {self.scale}")
        if not self.normalizer > 0:
            raise NumericalError("truncated normal has no mass on (0, 1)")

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.location) / self.scale

    @property
    def normalizer(self) -> float:
        return _mass(-self.location / self.scale, (1 - self.location) / self.scale)

    # Below 0.5 most of the law sits above the normal's mean, where upper-tail
    # probabilities keep full precision; above it, lower-tail ones do.

    def cdf(self, x):
        z0 = -self.location / self.scale
        if self.location < 0.5:
            return (ndtr(-z0) - ndtr(-self._z(x))) / self.normalizer
        return (ndtr(self._z(x)) - ndtr(z0)) / self.normalizer

    def ppf(self, u):
        z0 = -self.location / self.scale
        u = np.asarray(u, dtype=float)
        if self.location < 0.5:
            z = -ndtri(ndtr(-z0) - u * self.normalizer)
        else:
            z = ndtri(ndtr(z0) + u * self.normalizer)
        return np.clip(self.location + self.scale * z, 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= 1)
        return np.where(inside, _pdf(self._z(x)) / (self.scale * self.normalizer), 0.0)


def _mills(z):
    # upper-tail mass over density, Q(z) / pdf(z), without underflow
    return math.sqrt(math.pi / 2) * erfcx(z / math.sqrt(2))


def _interval_mean(m: float, s: float, a: float, b: float) -> float:
    al, be = (a - m) / s, (b - m) / s
    if al > 0 or be < 0:
        # both limits in one tail: factor out the larger density
        flip = be < 0
        lo, hi = (-be, -al) if flip else (al, be)
        w = math.exp(-0.5 * (hi - lo) * (hi + lo))
        shift = (1 - w) / (_mills(lo) - w * _mills(hi))
        return m - s * shift if flip else m + s * shift
    return m + s * float(_pdf(al) - _pdf(be)) / _mass(al, be)


def trunc_normal_mean(spec: TruncNormalSpec, a: float = 0.0, b: float = 1.0) -> float:
    """Conditional mean of the (0, 1)-truncated law on the interval (a, b)."""
    if not 0 <= a < b <= 1:
        raise InputError(f"need 0 <= a < b <= 1, got ({a}, {b})")
    m, s = spec.location, spec.scale
    al, be = (a - m) / s, (b - m) / s
    if _mass(al, be) < 1e-300:
        raise NumericalError(f"vanishing interval mass on ({a}, {b})")
    return _interval_mean(m, s, a, b)


def solve_location(target_mean: float, scale: float) -> TruncNormalSpec:
    """Location of the underlying normal whose (0, 1)-truncation has the given mean.

    The truncated mean is strictly increasing in the location, so plain
    bisection converges. The bracket starts at [-10, 10] and is doubled
    while it fails to straddle the target.
    """
    if not 0 < target_mean < 1:
        raise InputError(f"target mean must lie in (0, 1), got {target_mean}")
    if not scale > 0:
        raise InputError(f"scale must be positive, got {scale}")

    def f(m):
        return _interval_mean(m, scale, 0.0, 1.0) - target_mean

    lo, hi = -10.0, 10.0
    # wide laws need locations beyond the default bracket to reach extreme means
    while not f(lo) < 0 < f(hi):
        if hi > 1e6:
            raise NumericalError(f"target unreachable: mean {target_mean} at scale {scale}")
        lo, hi = 2 * lo, 2 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    m = lo if abs(f(lo)) <= abs(f(hi)) else hi
    if abs(f(m)) > 1e-10:
        raise NumericalError(f"location solve did not converge for mean {target_mean}, scale {scale}")
    return TruncNormalSpec(m, scale)


def quantile_bounds(law: TruncNormalSpec, J: int) -> tuple[float, ...]:
    """Interval endpoints splitting the law into J equal-mass strata."""
    inner = law.ppf(np.arange(1, J) / J)
    return (0.0, *inner.tolist(), 1.0)


def stratum_means(law: TruncNormalSpec, bounds: Sequence[float]) -> tuple[float, ...]:
    return tuple(trunc_normal_mean(law, bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1))


@dataclass(frozen=True)
class PopulationSpec:
    J: int
    phi: tuple[float, ...]
    mu0j: tuple[float, ...]
    mu1j: tuple[float, ...]
    psi: float
    pi1: float
    bounds: tuple[float, ...]
    law: TruncNormalSpec
    rr_mode: str = "common_rr"

    @property
    def strata(self) -> StrataSpec:
        return StrataSpec(self.bounds)

    @property
    def mu0(self) -> float:
        return float(np.dot(self.phi, self.mu0j))

    @property
    def mu1(self) -> float:
        return float(np.dot(self.phi, self.mu1j))


def build_population(mu0: float, scale: float, psi: float, pi1: float, J: int = 5,
                     rr_mode: str = "common_rr") -> PopulationSpec:
    """Stratum propensities and event probabilities for one arm pair.

    ``common_rr`` sets ``mu1_j = psi * mu0_j``. ``rederived`` builds the
    treatment strata exactly like the control ones but for the marginal
    target ``psi * mu0``; the stratum ratios then vary.
    """
    if rr_mode not in RR_MODES:
        raise ConfigError(f"unknown rr_mode {rr_mode!r}; expected one of {RR_MODES}")
    if J < 1:
        raise InputError("J must be >= 1")
    law = solve_location(mu0, scale)
    bounds = quantile_bounds(law, J)
    mu0j = np.array(stratum_means(law, bounds))
    if rr_mode == "common_rr":
        mu1j = psi * mu0j
    else:
        if not psi * mu0 < 1:
            raise NumericalError(f"stratum probability >= 1: psi * mu0 = {psi * mu0:.4f}")
        law1 = solve_location(psi * mu0, scale)
        mu1j = np.array(stratum_means(law1, quantile_bounds(law1, J)))
    over = np.flatnonzero(mu1j >= 1)
    if over.size:
        j = int(over[0])
        raise NumericalError(
            f"stratum probability >= 1 in stratum {j + 1} (mu1 = {mu1j[j]:.4f}, {rr_mode} mode)"
        )
    return PopulationSpec(J=J, phi=tuple([1.0 / J] * J), mu0j=tuple(mu0j.tolist()),
                          mu1j=tuple(mu1j.tolist()), psi=psi, pi1=pi1, bounds=bounds,
                          law=law, rr_mode=rr_mode)


@dataclass
class SimulatedData:
    scores: np.ndarray
    strata: np.ndarray  # generator strata, 1-based
    arms: np.ndarray
    outcomes: np.ndarray


def draw_arrays(pop: PopulationSpec, n: int, arm_probability: float, rng: np.random.Generator) -> SimulatedData:
    """Array-level data generator; see the module docstring for the draw order."""
    if n < 1:
        raise InputError("n must be >= 1")
    u = rng.random(n)
    u_arm = rng.random(n)
    u0 = rng.random(n)
    u1 = rng.random(n)
    J = pop.J
    cum = np.cumsum(pop.phi)[:-1]
    strata = np.searchsorted(cum, u, side="right")
    scores = pop.law.ppf(u)
    # keep each score inside its stratum interval despite rounding in ppf
    lo = np.asarray(pop.bounds[:-1])[strata]
    hi = np.asarray(pop.bounds[1:])[strata]
    hi_open = np.where(strata == J - 1, hi, np.nextafter(hi, -np.inf))
    scores = np.minimum(np.maximum(scores, lo), hi_open)
    arms = (u_arm < arm_probability).astype(np.int64)
    y0 = u0 < np.asarray(pop.mu0j)[strata]
    y1 = u1 < np.asarray(pop.mu1j)[strata]
    outcomes = np.where(arms == 1, y1, y0).astype(np.int64)
    return SimulatedData(scores, strata + 1, arms, outcomes)


def generate_dataset(pop: PopulationSpec, n: int, arm_probability: float, rng_seed: int) -> list[TrialRecord]:
    """Simulated subjects as records. Use ``arm_probability=0`` for historical controls."""
    data = draw_arrays(pop, n, arm_probability, np.random.default_rng(rng_seed))
    width = len(str(n))
    return [TrialRecord(f"s{i + 1:0{width}d}", float(s), int(a), int(y))
            for i, (s, a, y) in enumerate(zip(data.scores, data.arms, data.outcomes))]


def replicate_rng(base_seed: int, replicate: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([base_seed, replicate, stream])))


# ---------------------------------------------------------------------------
# scenario configuration and metrics


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    J: int = 5
    mu0_hist: float = 0.5
    mu0_trial: float = 0.5
    sd_hist: float = 0.29
    sd_trial: float = 0.29
    pi1: float = 0.5
    psi_values: tuple[float, ...] = (1.0, 0.75, 1.25)
    n_hist: int = 10_000
    n_trial: int = 800
    n_reps: int = 1_000
    base_seed: int = 20230101
    alpha: float = 0.05
    rr_mode: str = "common_rr"
    r1: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "psi_values", tuple(float(p) for p in self.psi_values))
        if min(self.n_hist, self.n_trial) < 1 or self.n_reps < 1:
            raise ConfigError(f"{self.name}: sample sizes and n_reps must be >= 1")
        if self.J < 2:
            raise ConfigError(f"{self.name}: scenarios need J >= 2")
        if not 0 < self.pi1 < 1:
            raise ConfigError(f"{self.name}: pi1 must lie in (0, 1)")
        if not self.psi_values or any(p <= 0 for p in self.psi_values):
            raise ConfigError(f"{self.name}: psi_values must be positive")
        if self.rr_mode not in RR_MODES:
            raise ConfigError(f"{self.name}: rr_mode must be one of {RR_MODES}")
        for k in ("mu0_hist", "mu0_trial"):
            if not 0 < getattr(self, k) < 1:
                raise ConfigError(f"{self.name}: {k} must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"{self.name}: alpha must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        if "name" not in d:
            raise ConfigError("scenario is missing 'name'")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["psi_values"] = list(self.psi_values)
        return d


@dataclass(frozen=True)
class Metrics:
    n: int
    mean_log_rr: float
    mean_rr: float
    mse: float
    mse_rr: float
    coverage: float
    rejection_rate: float
    empirical_variance: float
    biases: dict = field(default_factory=dict)


def metrics(log_rr, ci_low, ci_high, p_values, truth: float, alpha: float = 0.05,
            prospective: Optional[dict] = None) -> Metrics:
    """Replicate-level summaries on the log risk-ratio scale.

    ``ci_low``/``ci_high`` are log-scale limits and ``truth`` is the true log
    risk ratio. ``prospective`` maps a name to per-replicate prospective
    variances; each bias is its mean minus the empirical variance.
    """
    log_rr = np.asarray(log_rr, dtype=float)
    n = log_rr.size
    if n < 2:
        raise NumericalError("insufficient replicates: need at least 2")
    ci_low = np.asarray(ci_low, dtype=float)
    ci_high = np.asarray(ci_high, dtype=float)
    p_values = np.asarray(p_values, dtype=float)
    emp_var = float(np.var(log_rr, ddof=1))
    biases = {}
    for name, values in (prospective or {}).items():
        values = np.asarray(values, dtype=float)
        biases[name] = float(values.mean()) - emp_var if values.size else math.nan
    return Metrics(
        n=n,
        mean_log_rr=float(np.mean(log_rr)),
        mean_rr=float(np.mean(np.exp(log_rr))),
        mse=float(np.mean((log_rr - truth) ** 2)),
        mse_rr=float(np.mean((np.exp(log_rr) - math.exp(truth)) ** 2)),
        coverage=float(np.mean((ci_low <= truth) & (truth <= ci_high))),
        rejection_rate=float(np.mean(p_values < alpha)),
        empirical_variance=emp_var,
        biases=biases,
    )


@dataclass(frozen=True)
class ScenarioRow:
    scenario: str
    psi: float
    method: str
    n_ok: int
    n_failed: int
    mean_rr: float
    mse: float
    mse_rr: float
    rejection_rate: float
    coverage: float
    empirical_variance: float
    mean_observed_variance: float
    mean_plugin_variance: float
    plugin_bias: float
    mean_modeled_variance: float
    modeled_bias: float
    observed_gamma: float
    mean_plugin_gamma: float
    plugin_gamma_bias: float
    mean_modeled_gamma: float
    modeled_gamma_bias: float
    r2_historical: float
    r2_trial_control: float
    r2_trial_treated: float
    r2_trial: float
    r2_trial_shift: float
    plugin_infeasible: int
    modeled_failed: int


ROW_COLUMNS = tuple(f.name for f in fields(ScenarioRow))


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    rows: tuple[ScenarioRow, ...]
    n_failed: int
    flagged: bool

    def row(self, psi: float, method: str) -> ScenarioRow:
        for r in self.rows:
            if r.method == method and math.isclose(r.psi, psi):
                return r
        raise KeyError((psi, method))


_METHODS = ("cmh", "unadjusted")


def _r2_in_arm(strata, arms, outcomes, arm):
    sel = arms == arm
    try:
        return spearman(strata[sel], outcomes[sel]) ** 2
    except (NumericalError, InputError):
        return math.nan


def _run_replicate(config: ScenarioConfig, hist_pop: PopulationSpec,
                   trial_pops: Sequence[PopulationSpec], i: int) -> list[dict]:
    hist = draw_arrays(hist_pop, config.n_hist, 0.0, replicate_rng(config.base_seed, i, 0))
    out = []
    try:
        spec = quantile_cutpoints(hist.scores, config.J)
        summary = summarize_arrays(hist.scores, hist.outcomes, spec)
    except (NumericalError, InputError):
        return [{"ok": False} for _ in trial_pops]
    r2_hist = summary.r_xy ** 2
    for pop in trial_pops:
        rec = {"ok": True, "r2_hist": r2_hist}
        design = DesignParams(psi=pop.psi, pi1=config.pi1, alpha=config.alpha, r1=config.r1)
        rec["plugin_infeasible"] = bool(np.any(pop.psi * np.asarray(summary.mu0j_hat) > 1))
        try:
            unadj = unadjusted_variance(summary.mu0_hat, design).sigma2_inf
            plug = plug_in_variance(summary, design, allow_infeasible=True).sigma2_inf
        except (NumericalError, InputError):
            unadj = plug = math.nan
        try:
            modeled = modeled_variance(summary, design).sigma2_inf
        except (NumericalError, InputError):
            modeled = math.nan
        rec.update(unadj_pred=unadj, plugin_pred=plug, modeled_pred=modeled)

        data = draw_arrays(pop, config.n_trial, config.pi1, replicate_rng(config.base_seed, i, 1))
        strata = assign_strata(data.scores, spec)
        for method, s in (("cmh", strata), ("unadjusted", np.ones_like(strata))):
            J = config.J if method == "cmh" else 1
            panel = ContingencyPanel.from_arrays(s, data.arms, data.outcomes, J)
            try:
                res = analyze_panel(panel, config.alpha)
            except (NumericalError, InputError):
                rec["ok"] = False
                break
            zc = float(ndtri(1 - config.alpha / 2))
            rec[method] = (res.log_rr, res.var_log_rr, res.log_rr - zc * res.se_log_rr,
                           res.log_rr + zc * res.se_log_rr, res.p_value)
        rec["r2_c"] = _r2_in_arm(strata, data.arms, data.outcomes, 0)
        rec["r2_t"] = _r2_in_arm(strata, data.arms, data.outcomes, 1)
        out.append(rec)
    return out


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if k < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return k
    return 1


def _nanmean(values) -> float:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if arr.size else math.nan


def run_scenario(config: ScenarioConfig, threads: Optional[int] = None) -> ScenarioResult:
    """Replicate historical planning plus trial analysis and aggregate the metrics.

    Each replicate depends only on ``(base_seed, replicate index)``, and results
    are gathered in replicate order, so the output does not depend on
    ``threads``.
    """
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    hist_pop = build_population(config.mu0_hist, config.sd_hist, 1.0, config.pi1, config.J, "common_rr")
    try:
        trial_pops = [build_population(config.mu0_trial, config.sd_trial, psi, config.pi1,
                                       config.J, config.rr_mode) for psi in config.psi_values]
    except NumericalError as exc:
        raise ConfigError(f"{config.name}: {exc}") from None

    def work(i):
        return _run_replicate(config, hist_pop, trial_pops, i)

    if threads == 1:
        reps = [work(i) for i in range(config.n_reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(work, range(config.n_reps)))

    rows = []
    total_failed = 0
    for k, pop in enumerate(trial_pops):
        recs = [rep[k] for rep in reps]
        good = [r for r in recs if r["ok"]]
        n_failed = len(recs) - len(good)
        total_failed = max(total_failed, n_failed)
        truth = math.log(pop.mu1 / pop.mu0)
        n1 = config.n_trial - 1
        cmh_var = np.array([r["cmh"][1] for r in good])
        un_var = np.array([r["unadjusted"][1] for r in good])
        obs_gamma = float(np.mean(1 - cmh_var / un_var)) if good else math.nan
        unadj_pred = np.array([r["unadj_pred"] for r in good])
        plug_pred = np.array([r["plugin_pred"] for r in good])
        mod_pred = np.array([r["modeled_pred"] for r in good])
        plug_gamma = _nanmean(1 - plug_pred / unadj_pred)
        mod_gamma = _nanmean(1 - mod_pred / unadj_pred)
        r2_hist = _nanmean([r["r2_hist"] for r in good])
        r2_c = _nanmean([r["r2_c"] for r in good])
        r2_t = _nanmean([r["r2_t"] for r in good])
        r2_trial = 0.5 * (r2_c + r2_t)
        infeasible = int(sum(r["plugin_infeasible"] for r in good))
        modeled_failed = int(np.isnan(mod_pred).sum())
        for method in _METHODS:
            est = np.array([r[method] for r in good]).reshape(-1, 5)
            if method == "cmh":
                pros = {"plugin": plug_pred / n1, "modeled": mod_pred / n1}
            else:
                # one stratum: both prospective estimators reduce to the pooled formula
                pros = {"plugin": unadj_pred / n1, "modeled": unadj_pred / n1}
            pros = {k: v[~np.isnan(v)] for k, v in pros.items()}
            if len(good) >= 2:
                m = metrics(est[:, 0], est[:, 2], est[:, 3], est[:, 4], truth, config.alpha, pros)
            else:
                m = None
            nan = math.nan
            rows.append(ScenarioRow(
                scenario=config.name, psi=pop.psi, method=method, n_ok=len(good), n_failed=n_failed,
                mean_rr=m.mean_rr if m else nan, mse=m.mse if m else nan,
                mse_rr=m.mse_rr if m else nan,
                rejection_rate=m.rejection_rate if m else nan, coverage=m.coverage if m else nan,
                empirical_variance=m.empirical_variance if m else nan,
                mean_observed_variance=float(np.mean(est[:, 1])) if good else nan,
                mean_plugin_variance=_nanmean(pros["plugin"]),
                plugin_bias=m.biases["plugin"] if m else nan,
                mean_modeled_variance=_nanmean(pros["modeled"]),
                modeled_bias=m.biases["modeled"] if m else nan,
                observed_gamma=obs_gamma,
                mean_plugin_gamma=plug_gamma, plugin_gamma_bias=plug_gamma - obs_gamma,
                mean_modeled_gamma=mod_gamma, modeled_gamma_bias=mod_gamma - obs_gamma,
                r2_historical=r2_hist, r2_trial_control=r2_c, r2_trial_treated=r2_t,
                r2_trial=r2_trial, r2_trial_shift=r2_trial - r2_hist,
                plugin_infeasible=infeasible, modeled_failed=modeled_failed,
            ))
    flagged = total_failed > 0.01 * config.n_reps
    return ScenarioResult(config=config, rows=tuple(rows), n_failed=total_failed, flagged=flagged)


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(config, **kw) if kw else config
