"""Prognostic-score stratified Mantel-Haenszel risk-ratio analysis and trial planning."""

from .errors import ConfigError, InputError, NumericalError, ProcovaError
from .estimate import (MhEstimate, analyze_panel, analyze_trial, build_panel, gr_variance,
                       mh_risk_ratio, wald_inference)
from .models import (AnalysisResult, ContingencyPanel, DesignParams, HistoricalRecord,
                     HistoricalSummary, StrataSpec, TrialRecord, validate_panel)
from .plan import (ModeledProbabilities, PowerSpec, StratumProfile, VarianceEstimate,
                   asymptotic_variance, modeled_probabilities, modeled_variance, plug_in_variance,
                   power_at_n, reduction_closed_form, required_sample_size, unadjusted_variance,
                   variance_reduction)
from .simulate import (PopulationSpec, ScenarioConfig, ScenarioResult, TruncNormalSpec,
                       build_population, generate_dataset, metrics, run_scenario, solve_location,
                       trunc_normal_mean)
from .stratify import (assign_stratum, quantile_cutpoints, spearman, summarize_historical)

__version__ = "0.1.0"
