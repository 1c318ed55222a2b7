"""Command-line entry point: ``procova-cmh <subcommand> ...``.

Exit codes: 0 success, 2 input/validation error, 3 numerical or statistical
failure, 4 configuration error. Errors print one line to stderr of the form
``procova-cmh: error[E_CODE]: message``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import fileio
from .errors import ConfigError, InputError, ProcovaError
from .estimate import analyze_trial
from .models import DesignParams, StrataSpec
from .plan import (modeled_variance, plug_in_variance, required_sample_size, unadjusted_variance,
                   variance_reduction)
from .report import PlanEntry, PlanReport, TrialReport, emit_report
from .simulate import default_threads, run_scenario, with_overrides
from .stratify import quantile_cutpoints, summarize_historical

PROG = "procova-cmh"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _r1(text: str) -> Optional[float]:
    if text == "equal":
        return None
    v = float(text)
    if not -1 <= v <= 1:
        raise argparse.ArgumentTypeError(f"must be 'equal' or a value in [-1, 1], got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("strata", help="define quantile strata and summarise historical controls")
    s.add_argument("--historical", required=True, help="CSV with subject_id,score,outcome")
    s.add_argument("--strata", type=int, required=True, metavar="J")
    s.add_argument("--out", required=True, help="strata spec (JSON) to write")
    s.add_argument("--summary", required=True, help="historical summary (JSON) to write")

    def design_args(q, estimators):
        q.add_argument("--summary", required=True, help="historical summary JSON from `strata`")
        q.add_argument("--psi", type=_positive, required=True, help="target risk ratio")
        q.add_argument("--pi1", type=_probability, default=0.5, help="randomisation probability to treatment")
        q.add_argument("--estimator", choices=estimators, default="both")
        q.add_argument("--r1", type=_r1, default=None,
                       help="treatment-arm correlation for the modeled estimator ('equal' or a value)")
        q.add_argument("--format", choices=("text", "delimited"), default="text")

    q = sub.add_parser("plan", help="prospective variance, power and sample size")
    design_args(q, ("plugin", "modeled", "both"))
    q.add_argument("--alpha", type=_probability, default=0.05)
    q.add_argument("--power", type=_probability, default=0.8)
    q.add_argument("--n", type=int, default=None, help="candidate trial size for per-trial variance")

    r = sub.add_parser("reduction", help="predicted variance reduction against the unadjusted analysis")
    design_args(r, ("plugin", "modeled", "both"))

    a = sub.add_parser("analyze", help="stratified MH analysis of trial data")
    a.add_argument("--trial", required=True, help="CSV with subject_id,score,arm,outcome")
    a.add_argument("--spec", required=True, help="strata spec JSON from `strata`")
    a.add_argument("--alpha", type=_probability, default=0.05)
    a.add_argument("--unadjusted", action="store_true", help="also run the single-stratum analysis")
    a.add_argument("--format", choices=("text", "delimited"), default="text")

    m = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    m.add_argument("--config", required=True,
                   help=f"scenario JSON file or a bundled set ({', '.join(fileio.BUNDLED_SCENARIOS)})")
    m.add_argument("--out", required=True, help="CSV result table to write")
    m.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $PROCOVA_THREADS or 1)")
    m.add_argument("--seed", type=int, default=None,
                   help="base seed; scenario k (0-based) uses seed + k")
    m.add_argument("--reps", type=int, default=None, help="override n_reps for every scenario")
    m.add_argument("--scenario", action="append", default=None, help="run only the named scenario(s)")
    return p


def _cmd_strata(args) -> bytes:
    records = fileio.ingest_historical(args.historical)
    spec = quantile_cutpoints([r.score for r in records], args.strata)
    summary = summarize_historical(records, spec)
    fileio.write_strata_spec(args.out, spec)
    fileio.write_summary(args.summary, summary)
    return emit_report(summary)


def _design(args, alpha=0.05, power=0.8) -> DesignParams:
    return DesignParams(psi=args.psi, pi1=args.pi1, alpha=alpha, target_power=power, r1=args.r1)


def _estimates(summary, design, which):
    out = []
    if which in ("plugin", "both"):
        out.append(plug_in_variance(summary, design))
    if which in ("modeled", "both"):
        out.append(modeled_variance(summary, design))
    return out


def _cmd_plan(args) -> bytes:
    summary = fileio.read_summary(args.summary)
    design = _design(args, args.alpha, args.power)
    if args.n is not None and args.n < 2:
        raise InputError("--n must be at least 2")
    unadj = unadjusted_variance(summary.mu0_hat, design)
    entries = []
    for est in _estimates(summary, design, args.estimator) + [unadj]:
        gamma = None if est is unadj else variance_reduction(est, unadj)
        n_req = None if design.psi == 1 else required_sample_size(design, est)
        per = est.per_trial(args.n) if args.n else None
        entries.append(PlanEntry(est.method, est.sigma2_inf, per, gamma, n_req))
    rep = PlanReport(design.psi, design.pi1, design.alpha, design.target_power, args.n, tuple(entries))
    return emit_report(rep, args.format)


def _cmd_reduction(args) -> bytes:
    summary = fileio.read_summary(args.summary)
    design = _design(args)
    unadj = unadjusted_variance(summary.mu0_hat, design)
    entries = [PlanEntry(e.method, e.sigma2_inf, None, variance_reduction(e, unadj), None)
               for e in _estimates(summary, design, args.estimator)]
    entries.append(PlanEntry(unadj.method, unadj.sigma2_inf, None, None, None))
    rep = PlanReport(design.psi, design.pi1, design.alpha, design.target_power, None, tuple(entries))
    return emit_report(rep, args.format)


def _cmd_analyze(args) -> bytes:
    records = fileio.ingest_trial(args.trial)
    spec = fileio.read_strata_spec(args.spec)
    cmh = analyze_trial(records, spec, args.alpha)
    unadj = analyze_trial(records, StrataSpec.single(), args.alpha) if args.unadjusted else None
    return emit_report(TrialReport(cmh, unadj), args.format)


def _cmd_simulate(args) -> bytes:
    configs = fileio.load_scenarios(args.config)
    if args.scenario:
        names = set(args.scenario)
        missing = names - {c.name for c in configs}
        if missing:
            raise ConfigError(f"unknown scenario(s): {sorted(missing)}")
        configs = [c for c in configs if c.name in names]
    if args.reps is not None and args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    results = []
    for k, cfg in enumerate(configs):
        seed = None if args.seed is None else args.seed + k
        cfg = with_overrides(cfg, base_seed=seed, n_reps=args.reps)
        results.append(run_scenario(cfg, threads=threads))
    Path(args.out).write_bytes(emit_report(results, "delimited"))
    return emit_report(results, "text")


COMMANDS = {"strata": _cmd_strata, "plan": _cmd_plan, "reduction": _cmd_reduction,
            "analyze": _cmd_analyze, "simulate": _cmd_simulate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        out = COMMANDS[args.command](args)
    except ProcovaError as exc:
        msg = " ".join(str(exc).split())
        print(f"{PROG}: error[{exc.code}]: {msg}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"{PROG}: error[{InputError.code}]: {exc}", file=sys.stderr)
        return InputError.exit_code
    sys.stdout.write(out.decode())
    return 0


if __name__ == "__main__":
    sys.exit(main())
