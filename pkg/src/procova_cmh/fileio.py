"""CSV ingestion and JSON (de)serialisation of specs, summaries and scenario files."""
from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path
from typing import Union

from .errors import ConfigError, InputError, ProcovaError
from .models import HistoricalRecord, HistoricalSummary, StrataSpec, TrialRecord
from .simulate import ScenarioConfig

PathLike = Union[str, Path]

HISTORICAL_COLUMNS = ("subject_id", "score", "outcome")
TRIAL_COLUMNS = ("subject_id", "score", "arm", "outcome")
MISSING = "NA"
BUNDLED_SCENARIOS = ("paper_table2",)


def _rows(path: PathLike, columns: tuple[str, ...]):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: no records (empty file)")
        header = tuple(h.strip() for h in header)
        if header != columns:
            raise InputError(f"{path}: header {','.join(header)!r} does not match "
                             f"expected {','.join(columns)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise InputError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _parse_binary(text: str, what: str) -> int:
    if text not in ("0", "1"):
        raise InputError(f"{what} must be 0 or 1, got {text!r}")
    return int(text)


def _parse_score(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputError(f"score {text!r} is not a number") from None


def ingest_historical(path: PathLike) -> list[HistoricalRecord]:
    """Load ``subject_id,score,outcome`` rows. Any bad row aborts the load."""
    records = []
    for lineno, (sid, score, outcome) in _rows(path, HISTORICAL_COLUMNS):
        try:
            if outcome == MISSING:
                raise InputError("historical outcomes must be observed (found NA)")
            records.append(HistoricalRecord(sid, _parse_score(score), _parse_binary(outcome, "outcome")))
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise InputError(f"{path}: no records")
    return records


def ingest_trial(path: PathLike) -> list[TrialRecord]:
    """Load ``subject_id,score,arm,outcome`` rows; ``NA`` marks a missing outcome."""
    records = []
    for lineno, (sid, score, arm, outcome) in _rows(path, TRIAL_COLUMNS):
        try:
            y = None if outcome == MISSING else _parse_binary(outcome, "outcome")
            records.append(TrialRecord(sid, _parse_score(score), _parse_binary(arm, "arm"), y))
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise InputError(f"{path}: no records")
    return records


def write_historical(path: PathLike, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORICAL_COLUMNS)
        for r in records:
            w.writerow([r.subject_id, repr(r.score), r.outcome])


def write_trial(path: PathLike, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in records:
            w.writerow([r.subject_id, repr(r.score), r.arm, MISSING if r.outcome is None else r.outcome])


def _read_json(path: PathLike, error=InputError):
    path = Path(path)
    if not path.is_file():
        raise error(f"{path}: no such file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise error(f"{path}: invalid JSON ({exc})") from None


def _write_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_strata_spec(path: PathLike, spec: StrataSpec) -> None:
    _write_json(path, spec.to_dict())


def read_strata_spec(path: PathLike) -> StrataSpec:
    return StrataSpec.from_dict(_read_json(path))


def write_summary(path: PathLike, summary: HistoricalSummary) -> None:
    _write_json(path, summary.to_dict())


def read_summary(path: PathLike) -> HistoricalSummary:
    return HistoricalSummary.from_dict(_read_json(path))


def load_scenarios(source: str) -> list[ScenarioConfig]:
    """Scenario configs from a JSON file, or a bundled set by name.

    The file holds ``{"scenarios": [{...}, ...]}`` where each entry mirrors
    :class:`ScenarioConfig`.
    """
    if source in BUNDLED_SCENARIOS:
        text = resources.files("procova_cmh").joinpath(f"data/{source}.json").read_text()
        doc = json.loads(text)
    else:
        doc = _read_json(source, ConfigError)
    entries = doc.get("scenarios") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{source}: expected a non-empty 'scenarios' list")
    configs = []
    for entry in entries:
        if not isinstance(entry, dict):
            raise ConfigError(f"{source}: each scenario must be an object")
        try:
            configs.append(ScenarioConfig.from_dict(entry))
        except ProcovaError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    return configs


def dump_scenarios(path: PathLike, configs) -> None:
    _write_json(path, {"scenarios": [c.to_dict() for c in configs]})
