"""Stick-or-switch multi-turn evaluation harness."""

from __future__ import annotations

import json
import os
from typing import Any, Iterable, Optional, Sequence

from . import _core
from ._core import ConfigError, CorpusError, MetricsError, StubServer

__version__ = _core.__version__

__all__ = [
    "ConfigError",
    "CorpusError",
    "MetricsError",
    "StubServer",
    "audit_parse_rate",
    "build_report",
    "config_hash",
    "load_records",
    "make_instance",
    "parse_answer",
    "report",
    "run",
    "simulate",
    "simulate_config",
    "summary_csv",
    "synthesize_records",
    "validate",
]

Record = dict[str, Any]
Transcript = dict[str, Any]


def parse_answer(
    raw: str,
    presented: Sequence[tuple[str, str]],
    abstention_offered: bool = False,
    stick_or_switch: bool = False,
) -> dict[str, str]:
    """Maps a completion onto one of the presented (label, text) choices."""
    return _core.parse_answer(raw, list(presented), abstention_offered, stick_or_switch)


def load_records(
    path: os.PathLike | str, dataset: Optional[str] = None, skip_invalid: bool = False
) -> dict[str, list]:
    """Reads a JSONL corpus; returns {"records": [...], "skipped": [...]}."""
    return json.loads(_core.load_records(os.fspath(path), dataset, skip_invalid))


def synthesize_records(n: int, options: int = 4, seed: int = 0) -> list[Record]:
    return json.loads(_core.synthesize_records(n, options, seed))


def make_instance(
    record: Record, condition: str, seed: int, target: Optional[str] = None
) -> dict[str, Any]:
    return json.loads(_core.make_instance(json.dumps(record), condition, seed, target))


def simulate(
    records: Iterable[Record],
    conditions: Sequence[str] = ("all",),
    *,
    q_init: float = 1.0,
    p_stick: float = 1.0,
    q_flex_correct: float = 1.0,
    q_flex_incorrect: float = 0.0,
    agent_seed: int = 0,
    seed: int = 0,
    concurrency: int = 4,
) -> list[Transcript]:
    """Runs the conditions against a Bernoulli agent in process."""
    return json.loads(
        _core.simulate(
            json.dumps(list(records)),
            list(conditions),
            q_init,
            p_stick,
            q_flex_correct,
            q_flex_incorrect,
            agent_seed,
            seed,
            concurrency,
        )
    )


def build_report(
    transcripts: Iterable[Transcript],
    bootstrap_resamples: int = 2000,
    ci_level: float = 0.95,
    bootstrap_seed: int = 0,
) -> dict[str, Any]:
    return json.loads(
        _core.build_report(
            json.dumps(list(transcripts)), bootstrap_resamples, ci_level, bootstrap_seed
        )
    )


def summary_csv(report: dict[str, Any]) -> str:
    return _core.summary_csv(json.dumps(report))


def audit_parse_rate(transcripts: Iterable[Transcript]) -> tuple[int, int, float]:
    return _core.audit_parse_rate(json.dumps(list(transcripts)))


def config_hash(path: os.PathLike | str) -> str:
    return _core.config_hash(os.fspath(path))


def _opt_path(p: Optional[os.PathLike | str]) -> Optional[str]:
    return None if p is None else os.fspath(p)


def validate(config: os.PathLike | str) -> tuple[int, str, str]:
    """Returns (exit_code, stdout, stderr) of the validate command."""
    return _core.cmd_validate(os.fspath(config), quiet=False)


def run(
    config: os.PathLike | str,
    out: Optional[os.PathLike | str] = None,
    seed: Optional[int] = None,
    concurrency: Optional[int] = None,
    resume: bool = False,
    quiet: bool = True,
) -> tuple[int, str, str]:
    return _core.cmd_run(os.fspath(config), _opt_path(out), seed, concurrency, resume, quiet)


def simulate_config(
    config: os.PathLike | str,
    out: Optional[os.PathLike | str] = None,
    seed: Optional[int] = None,
    concurrency: Optional[int] = None,
    resume: bool = False,
    quiet: bool = True,
) -> tuple[int, str, str]:
    """The simulate command: a full run against the configured Bernoulli agent."""
    return _core.cmd_simulate(
        os.fspath(config), _opt_path(out), seed, concurrency, resume, quiet
    )


def report(
    inputs: Sequence[os.PathLike | str],
    out: Optional[os.PathLike | str] = None,
    config: Optional[os.PathLike | str] = None,
    allow_mixed: bool = False,
    quiet: bool = True,
) -> tuple[int, str, str]:
    return _core.cmd_report(
        [os.fspath(p) for p in inputs], _opt_path(out), _opt_path(config), allow_mixed, quiet
    )
