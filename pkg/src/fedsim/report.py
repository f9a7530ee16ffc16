"""Experiment reports: in-memory form, JSON + CSV emission, reload."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import Metrics
from .orchestrator import RoundRecord

SCHEMA_VERSION = 1
TIMING_KEYS = ("timing",)
CSV_METRICS = ("accuracy", "micro_f1", "macro_f1")


@dataclass
class LanguageResult:
    metrics: Metrics
    zero_shot: bool = False

    def to_dict(self) -> dict:
        return {"zero_shot": self.zero_shot, "metrics": self.metrics.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageResult":
        return cls(Metrics.from_dict(d["metrics"]), d["zero_shot"])


@dataclass
class ExperimentReport:
    mode: str
    config: dict
    baseline: Metrics | None = None
    rounds: list[RoundRecord] = field(default_factory=list)
    final: Metrics | None = None
    per_language: dict[str, LanguageResult] = field(default_factory=dict)
    payload: dict[str, int] = field(default_factory=dict)
    krum_trace: list[int | None] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)
    sub_reports: list["ExperimentReport"] = field(default_factory=list)
    label: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "label": self.label,
            "config": self.config,
            "baseline": self.baseline.to_dict() if self.baseline else None,
            "rounds": [r.to_dict() for r in self.rounds],
            "final": self.final.to_dict() if self.final else None,
            "per_language": {k: v.to_dict() for k, v in self.per_language.items()},
            "payload": dict(self.payload),
            "krum_trace": list(self.krum_trace),
            "notes": list(self.notes),
            "timing": dict(self.timing),
            "sub_reports": [s.to_dict() for s in self.sub_reports],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {version!r}")
        return cls(
            mode=d["mode"],
            label=d.get("label"),
            config=d["config"],
            baseline=Metrics.from_dict(d["baseline"]) if d.get("baseline") else None,
            rounds=[RoundRecord.from_dict(r) for r in d.get("rounds", [])],
            final=Metrics.from_dict(d["final"]) if d.get("final") else None,
            per_language={k: LanguageResult.from_dict(v) for k, v in d.get("per_language", {}).items()},
            payload=dict(d.get("payload", {})),
            krum_trace=list(d.get("krum_trace", [])),
            notes=list(d.get("notes", [])),
            timing=dict(d.get("timing", {})),
            sub_reports=[cls.from_dict(s) for s in d.get("sub_reports", [])],
        )


def strip_timing(obj):
    """Deep copy of a report dict without wall-clock fields."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"


def csv_rows(report: ExperimentReport, prefix: str = "") -> list[tuple[int, str, float]]:
    rows = []
    if report.rounds:
        for rec in report.rounds:
            for name in CSV_METRICS:
                rows.append((rec.round_index, prefix + name, getattr(rec.global_eval, name)))
    elif report.final is not None:
        for name in CSV_METRICS:
            rows.append((0, prefix + name, getattr(report.final, name)))
    for sub in report.sub_reports:
        rows.extend(csv_rows(sub, prefix=f"{prefix}{sub.label}."))
    return rows


def emit_report(report: ExperimentReport, path: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<path>.json`` (full report) and ``<path>.csv`` (round, metric, value)."""
    base = Path(path)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = base.with_name(base.name + ".json"), base.with_name(base.name + ".csv")
    json_path.write_text(report_json(report), encoding="utf-8")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "metric", "value"])
        for r, name, value in csv_rows(report):
            # repr() is locale independent and round-trips the float
            writer.writerow([r, name, repr(float(value))])
    return json_path, csv_path


def load_report(path: str | os.PathLike) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))
