"""Scoring engine output against ground truth.

Queries are counted once per ``(qname, qtype)`` regardless of source; a unique
query is predicted positive when any report marks it suspicious and is
actually positive when its name falls under an attacker domain.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

from .analytics import SUSPICIOUS, AnomalyReport
from .exceptions import MissingGroundTruth

UNDEFINED = float("nan")


def query_key(qname: str, qtype) -> tuple[str, str]:
    """Uniqueness key: lowercased name without the root dot, and the type mnemonic."""
    name = getattr(qtype, "name", qtype)
    return qname.rstrip(".").lower(), str(name)


def _keys(queries) -> set:
    out = set()
    for q in queries:
        if isinstance(q, tuple):
            out.add(query_key(*q))
        else:
            out.add(query_key(q.qname, q.qtype))
    return out


def under_domain(qname: str, domain: str) -> bool:
    name = qname.rstrip(".").lower()
    domain = domain.rstrip(".").lower()
    return name == domain or name.endswith("." + domain)


def is_attack(qname: str, attacker_domains: Iterable[str]) -> bool:
    return any(under_domain(qname, d) for d in attacker_domains)


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int = 0
    fn: int = 0
    fp: int = 0
    tp: int = 0

    def __post_init__(self):
        for name in ("tn", "fn", "fp", "tp"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tn + self.fn + self.fp + self.tp

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Metrics:
    """Recall, precision and F-score; undefined values are NaN."""

    recall: float
    precision: float
    f_score: float

    def to_dict(self) -> dict:
        return {k: (None if math.isnan(v) else v) for k, v in asdict(self).items()}


def metrics(cm: ConfusionMatrix) -> Metrics:
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else UNDEFINED
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else UNDEFINED
    if math.isnan(recall) or math.isnan(precision):
        f = UNDEFINED
    elif recall + precision == 0:
        f = 0.0
    else:
        f = 2 * precision * recall / (precision + recall)
    return Metrics(recall, precision, f)


def suspicious_keys(reports: Iterable[AnomalyReport]) -> set:
    return {query_key(r.qname, r.qtype) for r in reports if r.verdict == SUSPICIOUS}


def score(reports: Iterable[AnomalyReport], ground_truth: Iterable[str], all_queries) -> ConfusionMatrix:
    """Confusion matrix over unique queries.

    ``all_queries`` holds records or ``(qname, qtype)`` pairs; reported queries
    absent from it are added so that every prediction is counted.
    """
    if ground_truth is None:
        raise MissingGroundTruth("ground truth is required")
    domains = [d.rstrip(".").lower() for d in ground_truth]
    reports = list(reports)
    universe = _keys(all_queries) | {query_key(r.qname, r.qtype) for r in reports}
    flagged = suspicious_keys(reports)
    tn = fn = fp = tp = 0
    for key in universe:
        actual = is_attack(key[0], domains)
        predicted = key in flagged
        if actual and predicted:
            tp += 1
        elif actual:
            fn += 1
        elif predicted:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tn=tn, fn=fn, fp=fp, tp=tp)


@dataclass(frozen=True)
class ScenarioResult:
    name: str
    domain: str
    injected: int
    detected: int
    detection_pct: float
    anomaly_A: float

    def __post_init__(self):
        if not (0.0 <= self.detection_pct <= 1.0 and 0.0 <= self.anomaly_A <= 1.0):
            raise ValueError("detection_pct and anomaly_A must lie in [0, 1]")

    @property
    def detected_scenario(self) -> bool:
        return self.detected > 0

    def to_dict(self) -> dict:
        return asdict(self)


def scenario_result(name: str, domain: str, reports: Sequence[AnomalyReport], all_queries) -> ScenarioResult:
    """Per-scenario detection percentage over unique injected queries and the maximum rescaled A."""
    injected = {k for k in _keys(all_queries) if under_domain(k[0], domain)}
    mine = [r for r in reports if under_domain(r.qname, domain)]
    detected = suspicious_keys(mine) & injected
    best = max((r.rescaled_A for r in mine if r.verdict == SUSPICIOUS), default=0.0)
    pct = len(detected) / len(injected) if injected else 0.0
    return ScenarioResult(name, domain.lower(), len(injected), len(detected), pct, best)


@dataclass
class EvaluationReport:
    confusion: ConfusionMatrix
    metrics: Metrics
    scenarios: list

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.to_dict(),
            "metrics": self.metrics.to_dict(),
            "scenarios": [s.to_dict() for s in self.scenarios],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        cm, m = self.confusion, self.metrics

        def fmt(v):
            return "undefined" if math.isnan(v) else f"{v:.4f}"

        lines = [
            f"{'':10}{'predicted -':>14}{'predicted +':>14}",
            f"{'actual -':10}{cm.tn:>14}{cm.fp:>14}",
            f"{'actual +':10}{cm.fn:>14}{cm.tp:>14}",
            "",
            f"recall    {fmt(m.recall)}",
            f"precision {fmt(m.precision)}",
            f"F-score   {fmt(m.f_score)}",
        ]
        if self.scenarios:
            lines += ["", f"{'scenario':20}{'domain':28}{'unique':>8}{'detected':>10}{'pct':>8}{'A':>8}"]
            for s in self.scenarios:
                lines.append(
                    f"{s.name:20}{s.domain:28}{s.injected:>8}{s.detected:>10}"
                    f"{100 * s.detection_pct:>7.1f}%{s.anomaly_A:>8.3f}"
                )
        return "\n".join(lines) + "\n"


def evaluate(reports: Sequence[AnomalyReport], ground_truth: Mapping, all_queries) -> EvaluationReport:
    """Full evaluation from a ground-truth document as written by the traffic generator."""
    if not ground_truth or "attacker_domains" not in ground_truth:
        raise MissingGroundTruth("ground truth document lacks 'attacker_domains'")
    all_queries = list(all_queries)
    cm = score(reports, ground_truth["attacker_domains"], all_queries)
    scenarios = [
        scenario_result(s["name"], s["domain"], reports, all_queries)
        for s in ground_truth.get("scenarios", [])
    ]
    return EvaluationReport(cm, metrics(cm), scenarios)
