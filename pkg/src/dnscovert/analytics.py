"""Behavioural anomaly indicators and the anomaly index.

Queries rejected by the one-class SVM are scored with four indicators in
[0, 1]:

* ``i_r``  how often the unique requests from a source to a domain sit above
  the baseline 90th percentile, measured over equal sub-windows;
* ``i_h``  the same for the number of distinct hostnames per domain;
* ``i_e``  normalised Shannon entropy of the subdomain / longest label;
* ``i_d``  Jaro-Winkler distance between the character (bigram) frequency
  ranking of the subdomain and that of English and Italian.

Their mean is rescaled per source by the share of suspicious queries and
compared with a fixed threshold.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .dns_model import DnsQueryRecord, ParsedHostname, format_timestamp
from .exceptions import EmptyBaseline, InvalidCounts

SUSPICIOUS = "suspicious"
CLEARED = "cleared"
LANGUAGES = ("english", "italian")


@dataclass(frozen=True)
class AnalyticsConfig:
    b: float = 0.33
    c: float = 0.067
    a_th: float = 0.25
    subwindow_count: int = 10
    entropy_alphabet_bits: float = 6.0  # log2(64)
    bigram_top_k: int = 30
    tail_percentile: float = 90.0

    def __post_init__(self):
        if not 0 < self.a_th < 1:
            raise ValueError("a_th must lie in (0, 1)")
        if self.b < 0 or self.c < 0:
            raise ValueError("b and c must be non-negative")
        if self.subwindow_count < 1:
            raise ValueError("subwindow_count must be >= 1")


# -- language profiles -------------------------------------------------------

def _rank(counts: dict, top_k: int | None = None) -> tuple:
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_k is not None:
        ordered = ordered[:top_k]
    return tuple(sym for sym, _ in ordered)


@dataclass(frozen=True)
class LanguageProfile:
    language: str
    monogram_freq: dict
    bigram_freq: dict
    top_k: int = 30

    def __post_init__(self):
        for name in ("monogram_freq", "bigram_freq"):
            freq = getattr(self, name)
            total = sum(freq.values())
            if total <= 0:
                raise ValueError(f"{self.language}: empty {name}")
            object.__setattr__(self, name, {k: v / total for k, v in freq.items()})

    @property
    def rank_string_mono(self) -> tuple:
        return _rank(self.monogram_freq)

    @property
    def rank_string_bi(self) -> tuple:
        return _rank(self.bigram_freq, self.top_k)

    @classmethod
    def from_files(cls, language, mono_path, bi_path, top_k=30):
        with open(mono_path, encoding="utf-8") as fm, open(bi_path, encoding="utf-8") as fb:
            return cls(language, _read_freq(fm), _read_freq(fb), top_k)


def _read_freq(lines: Iterable[str]) -> dict:
    """Parse ``symbol<TAB>probability`` lines; ``#`` lines are comments."""
    freq = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        sym, prob = line.split("\t")
        freq[sym] = float(prob)
    return freq


def load_default_profiles(top_k: int = 30) -> list[LanguageProfile]:
    data = resources.files("dnscovert.data")
    profiles = []
    for lang in LANGUAGES:
        mono = _read_freq(data.joinpath(f"{lang}_mono.tsv").read_text("utf-8").splitlines())
        bi = _read_freq(data.joinpath(f"{lang}_bi.tsv").read_text("utf-8").splitlines())
        profiles.append(LanguageProfile(lang, mono, bi, top_k))
    return profiles


# -- string measures ---------------------------------------------------------

def jaro_winkler(s1: Sequence, s2: Sequence, prefix_weight: float = 0.1, max_prefix: int = 4) -> float:
    """Jaro-Winkler similarity of two sequences (strings or token tuples)."""
    n1, n2 = len(s1), len(s2)
    if n1 == 0 and n2 == 0:
        return 1.0
    if n1 == 0 or n2 == 0:
        return 0.0
    window = max(n1, n2) // 2 - 1
    if window < 0:
        window = 0
    flags1 = [False] * n1
    flags2 = [False] * n2
    matches = 0
    for i in range(n1):
        lo, hi = max(0, i - window), min(n2, i + window + 1)
        for j in range(lo, hi):
            if not flags2[j] and s1[i] == s2[j]:
                flags1[i] = flags2[j] = True
                matches += 1
                break
    if matches == 0:
        return 0.0
    k = transpositions = 0
    for i in range(n1):
        if flags1[i]:
            while not flags2[k]:
                k += 1
            if s1[i] != s2[k]:
                transpositions += 1
            k += 1
    t = transpositions / 2
    jaro = (matches / n1 + matches / n2 + (matches - t) / matches) / 3
    prefix = 0
    for a, b in zip(s1, s2):
        if a != b or prefix >= max_prefix:
            break
        prefix += 1
    return jaro + prefix * prefix_weight * (1 - jaro)


def shannon_entropy(text: str) -> float:
    if not text:
        return 0.0
    n = len(text)
    h = 0.0
    for count in Counter(text).values():
        p = count / n
        h -= p * math.log2(p)
    return h


def mono_rank(labels: Sequence[str]) -> tuple:
    counts = Counter()
    for lab in labels:
        counts.update(lab.lower())
    return _rank(counts)


def bigram_rank(labels: Sequence[str], top_k: int) -> tuple:
    """Top-k bigrams by frequency; bigrams never span a label separator."""
    counts = Counter()
    for lab in labels:
        lab = lab.lower()
        counts.update(lab[i:i + 2] for i in range(len(lab) - 1))
    return _rank(counts, top_k)


# -- baseline and window statistics --------------------------------------------

@dataclass(frozen=True)
class BaselineDistributions:
    unique_requests_p90: float
    unique_hostnames_p90: float
    built_from: str = ""
    subwindow_seconds: float = 360.0

    def __post_init__(self):
        if self.unique_requests_p90 < 1 or self.unique_hostnames_p90 < 1:
            raise ValueError("baseline percentiles must be >= 1")

    def to_dict(self):
        return asdict(self)


def _bucket(ts: datetime, origin: datetime, seconds: float) -> int:
    return int((ts - origin).total_seconds() // seconds)


def subwindow_counts(items: Iterable[tuple[DnsQueryRecord, ParsedHostname]], origin: datetime, seconds: float):
    """Unique-request counts per (source, domain, bucket) and hostname counts per (domain, bucket)."""
    requests = defaultdict(set)
    hostnames = defaultdict(set)
    for rec, parsed in items:
        b = _bucket(rec.timestamp, origin, seconds)
        domain = parsed.domain
        requests[(rec.source, domain, b)].add((parsed.hostname.lower(), rec.qtype_code))
        hostnames[(domain, b)].add(parsed.hostname.lower())
    return (
        {k: len(v) for k, v in requests.items()},
        {k: len(v) for k, v in hostnames.items()},
    )


def build_baseline(items, subwindow_seconds: float, origin: datetime | None = None,
                   percentile: float = 90.0, built_from: str = "") -> BaselineDistributions:
    """Tail thresholds from historical (record, parsed) pairs.

    Counts are taken per sub-window of ``subwindow_seconds`` so that they are
    commensurable with the online sub-window counts; only non-empty cells enter
    the distribution.
    """
    items = list(items)
    if not items:
        raise EmptyBaseline("no records to build a baseline from")
    if origin is None:
        origin = min(rec.timestamp for rec, _ in items)
    req, host = subwindow_counts(items, origin, subwindow_seconds)
    return BaselineDistributions(
        unique_requests_p90=max(1.0, float(np.percentile(list(req.values()), percentile))),
        unique_hostnames_p90=max(1.0, float(np.percentile(list(host.values()), percentile))),
        built_from=built_from,
        subwindow_seconds=float(subwindow_seconds),
    )


@dataclass(frozen=True)
class SourceWindowStats:
    """Counts for one (source, domain) pair over an analysis window.

    ``unique_requests`` and ``unique_hostnames`` hold one count per sub-window.
    """

    source: str
    domain: str
    window_start: datetime
    window_end: datetime
    n_tot: int
    n_s: int
    unique_requests: tuple
    unique_hostnames: tuple

    def __post_init__(self):
        if self.n_tot < 0 or self.n_s < 0 or self.n_s > self.n_tot:
            raise InvalidCounts(f"inconsistent counts n_s={self.n_s} n_tot={self.n_tot}")


@dataclass
class WindowStats:
    """Per-window aggregates from which :class:`SourceWindowStats` views are cut."""

    window_start: datetime
    window_end: datetime
    subwindow_count: int
    requests: dict = field(default_factory=dict)
    hostnames: dict = field(default_factory=dict)
    n_tot: Counter = field(default_factory=Counter)
    n_s: Counter = field(default_factory=Counter)

    @classmethod
    def collect(cls, window_start, window_end, subwindow_count, all_records, analysed_items, suspicious_sources=()):
        """``all_records`` feeds n_tot (pre-filter); ``analysed_items`` feeds the sub-window counts."""
        seconds = (window_end - window_start).total_seconds() / subwindow_count
        req, host = subwindow_counts(analysed_items, window_start, seconds)
        stats = cls(window_start, window_end, subwindow_count, req, host)
        stats.n_tot.update(rec.source for rec in all_records)
        stats.n_s.update(suspicious_sources)
        return stats

    def view(self, source: str, domain: str) -> SourceWindowStats:
        k = range(self.subwindow_count)
        return SourceWindowStats(
            source=source,
            domain=domain,
            window_start=self.window_start,
            window_end=self.window_end,
            n_tot=self.n_tot[source],
            n_s=self.n_s[source],
            unique_requests=tuple(self.requests.get((source, domain, b), 0) for b in k),
            unique_hostnames=tuple(self.hostnames.get((domain, b), 0) for b in k),
        )


# -- indicators --------------------------------------------------------------

def _tail_fraction(counts, threshold, cfg):
    if len(counts) != cfg.subwindow_count:
        raise ValueError(f"expected {cfg.subwindow_count} sub-window counts, got {len(counts)}")
    return sum(1 for c in counts if c > threshold) / cfg.subwindow_count


def indicator_unique_requests(stats: SourceWindowStats, baseline: BaselineDistributions | None,
                              cfg: AnalyticsConfig = AnalyticsConfig()) -> float:
    if baseline is None:
        raise EmptyBaseline("baseline distributions not built")
    return _tail_fraction(stats.unique_requests, baseline.unique_requests_p90, cfg)


def indicator_unique_hostnames(stats: SourceWindowStats, baseline: BaselineDistributions | None,
                               cfg: AnalyticsConfig = AnalyticsConfig()) -> float:
    if baseline is None:
        raise EmptyBaseline("baseline distributions not built")
    return _tail_fraction(stats.unique_hostnames, baseline.unique_hostnames_p90, cfg)


def indicator_entropy(parsed: ParsedHostname, cfg: AnalyticsConfig = AnalyticsConfig()) -> float:
    h = max(shannon_entropy(parsed.subdomain), shannon_entropy(parsed.longest_subdomain_label))
    return min(1.0, h / cfg.entropy_alphabet_bits)


def indicator_language_distance(parsed: ParsedHostname, profiles: Sequence[LanguageProfile],
                                cfg: AnalyticsConfig = AnalyticsConfig()) -> float:
    """Mean over (language, n-gram order) of the worse of subdomain / longest-label distance."""
    if not profiles:
        raise ValueError("no language profiles")
    views = (parsed.subdomain_labels, (parsed.longest_subdomain_label,))
    mono = [mono_rank(v) for v in views]
    bi = [bigram_rank(v, cfg.bigram_top_k) for v in views]
    short = [sum(len(lab) for lab in v) < 2 for v in views]
    parts = []
    for prof in profiles:
        ref_mono = prof.rank_string_mono
        ref_bi = prof.rank_string_bi
        parts.append(max(1.0 - jaro_winkler(m, ref_mono) for m in mono))
        parts.append(max(1.0 if s else 1.0 - jaro_winkler(b, ref_bi) for b, s in zip(bi, short)))
    return sum(parts) / len(parts)


def anomaly_index(i_r, i_h, i_e, i_d, n_s, n_tot, cfg: AnalyticsConfig = AnalyticsConfig()):
    """Return ``(raw_A, rescaled_A)``.

    ``rescaled_A = clip(raw_A + b + c * log10(n_s / n_tot), 0, 1)``.
    """
    if n_s < 1 or n_s > n_tot:
        raise InvalidCounts(f"need 1 <= n_s <= n_tot, got n_s={n_s}, n_tot={n_tot}")
    raw = (i_r + i_h + i_e + i_d) / 4
    rescaled = raw + cfg.b + cfg.c * math.log10(n_s / n_tot)
    return raw, max(0.0, min(1.0, rescaled))


def verdict_for(rescaled_a: float, cfg: AnalyticsConfig = AnalyticsConfig()) -> str:
    return SUSPICIOUS if rescaled_a > cfg.a_th else CLEARED


@dataclass(frozen=True)
class AnomalyReport:
    record_id: int
    timestamp: datetime
    source: str
    qname: str
    qtype: str
    domain: str
    i_r: float
    i_h: float
    i_e: float
    i_d: float
    raw_A: float
    rescaled_A: float
    verdict: str
    n_s: int
    n_tot: int
    svm_decision: float = float("nan")
    generation: int = 0

    @property
    def suspicious(self) -> bool:
        return self.verdict == SUSPICIOUS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timestamp"] = format_timestamp(self.timestamp)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyReport":
        from .dns_model import parse_timestamp

        d = dict(d)
        d["timestamp"] = parse_timestamp(d["timestamp"])
        return cls(**d)


def classify_query(record_id: int, record: DnsQueryRecord, parsed: ParsedHostname, stats: SourceWindowStats,
                   baseline: BaselineDistributions, profiles: Sequence[LanguageProfile],
                   cfg: AnalyticsConfig = AnalyticsConfig(), svm_decision: float = float("nan"),
                   generation: int = 0) -> AnomalyReport:
    """Score one SVM-rejected query and label it suspicious iff ``rescaled_A > a_th``."""
    i_r = indicator_unique_requests(stats, baseline, cfg)
    i_h = indicator_unique_hostnames(stats, baseline, cfg)
    i_e = indicator_entropy(parsed, cfg)
    i_d = indicator_language_distance(parsed, profiles, cfg)
    raw, rescaled = anomaly_index(i_r, i_h, i_e, i_d, stats.n_s, stats.n_tot, cfg)
    return AnomalyReport(
        record_id=record_id,
        timestamp=record.timestamp,
        source=record.source,
        qname=record.qname,
        qtype=record.qtype.name,
        domain=parsed.domain,
        i_r=i_r,
        i_h=i_h,
        i_e=i_e,
        i_d=i_d,
        raw_A=raw,
        rescaled_A=rescaled,
        verdict=verdict_for(rescaled, cfg),
        n_s=stats.n_s,
        n_tot=stats.n_tot,
        svm_decision=svm_decision,
        generation=generation,
    )
