"""Pre-filters applied to DNS queries before feature extraction.

Record filters look at one query at a time; group filters need a whole
analysis window (deduplication and the distinct-hostnames-per-domain rule).
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .dns_model import DnsQueryRecord, ParsedHostname, QType, SuffixList, split_hostname
from .exceptions import InvalidHostname

DEFAULT_QTYPES = frozenset(
    {QType.TXT, QType.CNAME, QType.MX, QType.SRV, QType.NULL, QType.KEY, QType.A, QType.AAAA}
)

RECORD_FILTERS = (
    "qtype",
    "rcode",
    "whitelist",
    "cdn",
    "overloaded_dns",
    "local_domain",
    "ip_in_subdomain",
    "short_label",
)
GROUP_FILTERS = ("duplicate", "few_hostnames")
PASSED = "passed"


def read_list_file(path) -> list[str]:
    """One entry per line; ``#`` starts a comment."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                entries.append(line)
    return entries


def _bundled_list(name):
    text = resources.files("dnscovert.data").joinpath(name).read_text("utf-8")
    entries = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(line)
    return entries


def _norm(entries):
    return frozenset(e.strip().lower().strip(".") for e in entries if e.strip())


@dataclass(frozen=True)
class FilterConfig:
    whitelist_domains: frozenset = frozenset()
    cdn_suffixes: frozenset = frozenset()
    overloaded_dns_suffixes: frozenset = frozenset()
    local_domain_suffixes: frozenset = frozenset()
    min_longest_label: int = 6
    min_hostnames_per_domain: int = 3
    allowed_qtypes: frozenset = DEFAULT_QTYPES

    def __post_init__(self):
        if self.min_longest_label < 1:
            raise ValueError("min_longest_label must be >= 1")
        if self.min_hostnames_per_domain < 1:
            raise ValueError("min_hostnames_per_domain must be >= 1")
        for name in ("whitelist_domains", "cdn_suffixes", "overloaded_dns_suffixes", "local_domain_suffixes"):
            object.__setattr__(self, name, _norm(getattr(self, name)))
        qtypes = frozenset(q if isinstance(q, QType) else QType[str(q).upper()] for q in self.allowed_qtypes)
        object.__setattr__(self, "allowed_qtypes", qtypes - {QType.OTHER})

    @classmethod
    def default(cls) -> "FilterConfig":
        """Configuration backed by the small illustrative lists shipped with the package."""
        return cls(
            whitelist_domains=_bundled_list("whitelist.txt"),
            cdn_suffixes=_bundled_list("cdn_suffixes.txt"),
            overloaded_dns_suffixes=_bundled_list("overloaded_dns_suffixes.txt"),
            local_domain_suffixes=_bundled_list("local_domain_suffixes.txt"),
        )

    @classmethod
    def from_mapping(cls, mapping: dict, base_dir=".") -> "FilterConfig":
        """Build from a ``[filters]`` config table.

        List keys (``whitelist``, ``cdn``, ``overloaded_dns``, ``local_domains``)
        name list files relative to ``base_dir``; a missing key falls back to
        the bundled list, an empty string disables the list.
        """
        base = Path(base_dir)
        keys = {
            "whitelist": ("whitelist_domains", "whitelist.txt"),
            "cdn": ("cdn_suffixes", "cdn_suffixes.txt"),
            "overloaded_dns": ("overloaded_dns_suffixes", "overloaded_dns_suffixes.txt"),
            "local_domains": ("local_domain_suffixes", "local_domain_suffixes.txt"),
        }
        kwargs = {}
        for key, (attr, bundled) in keys.items():
            value = mapping.get(key)
            if value is None:
                kwargs[attr] = _bundled_list(bundled)
            elif value == "":
                kwargs[attr] = ()
            else:
                kwargs[attr] = read_list_file(base / value)
        for key in ("min_longest_label", "min_hostnames_per_domain"):
            if key in mapping:
                kwargs[key] = int(mapping[key])
        if "allowed_qtypes" in mapping:
            kwargs["allowed_qtypes"] = frozenset(mapping["allowed_qtypes"])
        return cls(**kwargs)


def _has_suffix(host: str, suffixes: frozenset) -> bool:
    if not suffixes:
        return False
    labels = host.split(".")
    for i in range(len(labels)):
        if ".".join(labels[i:]) in suffixes:
            return True
    return False


def _is_octet(label: str) -> bool:
    return 1 <= len(label) <= 3 and label.isascii() and label.isdigit() and int(label) <= 255


def has_ip_in_subdomain(parsed: ParsedHostname) -> bool:
    """True if four consecutive labels left of the public suffix form a dotted quad.

    The label left of the public suffix is included so reverse-lookup names
    such as ``4.3.2.1.in-addr.arpa`` are caught.
    """
    n_sub = len(parsed.subdomain_labels)
    candidates = parsed.labels[: n_sub + 1]
    run = 0
    for label in candidates:
        run = run + 1 if _is_octet(label) else 0
        if run >= 4:
            return True
    return False


def apply_record_filters(record: DnsQueryRecord, parsed: ParsedHostname, cfg: FilterConfig) -> str | None:
    """Return the name of the first matching filter, or ``None`` to keep the record."""
    if record.qtype not in cfg.allowed_qtypes:
        return "qtype"
    if record.rcode != 0:  # absent rcode (-1) fails closed
        return "rcode"
    host = parsed.hostname.lower()
    if parsed.domain in cfg.whitelist_domains or _has_suffix(host, cfg.whitelist_domains):
        return "whitelist"
    if _has_suffix(host, cfg.cdn_suffixes):
        return "cdn"
    if _has_suffix(host, cfg.overloaded_dns_suffixes):
        return "overloaded_dns"
    if _has_suffix(host, cfg.local_domain_suffixes):
        return "local_domain"
    if has_ip_in_subdomain(parsed):
        return "ip_in_subdomain"
    if len(parsed.longest_subdomain_label) < cfg.min_longest_label:
        return "short_label"
    return None


@dataclass
class FilterTrace:
    """Fate of every input record, keyed by its position in the input batch."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def counts(self) -> Counter:
        return Counter(reason for _, reason in self.entries)

    def dropped_by(self, record_id: int) -> str:
        return dict(self.entries)[record_id]


def deduplicate(items: Sequence[tuple[DnsQueryRecord, ParsedHostname]]) -> tuple[list[int], list[int]]:
    """Indices kept / dropped when collapsing repeats of (source, qname, qtype)."""
    best = {}
    for idx, (rec, _) in enumerate(items):
        key = (rec.source, rec.qname, rec.qtype, rec.qtype_code)
        cur = best.get(key)
        if cur is None or rec.timestamp < items[cur][0].timestamp:
            best[key] = idx
    keep = sorted(best.values())
    kept = set(keep)
    return keep, [i for i in range(len(items)) if i not in kept]


def apply_group_filters(batch: Sequence[tuple[DnsQueryRecord, ParsedHostname]], cfg: FilterConfig):
    """Deduplicate, then drop domains with too few distinct hostnames.

    Returns ``(survivors, trace)`` where trace ids index into ``batch``.
    """
    keep, dup = deduplicate(batch)
    hostnames = defaultdict(set)
    for idx in keep:
        parsed = batch[idx][1]
        hostnames[parsed.domain].add(parsed.hostname.lower())
    reasons = {i: "duplicate" for i in dup}
    survivors = []
    for idx in keep:
        if len(hostnames[batch[idx][1].domain]) < cfg.min_hostnames_per_domain:
            reasons[idx] = "few_hostnames"
        else:
            reasons[idx] = PASSED
            survivors.append(batch[idx])
    trace = FilterTrace(sorted(reasons.items()))
    return survivors, trace


def run_filter_chain(records: Iterable[DnsQueryRecord], cfg: FilterConfig, suffix_list: SuffixList | None = None):
    """Full chain over one window: hostname parsing, record filters, group filters.

    Returns ``(survivors, trace)``; survivors are ``(record, parsed)`` pairs in
    input order, and the trace lists every input record exactly once. Records
    whose hostname cannot be parsed are dropped as ``invalid_hostname``.
    """
    records = list(records)
    reasons = {}
    passed, passed_ids = [], []
    for idx, rec in enumerate(records):
        try:
            parsed = split_hostname(rec.qname, suffix_list)
        except InvalidHostname:
            reasons[idx] = "invalid_hostname"
            continue
        reason = apply_record_filters(rec, parsed, cfg)
        if reason is None:
            passed.append((rec, parsed))
            passed_ids.append(idx)
        else:
            reasons[idx] = reason
    survivors, group_trace = apply_group_filters(passed, cfg)
    for local_id, reason in group_trace.entries:
        reasons[passed_ids[local_id]] = reason
    return survivors, FilterTrace(sorted(reasons.items()))
