"""DNS query records, hostname decomposition and log ingestion."""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .exceptions import InvalidHostname, ParseError

MAX_QNAME_CHARS = 255
MAX_HOSTNAME_CHARS = 253
MAX_LABEL_CHARS = 63

LOG_FIELDS = ("timestamp", "source", "qname", "qtype", "rcode")


class QType(enum.Enum):
    A = 1
    AAAA = 28
    TXT = 16
    CNAME = 5
    MX = 15
    SRV = 33
    NULL = 10
    KEY = 25
    PTR = 12
    OTHER = -1

    @classmethod
    def parse(cls, text):
        """Map a mnemonic to ``(qtype, numeric_code)``.

        Unknown mnemonics map to ``OTHER`` with code -1; ``TYPE<n>`` keeps n.
        """
        name = text.strip().upper()
        if name in cls.__members__ and name != "OTHER":
            qt = cls[name]
            return qt, qt.value
        if name.startswith("TYPE") and name[4:].isdigit():
            code = int(name[4:])
            for qt in cls:
                if qt.value == code and qt is not cls.OTHER:
                    return qt, code
            return cls.OTHER, code
        return cls.OTHER, -1


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    return ts.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ts.microsecond // 1000:03d}Z"


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=(ts.microsecond // 1000) * 1000)


@dataclass(frozen=True)
class DnsQueryRecord:
    """One observed DNS query."""

    timestamp: datetime
    source: str
    qname: str
    qtype: QType
    rcode: int
    qtype_code: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.qname) > MAX_QNAME_CHARS:
            raise ParseError("qname", f"oversize qname ({len(self.qname)} > {MAX_QNAME_CHARS})")
        if self.qtype_code == 0:
            object.__setattr__(self, "qtype_code", self.qtype.value)

    @property
    def hostname(self) -> str:
        return self.qname[:-1] if self.qname.endswith(".") else self.qname

    def to_row(self) -> list[str]:
        qtype = self.qtype.name
        if self.qtype is QType.OTHER:
            qtype = f"TYPE{self.qtype_code}" if self.qtype_code >= 0 else "OTHER"
        return [format_timestamp(self.timestamp), self.source, self.qname, qtype, str(self.rcode)]

    def to_json(self) -> str:
        return json.dumps(dict(zip(LOG_FIELDS, self.to_row()[:4] + [self.rcode])), ensure_ascii=False)


def _build_record(fields: dict, line_no) -> DnsQueryRecord:
    for name in ("timestamp", "source", "qname", "qtype"):
        if fields.get(name) in (None, ""):
            raise ParseError(name, "missing field", line_no)
    try:
        ts = parse_timestamp(str(fields["timestamp"]))
    except ValueError as exc:
        raise ParseError("timestamp", f"malformed timestamp: {exc}", line_no) from None
    try:
        source = str(ipaddress.ip_address(str(fields["source"]).strip()))
    except ValueError:
        raise ParseError("source", f"invalid address {fields['source']!r}", line_no) from None
    qname = str(fields["qname"]).strip()
    if len(qname) > MAX_QNAME_CHARS:
        raise ParseError("qname", f"oversize qname ({len(qname)} > {MAX_QNAME_CHARS})", line_no)
    qtype, code = QType.parse(str(fields["qtype"]))
    raw_rcode = fields.get("rcode")
    if raw_rcode in (None, ""):
        rcode = -1
    else:
        try:
            rcode = int(raw_rcode)
        except (TypeError, ValueError):
            raise ParseError("rcode", f"malformed rcode {raw_rcode!r}", line_no) from None
    return DnsQueryRecord(ts, source, qname, qtype, rcode, code)


def parse_record(line: str, format: str = "csv", line_no: int | None = None) -> DnsQueryRecord:
    """Parse one log line (``csv`` or ``jsonl``) into a validated record."""
    fmt = format.lower()
    if fmt == "csv":
        rows = list(csv.reader([line]))
        if not rows or len(rows[0]) not in (4, 5):
            raise ParseError("line", "expected 5 comma-separated fields", line_no)
        row = rows[0] + [""] * (5 - len(rows[0]))
        return _build_record(dict(zip(LOG_FIELDS, row)), line_no)
    if fmt == "jsonl":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError("line", f"malformed JSON: {exc.msg}", line_no) from None
        if not isinstance(obj, dict):
            raise ParseError("line", "expected a JSON object", line_no)
        return _build_record(obj, line_no)
    raise ValueError(f"unknown log format {format!r}")


def iter_log(lines: Iterable[str], format: str = "csv", errors: list | None = None) -> Iterator[DnsQueryRecord]:
    """Yield records from log lines.

    Blank lines and the CSV header are skipped. When ``errors`` is a list,
    malformed lines are appended to it instead of raising.
    """
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if format == "csv" and line_no == 1 and line.replace(" ", "") == ",".join(LOG_FIELDS):
            continue
        try:
            yield parse_record(line, format, line_no)
        except ParseError as exc:
            if errors is None:
                raise
            errors.append(exc)


def read_log(path, format: str | None = None, errors: list | None = None) -> list[DnsQueryRecord]:
    path = Path(path)
    fmt = format or guess_format(path)
    with open(path, encoding="utf-8") as fh:
        return list(iter_log(fh, fmt, errors))


def guess_format(path) -> str:
    return "jsonl" if str(path).endswith((".jsonl", ".json")) else "csv"


def format_log(records: Iterable[DnsQueryRecord], format: str = "csv") -> str:
    buf = io.StringIO()
    if format == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for rec in records:
            writer.writerow(rec.to_row())
    elif format == "jsonl":
        for rec in records:
            buf.write(rec.to_json() + "\n")
    else:
        raise ValueError(f"unknown log format {format!r}")
    return buf.getvalue()


def write_log(records: Iterable[DnsQueryRecord], path, format: str | None = None) -> None:
    fmt = format or guess_format(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_log(records, fmt))


class SuffixList:
    """Public-suffix rules with wildcard (``*.x``) and exception (``!y.x``) support."""

    def __init__(self, rules: Iterable[str] = ()):
        self.rules = set()
        self.wildcards = set()
        self.exceptions = set()
        for rule in rules:
            self.add(rule)

    def add(self, rule: str) -> None:
        rule = rule.strip().lower().rstrip(".")
        if not rule:
            return
        if rule.startswith("!"):
            self.exceptions.add(rule[1:])
        elif rule.startswith("*."):
            self.wildcards.add(rule[2:])
        else:
            self.rules.add(rule)

    def __len__(self):
        return len(self.rules) + len(self.wildcards) + len(self.exceptions)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "SuffixList":
        rules = []
        for line in lines:
            line = line.strip()
            if not line or line.startswith(("#", "//")):
                continue
            rules.append(line.split()[0])
        return cls(rules)

    @classmethod
    def from_file(cls, path) -> "SuffixList":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def default(cls) -> "SuffixList":
        text = resources.files("dnscovert.data").joinpath("public_suffix_list.dat").read_text("utf-8")
        return cls.from_lines(text.splitlines())

    def suffix_length(self, labels: list[str]) -> int:
        """Number of trailing labels forming the public suffix (1 if no rule matches)."""
        low = [lab.lower() for lab in labels]
        n = len(low)
        for i in range(n):
            if ".".join(low[i:]) in self.exceptions:
                return n - i - 1
        for i in range(n):
            if ".".join(low[i:]) in self.rules:
                return n - i
            if i + 1 < n and ".".join(low[i + 1:]) in self.wildcards:
                return n - i
        return 1


_default_suffixes: SuffixList | None = None


def default_suffix_list() -> SuffixList:
    global _default_suffixes
    if _default_suffixes is None:
        _default_suffixes = SuffixList.default()
    return _default_suffixes


@dataclass(frozen=True)
class ParsedHostname:
    labels: tuple[str, ...]
    registered_domain: str
    subdomain_labels: tuple[str, ...]
    total_len: int
    longest_subdomain_label: str

    @property
    def hostname(self) -> str:
        return ".".join(self.labels)

    @property
    def domain(self) -> str:
        """Case-folded registered domain, the grouping key."""
        return self.registered_domain.lower()

    @property
    def subdomain(self) -> str:
        """Subdomain characters with label separators removed."""
        return "".join(self.subdomain_labels)


def split_hostname(qname: str, suffix_list: SuffixList | None = None) -> ParsedHostname:
    """Split a hostname into subdomain labels and registered domain (eTLD+1)."""
    if suffix_list is None:
        suffix_list = default_suffix_list()
    name = qname[:-1] if qname.endswith(".") else qname
    if not name:
        raise InvalidHostname(qname, "empty hostname")
    if len(name) > MAX_HOSTNAME_CHARS:
        raise InvalidHostname(qname, f"hostname longer than {MAX_HOSTNAME_CHARS} characters")
    labels = name.split(".")
    for lab in labels:
        if not lab:
            raise InvalidHostname(qname, "empty label")
        if len(lab) > MAX_LABEL_CHARS:
            raise InvalidHostname(qname, f"label longer than {MAX_LABEL_CHARS} characters")
    k = suffix_list.suffix_length(labels)
    split = max(len(labels) - k - 1, 0)
    sub = labels[:split]
    longest = ""
    for lab in sub:
        if len(lab) > len(longest):
            longest = lab
    return ParsedHostname(
        labels=tuple(labels),
        registered_domain=".".join(labels[split:]),
        subdomain_labels=tuple(sub),
        total_len=len(name),
        longest_subdomain_label=longest,
    )
