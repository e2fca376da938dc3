"""Synthetic DNS traffic: covert-channel streams and benign background.

Covert profiles emulate the codec, record types and domain shape of known
tunneling tools and malware families; they do not replay captures.
"""

from __future__ import annotations

import base64
import bisect
import ipaddress
import itertools
import json
import math
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from importlib import resources
from typing import Sequence

from .dns_model import MAX_HOSTNAME_CHARS, MAX_LABEL_CHARS, DnsQueryRecord, QType, format_log
from .exceptions import UnsupportedCodec

CODECS = ("base32", "base64", "base64url", "base128", "hex", "custom_rc4")

# iodine's Base128 alphabet: letters, digits and the Latin-1 range 0xBC..0xFD.
BASE128_ALPHABET = (
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    + "".join(chr(c) for c in range(0xBC, 0xFE))
)
_BASE128_INDEX = {ch: i for i, ch in enumerate(BASE128_ALPHABET)}
RC4_TEST_KEY = b"dnscovert-test-key"
DEFAULT_START = datetime(2024, 1, 1, tzinfo=timezone.utc)


# -- codecs ------------------------------------------------------------------

def rc4(key: bytes, data: bytes) -> bytes:
    s = list(range(256))
    j = 0
    for i in range(256):
        j = (j + s[i] + key[i % len(key)]) % 256
        s[i], s[j] = s[j], s[i]
    out = bytearray()
    i = j = 0
    for byte in data:
        i = (i + 1) % 256
        j = (j + s[i]) % 256
        s[i], s[j] = s[j], s[i]
        out.append(byte ^ s[(s[i] + s[j]) % 256])
    return bytes(out)


def _b128_encode(data: bytes) -> str:
    acc = bits = 0
    out = []
    for byte in data:
        acc = (acc << 8) | byte
        bits += 8
        while bits >= 7:
            bits -= 7
            out.append(BASE128_ALPHABET[(acc >> bits) & 0x7F])
    if bits:
        out.append(BASE128_ALPHABET[(acc << (7 - bits)) & 0x7F])
    return "".join(out)


def _b128_decode(text: str) -> bytes:
    acc = bits = 0
    out = bytearray()
    for ch in text:
        acc = (acc << 7) | _BASE128_INDEX[ch]
        bits += 7
        if bits >= 8:
            bits -= 8
            out.append((acc >> bits) & 0xFF)
    return bytes(out)


def _pad(text, block):
    return text + "=" * (-len(text) % block)


def encode_text(data: bytes, codec: str) -> str:
    if codec == "base32":
        return base64.b32encode(data).decode().rstrip("=").lower()
    if codec == "base64":
        return base64.b64encode(data, altchars=b"-+").decode().rstrip("=")
    if codec == "base64url":
        return base64.urlsafe_b64encode(data).decode().rstrip("=")
    if codec == "base128":
        return _b128_encode(data)
    if codec == "hex":
        return data.hex()
    if codec == "custom_rc4":
        return rc4(RC4_TEST_KEY, data).hex()
    raise UnsupportedCodec(f"unsupported codec {codec!r}")


def decode_text(text: str, codec: str) -> bytes:
    if codec == "base32":
        return base64.b32decode(_pad(text.upper(), 8))
    if codec == "base64":
        return base64.b64decode(_pad(text, 4), altchars=b"-+")
    if codec == "base64url":
        return base64.urlsafe_b64decode(_pad(text, 4))
    if codec == "base128":
        return _b128_decode(text)
    if codec == "hex":
        return bytes.fromhex(text)
    if codec == "custom_rc4":
        return rc4(RC4_TEST_KEY, bytes.fromhex(text))
    raise UnsupportedCodec(f"unsupported codec {codec!r}")


def encode_payload(data: bytes, codec: str, label_len: int = MAX_LABEL_CHARS) -> list[str]:
    """Encode ``data`` and cut the text into labels of at most ``label_len`` characters."""
    if not 1 <= label_len <= MAX_LABEL_CHARS:
        raise ValueError(f"label_len must be in 1..{MAX_LABEL_CHARS}")
    text = encode_text(data, codec)
    return [text[i:i + label_len] for i in range(0, len(text), label_len)]


def decode_payload(labels: Sequence[str], codec: str) -> bytes:
    return decode_text("".join(labels), codec)


_BITS_PER_CHAR = {"base32": 5, "base64": 6, "base64url": 6, "base128": 7, "hex": 4, "custom_rc4": 4}


def payload_capacity(chars: int, codec: str) -> int:
    """Bytes that fit in ``chars`` encoded characters."""
    return chars * _BITS_PER_CHAR[codec] // 8


# -- profiles ----------------------------------------------------------------

@dataclass(frozen=True)
class ToolProfile:
    """Shape of one covert channel.

    ``query_rate`` is in queries per minute. ``keepalive_fraction`` is the
    share of short session-keeping queries that carry no payload.
    """

    name: str
    codec: str
    qtypes: tuple
    domain: str
    label_len: int = 63
    hostname_budget: int = MAX_HOSTNAME_CHARS
    query_rate: float = 30.0
    category: str = "tunneling"
    keepalive_fraction: float = 0.0
    keepalive_len: int = 4
    payload: bytes | None = None

    def __post_init__(self):
        if self.codec not in CODECS:
            raise UnsupportedCodec(f"unsupported codec {self.codec!r}")
        if not 1 <= self.label_len <= MAX_LABEL_CHARS:
            raise ValueError("label_len out of range")
        if self.hostname_budget > MAX_HOSTNAME_CHARS:
            raise ValueError("hostname_budget exceeds 253")
        if self.hostname_budget - len(self.domain) - 1 < 8:
            raise ValueError("hostname_budget leaves no room for payload")
        if self.query_rate <= 0:
            raise ValueError("query_rate must be positive")
        if not 0 <= self.keepalive_fraction < 1:
            raise ValueError("keepalive_fraction must be in [0, 1)")
        qtypes = tuple(q if isinstance(q, QType) else QType[str(q).upper()] for q in self.qtypes)
        if not qtypes:
            raise ValueError("profile needs at least one qtype")
        object.__setattr__(self, "qtypes", qtypes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "codec": self.codec,
            "qtypes": [q.name for q in self.qtypes],
            "domain": self.domain,
            "label_len": self.label_len,
            "hostname_budget": self.hostname_budget,
            "query_rate": self.query_rate,
            "category": self.category,
            "keepalive_fraction": self.keepalive_fraction,
            "keepalive_len": self.keepalive_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolProfile":
        return cls(**{k: (tuple(v) if k == "qtypes" else v) for k, v in d.items()})


def _tool(name, codec, qtypes, domain, **kw):
    return ToolProfile(name=name, codec=codec, qtypes=tuple(qtypes), domain=domain, **kw)


# Tunneling tools; attacker domains are placeholders.
TOOL_PROFILES = {
    "iodine": _tool("iodine", "base128", ["NULL"], "t.iodine-lab.net", query_rate=60),
    "iodine_txt": _tool("iodine_txt", "base128", ["TXT"], "t.iodine-lab.net", query_rate=60),
    "dnscat2": _tool("dnscat2", "hex", ["TXT", "MX", "CNAME"], "dnscat-c2.com", query_rate=30),
    "dns2tcp": _tool("dns2tcp", "base64", ["TXT", "KEY"], "relay.dns2tcp-lab.org", query_rate=30, label_len=60),
    "dnscapy": _tool("dnscapy", "base64", ["CNAME", "TXT"], "ssh.dnscapy-lab.net", query_rate=60,
                     keepalive_fraction=0.8),
    "dnsfilexfer": _tool("dnsfilexfer", "hex", ["A"], "filexfer-drop.com", query_rate=20,
                         category="exfiltration", label_len=40, hostname_budget=120),
    "your_freedom": _tool("your_freedom", "base64", ["NULL"], "yf-gateway.net", query_rate=40),
    "exfiltration": _tool("exfiltration", "base64", ["AAAA"], "exfil-sink.com", query_rate=10,
                          category="exfiltration", label_len=48, hostname_budget=160),
}

# Malware families; codec, record types and IoC domains follow public reports.
# The proprietary encodings are approximated by custom_rc4 (RC4 then hex).
MALWARE_PROFILES = {
    "pisloader": _tool("pisloader", "base32", ["TXT"], "local.it-desktop.com", query_rate=6, label_len=50,
                       hostname_budget=140),
    "ismdoor": _tool("ismdoor", "base64", ["AAAA"], "basnevs.com", query_rate=6, category="exfiltration",
                     label_len=40, hostname_budget=110),
    "denis": _tool("denis", "base64", ["NULL"], "z.teriava.com", query_rate=6, label_len=50, hostname_budget=120),
    "carbanak": _tool("carbanak", "custom_rc4", ["TXT"], "en.google4-ssl.com", query_rate=6, label_len=48,
                      hostname_budget=120),
    "cobalt_strike": _tool("cobalt_strike", "custom_rc4", ["TXT"], "update.cisc0.net", query_rate=6,
                           label_len=56, hostname_budget=130),
    "bondupdater": _tool("bondupdater", "custom_rc4", ["A", "TXT"], "withyourface.com", query_rate=6,
                         label_len=40, hostname_budget=100),
    "udpos": _tool("udpos", "custom_rc4", ["A"], "ns.service-logmeln.network", query_rate=6,
                   category="exfiltration", label_len=40, hostname_budget=110),
    "dnspionage": _tool("dnspionage", "base32", ["A"], "microsoftonedrive.org", query_rate=6,
                        category="exfiltration", label_len=40, hostname_budget=110),
}

ALL_PROFILES = {**TOOL_PROFILES, **MALWARE_PROFILES}


def get_profile(name: str) -> ToolProfile:
    try:
        return ALL_PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; known: {', '.join(sorted(ALL_PROFILES))}") from None


def load_profile(path) -> ToolProfile:
    with open(path, encoding="utf-8") as fh:
        return ToolProfile.from_dict(json.load(fh))


def _random_bytes(rng: random.Random, n: int) -> bytes:
    return bytes(rng.getrandbits(8) for _ in range(n))


def _labels_for(profile: ToolProfile, seq: int, rng: random.Random, stream) -> list[str]:
    room = profile.hostname_budget - len(profile.domain) - 1
    # room for k labels of label_len plus k separators
    n_full, rest = divmod(room, profile.label_len + 1)
    chars = n_full * profile.label_len + max(0, rest - 1)
    nbytes = payload_capacity(chars, profile.codec)
    header = seq.to_bytes(4, "big")
    body = bytes(itertools.islice(stream, max(0, nbytes - len(header))))
    return encode_payload(header + body, profile.codec, profile.label_len)


def _payload_stream(profile: ToolProfile, rng: random.Random):
    if profile.payload:
        return itertools.cycle(profile.payload)
    return iter(lambda: rng.getrandbits(8), None)


def generate_covert(profile: ToolProfile, duration: float, seed: int = 0, start: datetime = DEFAULT_START,
                    source: str = "10.0.66.6") -> list[DnsQueryRecord]:
    """Emit a covert stream of ``duration`` seconds at the profile's rate.

    Every qname is unique (cache avoidance). Keep-alive queries carry a short
    random label instead of payload.
    """
    rng = random.Random(seed)
    stream = _payload_stream(profile, rng)
    n = int(round(duration / 60.0 * profile.query_rate))
    spacing = duration / n if n else 0.0
    ka_alphabet = BASE128_ALPHABET[:62] if profile.codec == "base128" else "abcdefghijklmnopqrstuvwxyz0123456789"
    records, seen = [], set()
    seq = 0
    for k in range(n):
        offset = (k + rng.random()) * spacing
        ts = start + timedelta(milliseconds=int(offset * 1000))
        qtype = profile.qtypes[rng.randrange(len(profile.qtypes))]
        if profile.keepalive_fraction and rng.random() < profile.keepalive_fraction:
            while True:
                label = "".join(rng.choice(ka_alphabet) for _ in range(profile.keepalive_len))
                qname = f"{label}.{profile.domain}"
                if qname not in seen:
                    break
        else:
            labels = _labels_for(profile, seq, rng, stream)
            seq += 1
            qname = ".".join(labels + [profile.domain])
        seen.add(qname)
        records.append(DnsQueryRecord(ts, source, qname, qtype, 0))
    return records


def is_keepalive(record: DnsQueryRecord, profile: ToolProfile) -> bool:
    sub = record.qname[: -len(profile.domain) - 1]
    return "." not in sub and len(sub) == profile.keepalive_len


# -- benign background -------------------------------------------------------

def _bundled_words(name):
    text = resources.files("dnscovert.data").joinpath(name).read_text("utf-8")
    return [w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#")]


_TLDS = ("com", "com", "com", "net", "org", "it", "it", "co.uk", "de", "eu", "io", "info")


def default_domain_corpus(n_longtail: int = 600, seed: int = 1234) -> list[str]:
    """Whitelisted, CDN and local domains plus generated long-tail domains."""
    rng = random.Random(seed)
    words = _bundled_words("benign_vocab.txt")
    corpus = list(_bundled_words("whitelist.txt"))
    corpus += [f"e{rng.randrange(1000, 9999)}.a.{z}" for z in ("akamaiedge.net", "akamaized.net")]
    corpus += ["d1abc2xyz.cloudfront.net", "global.fastly.net", "example-corp.com", "corp.local"]
    seen = set(corpus)
    target = len(corpus) + n_longtail
    while len(corpus) < target:
        name = rng.choice(words) + rng.choice(("", "", "-", "")) + rng.choice(words)
        dom = f"{name}.{rng.choice(_TLDS)}"
        if dom not in seen:
            seen.add(dom)
            corpus.append(dom)
    return corpus


@dataclass(frozen=True)
class BenignProfile:
    """Background traffic of a client network.

    ``query_rate`` is in queries per hour over the whole network;
    ``repeat_factor`` is the probability that a query re-issues an earlier
    (qname, qtype) pair instead of a new name.
    """

    domain_corpus: tuple = ()
    subdomain_vocab: tuple = ()
    query_rate: float = 25_000.0
    qtype_mix: tuple = (("A", 0.62), ("AAAA", 0.25), ("CNAME", 0.03), ("TXT", 0.02), ("MX", 0.02),
                        ("SRV", 0.02), ("PTR", 0.04))
    repeat_factor: float = 0.968
    n_sources: int = 346
    error_rate: float = 0.01
    domain_zipf: float = 1.1

    def __post_init__(self):
        if self.query_rate <= 0:
            raise ValueError("query_rate must be positive")
        if not 0 <= self.repeat_factor <= 1:
            raise ValueError("repeat_factor must be in [0, 1]")
        total = sum(p for _, p in self.qtype_mix)
        if abs(total - 1) > 1e-9:
            raise ValueError(f"qtype_mix sums to {total}, expected 1")
        if not self.domain_corpus:
            object.__setattr__(self, "domain_corpus", tuple(default_domain_corpus()))
        if not self.subdomain_vocab:
            object.__setattr__(self, "subdomain_vocab", tuple(_bundled_words("benign_vocab.txt")))

    def sources(self) -> list[str]:
        base = int(ipaddress.ip_address("10.0.0.10"))
        return [str(ipaddress.ip_address(base + i)) for i in range(self.n_sources)]


def _new_subdomain(rng: random.Random, vocab: Sequence[str]) -> str:
    shape = rng.random()
    w = rng.choice(vocab)
    if shape < 0.45:
        return w
    if shape < 0.65:
        return f"{w}{rng.randint(1, 20)}"
    if shape < 0.80:
        return f"{w}-{rng.choice(vocab)}"
    if shape < 0.92:
        return f"{w}.{rng.choice(vocab)}"
    return f"{rng.choice(vocab)}-{rng.choice(('eu', 'us', 'west', 'east', 'prod', 'v2', 'edge'))}.{w}"


def generate_benign(profile: BenignProfile, duration: float, seed: int = 0,
                    start: datetime = DEFAULT_START) -> list[DnsQueryRecord]:
    """Background traffic for ``duration`` seconds, sorted by timestamp."""
    rng = random.Random(seed)
    n = int(round(profile.query_rate * duration / 3600.0))
    sources = profile.sources()
    domains = profile.domain_corpus
    weights = [1.0 / (r + 1) ** profile.domain_zipf for r in range(len(domains))]
    cum_domain = list(itertools.accumulate(weights))
    src_weights = list(itertools.accumulate(1.0 / math.sqrt(r + 1) for r in range(len(sources))))
    qtypes = [QType[name] for name, _ in profile.qtype_mix]
    cum_qtype = list(itertools.accumulate(p for _, p in profile.qtype_mix))

    offsets = sorted(rng.random() * duration for _ in range(n))
    history: list[tuple[str, QType]] = []
    issued: set = set()
    records = []
    for offset in offsets:
        if history and rng.random() < profile.repeat_factor:
            qname, qtype = history[rng.randrange(len(history))]
        else:
            for _ in range(50):
                qtype = qtypes[min(bisect.bisect(cum_qtype, rng.random() * cum_qtype[-1]), len(qtypes) - 1)]
                domain = domains[bisect.bisect(cum_domain, rng.random() * cum_domain[-1])]
                if qtype is QType.PTR:
                    octets = [rng.randint(1, 254) for _ in range(4)]
                    qname = ".".join(map(str, octets)) + ".in-addr.arpa"
                else:
                    qname = f"{_new_subdomain(rng, profile.subdomain_vocab)}.{domain}"
                if (qname, qtype) not in issued:
                    break
            issued.add((qname, qtype))
        history.append((qname, qtype))
        source = sources[bisect.bisect(src_weights, rng.random() * src_weights[-1])]
        rcode = 3 if rng.random() < profile.error_rate else 0
        ts = start + timedelta(milliseconds=int(offset * 1000))
        records.append(DnsQueryRecord(ts, source, qname, qtype, rcode))
    return records


def merge_streams(*streams: Sequence[DnsQueryRecord]) -> list[DnsQueryRecord]:
    """Merge record streams by timestamp (stable for equal timestamps)."""
    merged = [rec for stream in streams for rec in stream]
    merged.sort(key=lambda r: r.timestamp)
    return merged


def ground_truth_document(profiles: Sequence[ToolProfile], sources: Sequence[str] = ()) -> dict:
    """Sidecar listing the injected attacker domains."""
    return {
        "attacker_domains": sorted({p.domain.lower() for p in profiles}),
        "scenarios": [{"name": p.name, "domain": p.domain.lower(), "codec": p.codec,
                       "qtypes": [q.name for q in p.qtypes], "category": p.category} for p in profiles],
        "sources": list(sources),
    }


def write_generated(records, out_path, format="csv", ground_truth: dict | None = None) -> None:
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_log(records, format))
    if ground_truth is not None:
        with open(str(out_path) + ".truth.json", "w", encoding="utf-8") as fh:
            json.dump(ground_truth, fh, indent=2, sort_keys=True)
            fh.write("\n")
