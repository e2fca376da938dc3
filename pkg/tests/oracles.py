"""Reference implementations used only by the test-suite.

Each one takes a deliberately different route from the production code.
"""

from __future__ import annotations

import math
import re
from collections import Counter

import mpmath
import numpy as np


def gram_bruteforce(X, gamma):
    n = len(X)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            d = 0.0
            for a, b in zip(X[i], X[j]):
                d += (a - b) ** 2
            K[i, j] = math.exp(-gamma * d)
    return K


def kernel_mp(x, y, gamma, dps=50):
    with mpmath.workdps(dps):
        s = mpmath.mpf(0)
        for a, b in zip(x, y):
            s += (mpmath.mpf(a) - mpmath.mpf(b)) ** 2
        return mpmath.exp(-mpmath.mpf(gamma) * s)


def project_capped_simplex(v, cap):
    """Euclidean projection onto {0 <= a <= cap, sum a = 1} by breakpoint search."""
    breaks = np.sort(np.concatenate([v, v - cap]))

    def total(tau):
        return np.clip(v - tau, 0.0, cap).sum()

    vals = np.clip(v[None, :] - breaks[:, None], 0.0, cap).sum(axis=1)  # nonincreasing in tau
    idx = np.searchsorted(-vals, -1.0)  # first breakpoint with total <= 1
    if idx == 0:
        lo, hi = breaks[0] - 1.0, breaks[0]
    else:
        lo, hi = breaks[idx - 1], breaks[idx]
    f_lo, f_hi = total(lo), total(hi)
    tau = hi if f_lo == f_hi else lo + (f_lo - 1.0) * (hi - lo) / (f_lo - f_hi)
    return np.clip(v - tau, 0.0, cap)


def qp_oracle(X, gamma, nu, iters=20000):
    """Solve the one-class dual with restarted FISTA.

    Returns ``(alpha, objective, rho)`` where rho comes from the primal: it is
    the ``nu*l``-quantile of the margin values ``g = K alpha``. When ``nu*l`` is
    an integer rho is not unique and ``None`` is returned for it.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    K = gram_bruteforce(X, gamma)
    cap = 1.0 / (nu * n)
    step = 1.0 / np.linalg.eigvalsh(K)[-1]
    a = np.full(n, 1.0 / n)
    y, t = a.copy(), 1.0
    f_prev = 0.5 * a @ K @ a
    for _ in range(iters):
        a_next = project_capped_simplex(y - step * (K @ y), cap)
        f_next = 0.5 * a_next @ K @ a_next
        if f_next > f_prev:  # adaptive restart
            y, t = a.copy(), 1.0
            continue
        t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
        y = a_next + ((t - 1) / t_next) * (a_next - a)
        a, t, f_prev = a_next, t_next, f_next
    g = K @ a
    k = nu * n
    if abs(k - round(k)) < 1e-9:
        return a, 0.5 * float(a @ K @ a), None
    rho = float(np.sort(g)[int(math.floor(k))])
    return a, 0.5 * float(a @ K @ a), rho


def oracle_decision(X_train, alpha, rho, gamma, Z):
    out = []
    for z in Z:
        s = 0.0
        for a, x in zip(alpha, X_train):
            s += a * math.exp(-gamma * sum((p - q) ** 2 for p, q in zip(x, z)))
        out.append(s - rho)
    return np.array(out)


def shannon_entropy(s):
    n = len(s)
    return -sum(c / n * math.log2(c / n) for c in Counter(s).values())


def jaro_winkler_ref(s1, s2, p=0.1, max_prefix=4):
    """Textbook Jaro-Winkler written from the definition."""
    if s1 == s2:
        return 1.0
    l1, l2 = len(s1), len(s2)
    if l1 == 0 or l2 == 0:
        return 0.0
    window = max(0, max(l1, l2) // 2 - 1)
    used2 = [False] * l2
    m1 = []
    for i, c in enumerate(s1):
        for j in range(max(0, i - window), min(l2, i + window + 1)):
            if not used2[j] and s2[j] == c:
                used2[j] = True
                m1.append(c)
                break
    m2 = [s2[j] for j in range(l2) if used2[j]]
    m = len(m1)
    if m == 0:
        return 0.0
    half_t = sum(1 for a, b in zip(m1, m2) if a != b)
    jaro = (m / l1 + m / l2 + (m - half_t / 2) / m) / 3
    prefix = 0
    for a, b in zip(s1, s2):
        if a != b or prefix == max_prefix:
            break
        prefix += 1
    return jaro + prefix * p * (1 - jaro)


def anomaly_index_mp(i_r, i_h, i_e, i_d, n_s, n_tot, b=0.33, c=0.067, dps=50):
    """Anomaly index evaluated in 50-digit arithmetic."""
    with mpmath.workdps(dps):
        raw = (mpmath.mpf(i_r) + mpmath.mpf(i_h) + mpmath.mpf(i_e) + mpmath.mpf(i_d)) / 4
        val = raw + mpmath.mpf(b) + mpmath.mpf(c) * mpmath.log10(mpmath.mpf(n_s) / mpmath.mpf(n_tot))
        val = min(mpmath.mpf(1), max(mpmath.mpf(0), val))
        return float(raw), float(val)


# -- filter chain -------------------------------------------------------------

_OCTET = r"(?:25[0-5]|2[0-4][0-9]|[01]?[0-9]?[0-9])"
IPV4_IN_NAME = re.compile(rf"(?:^|(?<=\.)){_OCTET}(?:\.{_OCTET}){{3}}(?=\.|$)")
_LABEL = re.compile(r"^[^.]{1,63}$")


def registered_domain_ref(host, psl):
    """eTLD+1 via the reference public-suffix implementation; the whole name if it is itself a suffix."""
    low = host.lower()
    priv = psl.privatesuffix(low)
    return priv if priv is not None else low


def ip_in_name_ref(host, psl):
    """Dotted quad anywhere left of the public suffix."""
    low = host.lower()
    suffix = psl.publicsuffix(low) or low.rsplit(".", 1)[-1]
    left = low[: -len(suffix) - 1] if low != suffix else ""
    return bool(IPV4_IN_NAME.search(left))


def _under(host, suffixes):
    return any(host == s or host.endswith("." + s) for s in suffixes)


def filter_chain_oracle(records, cfg, psl):
    """Brute-force reimplementation of the full filter chain.

    Returns a list with the fate of every record ("passed" or a filter name).
    """
    fate = [None] * len(records)
    stage = []
    for i, r in enumerate(records):
        host = r.qname[:-1] if r.qname.endswith(".") else r.qname
        labels = host.split(".")
        if not host or len(host) > 253 or not all(_LABEL.match(lab) for lab in labels):
            fate[i] = "invalid_hostname"
            continue
        low = host.lower()
        dom = registered_domain_ref(host, psl)
        n_sub = len(labels) - len(dom.split("."))
        sub = labels[:n_sub]
        longest = max((len(lab) for lab in sub), default=0)
        if r.qtype not in cfg.allowed_qtypes:
            fate[i] = "qtype"
        elif r.rcode != 0:
            fate[i] = "rcode"
        elif dom in cfg.whitelist_domains or _under(low, cfg.whitelist_domains):
            fate[i] = "whitelist"
        elif _under(low, cfg.cdn_suffixes):
            fate[i] = "cdn"
        elif _under(low, cfg.overloaded_dns_suffixes):
            fate[i] = "overloaded_dns"
        elif _under(low, cfg.local_domain_suffixes):
            fate[i] = "local_domain"
        elif ip_in_name_ref(host, psl):
            fate[i] = "ip_in_subdomain"
        elif longest < cfg.min_longest_label:
            fate[i] = "short_label"
        else:
            stage.append((i, r, dom, low))
    first = {}
    for i, r, dom, low in stage:
        key = (r.source, r.qname, r.qtype, r.qtype_code)
        if key not in first or r.timestamp < records[first[key]].timestamp:
            first[key] = i
    kept = set(first.values())
    for i, *_ in stage:
        if i not in kept:
            fate[i] = "duplicate"
    by_domain = {}
    for i, r, dom, low in stage:
        if i in kept:
            by_domain.setdefault(dom, set()).add(low)
    for i, r, dom, low in stage:
        if i in kept:
            fate[i] = "passed" if len(by_domain[dom]) >= cfg.min_hostnames_per_domain else "few_hostnames"
    return fate
