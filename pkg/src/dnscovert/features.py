"""Lexical hostname features consumed by the one-class SVM."""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dns_model import MAX_HOSTNAME_CHARS, MAX_LABEL_CHARS, ParsedHostname, SuffixList, split_hostname
from .exceptions import EmptySubdomain

FEATURE_NAMES = ("uppercase_ratio", "digits_ratio", "total_label_ratio", "per_label_ratio")


@dataclass(frozen=True)
class FeatureVector:
    uppercase_ratio: float
    digits_ratio: float
    total_label_ratio: float
    per_label_ratio: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def _count_classes(text):
    upper = digits = 0
    for ch in text:
        if "A" <= ch <= "Z":
            upper += 1
        elif "0" <= ch <= "9":
            digits += 1
    return upper, digits


def extract_features(parsed: ParsedHostname) -> FeatureVector:
    """Compute the four ratios for one hostname.

    Only ASCII letters and digits reach the numerators; hyphens and non-ASCII
    characters count toward the denominator alone.
    """
    sub = parsed.subdomain
    if not sub:
        raise EmptySubdomain(f"{parsed.hostname!r} has no subdomain")
    upper, digits = _count_classes(sub)
    return FeatureVector(
        upper / len(sub),
        digits / len(sub),
        parsed.total_len / MAX_HOSTNAME_CHARS,
        len(parsed.longest_subdomain_label) / MAX_LABEL_CHARS,
    )


class HostnameFeatures(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping hostnames to an ``(n, 4)`` feature matrix.

    Accepts raw hostname strings or :class:`ParsedHostname` objects.
    """

    def __init__(self, suffix_list: SuffixList | None = None):
        self.suffix_list = suffix_list

    def fit(self, X, y=None):
        self.n_features_out_ = len(FEATURE_NAMES)
        return self

    def transform(self, X):
        rows = []
        for item in X:
            if not isinstance(item, ParsedHostname):
                item = split_hostname(str(item), self.suffix_list)
            rows.append(astuple(extract_features(item)))
        return np.asarray(rows, dtype=float).reshape(len(rows), len(FEATURE_NAMES))

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)

    def __sklearn_is_fitted__(self):
        return True
