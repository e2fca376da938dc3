"""One-class SVM (nu formulation) with an RBF kernel.

The dual solved here is::

    minimize    1/2 * sum_ij a_i a_j K(x_i, x_j)
    subject to  0 <= a_i <= w_i / (nu * W),   sum_i a_i = 1

with ``w_i`` the sample weights (all ones by default, ``W = sum w``). Exact
duplicate rows are merged into one weighted row before solving, which leaves
the optimum unchanged and keeps the kernel cache small on DNS traffic where
many queries share a feature vector.

The decision function is ``sum_i a_i K(sv_i, x) - rho``; negative values are
outliers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime
from itertools import product

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import CorruptModel, DegenerateData, DnsCovertError, NoConvergence, VersionMismatch

logger = logging.getLogger(__name__)

SV_EPSILON = 1e-8
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100_000
MIN_TRAINING_SAMPLES = 10
GRID_VALUES = (1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2)
DEFAULT_GRID = tuple(product(GRID_VALUES, GRID_VALUES))

_TAU = 1e-12
_FULL_GRAM_LIMIT = 3000


def kernel(x, y, gamma: float) -> float:
    """RBF kernel ``exp(-gamma * ||x - y||^2)``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(X, Y, gamma, chunk=2048):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    out = np.empty((X.shape[0], Y.shape[0]))
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        sq = ((block[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)
        out[start:start + chunk] = np.exp(-gamma * sq)
    return out


class _KernelRows:
    """Kernel rows on demand; full Gram matrix for small problems, LRU cache otherwise."""

    def __init__(self, X, gamma, cache_mb=200):
        self.X = X
        self.gamma = gamma
        n = X.shape[0]
        self.full = rbf_matrix(X, X, gamma) if n <= _FULL_GRAM_LIMIT else None
        self.cache = OrderedDict()
        self.max_rows = max(2, int(cache_mb * 2**20 / (8 * n)))

    def __call__(self, i):
        if self.full is not None:
            return self.full[i]
        row = self.cache.get(i)
        if row is not None:
            self.cache.move_to_end(i)
            return row
        d = self.X - self.X[i]
        row = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        self.cache[i] = row
        if len(self.cache) > self.max_rows:
            self.cache.popitem(last=False)
        return row


def _initial_alpha(upper):
    """Fill bounds left to right until the alphas sum to one."""
    alpha = np.zeros_like(upper)
    remaining = 1.0
    for i, c in enumerate(upper):
        take = min(c, remaining)
        alpha[i] = take
        remaining -= take
        if remaining <= 0:
            break
    return alpha


def solve_dual(rows, upper, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """SMO over the one-class dual with second-order working-set selection.

    ``rows(i)`` returns kernel row ``i``; ``upper`` holds the box bounds. Stops
    when the maximal KKT violation ``m - M`` drops below ``tol``. Returns
    ``(alpha, rho, gradient, n_iter)``.
    """
    n = upper.shape[0]
    alpha = _initial_alpha(upper)
    grad = np.zeros(n)
    for i in np.flatnonzero(alpha):
        grad += alpha[i] * rows(i)

    n_iter = 0
    while True:
        up = alpha < upper
        low = alpha > 0
        neg_grad = -grad
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, neg_grad, -np.inf)))
        g_max = neg_grad[i]
        g_min = float(np.min(neg_grad[low]))
        if g_max - g_min < tol:
            break
        if n_iter >= max_iter:
            raise NoConvergence(max_iter, g_max - g_min)

        row_i = rows(i)
        b = g_max + grad  # b_t = -G_i + G_t, positive for useful t
        cand = low & (b > 0)
        a = np.maximum(2.0 - 2.0 * row_i, _TAU)  # K_ii = K_tt = 1 for RBF
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))

        delta = b[j] / a[j]
        delta = min(delta, upper[i] - alpha[i], alpha[j])
        if delta <= 0:
            raise NoConvergence(n_iter, g_max - g_min)
        row_j = rows(j)
        if delta == upper[i] - alpha[i]:
            alpha_i_new = upper[i]
        else:
            alpha_i_new = alpha[i] + delta
        alpha_j_new = 0.0 if delta == alpha[j] else alpha[j] - delta
        alpha[i], alpha[j] = alpha_i_new, alpha_j_new
        grad += delta * (row_i - row_j)
        n_iter += 1

    rho = _compute_rho(alpha, upper, grad)
    return alpha, rho, grad, n_iter


def _compute_rho(alpha, upper, grad):
    free = (alpha > 0) & (alpha < upper)
    if free.any():
        return float(grad[free].mean())
    at_upper = alpha >= upper
    at_zero = alpha <= 0
    lb = float(grad[at_upper].max()) if at_upper.any() else -math.inf
    ub = float(grad[at_zero].min()) if at_zero.any() else math.inf
    if math.isinf(ub):
        return lb
    if math.isinf(lb):
        return ub
    return (lb + ub) / 2.0


class OneClassSVM(OutlierMixin, BaseEstimator):
    """Nu one-class SVM with RBF kernel and a dependency-free SMO solver.

    Parameters
    ----------
    gamma : float
        RBF width, ``K(x, y) = exp(-gamma ||x - y||^2)``.
    nu : float in (0, 1]
        Upper bound on the fraction of training outliers.
    tol : float
        KKT tolerance of the solver.
    max_iter : int
        Maximum number of SMO pair updates; exceeding it raises
        :class:`NoConvergence`.

    Attributes
    ----------
    support_vectors_ : ndarray of shape (n_sv, n_features)
    alphas_ : ndarray of shape (n_sv,)
        Dual coefficients, summing to one.
    rho_ : float
        Decision offset.
    training_size_ : float
        Total training weight ``l`` (sample count when unweighted).
    trained_at_ : datetime or None
    """

    def __init__(self, gamma=0.1, nu=0.1, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, cache_mb=200):
        self.gamma = gamma
        self.nu = nu
        self.tol = tol
        self.max_iter = max_iter
        self.cache_mb = cache_mb

    def _check_params(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.nu <= 1:
            raise ValueError(f"nu must be in (0, 1], got {self.nu}")

    def fit(self, X, y=None, sample_weight=None, trained_at: datetime | None = None):
        self._check_params()
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < MIN_TRAINING_SAMPLES:
            raise ValueError(f"need at least {MIN_TRAINING_SAMPLES} samples, got {X.shape[0]}")
        if sample_weight is None:
            sample_weight = np.ones(X.shape[0])
        else:
            sample_weight = np.asarray(sample_weight, dtype=float)
            if sample_weight.shape != (X.shape[0],) or (sample_weight <= 0).any():
                raise ValueError("sample_weight must be positive with one entry per sample")
        uniq, inverse = np.unique(X, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        if uniq.shape[0] == 1:
            raise DegenerateData("all training points are identical")
        weights = np.bincount(inverse, weights=sample_weight)
        total = float(sample_weight.sum())
        upper = weights / (self.nu * total)

        rows = _KernelRows(uniq, self.gamma, self.cache_mb)
        alpha, rho, grad, n_iter = solve_dual(rows, upper, self.tol, self.max_iter)

        sv = alpha > SV_EPSILON
        self.n_features_in_ = X.shape[1]
        self.support_vectors_ = uniq[sv]
        self.alphas_ = alpha[sv]
        # The solver's rho is only accurate to tol. Any value in that band is a
        # valid offset; the smallest margin of a point below its box bound is
        # the one that leaves only bounded points (at most nu*l of them) on the
        # rejecting side. Margins use the same expansion as decision_function.
        below_cap = alpha < upper
        margins = self._expansion(uniq)
        rho = float(margins[below_cap].min()) if below_cap.any() else float(margins.max())
        self.rho_ = rho
        self.offset_ = rho
        self.objective_ = 0.5 * float(alpha @ grad)
        self.n_iter_ = n_iter
        self.training_size_ = total
        self.trained_at_ = trained_at
        logger.debug(
            "trained ocsvm gamma=%g nu=%g: %d unique points, %d SVs, %d iterations",
            self.gamma, self.nu, uniq.shape[0], int(sv.sum()), n_iter,
        )
        return self

    def _expansion(self, X):
        # row-wise reduction: a row's value does not depend on the batch it is in
        return (rbf_matrix(X, self.support_vectors_, self.gamma) * self.alphas_).sum(axis=1)

    def score_samples(self, X):
        check_is_fitted(self, "alphas_")
        return self._expansion(check_array(X, dtype=np.float64))

    def decision_function(self, X):
        return self.score_samples(X) - self.rho_

    def predict(self, X):
        return np.where(self.decision_function(X) < 0, -1, 1)


OcsvmModel = OneClassSVM


def train(data, gamma, nu, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, sample_weight=None, trained_at=None):
    """Fit a :class:`OneClassSVM` on ``data`` and return it."""
    return OneClassSVM(gamma=gamma, nu=nu, tol=tol, max_iter=max_iter).fit(
        _as_matrix(data), sample_weight=sample_weight, trained_at=trained_at
    )


def decision(model: OneClassSVM, x) -> float:
    return float(model.decision_function(np.asarray(_as_matrix([x]))[:1])[0])


def _as_matrix(data):
    if isinstance(data, np.ndarray):
        return data
    rows = [r.as_array() if hasattr(r, "as_array") else np.asarray(r, dtype=float) for r in data]
    return np.vstack(rows) if rows else np.empty((0, 4))


@dataclass
class GridSearchResult:
    best_gamma: float
    best_nu: float
    validation_scores: dict
    split_seed: int
    model: OneClassSVM | None = field(default=None, repr=False)


def validation_score(model: OneClassSVM, X_train, X_val) -> float:
    """Validation accept rate minus the gap between nu and the training reject rate."""
    accept = float(np.mean(model.decision_function(X_val) >= 0))
    train_reject = float(np.mean(model.decision_function(X_train) < 0))
    return accept - abs(model.nu - train_reject)


def grid_search(data, grid=DEFAULT_GRID, split_frac=0.75, seed=0, tol=DEFAULT_TOL,
                max_iter=DEFAULT_MAX_ITER, trained_at=None) -> GridSearchResult:
    """Select ``(gamma, nu)`` on a seeded train/validation split, then refit on all data.

    Cells whose training fails (invalid ``nu``, no convergence) score ``-inf``.
    Ties go to the smaller gamma, then the smaller nu.
    """
    X = check_array(_as_matrix(data), dtype=np.float64)
    n = X.shape[0]
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(split_frac * n))
    X_train, X_val = X[perm[:n_train]], X[perm[n_train:]]
    if X_val.shape[0] == 0:
        raise ValueError("validation split is empty")

    scores = {}
    for gamma, nu in grid:
        try:
            model = OneClassSVM(gamma=gamma, nu=nu, tol=tol, max_iter=max_iter).fit(X_train)
            scores[(gamma, nu)] = validation_score(model, X_train, X_val)
        except (ValueError, DnsCovertError) as exc:
            logger.debug("grid cell gamma=%g nu=%g failed: %s", gamma, nu, exc)
            scores[(gamma, nu)] = -math.inf
    best = min(scores, key=lambda k: (-scores[k], k[0], k[1]))
    if math.isinf(scores[best]):
        raise DegenerateData("every grid cell failed to train")
    final = OneClassSVM(gamma=best[0], nu=best[1], tol=tol, max_iter=max_iter).fit(X, trained_at=trained_at)
    return GridSearchResult(best[0], best[1], scores, seed, final)


# -- persistence ------------------------------------------------------------

MAGIC = b"DNSCOVERT\n"
FORMAT_VERSION = 1


def dump_container(kind: str, payload: dict) -> bytes:
    """Serialize ``payload`` into the versioned container (see docs/model_format.md)."""
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    digest = hashlib.sha256(body).hexdigest()
    header = f"version {FORMAT_VERSION}\nkind {kind}\nsha256 {digest}\nlength {len(body)}\n\n"
    return MAGIC + header.encode("ascii") + body


def load_container(blob: bytes, kind: str) -> dict:
    if not blob.startswith(MAGIC):
        raise CorruptModel("missing DNSCOVERT magic line")
    try:
        head, body = blob[len(MAGIC):].split(b"\n\n", 1)
        fields = dict(line.split(" ", 1) for line in head.decode("ascii").split("\n"))
        version = int(fields["version"])
    except (ValueError, KeyError, UnicodeDecodeError):
        raise CorruptModel("malformed container header") from None
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"container version {version}, supported {FORMAT_VERSION}")
    if fields.get("kind") != kind:
        raise CorruptModel(f"expected a {kind!r} container, found {fields.get('kind')!r}")
    if str(len(body)) != fields.get("length") or hashlib.sha256(body).hexdigest() != fields.get("sha256"):
        raise CorruptModel("body length or checksum mismatch (truncated or altered file)")
    try:
        return json.loads(body.decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        raise CorruptModel("body is not valid JSON") from None


def model_to_dict(model: OneClassSVM) -> dict:
    check_is_fitted(model, "alphas_")
    return {
        "gamma": float(model.gamma),
        "nu": float(model.nu),
        "tol": float(model.tol),
        "max_iter": int(model.max_iter),
        "rho": float(model.rho_),
        "alphas": [float(a) for a in model.alphas_],
        "support_vectors": [[float(v) for v in row] for row in model.support_vectors_],
        "objective": float(model.objective_),
        "n_iter": int(model.n_iter_),
        "training_size": float(model.training_size_),
        "trained_at": model.trained_at_.isoformat() if model.trained_at_ else None,
    }


def model_from_dict(d: dict) -> OneClassSVM:
    try:
        model = OneClassSVM(gamma=d["gamma"], nu=d["nu"], tol=d["tol"], max_iter=d["max_iter"])
        model.rho_ = model.offset_ = float(d["rho"])
        model.alphas_ = np.asarray(d["alphas"], dtype=float)
        model.support_vectors_ = np.asarray(d["support_vectors"], dtype=float).reshape(len(model.alphas_), -1)
        model.n_features_in_ = model.support_vectors_.shape[1]
        model.objective_ = float(d["objective"])
        model.n_iter_ = int(d["n_iter"])
        model.training_size_ = float(d["training_size"])
        model.trained_at_ = datetime.fromisoformat(d["trained_at"]) if d["trained_at"] else None
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"invalid model fields: {exc}") from None
    return model


def save_model(model: OneClassSVM) -> bytes:
    return dump_container("ocsvm", model_to_dict(model))


def load_model(blob: bytes) -> OneClassSVM:
    return model_from_dict(load_container(blob, "ocsvm"))
