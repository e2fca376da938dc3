"""Offline model creation and online classification.

:class:`CovertChannelDetector` is the estimator-style entry point:
``fit(history)`` runs the offline phase (filters, features, grid search,
baseline) and ``predict(window)`` the online phase for one analysis window.
:class:`Engine` drives both over a time-ordered stream, retraining every
``retrain_period`` and swapping the (model, baseline) pair atomically.
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import ocsvm
from .analytics import (
    AnalyticsConfig,
    AnomalyReport,
    BaselineDistributions,
    LanguageProfile,
    WindowStats,
    build_baseline,
    classify_query,
    load_default_profiles,
)
from .dns_model import DnsQueryRecord, SuffixList
from .exceptions import DataError, InsufficientData
from .features import HostnameFeatures
from .filters import PASSED, FilterConfig, FilterTrace, run_filter_chain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    retrain_period: timedelta = timedelta(hours=6)
    online_window: timedelta = timedelta(hours=1)
    min_training_records: int = 100
    rng_seed: int = 0
    grid: tuple = ocsvm.DEFAULT_GRID
    split_frac: float = 0.75
    tol: float = ocsvm.DEFAULT_TOL
    max_iter: int = ocsvm.DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.retrain_period < self.online_window:
            raise ValueError("retrain_period must be >= online_window")
        if self.min_training_records < 100:
            raise ValueError("min_training_records must be >= 100")


@dataclass(frozen=True)
class EngineState:
    """A (model, baseline) pair from one offline run."""

    model: ocsvm.OneClassSVM
    baseline: BaselineDistributions
    generation: int
    grid_result: ocsvm.GridSearchResult | None = field(default=None, compare=False, repr=False)


def state_to_bytes(state: EngineState) -> bytes:
    payload = {
        "generation": state.generation,
        "model": ocsvm.model_to_dict(state.model),
        "baseline": state.baseline.to_dict(),
    }
    return ocsvm.dump_container("engine-state", payload)


def state_from_bytes(blob: bytes) -> EngineState:
    from .exceptions import CorruptModel

    d = ocsvm.load_container(blob, "engine-state")
    try:
        baseline = BaselineDistributions(**d["baseline"])
        return EngineState(ocsvm.model_from_dict(d["model"]), baseline, int(d["generation"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"invalid engine state: {exc}") from None


def hour_floor(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


@dataclass
class WindowCounts:
    """Accounting for one online window: every input record lands in exactly one bucket."""

    total: int = 0
    filtered: int = 0
    errored: int = 0
    normal: int = 0
    reported: int = 0
    by_filter: Counter = field(default_factory=Counter)

    def add(self, other: "WindowCounts") -> None:
        self.total += other.total
        self.filtered += other.filtered
        self.errored += other.errored
        self.normal += other.normal
        self.reported += other.reported
        self.by_filter.update(other.by_filter)


class CovertChannelDetector(BaseEstimator):
    """Two-stage DNS covert-channel detector.

    Parameters
    ----------
    filter_config : FilterConfig, optional
        Defaults to :meth:`FilterConfig.default`.
    analytics_config : AnalyticsConfig, optional
    pipeline_config : PipelineConfig, optional
    suffix_list : SuffixList, optional
        Defaults to the bundled public-suffix list.
    profiles : list of LanguageProfile, optional
        Defaults to the bundled English and Italian profiles.
    """

    def __init__(self, filter_config=None, analytics_config=None, pipeline_config=None,
                 suffix_list=None, profiles=None):
        self.filter_config = filter_config
        self.analytics_config = analytics_config
        self.pipeline_config = pipeline_config
        self.suffix_list = suffix_list
        self.profiles = profiles

    # resolved configuration
    @property
    def _fcfg(self) -> FilterConfig:
        return self.filter_config or _default_filter_config()

    @property
    def _acfg(self) -> AnalyticsConfig:
        return self.analytics_config or AnalyticsConfig()

    @property
    def _pcfg(self) -> PipelineConfig:
        return self.pipeline_config or PipelineConfig()

    @property
    def _profiles(self) -> list[LanguageProfile]:
        return self.profiles or _default_profiles()

    def _features(self, survivors):
        return HostnameFeatures(self.suffix_list).transform([parsed for _, parsed in survivors])

    def offline_run(self, history: Sequence[DnsQueryRecord], generation: int = 1) -> EngineState:
        """Build a new :class:`EngineState` from one retrain period of history."""
        pcfg = self._pcfg
        history = list(history)
        survivors, trace = run_filter_chain(history, self._fcfg, self.suffix_list)
        if len(survivors) < pcfg.min_training_records:
            raise InsufficientData(
                f"{len(survivors)} records survive filtering, need {pcfg.min_training_records}"
            )
        X = self._features(survivors)
        trained_at = max(rec.timestamp for rec in history)
        result = ocsvm.grid_search(
            X, grid=pcfg.grid, split_frac=pcfg.split_frac, seed=pcfg.rng_seed,
            tol=pcfg.tol, max_iter=pcfg.max_iter, trained_at=trained_at,
        )
        start = hour_floor(min(rec.timestamp for rec in history))
        sub_seconds = pcfg.online_window.total_seconds() / self._acfg.subwindow_count
        baseline = build_baseline(
            survivors, sub_seconds, origin=start, percentile=self._acfg.tail_percentile,
            built_from=f"{start.isoformat()}/{trained_at.isoformat()} ({len(survivors)} records)",
        )
        logger.info(
            "offline run: %d records, %d survive filters, gamma=%g nu=%g, p90 requests=%g hostnames=%g",
            len(history), len(survivors), result.best_gamma, result.best_nu,
            baseline.unique_requests_p90, baseline.unique_hostnames_p90,
        )
        return EngineState(result.model, baseline, generation, result)

    def fit(self, X, y=None):
        """Run the offline phase on historical records ``X``."""
        prev = getattr(self, "state_", None)
        self.state_ = self.offline_run(X, generation=(prev.generation + 1) if prev else 1)
        return self

    def online_step(self, window: Sequence[DnsQueryRecord], state: EngineState,
                    window_start: datetime | None = None, window_end: datetime | None = None):
        """Classify one analysis window; returns ``(reports, counts)``.

        One report is emitted per query rejected by the SVM; its verdict comes
        from the anomaly index.
        """
        window = list(window)
        counts = WindowCounts(total=len(window))
        if not window:
            return [], counts
        if window_start is None:
            window_start = hour_floor(min(rec.timestamp for rec in window))
        if window_end is None:
            window_end = window_start + self._pcfg.online_window
        acfg = self._acfg

        survivors, trace = run_filter_chain(window, self._fcfg, self.suffix_list)
        by_reason = trace.counts()
        counts.errored = by_reason.pop("invalid_hostname", 0)
        by_reason.pop(PASSED, None)
        counts.filtered = sum(by_reason.values())
        counts.by_filter = by_reason
        if not survivors:
            return [], counts

        ids = [i for i, reason in trace.entries if reason == PASSED]
        decisions = state.model.decision_function(self._features(survivors))
        flagged = np.flatnonzero(decisions < 0)
        stats = WindowStats.collect(
            window_start, window_end, acfg.subwindow_count, window, survivors,
            suspicious_sources=[survivors[k][0].source for k in flagged],
        )
        reports = []
        for k in flagged:
            rec, parsed = survivors[k]
            try:
                reports.append(classify_query(
                    ids[k], rec, parsed, stats.view(rec.source, parsed.domain), state.baseline,
                    self._profiles, acfg, float(decisions[k]), state.generation,
                ))
            except DataError as exc:
                logger.warning("skipping record %d (%s): %s", ids[k], rec.qname, exc)
                counts.errored += 1
        counts.reported = len(reports)
        counts.normal = counts.total - counts.filtered - counts.errored - counts.reported
        return reports, counts

    def predict(self, X, window_start=None, window_end=None) -> list[AnomalyReport]:
        """Run the online phase on one window of records; returns the anomaly reports."""
        check_is_fitted(self, "state_")
        reports, self.last_counts_ = self.online_step(X, self.state_, window_start, window_end)
        return reports


_cache_lock = threading.Lock()
_cached: dict = {}


def _default_filter_config():
    with _cache_lock:
        if "filters" not in _cached:
            _cached["filters"] = FilterConfig.default()
        return _cached["filters"]


def _default_profiles():
    with _cache_lock:
        if "profiles" not in _cached:
            _cached["profiles"] = load_default_profiles()
        return _cached["profiles"]


def iter_windows(records: Iterable[DnsQueryRecord], length: timedelta) -> Iterator[tuple[datetime, list]]:
    """Group a time-ordered stream into windows aligned to wall-clock boundaries."""
    step = length.total_seconds()
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    current, bucket = None, []
    for rec in records:
        start = epoch + timedelta(seconds=((rec.timestamp - epoch).total_seconds() // step) * step)
        if current is not None and start != current:
            yield current, bucket
            bucket = []
        current = start
        bucket.append(rec)
    if bucket:
        yield current, bucket


class Engine:
    """Streaming driver: collects history, retrains periodically, classifies windows.

    With ``background=True`` offline runs execute on a worker thread while the
    previous generation keeps serving; the new state is published by a single
    reference assignment, so a window always sees a matching model and baseline.
    """

    def __init__(self, detector: CovertChannelDetector | None = None, state: EngineState | None = None,
                 background: bool = True):
        self.detector = detector or CovertChannelDetector()
        self._state = state
        self.background = background
        self.counts = WindowCounts()
        self.collect_only_windows = 0
        self.records_collected = 0
        self.last_train_time: datetime | None = None
        self.offline_failures = 0
        self._executor = ThreadPoolExecutor(max_workers=1) if background else None
        self._pending: Future | None = None

    @property
    def state(self) -> EngineState | None:
        return self._state

    @property
    def generation(self) -> int:
        state = self._state
        return state.generation if state else 0

    def _offline(self, history):
        try:
            new = self.detector.offline_run(history, generation=self.generation + 1)
        except DataError as exc:
            self.offline_failures += 1
            logger.warning("offline run failed, keeping generation %d: %s", self.generation, exc)
            return
        self._state = new
        self.last_train_time = new.model.trained_at_
        logger.info("published generation %d", new.generation)

    def _schedule_offline(self, history):
        if self._executor is None:
            self._offline(history)
            return
        if self._pending is not None and not self._pending.done():
            logger.warning("previous offline run still active; skipping this period")
            return
        self._pending = self._executor.submit(self._offline, history)

    def classify_window(self, start: datetime, records: list) -> list[AnomalyReport]:
        state = self._state  # one read: model and baseline of the same generation
        pcfg = self.detector._pcfg
        if state is None:
            self.collect_only_windows += 1
            self.records_collected += len(records)
            return []
        reports, counts = self.detector.online_step(records, state, start, start + pcfg.online_window)
        self.counts.add(counts)
        return reports

    def run(self, records: Iterable[DnsQueryRecord], on_reports: Callable | None = None,
            stop: threading.Event | None = None) -> list[AnomalyReport]:
        """Process a time-ordered stream; returns all reports (also passed to ``on_reports``)."""
        pcfg = self.detector._pcfg
        history: list = []
        period_start = None
        out = []
        for start, window in iter_windows(records, pcfg.online_window):
            if period_start is None:
                period_start = start
            reports = self.classify_window(start, window)
            out.extend(reports)
            if on_reports is not None:
                on_reports(reports)
            history.extend(window)
            end = start + pcfg.online_window
            if end - period_start >= pcfg.retrain_period:
                self._schedule_offline(history)
                history, period_start = [], end
            if stop is not None and stop.is_set():
                break
        return out

    def wait(self) -> None:
        if self._pending is not None:
            self._pending.result()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)

    def status(self) -> dict:
        return {
            "generation": self.generation,
            "last_train_time": self.last_train_time.isoformat() if self.last_train_time else None,
            "collect_only_windows": self.collect_only_windows,
            "records_collected": self.records_collected,
            "offline_failures": self.offline_failures,
            "records_total": self.counts.total,
            "records_filtered": self.counts.filtered,
            "records_errored": self.counts.errored,
            "records_normal": self.counts.normal,
            "records_reported": self.counts.reported,
        }
