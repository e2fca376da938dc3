"""TOML configuration for the engine.

A config file has optional ``[filters]``, ``[ocsvm]``, ``[analytics]`` and
``[pipeline]`` tables; see ``data/default_config.toml`` for every key.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from datetime import timedelta
from importlib import resources
from itertools import product
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .analytics import AnalyticsConfig
from .exceptions import DataError
from .filters import FilterConfig
from .ocsvm import GRID_VALUES
from .pipeline import CovertChannelDetector, PipelineConfig


class ConfigError(DataError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    filters: FilterConfig = field(default_factory=FilterConfig.default)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def detector(self, **kwargs) -> CovertChannelDetector:
        return CovertChannelDetector(
            filter_config=self.filters, analytics_config=self.analytics,
            pipeline_config=self.pipeline, **kwargs,
        )


def _check_keys(table: dict, allowed, section: str):
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def config_from_mapping(doc: dict, base_dir=".") -> EngineConfig:
    _check_keys(doc, ("filters", "ocsvm", "analytics", "pipeline"), "top level")
    try:
        ftable = doc.get("filters", {})
        _check_keys(ftable, ("whitelist", "cdn", "overloaded_dns", "local_domains", "min_longest_label",
                             "min_hostnames_per_domain", "allowed_qtypes"), "filters")
        filters = FilterConfig.from_mapping(ftable, base_dir)

        atable = doc.get("analytics", {})
        _check_keys(atable, [f.name for f in fields(AnalyticsConfig)], "analytics")
        analytics = AnalyticsConfig(**atable)

        otable = doc.get("ocsvm", {})
        _check_keys(otable, ("gamma_grid", "nu_grid", "split_frac", "tol", "max_iter"), "ocsvm")
        gammas = [float(g) for g in otable.get("gamma_grid", GRID_VALUES)]
        nus = [float(n) for n in otable.get("nu_grid", GRID_VALUES)]

        ptable = doc.get("pipeline", {})
        _check_keys(ptable, ("retrain_period_hours", "online_window_hours", "min_training_records", "rng_seed"),
                    "pipeline")
        defaults = PipelineConfig()
        pipeline = PipelineConfig(
            retrain_period=timedelta(hours=float(ptable.get("retrain_period_hours", 6))),
            online_window=timedelta(hours=float(ptable.get("online_window_hours", 1))),
            min_training_records=int(ptable.get("min_training_records", defaults.min_training_records)),
            rng_seed=int(ptable.get("rng_seed", defaults.rng_seed)),
            grid=tuple(product(gammas, nus)),
            split_frac=float(otable.get("split_frac", defaults.split_frac)),
            tol=float(otable.get("tol", defaults.tol)),
            max_iter=int(otable.get("max_iter", defaults.max_iter)),
        )
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return EngineConfig(filters, analytics, pipeline)


def load_config(path=None) -> EngineConfig:
    """Load a TOML config file; ``None`` gives the defaults."""
    if path is None:
        return EngineConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(doc, path.parent)


def default_config_text() -> str:
    return resources.files("dnscovert.data").joinpath("default_config.toml").read_text("utf-8")
