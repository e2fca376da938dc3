import sys
from datetime import timedelta

import pytest

from dnscovert.analytics import AnalyticsConfig
from dnscovert.config import ConfigError, EngineConfig, config_from_mapping, default_config_text, load_config
from dnscovert.ocsvm import DEFAULT_GRID
from dnscovert.pipeline import PipelineConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def test_defaults():
    cfg = load_config()
    assert cfg == EngineConfig()
    assert cfg.pipeline.grid == DEFAULT_GRID
    assert cfg.analytics == AnalyticsConfig()


def test_bundled_default_file_matches_defaults(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(default_config_text())
    cfg = load_config(path)
    assert cfg.pipeline == PipelineConfig()
    assert cfg.analytics == AnalyticsConfig()
    assert cfg.filters == EngineConfig().filters


def test_overrides(tmp_path):
    (tmp_path / "wl.txt").write_text("example.org\n")
    path = tmp_path / "c.toml"
    path.write_text(
        '[filters]\nwhitelist = "wl.txt"\nmin_longest_label = 8\n'
        "[ocsvm]\ngamma_grid = [1.0, 10.0]\nnu_grid = [0.1]\n"
        "[analytics]\na_th = 0.4\n"
        "[pipeline]\nretrain_period_hours = 12\nrng_seed = 3\n"
    )
    cfg = load_config(path)
    assert cfg.filters.whitelist_domains == frozenset({"example.org"})
    assert cfg.filters.min_longest_label == 8
    assert cfg.pipeline.grid == ((1.0, 0.1), (10.0, 0.1))
    assert cfg.pipeline.retrain_period == timedelta(hours=12)
    assert cfg.pipeline.rng_seed == 3
    assert cfg.analytics.a_th == 0.4
    det = cfg.detector()
    assert det.pipeline_config is cfg.pipeline


@pytest.mark.parametrize("doc", [
    {"bogus": {}},
    {"ocsvm": {"C": 1}},
    {"analytics": {"a_th": 2.0}},
    {"pipeline": {"min_training_records": 10}},
    {"pipeline": {"retrain_period_hours": 0.5}},
    {"filters": {"whitelist": "missing-file.txt"}},
])
def test_invalid(doc, tmp_path):
    with pytest.raises(ConfigError):
        config_from_mapping(doc, tmp_path)


def test_malformed_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[filters\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_default_text_is_valid_toml():
    doc = tomllib.loads(default_config_text())
    assert set(doc) <= {"filters", "ocsvm", "analytics", "pipeline"}
