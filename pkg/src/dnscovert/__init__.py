"""Passive-DNS covert channel detection.

A one-class SVM over lexical hostname features screens queries; rejected ones
are scored by a behavioural anomaly index that combines traffic volume,
hostname diversity, entropy and distance from natural-language letter
statistics.
"""

from .analytics import AnalyticsConfig, AnomalyReport, anomaly_index
from .dns_model import DnsQueryRecord, QType, read_log, split_hostname
from .evaluation import ConfusionMatrix, metrics, score
from .features import HostnameFeatures, extract_features
from .filters import FilterConfig, run_filter_chain
from .ocsvm import OneClassSVM, grid_search, load_model, save_model
from .pipeline import CovertChannelDetector, Engine, EngineState, PipelineConfig

__version__ = "0.1.0"

__all__ = [
    "AnalyticsConfig",
    "AnomalyReport",
    "ConfusionMatrix",
    "CovertChannelDetector",
    "DnsQueryRecord",
    "Engine",
    "EngineState",
    "FilterConfig",
    "HostnameFeatures",
    "OneClassSVM",
    "PipelineConfig",
    "QType",
    "anomaly_index",
    "extract_features",
    "grid_search",
    "load_model",
    "metrics",
    "read_log",
    "run_filter_chain",
    "save_model",
    "score",
    "split_hostname",
]
