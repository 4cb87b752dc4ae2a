"""Certified finite-size key length for BB84 with a characterized imperfect source."""

from .bounds import BoundParams, PartitionScenario, ProtocolCounts, RateReport, key_bound
from .protocol import Detector, EveStrategy, ProtocolConfig, SessionRecord, run_session
from .source import SourceSpec, analyze, coherent_source, ideal_source

__all__ = [
    "BoundParams", "PartitionScenario", "ProtocolCounts", "RateReport", "key_bound",
    "Detector", "EveStrategy", "ProtocolConfig", "SessionRecord", "run_session",
    "SourceSpec", "analyze", "coherent_source", "ideal_source",
]
__version__ = "0.1.0"
