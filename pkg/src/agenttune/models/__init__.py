from agenttune.models.digest import ExtractionRule, ExtractionSpec, MetricValue, PerformanceDigest
from agenttune.models.execution import BenchmarkTask, ExitStatus, MonitorSample, RawBenchmarkOutput
from agenttune.models.llm import LlmKind, LlmRequest, LlmResponse, TokenLedger, TranscriptEntry
from agenttune.models.memory import Insight, MemoryDocument, Prediction, Tier, VoteRecord
from agenttune.models.search import NodeStatus, SearchTree, TerminationDecision, TuningNode
from agenttune.models.session import IterationRow, MetricsQuadruple, SessionConfig, SessionReport, SessionState
from agenttune.models.target import (
    AdapterManifest,
    Configuration,
    MetricSpec,
    ParamSchema,
    ParamSpec,
    ParamType,
    ResourceSpec,
    ValidationVerdict,
    WorkloadSpec,
)

__all__ = [
    "AdapterManifest", "BenchmarkTask", "Configuration", "ExitStatus", "ExtractionRule",
    "ExtractionSpec", "Insight", "IterationRow", "LlmKind", "LlmRequest", "LlmResponse",
    "MemoryDocument", "MetricSpec", "MetricValue", "MetricsQuadruple", "MonitorSample",
    "NodeStatus", "ParamSchema", "ParamSpec", "ParamType", "PerformanceDigest", "Prediction",
    "RawBenchmarkOutput", "ResourceSpec", "SearchTree", "SessionConfig", "SessionReport", "SessionState",
    "TerminationDecision", "Tier", "TokenLedger", "TranscriptEntry", "TuningNode",
    "ValidationVerdict", "VoteRecord", "WorkloadSpec",
]
