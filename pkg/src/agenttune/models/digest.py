import math
import re
from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class ExtractionRule(BaseModel):
    """
    One metric extraction rule.

    Attributes:
        metric (str): Metric name the captured value is stored under.
        source (str): ``stdout`` or ``log:<glob>`` selecting which captured log files to scan.
        pattern (str): Regular expression with exactly one capture group.
        unit (str): Unit of the value after scaling.
        scale (float): Multiplier applied to the captured number.
    """
    metric: str
    source: str = "stdout"
    pattern: str
    unit: str = ""
    scale: float = 1.0

    @field_validator("source")
    @classmethod
    def _known_source(cls, value: str) -> str:
        if value != "stdout" and not (value.startswith("log:") and len(value) > 4):
            raise ValueError(f"source must be 'stdout' or 'log:<pattern>', got {value!r}")
        return value

    @field_validator("pattern")
    @classmethod
    def _one_capture_group(cls, value: str) -> str:
        try:
            compiled = re.compile(value)
        except re.error as e:
            raise ValueError(f"pattern does not compile: {e}") from e
        if compiled.groups != 1:
            raise ValueError(f"pattern must have exactly one capture group, has {compiled.groups}")
        return value


class ExtractionSpec(BaseModel):
    rules: list[ExtractionRule]

    @model_validator(mode="after")
    def _unique_metrics(self) -> "ExtractionSpec":
        names = [r.metric for r in self.rules]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate metric rules: {', '.join(duplicates)}")
        return self


class MetricValue(BaseModel):
    value: float
    unit: str = ""

    @field_validator("value")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("metric values must be finite")
        return value


class PerformanceDigest(BaseModel):
    """
    Structured result of one benchmark run.

    Attributes:
        metrics (dict[str, MetricValue]): Extracted metrics plus optional monitor summary entries.
        summary (str): Short qualitative interpretation of the run.
        anomalies (list[str]): Plausibility problems that persisted after regeneration.
        source_node (str): Id of the tuning node that was benchmarked.
        exit_status (str): Exit status of the run the digest describes.
        extraction (str): ``synthesized`` or ``fixed`` depending on which parser produced the metrics.
        suspect (list[str]): Metrics whose values failed the plausibility check; they are reported
            but not used for comparison.
    """
    metrics: dict[str, MetricValue] = Field(default_factory=dict)
    summary: str = ""
    anomalies: list[str] = Field(default_factory=list)
    source_node: str
    exit_status: str = "ok"
    extraction: Optional[str] = None
    suspect: list[str] = Field(default_factory=list)

    def comparable(self, metric: str) -> Optional[float]:
        return None if metric in self.suspect else self.value(metric)

    def value(self, metric: str) -> Optional[float]:
        entry = self.metrics.get(metric)
        return entry.value if entry is not None else None
