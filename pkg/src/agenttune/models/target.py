import json
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from agenttune.models.digest import ExtractionRule

Scalar = bool | int | float | str


class ParamType(StrEnum):
    INTEGER = "integer"
    REAL = "real"
    ENUM = "enum"
    BOOLEAN = "boolean"


class ParamSpec(BaseModel):
    """
    Definition of one tunable parameter.

    Attributes:
        type (ParamType): Value type.
        min (float | None): Inclusive lower bound for numeric params.
        max (float | None): Inclusive upper bound for numeric params.
        values (list[str]): Allowed values for enum params.
        unit (str): Unit shown to the LLM, e.g. ``MB``.
        tags (set[str]): Free-form tags; ``memory-mb`` params count toward the budget cap.
        default (Scalar): Default value, always valid.
    """
    type: ParamType
    min: Optional[float] = None
    max: Optional[float] = None
    values: list[str] = Field(default_factory=list)
    unit: str = ""
    tags: set[str] = Field(default_factory=set)
    default: Scalar

    @property
    def numeric(self) -> bool:
        return self.type in (ParamType.INTEGER, ParamType.REAL)

    @property
    def midpoint(self) -> float:
        return (self.min + self.max) / 2

    @model_validator(mode="after")
    def _default_in_range(self) -> "ParamSpec":
        if self.numeric:
            if self.min is None or self.max is None or self.min > self.max:
                raise ValueError("numeric params need min <= max")
            if isinstance(self.default, (bool, str)) or not self.min <= self.default <= self.max:
                raise ValueError(f"default {self.default!r} outside [{self.min}, {self.max}]")
        elif self.type == ParamType.ENUM:
            if not self.values:
                raise ValueError("enum params need at least one value")
            if self.default not in self.values:
                raise ValueError(f"default {self.default!r} not in {self.values}")
        elif not isinstance(self.default, bool):
            raise ValueError("boolean params need a boolean default")
        return self


class ParamSchema(BaseModel):
    params: dict[str, ParamSpec]

    def defaults(self) -> dict[str, Scalar]:
        return {name: spec.default for name, spec in self.params.items()}

    def tagged(self, tag: str) -> list[str]:
        return [name for name, spec in self.params.items() if tag in spec.tags]


class MetricSpec(BaseModel):
    unit: str = ""
    direction: Literal["maximize", "minimize"] = "maximize"
    min: Optional[float] = None
    max: Optional[float] = None
    description: str = ""


class Configuration(BaseModel):
    values: dict[str, Scalar]
    parent_id: Optional[str] = None

    def fingerprint(self) -> str:
        """Order-independent identity of the parameter values."""
        return json.dumps(self.values, sort_keys=True)


class WorkloadSpec(BaseModel):
    name: str
    write_fraction: float = Field(ge=0.0, le=1.0)
    op_count: int = Field(gt=0)
    extra: dict[str, Scalar] = Field(default_factory=dict)

    def describe(self) -> str:
        return f"{self.name} workload, write fraction {self.write_fraction}, {self.op_count} ops"


class ResourceSpec(BaseModel):
    cpu_cores: int = Field(ge=1)
    memory_mb: int = Field(ge=64)
    time_limit_s: int = Field(gt=0)

    def describe(self) -> str:
        return f"{self.cpu_cores} CPU cores, {self.memory_mb} MB memory, {self.time_limit_s} s limit"


class ValidationVerdict(BaseModel):
    violations: list[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class AdapterManifest(BaseModel):
    """
    Binding between the framework and one tunable system.

    Attributes:
        name (str): Target system name, also used as a retrieval tag.
        system_info (str): Free text describing the system and version, handed to the Extractor.
        schema_ (ParamSchema): Parameter schema, the source of truth for validation.
        metrics (dict[str, MetricSpec]): Metrics the benchmark reports with orientation and
            plausibility range.
        config_file_template (str | None): Template for the rendered config file.
        config_file_name (str): File name the rendered config is written to.
        command_template (str | None): Benchmark command; ``None`` for in-process targets.
        fixed_parsers (list[ExtractionRule]): Human-written fallback extraction rules.
        log_files (list[str]): Glob patterns, relative to the task directory, of logs to collect.
    """
    name: str
    system_info: str = ""
    schema_: ParamSchema = Field(alias="schema")
    metrics: dict[str, MetricSpec] = Field(default_factory=dict)
    config_file_template: Optional[str] = None
    config_file_name: str = "config.ini"
    command_template: Optional[str] = None
    fixed_parsers: list[ExtractionRule] = Field(default_factory=list)
    log_files: list[str] = Field(default_factory=list)

    model_config = {"populate_by_name": True}
