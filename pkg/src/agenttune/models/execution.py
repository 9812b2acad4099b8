try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

from pydantic import BaseModel, ConfigDict, Field, field_validator

from agenttune.models.target import Configuration, ResourceSpec, WorkloadSpec


class ExitStatus(StrEnum):
    OK = "ok"
    NONZERO = "nonzero"
    TIMEOUT = "timeout"
    KILLED = "killed"


class BenchmarkTask(BaseModel):
    """
    Specification of one benchmark experiment.

    Attributes:
        node_id (str): Tuning node the task belongs to; also the task directory name.
        config (Configuration): Candidate configuration, already through validation.
        workload (WorkloadSpec): Workload to generate.
        resources (ResourceSpec): Resource envelope requested from the sandbox.
        validated (bool): Set by the validation gate; the executor refuses tasks without it.
        seed (int): Session seed, available to command templates.
    """
    node_id: str
    config: Configuration
    workload: WorkloadSpec
    resources: ResourceSpec
    validated: bool = False
    seed: int = 0


class MonitorSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_s: float
    cpu_pct: float
    mem_mb: float


class RawBenchmarkOutput(BaseModel):
    model_config = ConfigDict(frozen=True)

    stdout: str = ""
    log_files: dict[str, str] = Field(default_factory=dict)
    monitor_samples: list[MonitorSample] = Field(default_factory=list)
    exit_status: ExitStatus

    @field_validator("monitor_samples")
    @classmethod
    def _strictly_increasing(cls, samples: list[MonitorSample]) -> list[MonitorSample]:
        for before, after in zip(samples, samples[1:]):
            if after.t_s <= before.t_s:
                raise ValueError("monitor sample timestamps must be strictly increasing")
        return samples
