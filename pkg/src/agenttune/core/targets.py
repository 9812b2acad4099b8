import logging
import math
import shlex
import shutil
import subprocess
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from importlib import resources as package_resources
from pathlib import Path
from typing import IO, Iterable, Optional

import numpy as np
from pydantic import ValidationError

from agenttune.core.sandbox import ProcessSandbox, Sandbox
from agenttune.errors import AdapterNotFound, InvalidConfig, LaunchFailure
from agenttune.models.target import (
    AdapterManifest,
    Configuration,
    ParamSchema,
    ParamSpec,
    ParamType,
    ResourceSpec,
    Scalar,
    ValidationVerdict,
    WorkloadSpec,
)

logger = logging.getLogger(__name__)

MEMORY_TAG = "memory-mb"
DEFAULT_CAP_FACTOR = 0.8

COMPRESSION_FACTORS = {"none": 1.00, "snappy": 1.05, "zstd": 0.90}


# --- 1. VALIDATION ---
def _type_violation(name: str, spec: ParamSpec, value: Scalar) -> Optional[str]:
    if spec.type == ParamType.BOOLEAN:
        return None if isinstance(value, bool) else f"{name}: expected boolean, got {value!r}"
    if spec.type == ParamType.ENUM:
        if not isinstance(value, str):
            return f"{name}: expected one of {spec.values}, got {value!r}"
        return None if value in spec.values else f"{name}: value {value!r} not in enum {{{', '.join(spec.values)}}}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return f"{name}: expected {spec.type}, got {value!r}"
    if spec.type == ParamType.INTEGER and isinstance(value, float) and not value.is_integer():
        return f"{name}: expected integer, got {value!r}"
    if not spec.min <= value <= spec.max:
        return f"{name}: {value!r} out of range [{spec.min:g}, {spec.max:g}]"
    return None


def schema_violations(config: Configuration, schema: ParamSchema) -> list[str]:
    """Unknown keys, type mismatches and out-of-range values, in key order."""
    violations = []
    for name in sorted(config.values):
        spec = schema.params.get(name)
        if spec is None:
            violations.append(f"{name}: unknown parameter")
            continue
        problem = _type_violation(name, spec, config.values[name])
        if problem:
            violations.append(problem)
    return violations


def memory_sum(values: dict[str, Scalar], schema: ParamSchema) -> float:
    return sum(float(values.get(name, schema.params[name].default)) for name in schema.tagged(MEMORY_TAG))


def clamp_param(name: str, value: float, values: dict[str, Scalar], schema: ParamSchema,
                cap_mb: float) -> int | float:
    """
    Clamps a proposed numeric value into the param's range. Raising a memory-tagged param
    stops at the headroom the other memory-tagged params leave under ``cap_mb``.
    """
    spec = schema.params[name]
    value = min(max(value, spec.min), spec.max)
    current = values.get(name, spec.default)
    if MEMORY_TAG in spec.tags and value > current:
        others = sum(float(values.get(m, schema.params[m].default)) for m in schema.tagged(MEMORY_TAG) if m != name)
        value = max(current, min(value, math.floor(cap_mb - others)))
    return int(value) if spec.type == ParamType.INTEGER else float(value)


def validate_config(config: Configuration, schema: ParamSchema, resources: ResourceSpec,
                    blacklist: Iterable[str] = (), cap_factor: float = DEFAULT_CAP_FACTOR,
                    reference: Optional[dict[str, Scalar]] = None) -> ValidationVerdict:
    """
    Mechanical (second-layer) validation of a candidate.

    A blacklisted param counts as touched when its value differs from ``reference``
    (the schema defaults unless given).
    """
    violations = schema_violations(config, schema)
    reference = reference if reference is not None else schema.defaults()
    for name in sorted(set(blacklist)):
        if name in config.values and config.values[name] != reference.get(name, config.values[name]):
            violations.append(f"{name}: blacklisted parameter modified")

    known = {k: v for k, v in config.values.items() if k in schema.params}
    numeric_ok = all(
        not isinstance(known.get(n), (bool, str)) for n in schema.tagged(MEMORY_TAG)
    )
    if numeric_ok:
        total = memory_sum(known, schema)
        cap = cap_factor * resources.memory_mb
        if total > cap:
            violations.append(f"budget cap: memory-tagged params sum to {total:g} MB > {cap:g} MB")
    return ValidationVerdict(violations=violations)


# --- 2. SIMKV ---
def simkv_evaluate(config: Configuration, workload: WorkloadSpec, resources: ResourceSpec,
                   schema: Optional[ParamSchema] = None) -> dict[str, float]:
    """Closed-form throughput and p99 latency of the simulated store. Pure, zero noise."""
    schema = schema or SimKvAdapter.load_manifest().schema_
    violations = schema_violations(config, schema)
    if violations:
        raise InvalidConfig(violations)
    values = {**schema.defaults(), **config.values}

    w = workload.write_fraction
    write_factor = (1 - np.exp(-values["write_buffer_mb"] / 128)) * (1 - np.exp(-values["background_jobs"] / 2))
    read_factor = 1 - np.exp(-values["block_cache_mb"] / 256)
    compression = COMPRESSION_FACTORS[values["compression"]]

    throughput = 300 * (resources.cpu_cores / 2) * (w * write_factor + (1 - w) * read_factor) * compression
    p99 = 200000 / (throughput + 50)
    return {"throughput_kops": float(throughput), "p99_us": float(p99)}


# --- 3. ADAPTERS ---
@dataclass
class LaunchHandle:
    """
    A started benchmark. In-process targets complete at launch and carry their stdout;
    external targets carry the running process and the files its output streams to.
    """
    work_dir: Path
    process: Optional[subprocess.Popen] = None
    stdout_text: Optional[str] = None
    stdout_path: Optional[Path] = None
    stderr_path: Optional[Path] = None
    monitor_samples: list[dict] = field(default_factory=list)
    _streams: list[IO] = field(default_factory=list, repr=False)

    @property
    def in_process(self) -> bool:
        return self.process is None

    def close(self) -> None:
        for stream in self._streams:
            stream.close()
        self._streams.clear()


def render_config_file(manifest: AdapterManifest, config: Configuration) -> str:
    values = {**manifest.schema_.defaults(), **config.values}
    if manifest.config_file_template is None:
        return "".join(f"{name}={values[name]}\n" for name in sorted(values))
    try:
        return manifest.config_file_template.format_map(values)
    except (KeyError, ValueError, IndexError) as e:
        raise LaunchFailure(f"config file template error: {e!r}") from e


class TargetAdapter(ABC):
    def __init__(self, manifest: AdapterManifest, sandbox: Optional[Sandbox] = None):
        self.manifest = manifest
        self.sandbox = sandbox or ProcessSandbox()

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def schema(self) -> ParamSchema:
        return self.manifest.schema_

    def validate(self, config: Configuration, resources: ResourceSpec, blacklist: Iterable[str] = (),
                 cap_factor: float = DEFAULT_CAP_FACTOR) -> ValidationVerdict:
        return validate_config(config, self.schema, resources, blacklist, cap_factor)

    def write_config(self, config: Configuration, work_dir: Path) -> Path:
        path = work_dir / self.manifest.config_file_name
        path.write_text(render_config_file(self.manifest, config))
        return path

    @abstractmethod
    def render_and_launch(self, config: Configuration, workload: WorkloadSpec, resources: ResourceSpec,
                          work_dir: Path, seed: int = 0) -> LaunchHandle:
        ...


class SimKvAdapter(TargetAdapter):
    """Built-in simulated target; evaluation happens in-process, no subprocess."""

    def __init__(self, sandbox: Optional[Sandbox] = None):
        super().__init__(self.load_manifest(), sandbox)

    @staticmethod
    def load_manifest() -> AdapterManifest:
        text = package_resources.files("agenttune.resources").joinpath("manifests/simkv.json").read_text()
        return AdapterManifest.model_validate_json(text)

    def render_and_launch(self, config: Configuration, workload: WorkloadSpec, resources: ResourceSpec,
                          work_dir: Path, seed: int = 0) -> LaunchHandle:
        self.write_config(config, work_dir)
        try:
            metrics = simkv_evaluate(config, workload, resources, self.schema)
        except InvalidConfig as e:
            raise LaunchFailure(f"simkv rejected configuration: {e}") from e
        stdout = "".join(f"{name}={value!r}\n" for name, value in metrics.items())
        values = {**self.schema.defaults(), **config.values}
        sample = {"t_s": 0.0, "cpu_pct": 100.0 * resources.cpu_cores, "mem_mb": memory_sum(values, self.schema)}
        return LaunchHandle(work_dir=work_dir, stdout_text=stdout, monitor_samples=[sample])


class ExternalProcessAdapter(TargetAdapter):
    """Renders a config file and runs the manifest's benchmark command in the sandbox."""

    def render_command(self, config_file: Path, workload: WorkloadSpec, resources: ResourceSpec,
                       seed: int = 0) -> list[str]:
        if not self.manifest.command_template:
            raise LaunchFailure(f"adapter {self.name} has no command template")
        fields = {
            **workload.extra,
            "file": str(config_file),
            "op_count": workload.op_count,
            "workload": workload.name,
            "write_fraction": workload.write_fraction,
            "cpu_cores": resources.cpu_cores,
            "memory_mb": resources.memory_mb,
            "seed": seed,
        }
        try:
            return shlex.split(self.manifest.command_template.format_map(fields))
        except (KeyError, ValueError, IndexError) as e:
            raise LaunchFailure(f"command template error: {e!r}") from e

    def render_and_launch(self, config: Configuration, workload: WorkloadSpec, resources: ResourceSpec,
                          work_dir: Path, seed: int = 0) -> LaunchHandle:
        config_file = self.write_config(config, work_dir)
        argv = self.render_command(config_file.resolve(), workload, resources, seed)
        if not argv:
            raise LaunchFailure("command template rendered an empty command")
        if shutil.which(argv[0]) is None and not Path(argv[0]).is_file():
            raise LaunchFailure(f"benchmark binary not found: {argv[0]}")

        stdout_path, stderr_path = work_dir / "stdout.txt", work_dir / "stderr.txt"
        stdout, stderr = stdout_path.open("w"), stderr_path.open("w")
        try:
            process = self.sandbox.spawn(argv, work_dir, resources, stdout, stderr)
        except OSError as e:
            stdout.close()
            stderr.close()
            raise LaunchFailure(f"could not start {argv[0]}: {e}") from e
        logger.info(f"launched {self.name} benchmark pid={process.pid} in {work_dir}")
        return LaunchHandle(work_dir=work_dir, process=process, stdout_path=stdout_path,
                            stderr_path=stderr_path, _streams=[stdout, stderr])


def resolve_adapter(target: str, sandbox: Optional[Sandbox] = None) -> TargetAdapter:
    """``simkv`` or a path to an adapter manifest JSON."""
    if target == "simkv":
        return SimKvAdapter(sandbox)
    path = Path(target)
    if not path.is_file():
        raise AdapterNotFound(f"no built-in adapter or manifest file named {target!r}")
    try:
        manifest = AdapterManifest.model_validate_json(path.read_text())
    except (OSError, ValidationError) as e:
        raise AdapterNotFound(f"adapter manifest {target} does not load: {e}") from e
    return ExternalProcessAdapter(manifest, sandbox)
