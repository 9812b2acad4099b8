import logging
import os
import resource
import signal
import subprocess
from abc import ABC, abstractmethod
from pathlib import Path
from typing import IO

from agenttune.models.target import ResourceSpec

logger = logging.getLogger(__name__)

# Variables a benchmark never needs to see.
_SCRUBBED_ENV = ("AGENTTUNE_LLM_KEY", "AGENTTUNE_API_KEY")


class Sandbox(ABC):
    """Seam where container-based isolation can replace process-level isolation."""

    @abstractmethod
    def spawn(self, argv: list[str], cwd: Path, resources: ResourceSpec,
              stdout: IO, stderr: IO) -> subprocess.Popen:
        ...

    @abstractmethod
    def kill(self, process: subprocess.Popen) -> None:
        ...


def _limits(resources: ResourceSpec):
    def apply():
        memory = resources.memory_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (memory, memory))
        cpu_seconds = resources.time_limit_s * resources.cpu_cores + 1
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
        if hasattr(os, "sched_setaffinity"):
            available = sorted(os.sched_getaffinity(0))
            os.sched_setaffinity(0, available[:resources.cpu_cores])
        os.setsid()
    return apply


class ProcessSandbox(Sandbox):
    """Fresh working directory, rlimits and CPU affinity in the child, process-group kill."""

    def spawn(self, argv: list[str], cwd: Path, resources: ResourceSpec,
              stdout: IO, stderr: IO) -> subprocess.Popen:
        env = {k: v for k, v in os.environ.items() if k not in _SCRUBBED_ENV}
        logger.debug(f"spawning {argv} in {cwd} with {resources.describe()}")
        return subprocess.Popen(
            argv, cwd=cwd, stdout=stdout, stderr=stderr, stdin=subprocess.DEVNULL,
            env=env, preexec_fn=_limits(resources),
        )

    def kill(self, process: subprocess.Popen) -> None:
        try:
            os.killpg(process.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            process.kill()
        process.wait()
