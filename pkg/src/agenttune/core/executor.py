import json
import logging
import shutil
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import psutil

from agenttune.core.targets import LaunchHandle, TargetAdapter
from agenttune.errors import LaunchFailure
from agenttune.models.execution import BenchmarkTask, ExitStatus, MonitorSample, RawBenchmarkOutput

logger = logging.getLogger(__name__)

MONITOR_PERIOD_S = 1.0
_MB = 1024 * 1024


class Executor:
    """
    Runs benchmark tasks in fresh per-node directories under ``root`` and collects every
    output. Failures come back as exit statuses, never as exceptions.
    """
    def __init__(self, adapter: TargetAdapter, root: Path, monitor_period_s: float = MONITOR_PERIOD_S):
        self.adapter = adapter
        self.root = Path(root)
        self.monitor_period_s = monitor_period_s

    # --- 1. SINGLE TASK ---
    def run_task(self, task: BenchmarkTask) -> RawBenchmarkOutput:
        work_dir = self._fresh_dir(task.node_id)
        if not task.validated:
            logger.error(f"refusing unvalidated task {task.node_id}")
            return self._finish(work_dir, RawBenchmarkOutput(
                stdout="refused: configuration did not pass validation\n", exit_status=ExitStatus.NONZERO))

        try:
            handle = self.adapter.render_and_launch(task.config, task.workload, task.resources,
                                                    work_dir, seed=task.seed)
        except LaunchFailure as e:
            logger.warning(f"launch failed for {task.node_id}: {e}")
            return self._finish(work_dir, RawBenchmarkOutput(stdout=f"launch failure: {e}\n",
                                                             exit_status=ExitStatus.NONZERO))

        if handle.in_process:
            samples = [MonitorSample(**s) for s in handle.monitor_samples]
            return self._finish(work_dir, RawBenchmarkOutput(
                stdout=handle.stdout_text or "", monitor_samples=samples, exit_status=ExitStatus.OK))

        try:
            status, samples = self._monitor(handle, task)
        finally:
            handle.close()
        stdout = handle.stdout_path.read_text(errors="replace")
        stderr = handle.stderr_path.read_text(errors="replace")
        if stderr:
            stdout = f"{stdout}\n[stderr]\n{stderr}" if stdout else f"[stderr]\n{stderr}"
        return self._finish(work_dir, RawBenchmarkOutput(
            stdout=stdout, log_files=self._collect_logs(work_dir), monitor_samples=samples,
            exit_status=status))

    def _fresh_dir(self, node_id: str) -> Path:
        work_dir = self.root / node_id
        if work_dir.exists():
            shutil.rmtree(work_dir)
        work_dir.mkdir(parents=True)
        return work_dir

    def _monitor(self, handle: LaunchHandle, task: BenchmarkTask) -> tuple[ExitStatus, list[MonitorSample]]:
        process = handle.process
        limit_s = task.resources.time_limit_s
        samples: list[MonitorSample] = []
        try:
            watched = psutil.Process(process.pid)
        except psutil.Error:
            watched = None
        start = time.monotonic()

        while True:
            elapsed = time.monotonic() - start
            sample = self._sample(watched, elapsed)
            if sample is not None and (not samples or sample.t_s > samples[-1].t_s):
                samples.append(sample)
                if sample.mem_mb > task.resources.memory_mb:
                    logger.warning(f"{task.node_id}: {sample.mem_mb:.0f} MB over the memory envelope, killing")
                    self.adapter.sandbox.kill(process)
                    return ExitStatus.KILLED, samples
            try:
                process.wait(timeout=max(0.0, min(self.monitor_period_s, limit_s - elapsed)))
                break
            except subprocess.TimeoutExpired:
                if time.monotonic() - start >= limit_s:
                    logger.warning(f"{task.node_id}: exceeded {limit_s}s time limit, killing")
                    self.adapter.sandbox.kill(process)
                    return ExitStatus.TIMEOUT, samples

        if process.returncode == 0:
            return ExitStatus.OK, samples
        if process.returncode < 0:
            return ExitStatus.KILLED, samples
        return ExitStatus.NONZERO, samples

    @staticmethod
    def _sample(watched, elapsed: float):
        if watched is None:
            return None
        try:
            with watched.oneshot():
                cpu = watched.cpu_percent(interval=None)
                mem = watched.memory_info().rss
            for child in watched.children(recursive=True):
                try:
                    cpu += child.cpu_percent(interval=None)
                    mem += child.memory_info().rss
                except psutil.Error:
                    continue
        except psutil.Error:
            return None
        return MonitorSample(t_s=round(elapsed, 3), cpu_pct=cpu, mem_mb=mem / _MB)

    def _collect_logs(self, work_dir: Path) -> dict[str, str]:
        logs = {}
        for pattern in self.adapter.manifest.log_files:
            for path in sorted(work_dir.glob(pattern)):
                if path.is_file():
                    logs[str(path.relative_to(work_dir))] = path.read_text(errors="replace")
        return logs

    @staticmethod
    def _finish(work_dir: Path, output: RawBenchmarkOutput) -> RawBenchmarkOutput:
        (work_dir / "stdout.txt").write_text(output.stdout)
        with (work_dir / "monitor.jsonl").open("w") as f:
            for sample in output.monitor_samples:
                f.write(sample.model_dump_json() + "\n")
        return output

    # --- 2. BATCH ---
    def run_batch(self, tasks: list[BenchmarkTask], parallelism: int) -> dict[str, RawBenchmarkOutput]:
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not tasks:
            return {}
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = dict(zip((t.node_id for t in tasks), pool.map(self.run_task, tasks)))
        return dict(sorted(results.items()))
