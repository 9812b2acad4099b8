import shlex
import sys
import textwrap

import pytest

from agenttune.core.executor import Executor
from agenttune.core.targets import ExternalProcessAdapter
from agenttune.models.execution import BenchmarkTask, ExitStatus, RawBenchmarkOutput
from agenttune.models.target import AdapterManifest, Configuration, ResourceSpec

# --- DATASETS ---

BENCH_SCRIPT = textwrap.dedent("""
    import pathlib, sys, time
    mode = sys.argv[1]
    conf = pathlib.Path(sys.argv[2]).read_text().strip()
    if mode == "sleep":
        time.sleep(30)
    pathlib.Path("bench.log").write_text("compaction_stall_us: 12\\n")
    print(f"config {conf}")
    print("ops_per_sec: 5120.5")
    sys.exit(3 if mode == "fail" else 0)
""")


def bench_adapter(tmp_path, mode: str) -> ExternalProcessAdapter:
    script = tmp_path / "bench.py"
    script.write_text(BENCH_SCRIPT)
    command = f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {mode} {{file}}"
    return ExternalProcessAdapter(AdapterManifest(
        name="bench",
        schema={"params": {"threads": {"type": "integer", "min": 1, "max": 4, "default": 1}}},
        command_template=command,
        config_file_template="threads={threads}",
        log_files=["*.log"],
    ))


def task(node_id: str, workload, resources, validated: bool = True, values=None) -> BenchmarkTask:
    return BenchmarkTask(node_id=node_id, config=Configuration(values=values or {}), workload=workload,
                         resources=resources, validated=validated)


# --- IN-PROCESS TARGET ---

def test_simkv_task_runs_in_fresh_directory(simkv, workload, resources, tmp_path):
    executor = Executor(simkv, tmp_path / "nodes")
    stale = tmp_path / "nodes" / "n0001"
    stale.mkdir(parents=True)
    (stale / "leftover.txt").write_text("old run")

    # Action
    raw = executor.run_task(task("n0001", workload, resources))

    # Assert
    assert raw.exit_status == ExitStatus.OK
    assert "throughput_kops=" in raw.stdout
    assert not (stale / "leftover.txt").exists(), "every task starts from an empty directory"
    assert (stale / "stdout.txt").read_text() == raw.stdout
    assert len(raw.monitor_samples) == 1


def test_unvalidated_task_is_refused(simkv, workload, resources, tmp_path):
    raw = Executor(simkv, tmp_path).run_task(task("n0002", workload, resources, validated=False))

    assert raw.exit_status == ExitStatus.NONZERO
    assert "refused" in raw.stdout


def test_launch_failure_becomes_nonzero_status(simkv, workload, resources, tmp_path):
    raw = Executor(simkv, tmp_path).run_task(task("n0003", workload, resources, values={"background_jobs": 99}))

    assert raw.exit_status == ExitStatus.NONZERO
    assert raw.stdout.startswith("launch failure")


@pytest.mark.parametrize("parallelism", [1, 3])
def test_run_batch_returns_one_output_per_task(parallelism, simkv, workload, resources, tmp_path):
    tasks = [task(f"n000{i}", workload, resources, values={"background_jobs": i}) for i in range(1, 5)]

    results = Executor(simkv, tmp_path).run_batch(tasks, parallelism)

    assert list(results) == ["n0001", "n0002", "n0003", "n0004"]
    assert all(r.exit_status == ExitStatus.OK for r in results.values())


def test_run_batch_rejects_zero_parallelism(simkv, tmp_path):
    with pytest.raises(ValueError):
        Executor(simkv, tmp_path).run_batch([], 0)


def test_monitor_samples_must_increase():
    with pytest.raises(ValueError):
        RawBenchmarkOutput(exit_status=ExitStatus.OK, monitor_samples=[
            {"t_s": 1.0, "cpu_pct": 10, "mem_mb": 5}, {"t_s": 1.0, "cpu_pct": 10, "mem_mb": 5}])


# --- EXTERNAL PROCESS ---

@pytest.mark.parametrize("mode, expected_status", [
    ("ok", ExitStatus.OK),
    ("fail", ExitStatus.NONZERO),
])
def test_external_benchmark_exit_status_and_logs(mode, expected_status, workload, tmp_path):
    resources = ResourceSpec(cpu_cores=1, memory_mb=1024, time_limit_s=20)
    executor = Executor(bench_adapter(tmp_path, mode), tmp_path / "nodes", monitor_period_s=0.1)

    raw = executor.run_task(task("n0001", workload, resources, values={"threads": 2}))

    assert raw.exit_status == expected_status
    assert "ops_per_sec: 5120.5" in raw.stdout
    assert "config threads=2" in raw.stdout
    assert raw.log_files == {"bench.log": "compaction_stall_us: 12\n"}


def test_external_benchmark_timeout_kills_process(workload, tmp_path):
    resources = ResourceSpec(cpu_cores=1, memory_mb=1024, time_limit_s=1)
    executor = Executor(bench_adapter(tmp_path, "sleep"), tmp_path / "nodes", monitor_period_s=0.2)

    raw = executor.run_task(task("n0001", workload, resources))

    assert raw.exit_status == ExitStatus.TIMEOUT
    assert "ops_per_sec" not in raw.stdout
