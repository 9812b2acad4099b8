import pytest

from agenttune.core.targets import SimKvAdapter
from agenttune.models.memory import Insight, Prediction, Tier
from agenttune.models.session import SessionConfig
from agenttune.models.target import ResourceSpec, WorkloadSpec

# --- SHARED SETTINGS ---

# Write-heavy SimKV scenario used across the suite: 2 cores, 1024 MB, budget cap 819.2 MB.
WORKLOAD = {"name": "fillrandom", "write_fraction": 1.0, "op_count": 100_000}
RESOURCES = {"cpu_cores": 2, "memory_mb": 1024, "time_limit_s": 30}


@pytest.fixture
def workload() -> WorkloadSpec:
    return WorkloadSpec(**WORKLOAD)


@pytest.fixture
def resources() -> ResourceSpec:
    return ResourceSpec(**RESOURCES)


@pytest.fixture
def simkv() -> SimKvAdapter:
    return SimKvAdapter()


@pytest.fixture
def make_config():
    """Session config factory; keyword arguments override the SimKV defaults."""
    def factory(**overrides) -> SessionConfig:
        data = {
            "target": "simkv",
            "workload": WORKLOAD,
            "resources": RESOURCES,
            "target_metric": "throughput_kops",
            "branching": 3,
            "top_k": 8,
            "backend": "greedy-mock",
        }
        data.update(overrides)
        return SessionConfig.model_validate(data)
    return factory


@pytest.fixture
def seeded_ltm() -> list[Insight]:
    """Long-term insights a previous write-heavy session would have left behind."""
    return [
        Insight(
            id="ins-0001",
            text="increase write_buffer_mb improves throughput_kops under fillrandom workload",
            prediction=Prediction(param="write_buffer_mb", direction="increase",
                                  metric="throughput_kops", effect="improves"),
            confidence=0.9, tier=Tier.LTM, upvotes=3, source_nodes=["n0000", "n0001"],
            tags=["fillrandom", "simkv"],
        ),
        Insight(
            id="ins-0002",
            text="increase background_jobs improves throughput_kops under fillrandom workload",
            prediction=Prediction(param="background_jobs", direction="increase",
                                  metric="throughput_kops", effect="improves"),
            confidence=0.85, tier=Tier.LTM, upvotes=3, source_nodes=["n0000", "n0003"],
            tags=["fillrandom", "simkv"],
        ),
    ]
