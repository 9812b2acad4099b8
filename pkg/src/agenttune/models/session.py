from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from agenttune.models.digest import ExtractionSpec
from agenttune.models.search import Direction
from agenttune.models.target import Configuration, ResourceSpec, WorkloadSpec

BackendName = Literal["http", "greedy-mock", "scripted"]


class SessionConfig(BaseModel):
    """
    Everything a tuning session needs before it starts.

    Attributes:
        target (str): Built-in adapter name (``simkv``) or path to an adapter manifest.
        workload (WorkloadSpec): Workload benchmarked for every node.
        resources (ResourceSpec): Resource envelope per benchmark.
        target_metric (str): Primary metric the search optimizes.
        direction (Direction): Whether the primary metric is maximized or minimized.
        branching (int): Children proposed per expansion, 1 to 5.
        top_k (int): Insights retrieved per proposal.
        token_budget (int): Session token cap; 0 allows only the LLM-free baseline.
        time_budget_s (float): Wall-clock cap for the whole session.
        max_iterations (int): Expansion cap.
        max_benchmarks (int | None): Cap on benchmarked nodes, a system resource budget.
        blacklist (list[str]): Params the tuner must never modify.
        user_constraints (list[str]): Domain constraints for layer-1 filtering.
        budget_cap_factor (float): Fraction of memory_mb that memory-tagged params may use.
        seed (int): Passed to external benchmark commands.
        backend (BackendName): LLM backend.
        transcript_path (str | None): Transcript for the scripted backend.
        ltm_path (str | None): Shared long-term memory document.
        static_insights_path (str | None): Curated insights loaded into STM at start.
        use_insights (bool): Disable to run tree search without insights.
        similarity (str): ``jaccard`` or ``tfidf``.
        score_mode (str): ``product`` weights similarity by confidence; ``similarity-only`` ignores confidence.
        ltm_scope (str): ``all`` or ``workload``.
        parallelism (int): Concurrent benchmark runs per expansion.
        llm_summaries (bool | None): LLM-written digest summaries; None resolves to True for the http backend.
    """
    target: str = "simkv"
    workload: WorkloadSpec
    resources: ResourceSpec
    target_metric: str = "throughput_kops"
    direction: Direction = "maximize"
    branching: int = Field(default=3, ge=1, le=5)
    top_k: int = Field(default=8, ge=1)
    token_budget: int = Field(default=500_000, ge=0)
    time_budget_s: float = Field(default=3600.0, gt=0)
    max_iterations: int = Field(default=20, ge=1)
    max_benchmarks: Optional[int] = Field(default=None, ge=1)
    blacklist: list[str] = Field(default_factory=list)
    user_constraints: list[str] = Field(default_factory=list)
    budget_cap_factor: float = Field(default=0.8, gt=0.0, le=1.0)
    seed: int = 0
    backend: BackendName = "greedy-mock"
    transcript_path: Optional[str] = None
    ltm_path: Optional[str] = None
    static_insights_path: Optional[str] = None
    use_insights: bool = True
    similarity: Literal["jaccard", "tfidf"] = "jaccard"
    score_mode: Literal["product", "similarity-only"] = "product"
    ltm_scope: Literal["all", "workload"] = "all"
    parallelism: int = Field(default=3, ge=1)
    llm_summaries: Optional[bool] = None

    @model_validator(mode="after")
    def _resolve_summaries(self) -> "SessionConfig":
        if self.llm_summaries is None:
            self.llm_summaries = self.backend == "http"
        return self


class IterationRow(BaseModel):
    iteration: int
    best_so_far: float
    cumulative_tokens: int
    error_count: int


class MetricsQuadruple(BaseModel):
    mpg: float
    tc95: int
    te: float
    twer: float


class SessionReport(BaseModel):
    """
    Outcome of a session with the standardized metrics.

    Attributes:
        mpg (float): Max performance gain, (best - baseline) / baseline.
        tc95 (int): Cumulative tokens at the first iteration reaching 95% of the final best.
        te (float): mpg per thousand TC95 tokens.
        twer (float): Rejected-or-failed nodes per thousand total tokens.
        best_config (Configuration): Configuration of the best benchmarked node.
        best_value (float): Its target metric value.
        baseline (float): Target metric of the default configuration.
        iterations (int): Completed expansions.
        stop_reason (str): Termination reason.
        error_ratio (float): Rejected-or-failed nodes over all candidate nodes.
        benchmarked_nodes (int): Nodes that produced a digest, root included.
        per_iteration (list[IterationRow]): Progress table.
    """
    mpg: float
    tc95: int
    te: float
    twer: float
    best_config: Configuration
    best_value: float
    baseline: float
    iterations: int
    stop_reason: str
    error_ratio: float
    benchmarked_nodes: int
    per_iteration: list[IterationRow] = Field(default_factory=list)


class SessionState(BaseModel):
    """
    Checkpoint of the orchestrator loop, written after every completed iteration.

    Attributes:
        iteration (int): Last completed iteration; -1 before the baseline, 0 after it.
        current_id (str | None): Node selected for the next expansion.
        elapsed_s (float): Wall-clock time spent so far, carried across resumes.
        feedback (list[str]): Violations of the last iteration's rejected candidates.
        extraction_spec (ExtractionSpec | None): Cached synthesized extraction spec.
        use_fixed_parsers (bool): Extractor fell back to the adapter's fixed parsers.
        vote_log_written (int): Vote records already appended to vote_log.jsonl.
        stop_reason (str | None): Set once the session terminated.
    """
    iteration: int = -1
    current_id: Optional[str] = None
    elapsed_s: float = 0.0
    feedback: list[str] = Field(default_factory=list)
    extraction_spec: Optional[ExtractionSpec] = None
    use_fixed_parsers: bool = False
    vote_log_written: int = 0
    stop_reason: Optional[str] = None

    @property
    def finished(self) -> bool:
        return self.stop_reason is not None
