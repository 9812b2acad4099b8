import logging
import tempfile
import time
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ValidationError

from agenttune.core.executor import Executor
from agenttune.core.extractor import Extractor
from agenttune.core.gateway import Backend, LlmGateway, RecordingBackend, ScriptedBackend, build_backend, load_transcript
from agenttune.core.memory import MemoryStore
from agenttune.core.metrics import ERROR_STATUSES, compute_metrics, iteration_rows
from agenttune.core.reflector import Reflector
from agenttune.core.sandbox import Sandbox
from agenttune.core.searcher import Searcher
from agenttune.core.targets import TargetAdapter, resolve_adapter
from agenttune.errors import (
    AgentTuneError,
    BudgetExceeded,
    DegenerateBaseline,
    InvalidConfig,
    SessionStateError,
    TranscriptMismatch,
)
from agenttune.models.execution import BenchmarkTask, ExitStatus, RawBenchmarkOutput
from agenttune.models.llm import TokenLedger
from agenttune.models.memory import Insight
from agenttune.models.search import NodeStatus, SearchTree, TuningNode
from agenttune.models.session import SessionConfig, SessionReport, SessionState
from agenttune.models.target import Configuration

logger = logging.getLogger(__name__)

SESSION_FILE = "session.json"
TREE_FILE = "tree.json"
STM_FILE = "stm.json"
LTM_SNAPSHOT_FILE = "ltm_snapshot.json"
LTM_INITIAL_FILE = "ltm_initial.json"
STM_INITIAL_FILE = "stm_initial.json"
LEDGER_FILE = "ledger.json"
VOTE_LOG_FILE = "vote_log.jsonl"
TRANSCRIPT_FILE = "transcript.json"
STATE_FILE = "state.json"
REPORT_FILE = "report.json"
NODES_DIR = "nodes"


def _write_model(path: Path, model: BaseModel) -> None:
    path.write_text(model.model_dump_json(indent=2))


def _read_model(path: Path, model: type[BaseModel]):
    try:
        return model.model_validate_json(path.read_bytes())
    except (OSError, ValidationError) as e:
        raise SessionStateError(f"cannot load {path.name} from {path.parent}: {e}") from e


class TuningSession:
    """
    One tuning session bound to a session directory. Drives the search loop (propose,
    validate, benchmark, extract, select) and the learning loop (insights and votes), checkpointing after every
    iteration so an interrupted session can resume.
    """
    def __init__(self, config: SessionConfig, session_dir: Path, adapter: TargetAdapter, backend: RecordingBackend,
                 store: MemoryStore, tree: Optional[SearchTree] = None, ledger: Optional[TokenLedger] = None,
                 state: Optional[SessionState] = None, write_back_ltm: bool = True):
        if config.target_metric not in adapter.manifest.metrics:
            raise InvalidConfig([f"target_metric: {adapter.name} reports no metric {config.target_metric!r}"])
        self.config = config
        self.session_dir = Path(session_dir)
        self.adapter = adapter
        self.backend = backend
        self.store = store
        self.tree = tree or SearchTree()
        self.state = state or SessionState()
        self.write_back_ltm = write_back_ltm

        self.gateway = LlmGateway(backend, config.token_budget, ledger=ledger)
        self.executor = Executor(adapter, self.session_dir / NODES_DIR)
        self.extractor = Extractor(self.gateway, adapter.manifest, config.target_metric, config.llm_summaries)
        self.extractor.cached_spec = self.state.extraction_spec
        self.extractor.use_fixed = self.state.use_fixed_parsers
        self.searcher = Searcher(self.gateway, adapter, config)
        self.reflector = Reflector(self.gateway, store, adapter.manifest, config)

    @property
    def ledger(self) -> TokenLedger:
        return self.gateway.ledger

    # --- 1. LOOP ---
    def run(self, halt_after: Optional[int] = None) -> Optional[SessionReport]:
        """Runs to termination and returns the report; returns None when halted by ``halt_after``."""
        if self.state.finished:
            return _read_model(self.session_dir / REPORT_FILE, SessionReport)
        started = time.monotonic() - self.state.elapsed_s
        logger.info(f"session {self.session_dir.name}: target {self.adapter.name}, backend {self.backend.backend_id}")

        if self.state.iteration < 0:
            self._baseline()
            self.state.iteration = 0
            decision = self.searcher.check_termination(self.tree, self.ledger, time.monotonic() - started, 0)
            self._checkpoint(started, decision.reason)
            if decision.stop:
                return self._finish()

        while True:
            iteration = self.state.iteration + 1
            self.gateway.begin_iteration(iteration)
            reason = None
            try:
                self._expand(iteration)
            except BudgetExceeded as e:
                logger.info(f"iteration {iteration} ran out of tokens: {e}")
                reason = "token budget"
            self.tree.refresh_frontier(self.config.target_metric, self.config.direction)
            best = self.tree.record_best(iteration, self.config.target_metric, self.config.direction)
            self.state.iteration = iteration

            if reason is None:
                decision = self.searcher.check_termination(self.tree, self.ledger, time.monotonic() - started, iteration)
                reason = decision.reason if decision.stop else None
            if reason is None:
                self.state.current_id = self.searcher.select_next(
                    self.tree, self.reflector.retrieve(self.tree.nodes[self.state.current_id]))
            logger.info(f"iteration {iteration}: best {self.config.target_metric}={best:.6g}, "
                        f"tokens {self.ledger.total}, errors {self.tree.count(*ERROR_STATUSES)}")
            self._checkpoint(started, reason)
            if reason is not None:
                return self._finish()
            if halt_after is not None and iteration >= halt_after:
                logger.info(f"halting after iteration {iteration} as requested")
                return None

    def _baseline(self) -> None:
        config = Configuration(values=self.adapter.schema.defaults())
        verdict = self.adapter.validate(config, self.config.resources, (), self.config.budget_cap_factor)
        if not verdict.ok:
            raise InvalidConfig([f"default configuration: {v}" for v in verdict.violations])
        root = self.tree.add_node(TuningNode(id=self.tree.next_id(), config=config, workload=self.config.workload,
                                             resources=self.config.resources))
        self.gateway.begin_iteration(0)
        raw = self.executor.run_task(self._task(root))
        self._absorb(root, raw)
        if root.status != NodeStatus.BENCHMARKED:
            raise DegenerateBaseline(f"default configuration did not produce {self.config.target_metric}: "
                                     f"{'; '.join(root.problems)}")
        self.tree.refresh_frontier(self.config.target_metric, self.config.direction)
        baseline = self.tree.record_best(0, self.config.target_metric, self.config.direction)
        if baseline <= 0:
            raise DegenerateBaseline(f"baseline {self.config.target_metric} is {baseline}")
        self.state.current_id = self.searcher.select_next(self.tree, self.reflector.retrieve(root))
        logger.info(f"baseline {self.config.target_metric}={baseline:.6g}")

    def _task(self, node: TuningNode) -> BenchmarkTask:
        return BenchmarkTask(node_id=node.id, config=node.config, workload=node.workload,
                             resources=node.resources, validated=True, seed=self.config.seed)

    def _expand(self, iteration: int) -> None:
        parent = self.tree.nodes[self.state.current_id]
        insights = self.reflector.retrieve(parent)
        candidates = self.searcher.propose_children(parent, insights, self.config.branching, self.tree,
                                                    feedback=self.state.feedback)
        verdicts = self.searcher.screen(candidates, parent)

        children, tasks, feedback = [], [], []
        for config, violations in verdicts:
            child = self.tree.add_node(TuningNode(
                id=self.tree.next_id(), parent_id=parent.id, config=config, workload=parent.workload,
                resources=parent.resources, depth=parent.depth + 1, iteration=iteration,
            ))
            children.append(child.id)
            if violations:
                child.status = NodeStatus.REJECTED
                child.problems = violations
                feedback += [f"{child.id} {v}" for v in violations]
                logger.warning(f"{child.id} rejected before execution: {'; '.join(violations)}")
            else:
                tasks.append(self._task(child))
        self.state.feedback = feedback

        for node_id, raw in self.executor.run_batch(tasks, self.config.parallelism).items():
            self._absorb(self.tree.nodes[node_id], raw)

        self.reflector.generate_insights(self.tree, children)
        self.reflector.vote_round(insights, self.tree, children)

    def _absorb(self, node: TuningNode, raw: RawBenchmarkOutput) -> None:
        try:
            digest = self.extractor.extract(raw, node.id)
        except (BudgetExceeded, TranscriptMismatch):
            raise
        except AgentTuneError as e:
            node.status = NodeStatus.FAILED
            node.problems = [f"extraction failed: {e}"]
            logger.warning(f"{node.id} failed: extraction failed: {e}")
            return
        if raw.exit_status == ExitStatus.OK and digest.comparable(self.config.target_metric) is not None:
            node.digest = digest
            node.status = NodeStatus.BENCHMARKED
            return
        node.status = NodeStatus.FAILED
        node.problems = [digest.summary, *digest.anomalies]
        logger.warning(f"{node.id} failed: {digest.summary}")

    # --- 2. PERSISTENCE ---
    def _checkpoint(self, started: float, stop_reason: Optional[str] = None) -> None:
        d = self.session_dir
        self.state.elapsed_s = time.monotonic() - started
        self.state.extraction_spec = self.extractor.cached_spec
        self.state.use_fixed_parsers = self.extractor.use_fixed
        self.state.stop_reason = stop_reason
        _write_model(d / TREE_FILE, self.tree)
        _write_model(d / LEDGER_FILE, self.ledger)
        MemoryStore.dump_document(self.store.stm, d / STM_FILE)
        MemoryStore.dump_document(self.store.ltm, d / LTM_SNAPSHOT_FILE)
        self.state.vote_log_written = self.store.append_vote_log(d / VOTE_LOG_FILE, self.state.vote_log_written)
        self.backend.save(d / TRANSCRIPT_FILE)
        _write_model(d / STATE_FILE, self.state)

    def report(self) -> SessionReport:
        target, direction = self.config.target_metric, self.config.direction
        baseline = self.tree.nodes[self.tree.root_id].target_value(target)
        best = self.tree.best_node(target, direction)
        errors = self.tree.count(*ERROR_STATUSES)
        metrics = compute_metrics(self.tree, self.ledger, errors, baseline, direction)
        candidates = len(self.tree.nodes) - 1
        return SessionReport(
            **metrics.model_dump(),
            best_config=best.config,
            best_value=best.target_value(target),
            baseline=baseline,
            iterations=self.state.iteration,
            stop_reason=self.state.stop_reason,
            error_ratio=errors / candidates if candidates else 0.0,
            benchmarked_nodes=self.tree.count(NodeStatus.BENCHMARKED, NodeStatus.SELECTED),
            per_iteration=iteration_rows(self.tree, self.ledger),
        )

    def _finish(self) -> SessionReport:
        report = self.report()
        _write_model(self.session_dir / REPORT_FILE, report)
        if self.write_back_ltm and self.config.ltm_path:
            MemoryStore.dump_document(self.store.ltm, self.config.ltm_path)
            logger.info(f"wrote {len(self.store.ltm)} long-term insights to {self.config.ltm_path}")
        logger.info(f"session stopped ({report.stop_reason}): mpg={report.mpg:.4f} tc95={report.tc95} "
                    f"te={report.te:.4f} twer={report.twer:.4f}")
        return report


# --- 3. ENTRY POINTS ---
def _recording(config: SessionConfig, backend: Optional[Backend]) -> RecordingBackend:
    return RecordingBackend(backend or build_backend(config.backend, config.transcript_path))


def start_session(config: SessionConfig, session_dir: str | Path, backend: Optional[Backend] = None,
                  sandbox: Optional[Sandbox] = None, initial_ltm: Optional[list[Insight]] = None,
                  initial_stm: Optional[list[Insight]] = None, write_back_ltm: bool = True) -> TuningSession:
    session_dir = Path(session_dir)
    session_dir.mkdir(parents=True, exist_ok=True)
    adapter = resolve_adapter(config.target, sandbox)
    recording = _recording(config, backend)

    ltm = initial_ltm if initial_ltm is not None else (
        MemoryStore.load_document(config.ltm_path) if config.ltm_path else [])
    store = MemoryStore(ltm=ltm)
    if initial_stm is not None:
        store.stm = list(initial_stm)
    elif config.static_insights_path:
        store.load_static(config.static_insights_path)

    session = TuningSession(config, session_dir, adapter, recording, store, write_back_ltm=write_back_ltm)
    _write_model(session_dir / SESSION_FILE, config)
    MemoryStore.dump_document(store.ltm, session_dir / LTM_INITIAL_FILE)
    MemoryStore.dump_document(store.stm, session_dir / STM_INITIAL_FILE)
    return session


def run_session(config: SessionConfig, session_dir: str | Path, halt_after: Optional[int] = None,
                backend: Optional[Backend] = None, sandbox: Optional[Sandbox] = None) -> Optional[SessionReport]:
    return start_session(config, session_dir, backend, sandbox).run(halt_after)


def load_session(session_dir: str | Path, backend: Optional[Backend] = None,
                 sandbox: Optional[Sandbox] = None) -> TuningSession:
    session_dir = Path(session_dir)
    if not (session_dir / STATE_FILE).exists():
        raise SessionStateError(f"{session_dir} has no checkpoint to resume from")
    config = _read_model(session_dir / SESSION_FILE, SessionConfig)
    state = _read_model(session_dir / STATE_FILE, SessionState)
    tree = _read_model(session_dir / TREE_FILE, SearchTree)
    ledger = _read_model(session_dir / LEDGER_FILE, TokenLedger)
    store = MemoryStore(
        stm=MemoryStore.load_document(session_dir / STM_FILE),
        ltm=MemoryStore.load_document(session_dir / LTM_SNAPSHOT_FILE),
        vote_log=MemoryStore.read_vote_log(session_dir / VOTE_LOG_FILE),
    )
    served = load_transcript(session_dir / TRANSCRIPT_FILE)
    inner = backend or build_backend(config.backend, config.transcript_path)
    if isinstance(inner, ScriptedBackend):
        inner.fast_forward(served)
    recording = RecordingBackend(inner, served)
    return TuningSession(config, session_dir, resolve_adapter(config.target, sandbox), recording, store,
                         tree=tree, ledger=ledger, state=state)


def resume_session(session_dir: str | Path, halt_after: Optional[int] = None, backend: Optional[Backend] = None,
                   sandbox: Optional[Sandbox] = None) -> Optional[SessionReport]:
    session = load_session(session_dir, backend, sandbox)
    logger.info(f"resuming {session.session_dir} after iteration {session.state.iteration}")
    return session.run(halt_after)


def replay_session(session_dir: str | Path, work_dir: Optional[str | Path] = None) -> tuple[SessionReport, SessionReport]:
    """
    Re-executes a recorded session against its own transcript, starting from the memory it
    started with. Returns (stored report, replayed report). The shared LTM is left untouched.
    """
    session_dir = Path(session_dir)
    config = _read_model(session_dir / SESSION_FILE, SessionConfig)
    stored = _read_model(session_dir / REPORT_FILE, SessionReport)
    transcript = session_dir / TRANSCRIPT_FILE
    if not transcript.exists():
        raise SessionStateError(f"{session_dir} has no transcript to replay")
    replay_config = config.model_copy(update={"backend": "scripted", "transcript_path": str(transcript)})
    initial_ltm = MemoryStore.load_document(session_dir / LTM_INITIAL_FILE)
    initial_stm = MemoryStore.load_document(session_dir / STM_INITIAL_FILE)

    with tempfile.TemporaryDirectory(prefix="agenttune-replay-") as scratch:
        target_dir = Path(work_dir) if work_dir is not None else Path(scratch)
        session = start_session(replay_config, target_dir, initial_ltm=initial_ltm, initial_stm=initial_stm,
                                write_back_ltm=False)
        replayed = session.run()
        leftover = session.backend.inner.remaining()
        if leftover:
            logger.warning(f"replay finished with {leftover} unused transcript entries")
    return stored, replayed
