import pytest

from agenttune.core.gateway import LlmGateway, ScriptedBackend
from agenttune.core.greedy import GreedyBackend
from agenttune.core.searcher import LAYER_ONE_REJECTION, Searcher, converged
from agenttune.errors import BudgetExceeded
from agenttune.models.digest import MetricValue, PerformanceDigest
from agenttune.models.llm import LlmKind, LlmRequest, LlmResponse, TokenLedger, TranscriptEntry
from agenttune.models.memory import Insight
from agenttune.models.search import NodeStatus, SearchTree, TuningNode
from agenttune.models.target import Configuration

DEFAULTS = {"write_buffer_mb": 64, "block_cache_mb": 8, "background_jobs": 2, "compression": "none"}


def benchmarked(tree: SearchTree, node_id: str, value: float, parent_id=None, workload=None, resources=None,
                **values) -> TuningNode:
    parent = tree.nodes.get(parent_id) if parent_id else None
    node = TuningNode(
        id=node_id, parent_id=parent_id, config=Configuration(values={**DEFAULTS, **values}),
        workload=workload or parent.workload, resources=resources or parent.resources,
        depth=parent.depth + 1 if parent else 0, status=NodeStatus.BENCHMARKED,
        digest=PerformanceDigest(metrics={"throughput_kops": MetricValue(value=value)}, source_node=node_id),
    )
    return tree.add_node(node)


def make_searcher(simkv, config, backend=None, token_budget=None) -> tuple[Searcher, LlmGateway]:
    gateway = LlmGateway(backend or GreedyBackend(), token_budget if token_budget is not None else config.token_budget)
    return Searcher(gateway, simkv, config), gateway


@pytest.fixture
def root_tree(workload, resources) -> SearchTree:
    tree = SearchTree()
    benchmarked(tree, "n0000", 74.62, workload=workload, resources=resources)
    return tree


# --- TERMINATION ---

@pytest.mark.parametrize("series, direction, expected", [
    ([100, 100.5, 100.9, 100.95], "maximize", True),
    ([100, 150, 290], "maximize", False),
    ([100, 100.5], "maximize", False),                 # fewer values than the window
    ([500, 499, 498.5], "minimize", True),             # latency barely improving
    ([500, 400, 300], "minimize", False),
])
def test_convergence_rule(series, direction, expected):
    assert converged(series, direction) is expected


def test_termination_reasons_in_order(simkv, make_config, root_tree):
    searcher, _ = make_searcher(simkv, make_config(token_budget=1_000, max_iterations=5, max_benchmarks=2))
    root_tree.refresh_frontier("throughput_kops", "maximize")
    ledger = TokenLedger()

    # Action / Assert
    assert not searcher.check_termination(root_tree, ledger, 0.0, 1).stop

    root_tree.best_per_iteration = [(0, 100.0), (1, 100.5), (2, 100.9)]
    assert searcher.check_termination(root_tree, ledger, 0.0, 2).reason == "convergence"

    root_tree.best_per_iteration = []
    ledger.total = 1_000
    assert searcher.check_termination(root_tree, ledger, 0.0, 2).reason == "token budget"

    ledger.total = 0
    assert searcher.check_termination(root_tree, ledger, 3_600.0, 2).reason == "time budget"
    assert searcher.check_termination(root_tree, ledger, 0.0, 5).reason == "max iterations"

    benchmarked(root_tree, "n0001", 80.0, parent_id="n0000", write_buffer_mb=128)
    assert searcher.check_termination(root_tree, ledger, 0.0, 2).reason == "benchmark budget"


def test_empty_frontier_terminates(simkv, make_config, root_tree):
    searcher, _ = make_searcher(simkv, make_config())
    root_tree.frontier = []

    decision = searcher.check_termination(root_tree, TokenLedger(), 0.0, 1)

    assert decision.reason == "frontier exhausted"


# --- PROPOSAL ---

def test_greedy_first_expansion_doubles_each_numeric_param(simkv, make_config, root_tree):
    searcher, gateway = make_searcher(simkv, make_config())

    # Action
    children = searcher.propose_children(root_tree.nodes["n0000"], [], 3, root_tree)

    # Assert
    assert [c.values for c in children] == [
        {**DEFAULTS, "write_buffer_mb": 128},
        {**DEFAULTS, "block_cache_mb": 16},
        {**DEFAULTS, "background_jobs": 4},
    ]
    assert all(c.parent_id == "n0000" for c in children)
    assert gateway.ledger.calls_per_agent == {"searcher": 1}


def test_proposals_skip_configurations_already_in_tree(simkv, make_config, root_tree):
    benchmarked(root_tree, "n0001", 119.87, parent_id="n0000", write_buffer_mb=128)
    searcher, _ = make_searcher(simkv, make_config())

    children = searcher.propose_children(root_tree.nodes["n0000"], [], 3, root_tree)

    fingerprints = root_tree.fingerprints()
    assert len(children) == 3
    assert all(c.fingerprint() not in fingerprints for c in children)


def test_unusable_proposals_fall_back_to_perturbation(simkv, make_config, root_tree):
    backend = ScriptedBackend([
        TranscriptEntry(kind=LlmKind.PROPOSE_CHILDREN, text="Sure! Try bigger buffers.", tokens_in=50, tokens_out=8),
        TranscriptEntry(kind=LlmKind.PROPOSE_CHILDREN, text='{"children": "none"}', tokens_in=50, tokens_out=8),
    ])
    searcher, _ = make_searcher(simkv, make_config(), backend=backend)

    children = searcher.propose_children(root_tree.nodes["n0000"], [], 2, root_tree)

    assert [c.values for c in children] == [
        {**DEFAULTS, "write_buffer_mb": 128},
        {**DEFAULTS, "block_cache_mb": 16},
    ]


def test_perturbation_respects_blacklist_and_budget_cap(simkv, make_config):
    searcher, _ = make_searcher(simkv, make_config(blacklist=["block_cache_mb"]))
    parent = {**DEFAULTS, "write_buffer_mb": 600, "background_jobs": 8}

    moves = searcher.perturb(parent, [], branching=5)

    # 600 is above the midpoint so it halves; background_jobs at 8 halves to 4
    assert moves == [{"write_buffer_mb": 300}, {"background_jobs": 4}]


def test_proposal_budget_exhaustion_propagates(simkv, make_config, root_tree):
    searcher, _ = make_searcher(simkv, make_config(), token_budget=0)

    with pytest.raises(BudgetExceeded):
        searcher.propose_children(root_tree.nodes["n0000"], [], 3, root_tree)


def test_branching_must_be_positive(simkv, make_config, root_tree):
    searcher, _ = make_searcher(simkv, make_config())

    with pytest.raises(ValueError):
        searcher.propose_children(root_tree.nodes["n0000"], [], 0, root_tree)


# --- VALIDATION LAYERS ---

def test_screen_applies_constraint_filter_then_mechanical_checks(simkv, make_config, root_tree):
    config = make_config(user_constraints=["Do not change compression, the archive tier needs none."])
    searcher, gateway = make_searcher(simkv, config)
    candidates = [
        Configuration(values={**DEFAULTS, "compression": "zstd"}),
        Configuration(values={**DEFAULTS, "background_jobs": 64}),
        Configuration(values={**DEFAULTS, "write_buffer_mb": 256}),
    ]

    verdicts = searcher.screen(candidates, root_tree.nodes["n0000"])

    assert verdicts[0][1] == [LAYER_ONE_REJECTION]
    assert verdicts[1][1] == ["background_jobs: 64 out of range [1, 8]"]
    assert verdicts[2][1] == []
    assert gateway.ledger.calls_per_agent == {"searcher": 1}


def test_no_constraints_means_no_filter_call(simkv, make_config, root_tree):
    searcher, gateway = make_searcher(simkv, make_config())

    kept = searcher.filter_constraints([Configuration(values=DEFAULTS)], root_tree.nodes["n0000"])

    assert len(kept) == 1
    assert gateway.ledger.total == 0


# --- SELECTION ---

def test_singleton_frontier_needs_no_llm(simkv, make_config, root_tree):
    searcher, gateway = make_searcher(simkv, make_config())
    root_tree.refresh_frontier("throughput_kops", "maximize")

    assert searcher.select_next(root_tree) == "n0000"
    assert root_tree.nodes["n0000"].status == NodeStatus.SELECTED
    assert gateway.ledger.total == 0


@pytest.mark.parametrize("reply, expected", [
    ("n0002", "n0002"),
    ("`n0001`", "n0001"),
    ("the best one", "n0003"),       # not a frontier id: argmax
])
def test_select_next_uses_reply_or_argmax(reply, expected, simkv, make_config, root_tree):
    for node_id, value, wb in (("n0001", 119.87, 128), ("n0002", 102.06, 96), ("n0003", 224.3, 256)):
        benchmarked(root_tree, node_id, value, parent_id="n0000", write_buffer_mb=wb)
    root_tree.refresh_frontier("throughput_kops", "maximize")
    backend = ScriptedBackend([TranscriptEntry(kind=LlmKind.SELECT_NODE, text=reply, tokens_in=30, tokens_out=2)])
    searcher, _ = make_searcher(simkv, make_config(), backend=backend)

    assert searcher.select_next(root_tree) == expected


def test_greedy_selection_breaks_ties_by_id(simkv, make_config, root_tree):
    benchmarked(root_tree, "n0002", 150.0, parent_id="n0000", write_buffer_mb=256)
    benchmarked(root_tree, "n0001", 150.0, parent_id="n0000", write_buffer_mb=128)
    root_tree.refresh_frontier("throughput_kops", "maximize")
    searcher, _ = make_searcher(simkv, make_config())

    assert searcher.select_next(root_tree) == "n0001"


class PromptCapture(GreedyBackend):
    def __init__(self):
        super().__init__()
        self.prompts: list[str] = []

    def complete(self, request: LlmRequest) -> LlmResponse:
        self.prompts.append(request.prompt)
        return super().complete(request)


def test_selection_prompt_lists_insights(simkv, make_config, root_tree):
    benchmarked(root_tree, "n0001", 119.87, parent_id="n0000", write_buffer_mb=128)
    benchmarked(root_tree, "n0002", 224.3, parent_id="n0000", write_buffer_mb=256)
    root_tree.refresh_frontier("throughput_kops", "maximize")
    backend = PromptCapture()
    searcher, _ = make_searcher(simkv, make_config(), backend=backend)
    insight = Insight(id="ins-0001", text="increase write_buffer_mb improves throughput_kops", confidence=0.75,
                      source_nodes=["n0000", "n0002"])

    # Action
    searcher.select_next(root_tree, [insight])
    searcher.select_next(root_tree)

    # Assert
    with_insights, without = backend.prompts
    assert "- [0.75] increase write_buffer_mb improves throughput_kops" in with_insights
    assert "Tuning insights:\nnone" in without
