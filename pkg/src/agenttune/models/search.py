try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Literal, Optional

from pydantic import BaseModel, Field

from agenttune.models.digest import PerformanceDigest
from agenttune.models.target import Configuration, ResourceSpec, WorkloadSpec

Direction = Literal["maximize", "minimize"]

FRONTIER_CAP = 32


def oriented(value: float, direction: Direction) -> float:
    """Maps a metric value so that larger is always better."""
    return value if direction == "maximize" else -value


class NodeStatus(StrEnum):
    PROPOSED = "proposed"
    REJECTED = "rejected"
    BENCHMARKED = "benchmarked"
    FAILED = "failed"
    SELECTED = "selected"


class TuningNode(BaseModel):
    """
    One configuration candidate in the search tree.

    Attributes:
        id (str): Zero-padded sequential id, so lexicographic order is creation order.
        parent_id (str | None): None only for the root.
        config (Configuration): Candidate configuration.
        workload (WorkloadSpec): Workload the candidate is benchmarked under.
        resources (ResourceSpec): Resource envelope.
        digest (PerformanceDigest | None): Present iff the node is benchmarked or selected.
        depth (int): Root is 0, children are parent depth + 1.
        status (NodeStatus): Lifecycle state.
        iteration (int): Iteration that created the node; the root is created in iteration 0.
        problems (list[str]): Validation violations for rejected nodes, failure summary for failed ones.
    """
    id: str
    parent_id: Optional[str] = None
    config: Configuration
    workload: WorkloadSpec
    resources: ResourceSpec
    digest: Optional[PerformanceDigest] = None
    depth: int = 0
    status: NodeStatus = NodeStatus.PROPOSED
    iteration: int = 0
    problems: list[str] = Field(default_factory=list)

    @property
    def has_result(self) -> bool:
        return self.status in (NodeStatus.BENCHMARKED, NodeStatus.SELECTED)

    def target_value(self, target: str) -> Optional[float]:
        if not self.has_result or self.digest is None:
            return None
        return self.digest.comparable(target)


class SearchTree(BaseModel):
    nodes: dict[str, TuningNode] = Field(default_factory=dict)
    root_id: Optional[str] = None
    frontier: list[str] = Field(default_factory=list)
    best_per_iteration: list[tuple[int, float]] = Field(default_factory=list)

    def next_id(self) -> str:
        return f"n{len(self.nodes):04d}"

    def add_node(self, node: TuningNode) -> TuningNode:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id}")
        if node.parent_id is None:
            if self.root_id is not None:
                raise ValueError("tree already has a root")
            if node.depth != 0:
                raise ValueError("root must have depth 0")
            self.root_id = node.id
        else:
            parent = self.nodes.get(node.parent_id)
            if parent is None:
                raise ValueError(f"unknown parent {node.parent_id}")
            if node.depth != parent.depth + 1:
                raise ValueError("child depth must be parent depth + 1")
        self.nodes[node.id] = node
        return node

    def children(self, node_id: str) -> list[TuningNode]:
        return sorted((n for n in self.nodes.values() if n.parent_id == node_id), key=lambda n: n.id)

    def path_to_root(self, node_id: str) -> list[str]:
        path = []
        current: Optional[str] = node_id
        while current is not None:
            if current in path:
                raise ValueError(f"cycle through {current}")
            path.append(current)
            current = self.nodes[current].parent_id
        return path

    def fingerprints(self) -> set[str]:
        return {n.config.fingerprint() for n in self.nodes.values()}

    def count(self, *statuses: NodeStatus) -> int:
        return sum(1 for n in self.nodes.values() if n.status in statuses)

    def best_node(self, target: str, direction: Direction) -> Optional[TuningNode]:
        scored = [(n, n.target_value(target)) for n in self.nodes.values()]
        scored = [(n, v) for n, v in scored if v is not None]
        if not scored:
            return None
        # max oriented value, ties to the lexicographically smallest id
        return min(scored, key=lambda nv: (-oriented(nv[1], direction), nv[0].id))[0]

    def refresh_frontier(self, target: str, direction: Direction, cap: int = FRONTIER_CAP) -> list[str]:
        """
        Benchmarked leaves plus the incumbent best node, pruned to ``cap`` by dropping the
        lowest-target leaves.
        """
        expanded = {n.parent_id for n in self.nodes.values() if n.has_result and n.parent_id is not None}
        eligible = {n.id for n in self.nodes.values()
                    if n.target_value(target) is not None and n.id not in expanded}
        best = self.best_node(target, direction)
        if best is not None:
            eligible.add(best.id)
        ranked = sorted(eligible, key=lambda i: (-oriented(self.nodes[i].target_value(target), direction), i))
        self.frontier = sorted(ranked[:cap])
        return self.frontier

    def record_best(self, iteration: int, target: str, direction: Direction) -> float:
        best = self.best_node(target, direction)
        if best is None:
            raise ValueError("no benchmarked node to record")
        value = best.target_value(target)
        self.best_per_iteration = [(i, v) for i, v in self.best_per_iteration if i != iteration]
        self.best_per_iteration.append((iteration, value))
        return value


class TerminationDecision(BaseModel):
    stop: bool
    reason: Optional[str] = None
