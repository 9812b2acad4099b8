import logging
from typing import Iterable, Optional

from agenttune.core.gateway import LlmGateway
from agenttune.core.prompts import parse_json_reply, render
from agenttune.core.targets import MEMORY_TAG, TargetAdapter, clamp_param
from agenttune.errors import BudgetExceeded, MalformedResponse, TransportError
from agenttune.models.llm import LlmKind, LlmRequest, TokenLedger
from agenttune.models.memory import Insight
from agenttune.models.search import NodeStatus, SearchTree, TerminationDecision, TuningNode, oriented
from agenttune.models.session import SessionConfig
from agenttune.models.target import Configuration, Scalar

logger = logging.getLogger(__name__)

AGENT = "searcher"
CONVERGENCE_WINDOW = 3
CONVERGENCE_THRESHOLD = 0.01
LAYER_ONE_REJECTION = "user constraints: rejected by constraint filter"


def converged(values: list[float], direction: str, window: int = CONVERGENCE_WINDOW,
              threshold: float = CONVERGENCE_THRESHOLD) -> bool:
    """Relative gain across the last ``window`` best-so-far values is below ``threshold``."""
    if len(values) < window:
        return False
    first, last = values[-window], values[-1]
    if first == 0:
        return False
    return oriented(last - first, direction) / abs(first) < threshold


class Searcher:
    """
    Owns the search policy: proposing children, the two validation layers, picking the next
    node to expand and deciding when to stop. The tree itself is mutated by the orchestrator.
    """
    def __init__(self, gateway: LlmGateway, adapter: TargetAdapter, session: SessionConfig):
        self.gateway = gateway
        self.adapter = adapter
        self.session = session

    @property
    def cap_mb(self) -> float:
        return self.session.budget_cap_factor * self.session.resources.memory_mb

    def full_values(self, config: Configuration) -> dict[str, Scalar]:
        return {**self.adapter.schema.defaults(), **config.values}

    def task_text(self) -> str:
        s = self.session
        verb = "Maximize" if s.direction == "maximize" else "Minimize"
        return (f"{verb} {s.target_metric} of {self.adapter.name} under the {s.workload.describe()} "
                f"with {s.resources.describe()}.")

    def constraints_text(self, feedback: Iterable[str] = ()) -> str:
        memory = ", ".join(self.adapter.schema.tagged(MEMORY_TAG)) or "none"
        lines = [f"- memory-tagged parameters ({memory}) must sum to at most {self.cap_mb:g} MB"]
        if self.session.blacklist:
            lines.append(f"- never modify: {', '.join(sorted(self.session.blacklist))}")
        lines += [f"- {c}" for c in self.session.user_constraints]
        lines += [f"- previous candidate rejected: {f}" for f in feedback]
        return "\n".join(lines)

    @staticmethod
    def insight_view(insights: list[Insight]) -> list[dict]:
        return [
            {"id": i.id, "text": i.text, "confidence": round(i.confidence, 6),
             "prediction": i.prediction.model_dump() if i.prediction else None}
            for i in insights
        ]

    @staticmethod
    def insight_lines(insights: list[Insight]) -> str:
        return "\n".join(f"- [{i.confidence:.2f}] {i.text}" for i in insights) or "none"

    @staticmethod
    def digest_view(node: TuningNode) -> dict:
        digest = node.digest
        return {
            "id": node.id,
            "summary": digest.summary if digest else "",
            "metrics": {k: v.value for k, v in digest.metrics.items()} if digest else {},
            "anomalies": digest.anomalies if digest else [],
        }

    # --- 1. PROPOSAL ---
    def propose_children(self, node: TuningNode, insights: list[Insight], branching: int, tree: SearchTree,
                         feedback: Iterable[str] = ()) -> list[Configuration]:
        if branching < 1:
            raise ValueError("branching must be >= 1")
        feedback = list(feedback)
        parent = self.full_values(node.config)
        insight_view = self.insight_view(insights)
        prompt = render(
            "propose_children",
            node={"config": parent, "workload": node.workload.describe(), "resources": node.resources.describe()},
            digests=self.digest_view(node),
            insights=self.insight_lines(insights),
            task=self.task_text(),
            constraints=self.constraints_text(feedback),
            branching=branching,
        )
        context = {
            "config": parent,
            "params": {name: spec.model_dump(mode="json") for name, spec in self.adapter.schema.params.items()},
            "insights": insight_view,
            "cap_mb": self.cap_mb,
            "branching": branching,
            "target": self.session.target_metric,
            "direction": self.session.direction,
            "blacklist": sorted(self.session.blacklist),
            "tried": sorted(tree.fingerprints()),
            "feedback": feedback,
        }
        request = LlmRequest(kind=LlmKind.PROPOSE_CHILDREN, prompt=prompt, context=context)

        for attempt in (1, 2):
            try:
                proposals = self._parse_proposals(self.gateway.complete(request, AGENT).text)
                break
            except (MalformedResponse, TransportError) as e:
                logger.warning(f"proposal attempt {attempt} for {node.id} unusable: {e}")
        else:
            logger.warning(f"falling back to deterministic perturbation for {node.id}")
            proposals = self.perturb(parent, insights, branching)

        return self._dedupe([Configuration(values={**parent, **p}, parent_id=node.id) for p in proposals],
                            tree, branching)

    @staticmethod
    def _parse_proposals(text: str) -> list[dict]:
        payload = parse_json_reply(text)
        if isinstance(payload, dict) and isinstance(payload.get("children"), list):
            payload = payload["children"]
        if not isinstance(payload, list) or not all(isinstance(p, dict) for p in payload):
            raise MalformedResponse("proposal reply must be a JSON list of parameter objects")
        return payload

    @staticmethod
    def _dedupe(candidates: list[Configuration], tree: SearchTree, branching: int) -> list[Configuration]:
        seen = tree.fingerprints()
        kept = []
        for candidate in candidates:
            key = candidate.fingerprint()
            if key in seen:
                logger.debug(f"dropping proposal already in the tree: {key}")
                continue
            seen.add(key)
            kept.append(candidate)
        return kept[:branching]

    def perturb(self, parent: dict[str, Scalar], insights: list[Insight], branching: int) -> list[dict]:
        """One single-param move per chosen param: double below the range midpoint, halve above."""
        schema = self.adapter.schema
        blacklist = set(self.session.blacklist)
        named = [i.prediction.param for i in insights if i.prediction is not None]
        order = list(dict.fromkeys(named + list(schema.params)))
        chosen = [n for n in order if n in schema.params and schema.params[n].numeric and n not in blacklist]

        moves = []
        for name in chosen:
            current = parent[name]
            factor = 2.0 if current < schema.params[name].midpoint else 0.5
            value = clamp_param(name, current * factor, parent, schema, self.cap_mb)
            if value != current:
                moves.append({name: value})
            if len(moves) == branching:
                break
        return moves

    # --- 2. VALIDATION ---
    def filter_constraints(self, candidates: list[Configuration], parent: TuningNode) -> list[Configuration]:
        """Layer one: the LLM screens candidates against free-text user constraints."""
        constraints = self.session.user_constraints
        if not constraints or not candidates:
            return list(candidates)
        listing = {str(i): c.values for i, c in enumerate(candidates)}
        request = LlmRequest(
            kind=LlmKind.FILTER_CONSTRAINTS,
            prompt=render("filter_constraints", node=listing, task=self.task_text(),
                          constraints="\n".join(f"- {c}" for c in constraints)),
            context={"candidates": [c.values for c in candidates], "constraints": constraints,
                     "parent": self.full_values(parent.config)},
        )
        try:
            keep = parse_json_reply(self.gateway.complete(request, AGENT).text)
            if not isinstance(keep, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in keep):
                raise MalformedResponse("constraint filter reply must be a JSON list of indices")
        except (MalformedResponse, TransportError) as e:
            logger.warning(f"constraint filter unusable, keeping all candidates: {e}")
            return list(candidates)
        keep = set(keep)
        return [c for i, c in enumerate(candidates) if i in keep]

    def screen(self, candidates: list[Configuration], parent: TuningNode) -> list[tuple[Configuration, list[str]]]:
        """Both validation layers; an empty violation list means the candidate may run."""
        survivors = {id(c) for c in self.filter_constraints(candidates, parent)}
        verdicts = []
        for candidate in candidates:
            if id(candidate) not in survivors:
                verdicts.append((candidate, [LAYER_ONE_REJECTION]))
                continue
            verdict = self.adapter.validate(candidate, self.session.resources, self.session.blacklist,
                                            self.session.budget_cap_factor)
            verdicts.append((candidate, verdict.violations))
        return verdicts

    # --- 3. SELECTION ---
    def select_next(self, tree: SearchTree, insights: Iterable[Insight] = ()) -> str:
        target, direction = self.session.target_metric, self.session.direction
        frontier = list(tree.frontier)
        if not frontier:
            raise ValueError("cannot select from an empty frontier")
        if len(frontier) == 1:
            return self._mark_selected(tree, frontier[0])

        nodes = [tree.nodes[i] for i in frontier]
        request = LlmRequest(
            kind=LlmKind.SELECT_NODE,
            prompt=render("select_node", digests=[self.digest_view(n) for n in nodes],
                          insights=self.insight_lines(list(insights)), task=self.task_text()),
            max_output=64,
            context={"candidates": [{"id": n.id, "value": n.target_value(target)} for n in nodes],
                     "direction": direction},
        )
        try:
            choice: Optional[str] = self.gateway.complete(request, AGENT).text.strip().strip("`\"' \n")
        except (MalformedResponse, TransportError, BudgetExceeded) as e:
            logger.warning(f"node selection call failed, using argmax: {e}")
            choice = None
        if choice not in frontier:
            if choice is not None:
                logger.warning(f"selection reply {choice!r} is not a frontier node, using argmax")
            choice = min(frontier, key=lambda i: (-oriented(tree.nodes[i].target_value(target), direction), i))
        return self._mark_selected(tree, choice)

    @staticmethod
    def _mark_selected(tree: SearchTree, node_id: str) -> str:
        tree.nodes[node_id].status = NodeStatus.SELECTED
        logger.info(f"selected {node_id} for expansion")
        return node_id

    # --- 4. TERMINATION ---
    def check_termination(self, tree: SearchTree, ledger: TokenLedger, elapsed_s: float,
                          iterations: int) -> TerminationDecision:
        s = self.session
        values = [v for _, v in tree.best_per_iteration]
        if converged(values, s.direction):
            return TerminationDecision(stop=True, reason="convergence")
        if ledger.total >= s.token_budget:
            return TerminationDecision(stop=True, reason="token budget")
        if elapsed_s >= s.time_budget_s:
            return TerminationDecision(stop=True, reason="time budget")
        if iterations >= s.max_iterations:
            return TerminationDecision(stop=True, reason="max iterations")
        executed = tree.count(NodeStatus.BENCHMARKED, NodeStatus.SELECTED, NodeStatus.FAILED)
        if s.max_benchmarks is not None and executed >= s.max_benchmarks:
            return TerminationDecision(stop=True, reason="benchmark budget")
        if not tree.frontier:
            return TerminationDecision(stop=True, reason="frontier exhausted")
        return TerminationDecision(stop=False)
