import logging
from typing import Any, Optional

from pydantic import ValidationError

from agenttune.core.gateway import LlmGateway
from agenttune.core.memory import SIMILARITY_PROVIDERS, MemoryStore
from agenttune.core.prompts import parse_json_reply, render
from agenttune.errors import MalformedResponse, NoEvidence, TransportError
from agenttune.models.llm import LlmKind, LlmRequest
from agenttune.models.memory import Insight, Prediction, VoteRecord
from agenttune.models.search import SearchTree, TuningNode, oriented
from agenttune.models.session import SessionConfig
from agenttune.models.target import AdapterManifest

logger = logging.getLogger(__name__)

AGENT = "reflector"
MIN_INITIAL_CONFIDENCE = 0.1
MAX_INITIAL_CONFIDENCE = 0.9

Evidence = list[tuple[TuningNode, TuningNode]]


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _moved_pairs(prediction: Prediction, evidence: Evidence) -> Evidence:
    wanted_move = 1 if prediction.direction == "increase" else -1
    pairs = []
    for before, after in evidence:
        a, b = before.config.values.get(prediction.param), after.config.values.get(prediction.param)
        if a is None or b is None or isinstance(a, (str, bool)) or isinstance(b, (str, bool)):
            continue
        if _sign(b - a) == wanted_move:
            pairs.append((before, after))
    return pairs


def validate_vote(insight: Insight, vote: str, evidence: Evidence, metric_direction: str = "maximize") -> bool:
    """
    Checks a proposed vote against observed deltas. Only pairs where the predicted param moved
    in the predicted direction count; an upvote needs a majority of matching signs, a downvote
    a majority of contradicting ones. Zero deltas count for neither side.
    """
    prediction = insight.prediction
    if prediction is None:
        raise ValueError(f"{insight.id} has no structured prediction to validate")
    pairs = [
        (before, after) for before, after in _moved_pairs(prediction, evidence)
        if before.target_value(prediction.metric) is not None and after.target_value(prediction.metric) is not None
    ]
    if not pairs:
        raise NoEvidence(f"no evidence pair moves {prediction.param} in the predicted direction")

    expected = 1 if prediction.effect == "improves" else -1
    observed = [
        _sign(oriented(after.target_value(prediction.metric) - before.target_value(prediction.metric), metric_direction))
        for before, after in pairs
    ]
    matches = sum(1 for s in observed if s == expected)
    contradicts = sum(1 for s in observed if s == -expected)
    return matches > contradicts if vote == "up" else contradicts > matches


class Reflector:
    """
    Learning side of the loop: turns benchmarked experience into insights, asks for votes on
    the insights used this round, validates the votes against the measured deltas and serves retrieval.
    """
    def __init__(self, gateway: LlmGateway, store: MemoryStore, manifest: AdapterManifest, session: SessionConfig):
        self.gateway = gateway
        self.store = store
        self.manifest = manifest
        self.session = session
        self.provider = SIMILARITY_PROVIDERS[session.similarity]()

    @property
    def tags(self) -> list[str]:
        return sorted({self.session.workload.name, self.manifest.name})

    def metric_direction(self, metric: str) -> str:
        if metric == self.session.target_metric:
            return self.session.direction
        spec = self.manifest.metrics.get(metric)
        return spec.direction if spec else "maximize"

    def task_text(self) -> str:
        return (f"Tune {self.manifest.name} for {self.session.target_metric} "
                f"({self.session.direction}) under the {self.session.workload.describe()}.")

    # --- 1. RETRIEVAL ---
    def retrieve(self, node: TuningNode, k: Optional[int] = None) -> list[Insight]:
        if not self.session.use_insights:
            return []
        digest = node.digest.summary if node.digest else ""
        changed = " ".join(f"{k} {v}" for k, v in sorted(node.config.values.items()))
        context = f"{self.task_text()} {changed} {digest}"
        return self.store.retrieve(context, self.tags, k or self.session.top_k, provider=self.provider,
                                   score_mode=self.session.score_mode, ltm_scope=self.session.ltm_scope,
                                   workload_tag=self.session.workload.name)

    # --- 2. INSIGHT GENERATION ---
    def _edges(self, tree: SearchTree, node_ids: list[str]) -> list[tuple[str, str]]:
        edges = []
        for node_id in node_ids:
            node = tree.nodes[node_id]
            if node.parent_id is None or not node.has_result:
                continue
            if tree.nodes[node.parent_id].has_result:
                edges.append((node.parent_id, node_id))
        return edges

    def generate_insights(self, tree: SearchTree, node_ids: list[str]) -> list[Insight]:
        """Infers insights from the new nodes and their parents. New insights enter STM."""
        if not self.session.use_insights:
            return []
        edges = self._edges(tree, node_ids)
        experience_ids = sorted({i for edge in edges for i in edge})
        if len(experience_ids) < 2:
            return []

        target = self.session.target_metric
        schema = self.manifest.schema_
        nodes = {}
        for node_id in experience_ids:
            node = tree.nodes[node_id]
            nodes[node_id] = {
                "config": {**schema.defaults(), **node.config.values},
                "value": node.target_value(target),
                "summary": node.digest.summary if node.digest else "",
            }
        request = LlmRequest(
            kind=LlmKind.GENERATE_INSIGHTS,
            prompt=render("generate_insights", node="\n".join(f"{p} -> {c}" for p, c in edges),
                          digests=nodes, task=self.task_text()),
            context={
                "nodes": nodes,
                "edges": [list(e) for e in edges],
                "target": target,
                "direction": self.session.direction,
                "numeric_params": [n for n, spec in schema.params.items() if spec.numeric],
                "workload": self.session.workload.name,
            },
        )
        try:
            payload = parse_json_reply(self.gateway.complete(request, AGENT).text)
            if not isinstance(payload, list):
                raise MalformedResponse("insight reply must be a JSON list")
        except (MalformedResponse, TransportError) as e:
            logger.warning(f"no insights this iteration: {e}")
            return []

        candidates = self._parse_insights(payload, experience_ids)
        stored = [self.store.add(c) for c in candidates]
        logger.info(f"reflector produced {len(candidates)} insights from {len(edges)} edges")
        return stored

    def _parse_insights(self, payload: list[Any], experience_ids: list[str]) -> list[Insight]:
        merged: dict[Any, dict] = {}
        for entry in payload:
            if not isinstance(entry, dict) or not isinstance(entry.get("text"), str) or not entry["text"].strip():
                logger.warning(f"skipping malformed insight entry {entry!r}")
                continue
            try:
                prediction = Prediction.model_validate(entry["prediction"]) if entry.get("prediction") else None
                confidence = float(entry.get("initial_confidence", 0.5))
            except (ValidationError, TypeError, ValueError) as e:
                logger.warning(f"skipping insight with bad prediction or confidence: {e}")
                continue
            confidence = min(MAX_INITIAL_CONFIDENCE, max(MIN_INITIAL_CONFIDENCE, confidence))
            sources = [s for s in entry.get("source_nodes", []) if s in experience_ids] or experience_ids
            key = prediction.key() if prediction else ("text", entry["text"].strip())
            current = merged.get(key)
            if current is None or confidence > current["confidence"]:
                merged[key] = {"text": entry["text"].strip(), "prediction": prediction, "confidence": confidence,
                               "source_nodes": sources}

        first = int(self.store.next_id().removeprefix("ins-"))
        return [Insight(id=f"ins-{first + n:04d}", tags=self.tags, **fields) for n, fields in enumerate(merged.values())]

    # --- 3. VOTING ---
    def evidence_for(self, insight: Insight, tree: SearchTree, node_ids: list[str]) -> Evidence:
        pairs = [(tree.nodes[p], tree.nodes[c]) for p, c in self._edges(tree, node_ids)]
        if insight.prediction is None:
            return pairs
        return list(_moved_pairs(insight.prediction, pairs))

    def vote_round(self, retrieved: list[Insight], tree: SearchTree, node_ids: list[str]) -> list[VoteRecord]:
        """One batched vote request for the retrieved insights that have evidence this round."""
        under_review = []
        evidence: dict[str, Evidence] = {}
        for insight in retrieved:
            current = self.store.get(insight.id)
            if current is None:
                continue
            pairs = self.evidence_for(current, tree, node_ids)
            if pairs:
                under_review.append(current)
                evidence[current.id] = pairs
        if not under_review:
            return []

        evidence_view = {i.id: [self._evidence_entry(i, b, a) for b, a in evidence[i.id]] for i in under_review}
        request = LlmRequest(
            kind=LlmKind.VOTE_INSIGHTS,
            prompt=render("vote_insights", digests=evidence_view, task=self.task_text(),
                          insights=[{"id": i.id, "text": i.text, "confidence": round(i.confidence, 6)}
                                    for i in under_review]),
            context={
                "insights": [{"id": i.id, "prediction": i.prediction.model_dump() if i.prediction else None}
                             for i in under_review],
                "evidence": evidence_view,
            },
        )
        try:
            payload = parse_json_reply(self.gateway.complete(request, AGENT).text)
            if not isinstance(payload, list):
                raise MalformedResponse("vote reply must be a JSON list")
        except (MalformedResponse, TransportError) as e:
            logger.warning(f"no votes this iteration: {e}")
            return []

        records = []
        voted: set[str] = set()
        for entry in payload:
            if not isinstance(entry, dict) or entry.get("vote") not in ("up", "down") or entry.get("id") not in evidence:
                logger.warning(f"ignoring vote entry {entry!r}")
                continue
            if entry["id"] in voted:
                continue
            voted.add(entry["id"])
            records.append(self._apply(entry["id"], entry["vote"], evidence[entry["id"]]))
        return records

    def _evidence_entry(self, insight: Insight, before: TuningNode, after: TuningNode) -> dict:
        metric = insight.prediction.metric if insight.prediction else self.session.target_metric
        param = insight.prediction.param if insight.prediction else None
        old, new = before.target_value(metric), after.target_value(metric)
        entry = {"before": before.id, "after": after.id, "metric_before": old, "metric_after": new,
                 "delta_metric": None if old is None or new is None else oriented(new - old, self.metric_direction(metric))}
        if param is not None:
            entry["delta_param"] = after.config.values[param] - before.config.values[param]
        return entry

    def _apply(self, insight_id: str, vote: str, pairs: Evidence) -> VoteRecord:
        insight = self.store.get(insight_id)
        node_ids = sorted({n.id for pair in pairs for n in pair})
        if insight.prediction is None:
            self.store.vote(insight_id, vote)
            record = VoteRecord(insight_id=insight_id, vote=vote, node_ids=node_ids, accepted=True,
                                validated=False, reason="no structured prediction")
        else:
            try:
                accepted = validate_vote(insight, vote, pairs, self.metric_direction(insight.prediction.metric))
                reason = "consistent with observed deltas" if accepted else "contradicted by observed deltas"
            except NoEvidence as e:
                accepted, reason = False, str(e)
            if accepted:
                self.store.vote(insight_id, vote)
            else:
                logger.warning(f"rejected {vote}vote on {insight_id}: {reason}")
            record = VoteRecord(insight_id=insight_id, vote=vote, node_ids=node_ids, accepted=accepted,
                                reason=reason)
        self.store.record(record)
        return record
