import json
import re
from typing import Any, Optional

from agenttune.core.gateway import Backend, estimate_tokens
from agenttune.core.targets import clamp_param
from agenttune.errors import MalformedResponse
from agenttune.models.llm import LlmKind, LlmRequest, LlmResponse
from agenttune.models.target import ParamSchema, ParamType

MIN_RELATIVE_GAIN = 0.005


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _oriented(value: float, direction: str) -> float:
    return value if direction == "maximize" else -value


class GreedyBackend(Backend):
    """
    Deterministic offline stand-in for a language model. It never reads the prompt prose;
    it acts on the structured ``context`` each agent attaches to its request and answers in
    the same shape a model is asked for.
    """
    backend_id = "greedy-mock"

    def complete(self, request: LlmRequest) -> LlmResponse:
        handlers = {
            LlmKind.PROPOSE_CHILDREN: self._propose,
            LlmKind.SELECT_NODE: self._select,
            LlmKind.SYNTHESIZE_EXTRACTION: self._synthesize,
            LlmKind.GENERATE_INSIGHTS: self._generate,
            LlmKind.VOTE_INSIGHTS: self._vote,
            LlmKind.FILTER_CONSTRAINTS: self._filter,
            LlmKind.SUMMARIZE_DIGEST: self._summarize,
        }
        try:
            text = handlers[request.kind](request.context)
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedResponse(f"greedy backend cannot act on {request.kind} context: {e!r}") from e
        return LlmResponse(text=text, tokens_in=estimate_tokens(request.prompt),
                           tokens_out=max(1, estimate_tokens(text)), backend_id=self.backend_id)

    # --- 1. SEARCH ---
    @staticmethod
    def _select(ctx: dict[str, Any]) -> str:
        direction = ctx["direction"]
        best = min(ctx["candidates"], key=lambda c: (-_oriented(c["value"], direction), c["id"]))
        return best["id"]

    def _propose(self, ctx: dict[str, Any]) -> str:
        proposer = _Proposer(ctx)
        return json.dumps(proposer.children())

    @staticmethod
    def _filter(ctx: dict[str, Any]) -> str:
        text = " ".join(ctx["constraints"]).lower()
        parent = ctx["parent"]
        keep = []
        for index, candidate in enumerate(ctx["candidates"]):
            changed = [k for k, v in candidate.items() if parent.get(k) != v]
            if not any(name.lower() in text for name in changed):
                keep.append(index)
        return json.dumps(keep)

    # --- 2. EXTRACTION ---
    @staticmethod
    def _synthesize(ctx: dict[str, Any]) -> str:
        rules = [
            {
                "metric": wanted["name"],
                "source": "stdout",
                "pattern": re.escape(wanted["name"]) + r"\s*[=:]\s*([-+0-9.eE]+)",
                "unit": wanted.get("unit", ""),
                "scale": 1.0,
            }
            for wanted in ctx["wanted"]
        ]
        return "```json\n" + json.dumps({"rules": rules}, indent=2) + "\n```"

    @staticmethod
    def _summarize(ctx: dict[str, Any]) -> str:
        return ctx["summary"]

    # --- 3. REFLECTION ---
    @staticmethod
    def _generate(ctx: dict[str, Any]) -> str:
        nodes, target, direction = ctx["nodes"], ctx["target"], ctx["direction"]
        numeric = set(ctx["numeric_params"])
        insights = []
        for parent_id, child_id in ctx["edges"]:
            parent, child = nodes[parent_id], nodes[child_id]
            if parent["value"] is None or child["value"] is None or parent["value"] == 0:
                continue
            changed = sorted(k for k in child["config"] if child["config"][k] != parent["config"].get(k))
            if len(changed) != 1 or changed[0] not in numeric:
                continue
            param = changed[0]
            gain = _oriented(child["value"] - parent["value"], direction) / abs(parent["value"])
            if abs(gain) < MIN_RELATIVE_GAIN:
                continue
            moved = _sign(child["config"][param] - parent["config"][param])
            effect = "improves" if moved * _sign(gain) > 0 else "degrades"
            insights.append({
                "text": f"increase {param} {effect} {target} under {ctx['workload']} workload",
                "prediction": {"param": param, "direction": "increase", "metric": target, "effect": effect},
                "initial_confidence": min(0.9, 0.5 + min(abs(gain), 0.8) / 2),
                "source_nodes": [parent_id, child_id],
            })
        return json.dumps(insights)

    @staticmethod
    def _vote(ctx: dict[str, Any]) -> str:
        votes = []
        for insight in ctx["insights"]:
            prediction = insight.get("prediction")
            evidence = ctx["evidence"].get(insight["id"], [])
            if prediction is None or not evidence:
                continue
            expected = (1 if prediction["direction"] == "increase" else -1) * (1 if prediction["effect"] == "improves" else -1)
            observed = [_sign(e["delta_param"]) * _sign(e["delta_metric"]) for e in evidence]
            matches = sum(1 for s in observed if s == expected)
            contradicts = sum(1 for s in observed if s == -expected)
            if matches != contradicts:
                votes.append({"id": insight["id"], "vote": "up" if matches > contradicts else "down"})
        return json.dumps(votes)


class _Proposer:
    """Greedy child generation: follow the insights first, explore untouched params second."""

    def __init__(self, ctx: dict[str, Any]):
        self.parent: dict[str, Any] = dict(ctx["config"])
        self.schema = ParamSchema.model_validate({"params": ctx["params"]})
        self.cap: float = ctx["cap_mb"]
        self.branching: int = ctx["branching"]
        self.target: str = ctx["target"]
        self.blacklist = set(ctx.get("blacklist", []))
        self.seen = set(ctx.get("tried", []))
        self.seen.add(self._key(self.parent))
        self.moves = self._insight_moves(ctx.get("insights", []))
        self.proposed: list[dict] = []

    @staticmethod
    def _key(values: dict) -> str:
        return json.dumps(values, sort_keys=True)

    def _tunable(self, name: str) -> bool:
        spec = self.schema.params.get(name)
        return spec is not None and spec.numeric and name not in self.blacklist

    def _insight_moves(self, insights: list[dict]) -> list[tuple[str, int, float]]:
        """(param, +1 raise / -1 lower, confidence), one per param, strongest first."""
        best: dict[str, tuple[int, float, str]] = {}
        for insight in insights:
            prediction = insight.get("prediction")
            if not prediction or prediction["metric"] != self.target or not self._tunable(prediction["param"]):
                continue
            sign = (1 if prediction["direction"] == "increase" else -1) * (1 if prediction["effect"] == "improves" else -1)
            current = best.get(prediction["param"])
            if current is None or (-insight["confidence"], insight["id"]) < (-current[1], current[2]):
                best[prediction["param"]] = (sign, insight["confidence"], insight["id"])
        ranked = sorted(best.items(), key=lambda kv: (-kv[1][1], kv[1][2]))
        return [(param, sign, confidence) for param, (sign, confidence, _) in ranked]

    def _moved(self, values: dict, name: str, factor: Optional[float] = None, bound: Optional[int] = None) -> dict:
        spec = self.schema.params[name]
        if bound is not None:
            raw = spec.max if bound > 0 else spec.min
        else:
            raw = values[name] * factor
        return {**values, name: clamp_param(name, raw, values, self.schema, self.cap)}

    def _offer(self, candidate: dict) -> bool:
        key = self._key(candidate)
        if key in self.seen or len(self.proposed) >= self.branching:
            return False
        self.seen.add(key)
        self.proposed.append(candidate)
        return True

    def children(self) -> list[dict]:
        if self.moves:
            combined = dict(self.parent)
            for name, sign, _ in self.moves:
                combined = self._moved(combined, name, 2.0 if sign > 0 else 0.5)
            self._offer(combined)
            for name, sign, _ in self.moves:
                if self._offer(self._moved(self.parent, name, bound=sign)):
                    break

        covered = {name for name, _, _ in self.moves}
        for name in self.schema.params:
            if self._tunable(name) and name not in covered:
                self._offer(self._moved(self.parent, name, 2.0))
        for name, spec in self.schema.params.items():
            if name in self.blacklist:
                continue
            if spec.type == ParamType.ENUM:
                for value in spec.values:
                    self._offer({**self.parent, name: value})
            elif spec.type == ParamType.BOOLEAN:
                self._offer({**self.parent, name: not self.parent[name]})
        for name in self.schema.params:
            if self._tunable(name):
                self._offer(self._moved(self.parent, name, 0.5))
        return list(self.proposed)
