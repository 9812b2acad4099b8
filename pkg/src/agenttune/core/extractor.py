import fnmatch
import logging
import math
import re
from typing import Optional

import numpy as np
from pydantic import ValidationError

from agenttune.core.gateway import LlmGateway
from agenttune.core.prompts import parse_json_reply, render
from agenttune.errors import (
    BudgetExceeded,
    ExtractionGap,
    FallbackRequired,
    MalformedResponse,
    MalformedSpec,
    ParseFailure,
    TransportError,
)
from agenttune.models.digest import ExtractionSpec, MetricValue, PerformanceDigest
from agenttune.models.execution import ExitStatus, RawBenchmarkOutput
from agenttune.models.llm import LlmKind, LlmRequest
from agenttune.models.target import AdapterManifest, MetricSpec

logger = logging.getLogger(__name__)

AGENT = "extractor"
MAX_SYNTHESIS_ATTEMPTS = 3
EXCERPT_LINES = 20
EXCERPT_CHARS = 4000


# --- 1. PURE HELPERS ---
def _source_text(source: str, raw: RawBenchmarkOutput) -> str:
    if source == "stdout":
        return raw.stdout
    glob = source.removeprefix("log:")
    return "\n".join(text for path, text in sorted(raw.log_files.items()) if fnmatch.fnmatch(path, glob))


def apply_spec(spec: ExtractionSpec, raw: RawBenchmarkOutput, strict: bool = True) -> dict[str, float]:
    """
    First match per rule, captured number times scale. With ``strict`` any missing metric
    raises ExtractionGap and non-numeric captured text raises ParseFailure; otherwise such
    metrics are simply absent.
    """
    values: dict[str, float] = {}
    gaps = []
    for rule in spec.rules:
        match = re.search(rule.pattern, _source_text(rule.source, raw), re.MULTILINE)
        if match is None:
            gaps.append(rule.metric)
            continue
        captured = match.group(1)
        try:
            values[rule.metric] = float(captured) * rule.scale
        except (TypeError, ValueError) as e:
            if strict:
                raise ParseFailure(f"{rule.metric}: captured text {captured!r} is not numeric") from e
            logger.warning(f"{rule.metric}: dropping non-numeric captured text {captured!r}")
    if gaps and strict:
        raise ExtractionGap(gaps)
    return values


def check_values(metrics: dict[str, float], plausibility: dict[str, MetricSpec]) -> list[str]:
    anomalies = []
    for name in sorted(metrics):
        value = metrics[name]
        if not math.isfinite(value):
            anomalies.append(f"{name}: non-finite value {value}")
            continue
        spec = plausibility.get(name)
        if spec is None:
            continue
        if spec.max is not None and value > spec.max:
            anomalies.append(f"{name}={value:g} exceeds plausible maximum {spec.max:g}")
        elif spec.min is not None and value < spec.min:
            anomalies.append(f"{name}={value:g} below plausible minimum {spec.min:g}")
    return anomalies


def monitor_summary(raw: RawBenchmarkOutput) -> dict[str, MetricValue]:
    if not raw.monitor_samples:
        return {}
    cpu = np.array([s.cpu_pct for s in raw.monitor_samples])
    mem = np.array([s.mem_mb for s in raw.monitor_samples])
    return {
        "cpu_mean_pct": MetricValue(value=float(cpu.mean()), unit="%"),
        "cpu_max_pct": MetricValue(value=float(cpu.max()), unit="%"),
        "mem_max_mb": MetricValue(value=float(mem.max()), unit="MB"),
    }


def _excerpt(text: str) -> str:
    lines = text.splitlines()
    if len(lines) > 2 * EXCERPT_LINES:
        lines = lines[:EXCERPT_LINES] + ["..."] + lines[-EXCERPT_LINES:]
    return "\n".join(lines)[:EXCERPT_CHARS]


def sample_excerpts(raw: RawBenchmarkOutput) -> str:
    parts = [f"--- stdout ---\n{_excerpt(raw.stdout)}"]
    parts += [f"--- log {path} ---\n{_excerpt(text)}" for path, text in sorted(raw.log_files.items())]
    return "\n".join(parts)


# --- 2. AGENT ---
class Extractor:
    """
    Turns raw benchmark output into a Performance Digest. A synthesized extraction spec is
    cached and reused across nodes; repeated synthesis failure switches the session to the
    adapter's fixed parsers.
    """
    def __init__(self, gateway: Optional[LlmGateway], manifest: AdapterManifest, target_metric: str,
                 llm_summaries: bool = False, max_attempts: int = MAX_SYNTHESIS_ATTEMPTS):
        self.gateway = gateway
        self.manifest = manifest
        self.target_metric = target_metric
        self.llm_summaries = llm_summaries
        self.max_attempts = max_attempts
        self.cached_spec: Optional[ExtractionSpec] = None
        self.use_fixed = gateway is None

    @property
    def fixed_spec(self) -> ExtractionSpec:
        return ExtractionSpec(rules=self.manifest.fixed_parsers)

    def wanted_metrics(self) -> list[dict]:
        return [{"name": name, "description": spec.description, "unit": spec.unit}
                for name, spec in self.manifest.metrics.items()]

    def _synthesize_once(self, samples: str, wanted: list[dict], system_info: str,
                         feedback: list[str]) -> ExtractionSpec:
        prompt = render("synthesize_extraction", system=system_info or self.manifest.name,
                        metrics=wanted, samples=samples,
                        feedback="\n".join(feedback) if feedback else "none")
        request = LlmRequest(kind=LlmKind.SYNTHESIZE_EXTRACTION, prompt=prompt,
                             context={"samples": samples, "wanted": wanted, "feedback": feedback})
        try:
            reply = self.gateway.complete(request, AGENT)
            payload = parse_json_reply(reply.text)
        except (MalformedResponse, TransportError) as e:
            raise MalformedSpec(str(e)) from e
        if isinstance(payload, list):
            payload = {"rules": payload}
        try:
            spec = ExtractionSpec.model_validate(payload)
        except ValidationError as e:
            raise MalformedSpec(f"invalid extraction spec: {e.errors(include_url=False)}") from e
        covered = {r.metric for r in spec.rules}
        missing = [w["name"] for w in wanted if w["name"] not in covered]
        if missing:
            raise MalformedSpec(f"spec has no rule for: {', '.join(missing)}")
        return spec

    def synthesize_spec(self, samples: str, wanted: list[dict], system_info: str) -> ExtractionSpec:
        """Up to ``max_attempts`` syntheses, each retry told why the previous one failed."""
        if not samples.strip():
            raise ValueError("at least one sample excerpt is required")
        feedback: list[str] = []
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self._synthesize_once(samples, wanted, system_info, feedback)
            except MalformedSpec as e:
                logger.warning(f"extraction spec attempt {attempt} malformed: {e}")
                feedback.append(f"attempt {attempt}: {e}")
        raise FallbackRequired(f"{self.max_attempts} malformed extraction specs")

    def _extract_metrics(self, raw: RawBenchmarkOutput) -> tuple[dict[str, float], str]:
        if not self.use_fixed:
            samples = sample_excerpts(raw)
            wanted = self.wanted_metrics()
            feedback: list[str] = []
            for attempt in range(1, self.max_attempts + 1):
                try:
                    spec = self.cached_spec or self._synthesize_once(samples, wanted, self.manifest.system_info, feedback)
                    metrics = apply_spec(spec, raw)
                    self.cached_spec = spec
                    return metrics, "synthesized"
                except (MalformedSpec, ExtractionGap, ParseFailure) as e:
                    logger.warning(f"extraction attempt {attempt} failed: {e}")
                    feedback.append(f"attempt {attempt}: {e}")
                    self.cached_spec = None
                except BudgetExceeded as e:
                    logger.warning(f"no token budget for extraction synthesis: {e}")
                    return apply_spec(self.fixed_spec, raw, strict=False), "fixed"
            logger.warning(f"falling back to fixed parsers for {self.manifest.name}")
            self.use_fixed = True
        return apply_spec(self.fixed_spec, raw, strict=False), "fixed"

    def _regenerate_for_anomalies(self, raw: RawBenchmarkOutput, anomalies: list[str]) -> Optional[dict[str, float]]:
        try:
            spec = self._synthesize_once(sample_excerpts(raw), self.wanted_metrics(), self.manifest.system_info,
                                         [f"implausible values: {a}" for a in anomalies])
            metrics = apply_spec(spec, raw)
        except (MalformedSpec, ExtractionGap, ParseFailure, BudgetExceeded) as e:
            logger.warning(f"anomaly-triggered regeneration failed: {e}")
            return None
        self.cached_spec = spec
        return metrics

    def extract(self, raw: RawBenchmarkOutput, node_id: str) -> PerformanceDigest:
        if raw.exit_status != ExitStatus.OK:
            return self.build_digest({}, [], raw, node_id)
        metrics, extraction = self._extract_metrics(raw)
        anomalies = check_values(metrics, self.manifest.metrics)
        if anomalies and extraction == "synthesized":
            logger.warning(f"{node_id}: suspicious values {anomalies}, regenerating extraction spec once")
            regenerated = self._regenerate_for_anomalies(raw, anomalies)
            if regenerated is not None:
                metrics = regenerated
                anomalies = check_values(metrics, self.manifest.metrics)
        return self.build_digest(metrics, anomalies, raw, node_id, extraction)

    # --- 3. DIGEST ---
    def _template_summary(self, metrics: dict[str, MetricValue], anomalies: list[str], raw: RawBenchmarkOutput) -> str:
        target = metrics.get(self.target_metric)
        shown = f"{target.value:.6g}" if target is not None else "n/a"
        return f"{self.target_metric}={shown}; exit={raw.exit_status}; anomalies={len(anomalies)}"

    def build_digest(self, metrics: dict[str, float], anomalies: list[str], raw: RawBenchmarkOutput,
                     node_id: str, extraction: Optional[str] = None) -> PerformanceDigest:
        if raw.exit_status != ExitStatus.OK:
            tail = raw.stdout.strip().splitlines()[-1:] or ["no output"]
            summary = f"{self.target_metric}=n/a; exit={raw.exit_status}; anomalies=0; failure: {tail[0][:200]}"
            return PerformanceDigest(summary=summary, source_node=node_id, exit_status=raw.exit_status)

        values = {
            name: MetricValue(value=value, unit=self.manifest.metrics[name].unit if name in self.manifest.metrics else "")
            for name, value in metrics.items() if math.isfinite(value)
        }
        values.update(monitor_summary(raw))
        suspect = sorted(name for name in metrics if any(a.startswith((f"{name}:", f"{name}=")) for a in anomalies))
        summary = self._template_summary(values, anomalies, raw)
        if self.llm_summaries and self.gateway is not None:
            summary = self._llm_summary(summary, values, anomalies) or summary
        return PerformanceDigest(metrics=values, summary=summary, anomalies=anomalies, source_node=node_id,
                                 exit_status=raw.exit_status, extraction=extraction, suspect=suspect)

    def _llm_summary(self, fallback: str, values: dict[str, MetricValue], anomalies: list[str]) -> Optional[str]:
        run = {"summary": fallback, "metrics": {k: v.model_dump() for k, v in values.items()}, "anomalies": anomalies}
        request = LlmRequest(kind=LlmKind.SUMMARIZE_DIGEST, prompt=render("summarize_digest", digests=run),
                             max_output=200, context=run)
        try:
            text = self.gateway.complete(request, AGENT).text.strip()
        except (BudgetExceeded, MalformedResponse, TransportError) as e:
            logger.warning(f"digest summary fell back to template: {e}")
            return None
        return text or None
