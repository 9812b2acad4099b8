import json
import logging
import math
import os
import threading
import time
from abc import ABC, abstractmethod
from collections import defaultdict
from pathlib import Path
from typing import Callable, Optional

from pydantic import TypeAdapter, ValidationError

from agenttune.client.llm import LlmHttpClient
from agenttune.errors import BackendNotFound, BudgetExceeded, MalformedResponse, TranscriptMismatch, TransportError
from agenttune.models.llm import LlmKind, LlmRequest, LlmResponse, TokenLedger, TranscriptEntry

logger = logging.getLogger(__name__)

_transcript_adapter = TypeAdapter(list[TranscriptEntry])


def estimate_tokens(text: str) -> int:
    """ceil(characters / 4); deterministic accounting for offline backends."""
    return math.ceil(len(text) / 4)


class Backend(ABC):
    backend_id: str = "abstract"

    @abstractmethod
    def complete(self, request: LlmRequest) -> LlmResponse:
        ...


class HttpBackend(Backend):
    backend_id = "http"

    def __init__(self, client: LlmHttpClient):
        self.client = client

    @classmethod
    def from_env(cls) -> "HttpBackend":
        url = os.getenv("AGENTTUNE_LLM_URL")
        if not url:
            raise BackendNotFound("AGENTTUNE_LLM_URL is not set")
        return cls(LlmHttpClient(
            url=url,
            api_key=os.getenv("AGENTTUNE_LLM_KEY"),
            model=os.getenv("AGENTTUNE_LLM_MODEL", "gpt-4o"),
        ))

    def complete(self, request: LlmRequest) -> LlmResponse:
        reply = self.client.complete(request.prompt, request.max_output, request.temperature)
        return LlmResponse(
            text=reply.text,
            tokens_in=reply.usage.tokens_in,
            tokens_out=reply.usage.tokens_out,
            backend_id=self.backend_id,
        )


class ScriptedBackend(Backend):
    """
    Replays a recorded transcript. The n-th request of a kind receives the n-th transcript
    entry of that kind, whatever the prompt says.
    """
    backend_id = "scripted"

    def __init__(self, entries: list[TranscriptEntry]):
        self._by_kind: dict[LlmKind, list[TranscriptEntry]] = defaultdict(list)
        for entry in entries:
            self._by_kind[entry.kind].append(entry)
        self._served: dict[LlmKind, int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        try:
            entries = _transcript_adapter.validate_json(Path(path).read_bytes())
        except (OSError, ValidationError) as e:
            raise BackendNotFound(f"cannot load transcript {path}: {e}") from e
        return cls(entries)

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            index = self._served[request.kind]
            entries = self._by_kind.get(request.kind, [])
            if index >= len(entries):
                raise TranscriptMismatch(f"transcript has no entry #{index + 1} of kind {request.kind}")
            self._served[request.kind] = index + 1
            entry = entries[index]
        return LlmResponse(text=entry.text, tokens_in=entry.tokens_in,
                           tokens_out=entry.tokens_out, backend_id=self.backend_id)

    def fast_forward(self, served: list[TranscriptEntry]) -> None:
        """Skips entries a resumed session already consumed before it was interrupted."""
        with self._lock:
            for entry in served:
                self._served[entry.kind] += 1

    def remaining(self) -> int:
        with self._lock:
            return sum(len(v) - self._served[k] for k, v in self._by_kind.items())


class RecordingBackend(Backend):
    """Wraps another backend and keeps every completion as a transcript entry."""

    def __init__(self, inner: Backend, entries: Optional[list[TranscriptEntry]] = None):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.entries: list[TranscriptEntry] = list(entries or [])
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        response = self.inner.complete(request)
        with self._lock:
            self.entries.append(TranscriptEntry(kind=request.kind, text=response.text,
                                                tokens_in=response.tokens_in, tokens_out=response.tokens_out))
        return response

    def save(self, path: str | Path) -> None:
        with self._lock:
            payload = [e.model_dump(mode="json") for e in self.entries]
        Path(path).write_text(json.dumps(payload, indent=2))


def load_transcript(path: str | Path) -> list[TranscriptEntry]:
    path = Path(path)
    if not path.exists():
        return []
    return _transcript_adapter.validate_json(path.read_bytes())


class LlmGateway:
    """
    Single funnel for every agent's LLM call: budget check, bounded transport retries and
    token accounting.
    """
    def __init__(self, backend: Backend, token_budget: int, ledger: Optional[TokenLedger] = None,
                 max_attempts: int = 3, backoff_s: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.token_budget = token_budget
        self.ledger = ledger or TokenLedger()
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._lock = threading.Lock()
        self.iteration = self.ledger.per_iteration[-1][0] if self.ledger.per_iteration else 0

    def begin_iteration(self, iteration: int) -> None:
        with self._lock:
            self.iteration = iteration
            if not self.ledger.per_iteration or self.ledger.per_iteration[-1][0] != iteration:
                self.ledger.per_iteration.append((iteration, 0))

    @property
    def exhausted(self) -> bool:
        return self.ledger.total >= self.token_budget

    def complete(self, request: LlmRequest, agent: str) -> LlmResponse:
        with self._lock:
            projected = self.ledger.total + estimate_tokens(request.prompt)
            if self.ledger.total >= self.token_budget or projected > self.token_budget:
                raise BudgetExceeded(
                    f"{agent} request would pass token budget ({self.ledger.total}/{self.token_budget})"
                )

        for attempt in range(1, self.max_attempts + 1):
            try:
                response = self.backend.complete(request)
                break
            except TransportError as e:
                if attempt == self.max_attempts:
                    logger.error(f"{agent}: transport failed after {attempt} attempts: {e}")
                    raise
                logger.warning(f"{agent}: transport error on attempt {attempt}, retrying: {e}")
                self._sleep(self.backoff_s)

        if response.tokens <= 0:
            raise MalformedResponse(f"{self.backend.backend_id} reported zero tokens for a {request.kind} call")
        self._record(agent, response.tokens)
        return response

    def _record(self, agent: str, tokens: int) -> None:
        with self._lock:
            ledger = self.ledger
            ledger.per_agent[agent] = ledger.per_agent.get(agent, 0) + tokens
            ledger.calls_per_agent[agent] = ledger.calls_per_agent.get(agent, 0) + 1
            if ledger.per_iteration and ledger.per_iteration[-1][0] == self.iteration:
                iteration, spent = ledger.per_iteration[-1]
                ledger.per_iteration[-1] = (iteration, spent + tokens)
            else:
                ledger.per_iteration.append((self.iteration, tokens))
            ledger.total += tokens


def build_backend(name: str, transcript_path: Optional[str] = None) -> Backend:
    if name == "http":
        return HttpBackend.from_env()
    if name == "greedy-mock":
        from agenttune.core.greedy import GreedyBackend
        return GreedyBackend()
    if name == "scripted":
        if not transcript_path:
            raise BackendNotFound("scripted backend needs a transcript path")
        return ScriptedBackend.from_file(transcript_path)
    raise BackendNotFound(f"unknown backend {name!r}")
