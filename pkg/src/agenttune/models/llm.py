try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Any

from pydantic import BaseModel, Field, field_validator


class LlmKind(StrEnum):
    PROPOSE_CHILDREN = "ProposeChildren"
    SELECT_NODE = "SelectNode"
    SYNTHESIZE_EXTRACTION = "SynthesizeExtraction"
    GENERATE_INSIGHTS = "GenerateInsights"
    VOTE_INSIGHTS = "VoteInsights"
    FILTER_CONSTRAINTS = "FilterConstraints"
    SUMMARIZE_DIGEST = "SummarizeDigest"


class LlmRequest(BaseModel):
    """
    One call to a language-model backend.

    Attributes:
        kind (LlmKind): Determines the response schema the caller expects.
        prompt (str): Rendered prompt text. Never empty.
        max_output (int): Output token cap passed to the backend.
        temperature (float): Sampling temperature.
        context (dict): The structured data rendered into the prompt. Offline backends act on
            it directly; the HTTP backend does not send it.
    """
    kind: LlmKind
    prompt: str
    max_output: int = Field(default=1024, ge=1)
    temperature: float = Field(default=0.0, ge=0.0)
    context: dict[str, Any] = Field(default_factory=dict)

    @field_validator("prompt")
    @classmethod
    def _prompt_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("prompt must not be empty")
        return value


class LlmResponse(BaseModel):
    text: str
    tokens_in: int = Field(ge=0)
    tokens_out: int = Field(ge=0)
    backend_id: str

    @property
    def tokens(self) -> int:
        return self.tokens_in + self.tokens_out


class TokenLedger(BaseModel):
    """
    Cumulative token usage of a session.

    Attributes:
        per_agent (dict[str, int]): Tokens attributed to each calling agent.
        calls_per_agent (dict[str, int]): Number of completed calls per agent.
        per_iteration (list[tuple[int, int]]): Tokens spent in each iteration, in iteration
            order. Iteration 0 is the baseline benchmark.
        total (int): Sum over per_iteration.
    """
    per_agent: dict[str, int] = Field(default_factory=dict)
    calls_per_agent: dict[str, int] = Field(default_factory=dict)
    per_iteration: list[tuple[int, int]] = Field(default_factory=list)
    total: int = 0

    def cumulative_by_iteration(self) -> dict[int, int]:
        running = 0
        out: dict[int, int] = {}
        for iteration, tokens in self.per_iteration:
            running += tokens
            out[iteration] = running
        return out


class TranscriptEntry(BaseModel):
    kind: LlmKind
    text: str
    tokens_in: int = Field(ge=0)
    tokens_out: int = Field(ge=0)
