try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator


class Tier(StrEnum):
    STM = "STM"
    LTM = "LTM"


class Prediction(BaseModel):
    """Machine-checkable claim: moving ``param`` in ``direction`` has ``effect`` on ``metric``."""
    param: str
    direction: Literal["increase", "decrease"]
    metric: str
    effect: Literal["improves", "degrades"]

    def key(self) -> tuple[str, str, str, str]:
        return self.param, self.direction, self.metric, self.effect


class Insight(BaseModel):
    """
    A tuning rule with a confidence score.

    Attributes:
        id (str): Unique across STM and LTM.
        text (str): Natural-language statement of the rule.
        prediction (Prediction | None): Structured claim the validator can check.
        confidence (float): Support from benchmark evidence, in [0, 1].
        tier (Tier): STM while tentative, LTM once repeatedly validated.
        upvotes (int): Applied upvotes.
        downvotes (int): Applied downvotes.
        source_nodes (list[str]): Nodes the insight was inferred from. Never empty.
        tags (list[str]): Sorted tags, typically workload name and target system.
    """
    id: str
    text: str
    prediction: Optional[Prediction] = None
    confidence: float = Field(ge=0.0, le=1.0)
    tier: Tier = Tier.STM
    upvotes: int = 0
    downvotes: int = 0
    source_nodes: list[str] = Field(min_length=1)
    tags: list[str] = Field(default_factory=list)

    @field_validator("tags")
    @classmethod
    def _sorted_unique(cls, tags: list[str]) -> list[str]:
        return sorted(set(tags))


class VoteRecord(BaseModel):
    insight_id: str
    vote: Literal["up", "down"]
    node_ids: list[str] = Field(default_factory=list)
    accepted: bool
    validated: bool = True
    reason: str = ""


class MemoryDocument(BaseModel):
    """On-disk form of one memory tier."""
    version: int = 1
    insights: list[Insight] = Field(default_factory=list)
