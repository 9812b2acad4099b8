from typing import List, Literal

from pydantic import BaseModel


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    content: str

class CompletionBody(BaseModel):
    model: str
    messages: List[ChatMessage]
    max_tokens: int
    temperature: float

class CompletionUsage(BaseModel):
    tokens_in: int
    tokens_out: int

class CompletionReply(BaseModel):
    text: str
    usage: CompletionUsage
