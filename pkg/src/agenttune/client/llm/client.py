from typing import Optional

import httpx
from pydantic import ValidationError

from agenttune.errors import MalformedResponse, TransportError
from .models import ChatMessage, CompletionBody, CompletionReply


class LlmHttpClient:
    """
    Synchronous client for a single-endpoint completion service.
    """
    def __init__(self, url: str, api_key: Optional[str], model: str = "gpt-4o",
                 timeout: float = 60.0, transport: Optional[httpx.BaseTransport] = None):
        self.url = url
        self.model = model
        self.timeout = timeout
        self._transport = transport
        self.__common_headers = {"Accept": "application/json"}
        if api_key:
            self.__common_headers["Authorization"] = f"Bearer {api_key}"

    def _post(self, body: dict) -> dict:
        """ Utility method containing boilerplate for POST requests """
        try:
            with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                response = client.post(self.url, headers=self.__common_headers, json=body)
                response.raise_for_status()
        except httpx.HTTPStatusError as e:
            # 4xx will not get better on retry
            if e.response.status_code < 500 and e.response.status_code != 429:
                raise MalformedResponse(f"completion endpoint rejected request: {e}") from e
            raise TransportError(str(e)) from e
        except httpx.RequestError as e:
            raise TransportError(str(e)) from e
        try:
            return response.json()
        except ValueError as e:
            raise MalformedResponse(f"completion endpoint returned non-JSON body: {e}") from e

    def complete(self, prompt: str, max_tokens: int, temperature: float) -> CompletionReply:
        """Sends one user message and returns the reply text with provider-reported usage."""
        body = CompletionBody(
            model=self.model,
            messages=[ChatMessage(role="user", content=prompt)],
            max_tokens=max_tokens,
            temperature=temperature,
        )
        data = self._post(body.model_dump())
        try:
            return CompletionReply.model_validate(data)
        except ValidationError as e:
            raise MalformedResponse(f"unexpected completion payload: {e}") from e
