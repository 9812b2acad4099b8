from .client import LlmHttpClient

__all__ = ["LlmHttpClient"]
