class AgentTuneError(Exception):
    """Base class for every error raised by agenttune."""


# --- llm gateway ---
class TransportError(AgentTuneError):
    """Backend unreachable or returned a transient failure. Retryable."""


class MalformedResponse(AgentTuneError):
    """Backend answered, but not in the shape the request kind expects."""


class BudgetExceeded(AgentTuneError):
    """The session token budget is already spent."""


class TranscriptMismatch(AgentTuneError):
    """A scripted replay received a request the transcript has no entry for."""


class BackendNotFound(AgentTuneError):
    pass


# --- targets / executor ---
class AdapterNotFound(AgentTuneError):
    pass


class InvalidConfig(AgentTuneError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class LaunchFailure(AgentTuneError):
    """Benchmark command could not be started (missing binary, template error)."""


# --- extractor ---
class MalformedSpec(AgentTuneError):
    pass


class FallbackRequired(AgentTuneError):
    """Extraction spec synthesis gave up; fixed parsers take over."""


class ExtractionGap(AgentTuneError):
    def __init__(self, metrics: list[str]):
        self.metrics = metrics
        super().__init__(f"no match for metric(s): {', '.join(metrics)}")


class ParseFailure(AgentTuneError):
    pass


# --- reflector ---
class NoEvidence(AgentTuneError):
    pass


# --- orchestrator ---
class DegenerateBaseline(AgentTuneError):
    pass


class SessionStateError(AgentTuneError):
    """Session directory is missing files or holds state that does not parse."""
