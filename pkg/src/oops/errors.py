"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class OopsError(Exception):
    """Base class for every error raised by this package."""


# --- LLM gateway -----------------------------------------------------------


class GatewayError(OopsError):
    pass


class TransportError(GatewayError):
    """The backend could not be reached after the retry budget."""


class ReplayMiss(GatewayError):
    """A request fingerprint was not found in a replay transcript."""

    def __init__(self, fingerprint: str):
        super().__init__(f"no recorded response for request fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class MalformedBackendResponse(GatewayError):
    pass


class AgentError(OopsError):
    """An agent failed to produce usable output. Callers usually degrade."""


class ToolLoopExhausted(AgentError):
    pass


class ToolExecutionError(AgentError):
    pass


class InvalidStructuredOutput(AgentError):
    pass


# --- inventory ------------------------------------------------------------


class InventoryError(OopsError, OSError):
    pass


# --- OAS model --------------------------------------------------------------


class UnsupportedConstruct(OopsError):
    def __init__(self, constructs: list[str]):
        super().__init__("unsupported Swagger 2.0 construct(s): " + "; ".join(constructs))
        self.constructs = constructs


# --- synthesis -------------------------------------------------------------


class UnparseableOutput(OopsError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class RefError(OopsError):
    """A ``$ref`` could not be resolved inside the value being expanded."""

    def __init__(self, location: str, target: str, message: str | None = None):
        super().__init__(message or f"reference {target!r} at {location or '/'} points to a non-existent object")
        self.location = location
        self.target = target


class RefCycle(RefError):
    pass


class Unsalvageable(OopsError):
    pass


# --- pipeline ---------------------------------------------------------------


class PipelineError(OopsError):
    """Fatal error that aborted a pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# errors that must abort a run rather than degrade into a warning
FATAL_ERRORS: tuple[type[BaseException], ...] = (ReplayMiss, TransportError)
