"""Exception types shared across the pipeline."""


class LabloopError(Exception):
    """Base class for all pipeline errors."""


class TransportError(LabloopError):
    """A backend call failed at the transport level (after retries)."""


class RateLimitError(TransportError):
    """The backend signalled a rate limit."""


class ReplayMissError(LabloopError):
    """A replay backend had no fixture for the request digest."""

    def __init__(self, digest: str):
        super().__init__(f"no replay fixture for request digest {digest}")
        self.digest = digest


class MalformedResponseError(LabloopError):
    """A model response did not follow the required protocol.

    ``span`` carries the offending portion of the text, when known, so the
    caller can quote it back in a re-prompt.
    """

    def __init__(self, message: str, span: str = ""):
        super().__init__(message)
        self.span = span


class EditParseError(LabloopError):
    """An edit-block response could not be parsed.

    ``line`` is the 1-indexed line number of the offending marker.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class WorkspaceEscapeError(LabloopError):
    """An edit targeted a path outside the workspace root."""


class StageFailure(LabloopError):
    """A pipeline stage failed for one unit of work (idea, section, review)."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class UndefinedMetricError(LabloopError):
    """A metric is undefined for the given sample (e.g. a class is absent)."""
