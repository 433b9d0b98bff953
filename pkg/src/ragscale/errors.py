"""Exception types shared across the harness."""


class RagScaleError(Exception):
    """Base class for all harness errors."""


class IngestError(RagScaleError):
    """A raw record could not be ingested (malformed, missing fields)."""


class ConflictError(RagScaleError):
    """A unique key (doc_id, query_id, record key) was seen twice."""


class ParseError(RagScaleError):
    """An input file violates its documented format."""


class ConfigError(RagScaleError):
    """Invalid configuration or parameter combination."""


class IntegrityError(RagScaleError):
    """Stored or computed state is inconsistent (dims mismatch, bad digest, ...)."""


class MissingArtifactError(RagScaleError):
    """A referenced artifact (corpus, plan, index, run) does not exist."""


class TransportError(RagScaleError):
    """A remote service call failed after bounded retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts
