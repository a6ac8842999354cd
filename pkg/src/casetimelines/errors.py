"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class; ``kind`` is the stable name used in CLI error records."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# corpus
class MissingBodyMarker(PipelineError):
    pass


class InvalidRoot(PipelineError):
    pass


class SampleTooLarge(PipelineError):
    pass


# timelines
class EmptyTimeline(PipelineError):
    pass


class MalformedRow(PipelineError):
    pass


# prompting / transport
class MissingField(PipelineError):
    pass


class BudgetTooSmall(PipelineError):
    pass


class TransportError(PipelineError):
    pass


class TransientTransportError(TransportError):
    """Retriable failure (connection reset, 429, 5xx)."""


class RequestTimeout(TransientTransportError, TimeoutError):
    pass


class AuthError(TransportError):
    pass


class TemperatureRejected(TransportError):
    """Endpoint refused the requested sampling temperature."""


# matching
class ZeroVector(PipelineError):
    pass


class DimensionMismatch(PipelineError):
    pass


# metrics / reports
class NoComparablePairs(PipelineError):
    pass


class EmptyInput(PipelineError):
    pass


class MismatchedReport(PipelineError):
    pass


class HeterogeneousConfig(PipelineError):
    pass
