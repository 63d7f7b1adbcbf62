"""Exception types raised across the package."""

from __future__ import annotations


class TracebackError(Exception):
    """Base class for every error raised by tracelab."""


class TopologyError(TracebackError, ValueError):
    pass


class ScenarioFormatError(TopologyError):
    """A topology or scenario file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class AmbiguousOrder(TracebackError):
    """Two routers carry the same mark count, so their order is undetermined."""

    def __init__(self, tied):
        self.tied = tuple(tied)
        super().__init__(f"equal mark counts for routers {list(self.tied)}")


class IncompleteEvidence(TracebackError):
    pass


class NoConvergedTrials(TracebackError):
    pass


class ForkDetected(TracebackError):
    """The upstream walk found more than one matching neighbour."""

    def __init__(self, as_id, prefix, branches):
        self.as_id = as_id
        self.prefix = tuple(prefix)
        self.branches = tuple(tuple(b) for b in branches)
        super().__init__(
            f"AS{as_id}: digest matched several upstream routers after "
            f"{list(self.prefix)}: {[list(b) for b in self.branches]}"
        )


class OriginNotFound(TracebackError):
    """Every branch of a cross-AS traceback was pruned."""

    def __init__(self, transcript, segments=()):
        self.transcript = transcript
        self.segments = tuple(segments)
        super().__init__("no queried STM located the packet's origin")


class AttackEnded(TracebackError):
    """Link testing needs a live attack; the flow stopped."""


class NoMatchingIngress(TracebackError):
    pass


class InconclusiveLink(TracebackError):
    pass
