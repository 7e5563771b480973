"""Exception hierarchy shared by every layer of the engine."""

from __future__ import annotations


class NoSQLKitError(Exception):
    """Base class for all engine errors."""


# ring / placement
class EmptyNodeSet(NoSQLKitError, ValueError):
    pass


class DuplicateNodeId(NoSQLKitError, ValueError):
    pass


class UnknownNode(NoSQLKitError, KeyError):
    pass


class LastNode(NoSQLKitError, ValueError):
    pass


class ZeroShards(NoSQLKitError, ValueError):
    pass


# versioning
class StaleWrite(NoSQLKitError):
    """The writer's context no longer matches the stored head; re-read and retry."""


class EmptyInput(NoSQLKitError, ValueError):
    pass


# storage
class IoFailure(NoSQLKitError, OSError):
    pass


class CorruptInterior(NoSQLKitError):
    """A checksum failure that is not a torn tail; the log refuses to open."""


# simulator
class UnknownTarget(NoSQLKitError, KeyError):
    pass


class LivelockGuard(NoSQLKitError, RuntimeError):
    pass


# replication
class QuorumUnreachable(NoSQLKitError):
    pass


class NodeUnavailable(NoSQLKitError):
    """The contacted node did not answer before the client deadline."""


class NoQuorum(NoSQLKitError):
    pass


class ManualFailoverRequired(NoQuorum):
    pass


class NotPrimary(NoSQLKitError):
    def __init__(self, message: str = "", primary: str | None = None):
        super().__init__(message or f"not primary (primary={primary})")
        self.primary = primary


class NoPrimary(NoSQLKitError):
    pass


class GuaranteeTimeout(NoSQLKitError):
    pass


class SiblingConflict(NoSQLKitError):
    """A read found concurrent versions that the application must resolve."""

    def __init__(self, key, siblings):
        super().__init__(f"{len(siblings)} concurrent versions for {key!r}")
        self.key = key
        self.siblings = siblings


# data models
class DuplicateId(NoSQLKitError, ValueError):
    pass


class UnknownCollection(NoSQLKitError, KeyError):
    pass


class DuplicateName(NoSQLKitError, ValueError):
    pass


class UnknownKeyspace(NoSQLKitError, KeyError):
    pass


class UnknownTable(NoSQLKitError, KeyError):
    pass


class IndexRequired(NoSQLKitError):
    """Raised for filters that would need a full scan without allow_filtering."""


class DanglingEndpoint(NoSQLKitError, ValueError):
    pass
