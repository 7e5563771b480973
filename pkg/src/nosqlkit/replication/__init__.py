"""Quorum and leader-based replication plus client session guarantees."""

from nosqlkit.replication.leader import LeaderGroup, elect_primary
from nosqlkit.replication.quorum import (
    BucketConfig,
    QuorumConfig,
    ReadResult,
    WriteMode,
    anti_entropy_sync,
    read_repair,
)
from nosqlkit.replication.session import Guarantee, SessionState, session_read, session_write

__all__ = [
    "BucketConfig", "Guarantee", "LeaderGroup", "QuorumConfig", "ReadResult",
    "SessionState", "WriteMode", "anti_entropy_sync", "elect_primary", "read_repair",
    "session_read", "session_write",
]
