"""The versioned key-value surface every data model is built on.

``LocalStore`` runs in-process against a single chain store; ``ClusterStore``
sends every call through a simulated cluster (quorum or leader mode).
"""

from __future__ import annotations

from typing import Protocol

from nosqlkit.errors import SiblingConflict, StaleWrite
from nosqlkit.replication.quorum import ReadResult, WriteMode, placement_namespace
from nosqlkit.storage import ChainStore, MemoryBackend
from nosqlkit.versioning import EMPTY_CLOCK, VectorClock, mvcc_put


class ModelStore(Protocol):
    def put(self, bucket: str, key: bytes, value: bytes, context: VectorClock = EMPTY_CLOCK) -> VectorClock: ...
    def get(self, bucket: str, key: bytes) -> ReadResult: ...
    def delete(self, bucket: str, key: bytes, context: VectorClock) -> VectorClock: ...
    def keys(self, bucket: str) -> list[bytes]: ...
    def configure(self, bucket: str, n: int) -> None: ...


class LocalStore:
    def __init__(self, node_id: str = "local", chains: ChainStore | None = None):
        self.node_id = node_id
        self.chains = chains or ChainStore(MemoryBackend())
        self.replication: dict[str, int] = {}

    def put(self, bucket: str, key: bytes, value: bytes, context: VectorClock = EMPTY_CLOCK,
            tombstone: bool = False) -> VectorClock:
        chain = mvcc_put(self.chains.get(bucket, key), context, value, self.node_id, tombstone)
        self.chains.put(bucket, key, chain)
        return chain.versions[-1].clock

    def get(self, bucket: str, key: bytes) -> ReadResult:
        return ReadResult(tuple(self.chains.siblings(bucket, key)), (self.node_id,))

    def delete(self, bucket: str, key: bytes, context: VectorClock) -> VectorClock:
        return self.put(bucket, key, b"", context, tombstone=True)

    def keys(self, bucket: str) -> list[bytes]:
        return self.chains.keys(bucket)

    def configure(self, bucket: str, n: int) -> None:
        self.replication[bucket] = n


class ClusterStore:
    def __init__(self, cluster, via: str | None = None, write_mode: WriteMode = WriteMode.SYNC,
                 coordinate_locally: bool = False):
        self.cluster = cluster
        self.via = via
        self.write_mode = write_mode
        self.coordinate_locally = coordinate_locally

    def put(self, bucket: str, key: bytes, value: bytes, context: VectorClock = EMPTY_CLOCK) -> VectorClock:
        return self.cluster.put(bucket, key, value, context, via=self.via)

    def get(self, bucket: str, key: bytes) -> ReadResult:
        return self.cluster.get(bucket, key, via=self.via)

    def delete(self, bucket: str, key: bytes, context: VectorClock) -> VectorClock:
        return self.cluster.delete(bucket, key, context, via=self.via)

    def keys(self, bucket: str) -> list[bytes]:
        return self.cluster.list_keys(bucket)

    def configure(self, bucket: str, n: int) -> None:
        q = self.cluster.config.default_bucket
        n = min(n, len(self.cluster.nodes))
        self.cluster.configure_bucket(placement_namespace(bucket), n=n, r=min(q.r, n),
                                      w=min(q.w, n), write_mode=self.write_mode,
                                      coordinate_locally=self.coordinate_locally)


def single_value(result: ReadResult, key) -> bytes | None:
    """The one live value of a read, None if absent; siblings are the caller's problem."""
    values = result.values
    if len(values) > 1:
        raise SiblingConflict(key, values)
    return values[0].value if values else None


def create(store: ModelStore, bucket: str, key: bytes, value: bytes) -> VectorClock | None:
    """Write ``key`` only if it is absent; returns None when it already exists."""
    try:
        return store.put(bucket, key, value, EMPTY_CLOCK)
    except StaleWrite:
        current = store.get(bucket, key)
        if not current.absent:
            return None
        # the key was deleted before: write on top of its tombstone
        return store.put(bucket, key, value, current.context)
