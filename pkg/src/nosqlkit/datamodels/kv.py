"""Plain key-value buckets: create, read, update and delete one key at a time.

There is deliberately no call that empties a whole bucket; keys are removed
one by one. Updates must carry the context of the version they replace.
"""

from __future__ import annotations

from nosqlkit.datamodels.store import ModelStore
from nosqlkit.replication.quorum import ReadResult
from nosqlkit.versioning import EMPTY_CLOCK, VectorClock


def _b(x: bytes | str) -> bytes:
    return x.encode("utf-8") if isinstance(x, str) else bytes(x)


class KeyValueStore:
    def __init__(self, store: ModelStore, prefix: str = "kv:"):
        self.store = store
        self.prefix = prefix

    def bucket(self, name: str) -> str:
        return self.prefix + name

    def configure(self, bucket: str, n: int) -> None:
        self.store.configure(self.bucket(bucket), n)

    def put(self, bucket: str, key: bytes | str, value: bytes | str,
            context: VectorClock = EMPTY_CLOCK) -> VectorClock:
        return self.store.put(self.bucket(bucket), _b(key), _b(value), context)

    def get(self, bucket: str, key: bytes | str) -> ReadResult:
        return self.store.get(self.bucket(bucket), _b(key))

    def delete(self, bucket: str, key: bytes | str, context: VectorClock) -> VectorClock:
        return self.store.delete(self.bucket(bucket), _b(key), context)

    def keys(self, bucket: str) -> list[bytes]:
        b = self.bucket(bucket)
        return [k for k in self.store.keys(b) if not self.store.get(b, k).absent]


def kv_put(store: KeyValueStore, bucket: str, key, value, context: VectorClock = EMPTY_CLOCK) -> VectorClock:
    return store.put(bucket, key, value, context)


def kv_get(store: KeyValueStore, bucket: str, key) -> ReadResult:
    return store.get(bucket, key)


def kv_delete(store: KeyValueStore, bucket: str, key, context: VectorClock) -> VectorClock:
    return store.delete(bucket, key, context)
