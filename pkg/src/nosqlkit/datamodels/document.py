"""Document collections: JSON documents addressed by ``_id``.

A document is stored as one value, so every insert or removal is atomic per
document. Collections are created by their first insert and recorded in a
catalog bucket; ``remove`` empties a collection but keeps it listed, ``drop``
deletes it entirely.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Mapping

from nosqlkit.datamodels.store import ModelStore, create, single_value
from nosqlkit.errors import DuplicateId, UnknownCollection

CATALOG = "doc-catalog"


def _id_key(doc_id: Any) -> bytes:
    return json.dumps(doc_id, sort_keys=True).encode("utf-8")


def _order(doc: Mapping[str, Any]):
    i = doc.get("_id")
    return (0, i, "") if isinstance(i, (int, float)) else (1, 0, str(i))


class DocumentStore:
    def __init__(self, store: ModelStore, replication: int | None = None):
        self.store = store
        self.replication = replication
        self._next_id = 0
        self._registered: set[str] = set()

    def bucket(self, collection: str) -> str:
        return f"doc:{collection}"

    def _register(self, collection: str) -> None:
        if collection in self._registered:
            return
        key = collection.encode("utf-8")
        if self.store.get(CATALOG, key).absent:
            if self.replication is not None:
                self.store.configure(self.bucket(collection), self.replication)
            create(self.store, CATALOG, key, b"1")
        self._registered.add(collection)

    def collections(self) -> list[str]:
        return sorted(k.decode("utf-8") for k in self.store.keys(CATALOG)
                      if not self.store.get(CATALOG, k).absent)

    def _require(self, collection: str) -> None:
        if self.store.get(CATALOG, collection.encode("utf-8")).absent:
            raise UnknownCollection(collection)

    def insert(self, collection: str, document: Mapping[str, Any]) -> Any:
        doc = dict(document)
        if "_id" not in doc:
            doc["_id"] = self._fresh_id(collection)
        self._register(collection)
        payload = json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")
        if create(self.store, self.bucket(collection), _id_key(doc["_id"]), payload) is None:
            raise DuplicateId(f"{collection}: _id {doc['_id']!r} exists")
        return doc["_id"]

    def insert_many(self, collection: str, documents: Iterable[Mapping[str, Any]]) -> list[Any]:
        return [self.insert(collection, d) for d in documents]

    def _fresh_id(self, collection: str) -> str:
        while True:
            self._next_id += 1
            candidate = f"{self._next_id:012x}"
            if self.store.get(self.bucket(collection), _id_key(candidate)).absent:
                return candidate

    def _scan(self, collection: str) -> list[dict[str, Any]]:
        bucket = self.bucket(collection)
        docs = []
        for key in self.store.keys(bucket):
            raw = single_value(self.store.get(bucket, key), key)
            if raw is not None:
                docs.append(json.loads(raw))
        return sorted(docs, key=_order)

    def get(self, collection: str, doc_id: Any) -> dict[str, Any] | None:
        self._require(collection)
        raw = single_value(self.store.get(self.bucket(collection), _id_key(doc_id)), doc_id)
        return json.loads(raw) if raw is not None else None

    def find(self, collection: str, filter: Mapping[str, Any] | None = None,
             projection: Iterable[str] | None = None) -> list[dict[str, Any]]:
        """Documents whose top-level fields equal every pair in ``filter``."""
        self._require(collection)
        filter = dict(filter or {})
        out = []
        for doc in self._scan(collection):
            if all(f in doc and doc[f] == v for f, v in filter.items()):
                if projection is not None:
                    keep = {"_id", *projection}
                    doc = {k: v for k, v in doc.items() if k in keep}
                out.append(doc)
        return out

    def count(self, collection: str, filter: Mapping[str, Any] | None = None) -> int:
        return len(self.find(collection, filter))

    def group(self, collection: str, key_field: str) -> list[tuple[Any, int]]:
        """Map each document to (key_field value, 1) and reduce by summing.

        Documents without the field are left out. Groups come back in the
        order their key first appears in ``_id`` order.
        """
        self._require(collection)
        emitted = [(doc[key_field], 1) for doc in self._scan(collection) if key_field in doc]
        totals: dict[str, tuple[Any, int]] = {}
        for value, one in emitted:
            tag = json.dumps(value, sort_keys=True)
            prev = totals.get(tag, (value, 0))
            totals[tag] = (value, prev[1] + one)
        return list(totals.values())

    def remove(self, collection: str, filter: Mapping[str, Any] | None = None) -> int:
        """Delete matching documents (all when no filter); the collection stays."""
        self._require(collection)
        bucket = self.bucket(collection)
        removed = 0
        for doc in self.find(collection, filter):
            key = _id_key(doc["_id"])
            current = self.store.get(bucket, key)
            if not current.absent:
                self.store.delete(bucket, key, current.context)
                removed += 1
        return removed

    def drop(self, collection: str) -> None:
        self.remove(collection)
        self._registered.discard(collection)
        key = collection.encode("utf-8")
        self.store.delete(CATALOG, key, self.store.get(CATALOG, key).context)
