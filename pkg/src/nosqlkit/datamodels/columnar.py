"""Column-family tables with a static schema catalog and secondary indexes.

Rows are sparse: only columns that hold a value are serialized, and adding or
dropping a column touches one row only. All tables of a keyspace share the
placement namespace ``cf:<keyspace>``, so every column family of a row key
lands on the same replicas.

Filtering follows the usual wide-column rules: a lookup by primary key or by
one indexed column runs directly; anything that would need a scan with a
residual filter (an unindexed column, or more than one non-key predicate) is
refused unless ``allow_filtering`` is set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from nosqlkit.datamodels.store import ModelStore, create, single_value
from nosqlkit.errors import (
    DuplicateName,
    IndexRequired,
    StaleWrite,
    UnknownKeyspace,
    UnknownTable,
)

SCHEMA_BUCKET = "cf-schema"
TYPES = {"int": int, "text": str}
SEP = "\x1f"


@dataclass
class TableSchema:
    name: str
    columns: dict[str, str]
    primary_key: str
    indexes: dict[str, str] = field(default_factory=dict)  # index name -> column

    def indexed(self, column: str) -> bool:
        return column in self.indexes.values()


@dataclass
class KeyspaceSchema:
    name: str
    replication_factor: int = 3
    tables: dict[str, TableSchema] = field(default_factory=dict)

    def to_json(self) -> bytes:
        doc = {
            "name": self.name,
            "replication_factor": self.replication_factor,
            "tables": {t.name: {"columns": t.columns, "primary_key": t.primary_key,
                                "indexes": t.indexes} for t in self.tables.values()},
        }
        return json.dumps(doc, sort_keys=True).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> KeyspaceSchema:
        doc = json.loads(raw)
        tables = {name: TableSchema(name, t["columns"], t["primary_key"], t["indexes"])
                  for name, t in doc["tables"].items()}
        return cls(doc["name"], doc["replication_factor"], tables)


def _check_type(table: TableSchema, column: str, value: Any) -> None:
    declared = table.columns.get(column)
    if declared is None:
        if not isinstance(value, (int, str)) or isinstance(value, bool):
            raise TypeError(f"column {column!r} holds only int or text values")
        return
    want = TYPES[declared]
    if not isinstance(value, want) or isinstance(value, bool):
        raise TypeError(f"column {column!r} is {declared}, got {type(value).__name__}")


def _sort_key(value: Any):
    return (0, value, "") if isinstance(value, int) else (1, 0, str(value))


class ColumnStore:
    def __init__(self, store: ModelStore):
        self.store = store
        # schemas seen by this client; row operations trust the cache, schema
        # changes always re-read the catalog first
        self._schemas: dict[str, KeyspaceSchema] = {}

    # schema
    def keyspace(self, name: str, fresh: bool = False) -> KeyspaceSchema:
        if not fresh and name in self._schemas:
            return self._schemas[name]
        raw = single_value(self.store.get(SCHEMA_BUCKET, name.encode()), name)
        if raw is None:
            self._schemas.pop(name, None)
            raise UnknownKeyspace(name)
        self._schemas[name] = KeyspaceSchema.from_json(raw)
        return self._schemas[name]

    def keyspaces(self) -> list[str]:
        return sorted(k.decode() for k in self.store.keys(SCHEMA_BUCKET)
                      if not self.store.get(SCHEMA_BUCKET, k).absent)

    def _save(self, schema: KeyspaceSchema) -> None:
        key = schema.name.encode()
        current = self.store.get(SCHEMA_BUCKET, key)
        self.store.put(SCHEMA_BUCKET, key, schema.to_json(), current.context)
        self._schemas[schema.name] = schema

    def table(self, keyspace: str, table: str) -> TableSchema:
        ks = self.keyspace(keyspace)
        if table not in ks.tables:
            ks = self.keyspace(keyspace, fresh=True)
        if table not in ks.tables:
            raise UnknownTable(f"{keyspace}.{table}")
        return ks.tables[table]

    def create_keyspace(self, name: str, replication_factor: int = 3) -> KeyspaceSchema:
        schema = KeyspaceSchema(name, replication_factor)
        self.store.configure(f"cf:{name}", replication_factor)
        if create(self.store, SCHEMA_BUCKET, name.encode(), schema.to_json()) is None:
            raise DuplicateName(f"keyspace {name!r} exists")
        self._schemas[name] = schema
        return schema

    def create_table(self, keyspace: str, name: str, columns: Mapping[str, str],
                     primary_key: str) -> KeyspaceSchema:
        ks = self.keyspace(keyspace, fresh=True)
        if name in ks.tables:
            raise DuplicateName(f"table {keyspace}.{name} exists")
        if primary_key not in columns:
            raise ValueError("primary key must be a declared column")
        bad = {t for t in columns.values() if t not in TYPES}
        if bad:
            raise ValueError(f"unsupported column types {sorted(bad)}")
        ks.tables[name] = TableSchema(name, dict(columns), primary_key)
        self._save(ks)
        return ks

    def create_index(self, keyspace: str, table: str, column: str,
                     name: str | None = None) -> KeyspaceSchema:
        ks = self.keyspace(keyspace, fresh=True)
        if table not in ks.tables:
            raise UnknownTable(f"{keyspace}.{table}")
        t = ks.tables[table]
        name = name or column
        if name in t.indexes:
            raise DuplicateName(f"index {name!r} exists")
        if column == t.primary_key:
            raise ValueError("the primary key is already indexed")
        t.indexes[name] = column
        self._save(ks)
        for key, row in self._rows(keyspace, table):
            if column in row:
                self._index_add(keyspace, table, column, row[column], key)
        return ks

    # rows
    def _bucket(self, keyspace: str, table: str) -> str:
        return f"cf:{keyspace}/{table}"

    def _index_bucket(self, keyspace: str, table: str, column: str) -> str:
        return f"cf:{keyspace}/{table}#{column}"

    def _index_add(self, keyspace, table, column, value, row_key: bytes) -> None:
        entry = f"{json.dumps(value)}{SEP}".encode() + row_key
        create(self.store, self._index_bucket(keyspace, table, column), entry, b"")

    def _index_drop(self, keyspace, table, column, value, row_key: bytes) -> None:
        bucket = self._index_bucket(keyspace, table, column)
        entry = f"{json.dumps(value)}{SEP}".encode() + row_key
        current = self.store.get(bucket, entry)
        if not current.absent:
            self.store.delete(bucket, entry, current.context)

    def _index_lookup(self, keyspace, table, column, value) -> list[bytes]:
        prefix = f"{json.dumps(value)}{SEP}".encode()
        bucket = self._index_bucket(keyspace, table, column)
        return [k[len(prefix):] for k in self.store.keys(bucket)
                if k.startswith(prefix) and not self.store.get(bucket, k).absent]

    def _row_key(self, value: Any) -> bytes:
        return json.dumps(value).encode("utf-8")

    def _read(self, keyspace: str, table: str, key: bytes):
        result = self.store.get(self._bucket(keyspace, table), key)
        raw = single_value(result, key)
        return (json.loads(raw) if raw is not None else None), result.context

    def _rows(self, keyspace: str, table: str) -> list[tuple[bytes, dict]]:
        bucket = self._bucket(keyspace, table)
        out = []
        for key in self.store.keys(bucket):
            row, _ = self._read(keyspace, table, key)
            if row is not None:
                out.append((key, row))
        return out

    def _write(self, keyspace: str, table: str, key: bytes,
               change: Callable[[dict], dict]) -> dict[str, Any]:
        t = self.table(keyspace, table)
        bucket = self._bucket(keyspace, table)
        for _ in range(8):
            row, ctx = self._read(keyspace, table, key)
            before = dict(row or {})
            after = change(dict(before))
            payload = json.dumps(after, sort_keys=True, ensure_ascii=False).encode("utf-8")
            try:
                self.store.put(bucket, key, payload, ctx)
            except StaleWrite:
                continue
            for column in set(t.indexes.values()):
                old, new = before.get(column), after.get(column)
                if old == new:
                    continue
                if old is not None:
                    self._index_drop(keyspace, table, column, old, key)
                if new is not None:
                    self._index_add(keyspace, table, column, new, key)
            return after
        raise StaleWrite(f"{keyspace}.{table}: row {key!r} kept changing")

    def upsert(self, keyspace: str, table: str, row: Mapping[str, Any]) -> dict[str, Any]:
        """Set the given columns of one row; other columns of the row stay as they are."""
        t = self.table(keyspace, table)
        if t.primary_key not in row:
            raise ValueError(f"missing primary key column {t.primary_key!r}")
        for column, value in row.items():
            if value is not None:
                _check_type(t, column, value)
        key = self._row_key(row[t.primary_key])

        def change(current: dict) -> dict:
            for column, value in row.items():
                if value is None:
                    current.pop(column, None)
                else:
                    current[column] = value
            return current

        return self._write(keyspace, table, key, change)

    def delete_column(self, keyspace: str, table: str, row_key: Any, column: str) -> None:
        t = self.table(keyspace, table)
        if column == t.primary_key:
            raise ValueError("cannot delete the primary key column")
        key = self._row_key(row_key)
        row, _ = self._read(keyspace, table, key)
        if row is None or column not in row:
            return
        self._write(keyspace, table, key, lambda cur: {c: v for c, v in cur.items() if c != column})

    def delete_row(self, keyspace: str, table: str, row_key: Any) -> None:
        t = self.table(keyspace, table)
        key = self._row_key(row_key)
        row, ctx = self._read(keyspace, table, key)
        if row is None:
            return
        self.store.delete(self._bucket(keyspace, table), key, ctx)
        for column in set(t.indexes.values()):
            if column in row:
                self._index_drop(keyspace, table, column, row[column], key)

    def get_row(self, keyspace: str, table: str, row_key: Any) -> dict[str, Any] | None:
        self.table(keyspace, table)
        return self._read(keyspace, table, self._row_key(row_key))[0]

    def select(self, keyspace: str, table: str, where: Mapping[str, Any] | None = None,
               allow_filtering: bool = False) -> list[dict[str, Any]]:
        t = self.table(keyspace, table)
        where = dict(where or {})
        others = [c for c in where if c != t.primary_key]
        needs_filtering = len(others) > 1 or (len(others) == 1 and not t.indexed(others[0])
                                              and t.primary_key not in where)
        if t.primary_key in where and others:
            needs_filtering = True
        if needs_filtering and not allow_filtering:
            raise IndexRequired(
                "Cannot execute this query as it might involve data filtering and thus may "
                "have unpredictable performance; use allow_filtering to run it anyway")
        if t.primary_key in where:
            row = self.get_row(keyspace, table, where[t.primary_key])
            candidates = [row] if row is not None else []
        else:
            driver = next((c for c in others if t.indexed(c)), None)
            if driver is not None:
                keys = self._index_lookup(keyspace, table, driver, where[driver])
                candidates = [r for r in (self._read(keyspace, table, k)[0] for k in keys) if r]
            else:
                candidates = [r for _, r in self._rows(keyspace, table)]
        rows = [r for r in candidates if all(c in r and r[c] == v for c, v in where.items())]
        return sorted(rows, key=lambda r: _sort_key(r.get(t.primary_key)))

    def count(self, keyspace: str, table: str, where: Mapping[str, Any] | None = None,
              allow_filtering: bool = False) -> int:
        return len(self.select(keyspace, table, where, allow_filtering))

    def scan(self, keyspace: str, table: str) -> list[dict[str, Any]]:
        return self.select(keyspace, table)

    def raw_rows(self, keyspace: str, table: str) -> Iterable[tuple[bytes, bytes]]:
        """Serialized rows exactly as handed to the storage layer."""
        bucket = self._bucket(keyspace, table)
        for key in self.store.keys(bucket):
            raw = single_value(self.store.get(bucket, key), key)
            if raw is not None:
                yield key, raw
