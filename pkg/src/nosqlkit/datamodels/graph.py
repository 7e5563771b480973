"""A single global property graph of nodes and relations.

Every element lives in one bucket and is either a node or a relation, never
both. Relations may only join nodes that exist. Queries are limited to
property filters over nodes and one-hop neighbourhoods.
"""

from __future__ import annotations

import json
import operator
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from nosqlkit.datamodels.store import ModelStore, create, single_value
from nosqlkit.errors import DanglingEndpoint, DuplicateId, UnknownNode

BUCKET = "graph"


@dataclass(frozen=True)
class GraphNode:
    id: str
    properties: dict[str, Any] = field(default_factory=dict)
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class Relation:
    id: str
    start: str
    end: str
    label: str = ""
    properties: dict[str, Any] = field(default_factory=dict)


GraphElement = GraphNode | Relation


def _encode(el: GraphElement) -> bytes:
    if isinstance(el, GraphNode):
        doc = {"kind": "node", "props": el.properties, "labels": list(el.labels)}
    else:
        doc = {"kind": "rel", "from": el.start, "to": el.end, "label": el.label,
               "props": el.properties}
    return json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")


def _decode(element_id: str, raw: bytes) -> GraphElement:
    doc = json.loads(raw)
    if doc["kind"] == "node":
        return GraphNode(element_id, doc["props"], tuple(doc["labels"]))
    return Relation(element_id, doc["from"], doc["to"], doc["label"], doc["props"])


# predicates: has(f), f = v, f < n, f > n, f <= n, f >= n, joined by "and"
_CMP = {"=": operator.eq, "<": operator.lt, ">": operator.gt,
        "<=": operator.le, ">=": operator.ge, "<>": operator.ne}
_HAS = re.compile(r"^has\(\s*(\w+)\s*\)$", re.I)
_REL = re.compile(r"^(\w+)\s*(<=|>=|<>|=|<|>)\s*(.+)$")


def _literal(text: str) -> Any:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_predicate(text: str) -> Callable[[Mapping[str, Any]], bool]:
    clauses = []
    for part in re.split(r"\s+and\s+", text.strip(), flags=re.I):
        part = part.strip()
        while part.startswith("(") and part.endswith(")") and not _HAS.match(part):
            part = part[1:-1].strip()
        m = _HAS.match(part)
        if m:
            f = m.group(1)
            clauses.append(lambda p, f=f: f in p)
            continue
        m = _REL.match(part)
        if not m:
            raise ValueError(f"cannot parse predicate {part!r}")
        f, op, lit = m.group(1), _CMP[m.group(2)], _literal(m.group(3))

        def clause(p, f=f, op=op, lit=lit):
            # a missing property never matches, whatever the operator
            if f not in p:
                return False
            try:
                return op(p[f], lit)
            except TypeError:
                return False

        clauses.append(clause)
    return lambda props: all(c(props) for c in clauses)


class GraphStore:
    def __init__(self, store: ModelStore):
        self.store = store
        self._rel_seq = 0

    def _load(self, element_id: str) -> GraphElement | None:
        key = element_id.encode("utf-8")
        raw = single_value(self.store.get(BUCKET, key), element_id)
        return _decode(element_id, raw) if raw is not None else None

    def elements(self) -> list[GraphElement]:
        out = []
        for key in self.store.keys(BUCKET):
            el = self._load(key.decode("utf-8"))
            if el is not None:
                out.append(el)
        return sorted(out, key=lambda e: e.id)

    def nodes(self) -> list[GraphNode]:
        return [e for e in self.elements() if isinstance(e, GraphNode)]

    def relations(self) -> list[Relation]:
        return [e for e in self.elements() if isinstance(e, Relation)]

    def node(self, node_id: str) -> GraphNode:
        el = self._load(node_id)
        if not isinstance(el, GraphNode):
            raise UnknownNode(node_id)
        return el

    def add_node(self, node_id: str, properties: Mapping[str, Any] | None = None,
                 labels: tuple[str, ...] = ()) -> str:
        el = GraphNode(node_id, dict(properties or {}), tuple(labels))
        if create(self.store, BUCKET, node_id.encode("utf-8"), _encode(el)) is None:
            raise DuplicateId(f"graph element {node_id!r} exists")
        return node_id

    def add_relation(self, start: str, end: str, label: str = "",
                     properties: Mapping[str, Any] | None = None,
                     relation_id: str | None = None) -> str:
        for endpoint in (start, end):
            if not isinstance(self._load(endpoint), GraphNode):
                raise DanglingEndpoint(f"relation endpoint {endpoint!r} is not a node")
        if relation_id is None:
            while True:
                self._rel_seq += 1
                relation_id = f"rel:{self._rel_seq}"
                if self._load(relation_id) is None:
                    break
        el = Relation(relation_id, start, end, label, dict(properties or {}))
        if create(self.store, BUCKET, relation_id.encode("utf-8"), _encode(el)) is None:
            raise DuplicateId(f"graph element {relation_id!r} exists")
        return relation_id

    def filter(self, predicate: str | Callable[[Mapping[str, Any]], bool]) -> list[GraphNode]:
        """Nodes whose properties satisfy the predicate; missing properties never match."""
        test = parse_predicate(predicate) if isinstance(predicate, str) else predicate
        return [n for n in self.nodes() if test(n.properties)]

    def match(self, start: str) -> list[tuple[dict[str, Any], dict[str, Any]]]:
        """One (start properties, neighbour properties) pair per incident relation."""
        origin = self.node(start)
        out = []
        for rel in self.relations():
            if rel.start == start:
                other = rel.end
            elif rel.end == start:
                other = rel.start
            else:
                continue
            out.append((dict(origin.properties), dict(self.node(other).properties)))
        return out

    def degree(self, node_id: str) -> int:
        return sum(1 for r in self.relations() if node_id in (r.start, r.end))
