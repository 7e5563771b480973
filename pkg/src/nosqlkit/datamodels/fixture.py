"""Loader for the automobile dataset used by the worked queries.

The fixture is line-oriented text::

    model<TAB>collection<TAB>field=value<TAB>field:int=value ...

``*`` rows are records (8 cars in ``autovetture``, 4 makers in
``produttori``) loaded into every layer; ``graph`` rows are relations.
Prices are whole euros; checks against listings in thousands divide by 1000
rather than keeping a second copy of the data.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from nosqlkit.datamodels.columnar import ColumnStore
from nosqlkit.datamodels.document import DocumentStore
from nosqlkit.datamodels.graph import GraphStore

KEYSPACE = "automobili"
CAR_COLUMNS = {
    "id": "int", "marca": "text", "modello": "text", "tipologia": "text",
    "alimentazione": "text", "cilindrata": "text", "prezzo": "int",
}
MAKER_COLUMNS = {"id": "int", "marca": "text", "citta": "text", "nazione": "text", "email": "text"}


@dataclass(frozen=True)
class FixtureRecord:
    model: str
    collection: str
    fields: dict[str, Any]


def parse_fixture(text: str) -> list[FixtureRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        model, collection, *pairs = line.split("\t")
        fields: dict[str, Any] = {}
        for pair in pairs:
            name, sep, value = pair.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected field=value, got {pair!r}")
            name, _, typ = name.partition(":")
            fields[name] = int(value) if typ == "int" else value
        out.append(FixtureRecord(model, collection, fields))
    return out


def fixture_text(path: str | Path | None = None) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return resources.files("nosqlkit.datamodels").joinpath("data/automobili.tsv").read_text(encoding="utf-8")


def load_fixture(path: str | Path | None = None) -> list[FixtureRecord]:
    return parse_fixture(fixture_text(path))


def records(collection: str, path: str | Path | None = None) -> list[dict[str, Any]]:
    return [dict(r.fields) for r in load_fixture(path) if r.model == "*" and r.collection == collection]


def load_documents(docs: DocumentStore, path: str | Path | None = None) -> None:
    for rec in load_fixture(path):
        if rec.model == "*":
            fields = dict(rec.fields)
            docs.insert(rec.collection, {"_id": fields.pop("id"), **fields})


def load_columnar(cf: ColumnStore, path: str | Path | None = None) -> None:
    cf.create_keyspace(KEYSPACE, replication_factor=3)
    cf.create_table(KEYSPACE, "autovetture", CAR_COLUMNS, primary_key="id")
    cf.create_table(KEYSPACE, "produttori", MAKER_COLUMNS, primary_key="marca")
    cf.create_index(KEYSPACE, "autovetture", "tipologia")
    cf.create_index(KEYSPACE, "autovetture", "marca")
    for rec in load_fixture(path):
        if rec.model == "*":
            cf.upsert(KEYSPACE, rec.collection, rec.fields)


def load_graph(graph: GraphStore, path: str | Path | None = None) -> None:
    recs = load_fixture(path)
    for rec in recs:
        if rec.model == "*":
            fields = dict(rec.fields)
            graph.add_node(f"{rec.collection}/{fields.pop('id')}", fields, (rec.collection,))
    for rec in recs:
        if rec.model == "graph":
            graph.add_relation(rec.fields["start"], rec.fields["end"], rec.collection)
