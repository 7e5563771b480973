from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nosqlkit.cluster import Cluster, ClusterConfig
from nosqlkit.datamodels import (
    ClusterStore,
    ColumnStore,
    DocumentStore,
    GraphStore,
    KeyValueStore,
    LocalStore,
    parse_predicate,
)
from nosqlkit.datamodels.fixture import (
    KEYSPACE,
    load_columnar,
    load_documents,
    load_fixture,
    load_graph,
    parse_fixture,
    records,
)
from nosqlkit.errors import (
    DanglingEndpoint,
    DuplicateId,
    DuplicateName,
    IndexRequired,
    SiblingConflict,
    StaleWrite,
    UnknownCollection,
    UnknownKeyspace,
    UnknownNode,
    UnknownTable,
)

CARS = records("autovetture")


@pytest.fixture
def docs():
    d = DocumentStore(LocalStore())
    load_documents(d)
    return d


@pytest.fixture
def cf():
    c = ColumnStore(LocalStore())
    load_columnar(c)
    return c


@pytest.fixture
def graph():
    g = GraphStore(LocalStore())
    load_graph(g)
    return g


# fixture

def test_fixture_shape():
    recs = load_fixture()
    assert len(CARS) == 8 and len(records("produttori")) == 4
    assert sum(1 for r in recs if r.model == "graph") == 8
    assert all(isinstance(c["prezzo"], int) for c in CARS)


def test_parse_fixture_types_and_errors():
    [rec] = parse_fixture("*\tt\tid:int=7\tname=x=y\n# comment\n")
    assert rec.fields == {"id": 7, "name": "x=y"}
    with pytest.raises(ValueError):
        parse_fixture("*\tt\tnovalue")


# key-value

def test_kv_round_trip_and_conflicts():
    kv = KeyValueStore(LocalStore())
    clock = kv.put("b", "k", "v1")
    assert kv.get("b", "k").values[0].value == b"v1"
    with pytest.raises(StaleWrite):
        kv.put("b", "k", "v2")
    kv.put("b", "k", "v2", clock)
    assert kv.keys("b") == [b"k"]
    kv.delete("b", "k", kv.get("b", "k").context)
    assert kv.get("b", "k").absent


# documents

def test_document_find_and_projection(docs):
    punto = docs.find("autovetture", {"modello": "Punto"}, projection=["alimentazione"])
    assert punto == [{"_id": 1, "alimentazione": "Benzina"}, {"_id": 2, "alimentazione": "GPL"}]
    assert docs.count("autovetture") == 8
    assert docs.collections() == ["autovetture", "produttori"]


def test_document_group_in_first_seen_order(docs):
    assert docs.group("autovetture", "alimentazione") == [("Benzina", 3), ("GPL", 1), ("Diesel", 4)]


def test_document_ids_and_errors(docs):
    with pytest.raises(DuplicateId):
        docs.insert("autovetture", {"_id": 1})
    new = docs.insert("autovetture", {"marca": "Lancia"})
    assert docs.get("autovetture", new)["marca"] == "Lancia"
    with pytest.raises(UnknownCollection):
        docs.find("missing")


def test_document_remove_and_drop(docs):
    assert docs.remove("autovetture", {"marca": "Bmw"}) == 2
    assert docs.count("autovetture") == 6
    docs.insert("autovetture", {"_id": 5, "marca": "Bmw"})  # id reusable after delete
    docs.drop("produttori")
    assert docs.collections() == ["autovetture"]
    docs.insert("produttori", {"_id": 1})
    assert docs.count("produttori") == 1


@settings(max_examples=30)
@given(st.lists(st.fixed_dictionaries({"a": st.integers(0, 3), "b": st.sampled_from("xyz")}),
                max_size=15),
       st.integers(0, 3))
def test_document_find_matches_brute_force(rows, a):
    d = DocumentStore(LocalStore())
    for i, row in enumerate(rows):
        d.insert("c", {"_id": i, **row})
    if rows:
        assert [x["_id"] for x in d.find("c", {"a": a})] == [i for i, r in enumerate(rows) if r["a"] == a]
        expected: dict = {}
        for r in rows:
            expected[r["b"]] = expected.get(r["b"], 0) + 1
        assert dict(d.group("c", "b")) == expected


# column family

def test_cf_index_lookup_and_listing(cf):
    assert [r["id"] for r in cf.select(KEYSPACE, "autovetture", {"tipologia": "Utilitaria"})] == [1, 2, 3, 7]
    assert len(cf.scan(KEYSPACE, "autovetture")) == 8
    assert cf.get_row(KEYSPACE, "produttori", "Fiat")["citta"] == "Torino"


def test_cf_filtering_rules(cf):
    cf2 = ColumnStore(LocalStore())
    cf2.create_keyspace("k")
    cf2.create_table("k", "t", {"id": "int", "x": "text", "y": "text"}, "id")
    cf2.upsert("k", "t", {"id": 1, "x": "a", "y": "b"})
    with pytest.raises(IndexRequired):
        cf2.select("k", "t", {"x": "a"})
    assert cf2.count("k", "t", {"x": "a"}, allow_filtering=True) == 1
    with pytest.raises(IndexRequired):
        cf.select(KEYSPACE, "autovetture", {"tipologia": "Utilitaria", "marca": "Fiat"})
    assert cf.count(KEYSPACE, "autovetture", {"id": 1}) == 1


def test_cf_sparse_rows_and_index_maintenance(cf):
    cf.upsert(KEYSPACE, "autovetture", {"id": 1, "tipologia": "Berlina"})
    cf.delete_column(KEYSPACE, "autovetture", 1, "cilindrata")
    row = cf.get_row(KEYSPACE, "autovetture", 1)
    assert "cilindrata" not in row and row["marca"] == "Fiat"
    assert [r["id"] for r in cf.select(KEYSPACE, "autovetture", {"tipologia": "Utilitaria"})] == [2, 3, 7]
    cf.delete_row(KEYSPACE, "autovetture", 2)
    assert [r["id"] for r in cf.select(KEYSPACE, "autovetture", {"tipologia": "Utilitaria"})] == [3, 7]
    raw = dict(cf.raw_rows(KEYSPACE, "autovetture"))
    assert b"cilindrata" not in raw[b"1"]


def test_cf_schema_errors(cf):
    with pytest.raises(UnknownKeyspace):
        cf.keyspace("nope")
    with pytest.raises(UnknownTable):
        cf.select(KEYSPACE, "nope")
    with pytest.raises(DuplicateName):
        cf.create_index(KEYSPACE, "autovetture", "marca")
    with pytest.raises((TypeError, ValueError)):
        cf.upsert(KEYSPACE, "autovetture", {"id": "one"})
    with pytest.raises(ValueError):
        cf.upsert(KEYSPACE, "autovetture", {"marca": "Fiat"})


# graph

def test_graph_filter_and_match(graph):
    cheap = graph.filter("prezzo < 20000")
    assert sorted(n.id for n in cheap) == sorted(f"autovetture/{i}" for i in (1, 2, 3, 7, 8))
    pairs = graph.match("produttori/1")
    assert sorted(p[1]["modello"] for p in pairs) == ["Punto", "Punto"]
    assert all(p[0]["marca"] == "Fiat" for p in pairs)
    assert graph.degree("produttori/3") == 2


def test_graph_predicates():
    p = parse_predicate("has(prezzo) and (marca = 'Fiat') and prezzo >= 10")
    assert p({"prezzo": 10, "marca": "Fiat"})
    assert not p({"marca": "Fiat"})
    assert not parse_predicate("x < 3")({"x": "text"})
    with pytest.raises(ValueError):
        parse_predicate("what is this")


def test_graph_integrity(graph):
    with pytest.raises(DanglingEndpoint):
        graph.add_relation("produttori/1", "autovetture/99")
    with pytest.raises(DuplicateId):
        graph.add_node("produttori/1")
    with pytest.raises(UnknownNode):
        graph.node("rel:1")
    rid = graph.add_relation("autovetture/1", "autovetture/2", "simile")
    assert rid not in {r.id for r in graph.relations()[:-1]} and len(graph.relations()) == 9


# layers over a replicated cluster

def test_layers_run_on_a_cluster():
    c = Cluster(ClusterConfig(seed=3))
    c.advance(10)
    store = ClusterStore(c, via="n2")
    docs, cf, g = DocumentStore(store, replication=3), ColumnStore(store), GraphStore(store)
    load_documents(docs)
    load_columnar(cf)
    load_graph(g)
    assert docs.count("autovetture", {"modello": "Punto"}) == 2
    assert len(cf.select(KEYSPACE, "autovetture", {"tipologia": "Utilitaria"})) == 4
    assert len(g.match("produttori/1")) == 2
    c.crash("n3")
    assert len(ClusterStore(c, via="n1").keys("doc:autovetture")) == 8


def test_concurrent_writes_surface_as_conflicts():
    c = Cluster(ClusterConfig(seed=8))
    c.configure_bucket("doc:c", n=3, r=1, w=1)
    c.advance(10)
    DocumentStore(ClusterStore(c, via="n1")).insert("c", {"_id": 1, "v": "base"})
    c.partition("n1")
    c.advance(60)
    for via, v in (("n1", "a"), ("n2", "b")):
        s = ClusterStore(c, via=via)
        cur = s.get("doc:c", b"1")
        s.put("doc:c", b"1", f'{{"_id": 1, "v": "{v}"}}'.encode(), cur.context)
    c.heal()
    c.converge()
    with pytest.raises(SiblingConflict):
        DocumentStore(ClusterStore(c)).get("c", 1)


def test_cf_client_picks_up_tables_created_elsewhere():
    store = LocalStore()
    a, b = ColumnStore(store), ColumnStore(store)
    a.create_keyspace("k")
    a.keyspace("k")
    b.create_table("k", "t", {"id": "int"}, "id")
    a.upsert("k", "t", {"id": 1})
    assert b.get_row("k", "t", 1) == {"id": 1}
