"""Key-value, document, column-family and graph layers over one versioned store."""

from nosqlkit.datamodels.columnar import ColumnStore, KeyspaceSchema, TableSchema
from nosqlkit.datamodels.document import DocumentStore
from nosqlkit.datamodels.graph import GraphNode, GraphStore, Relation, parse_predicate
from nosqlkit.datamodels.kv import KeyValueStore
from nosqlkit.datamodels.store import ClusterStore, LocalStore, ModelStore

__all__ = [
    "ClusterStore", "ColumnStore", "DocumentStore", "GraphNode", "GraphStore",
    "KeyValueStore", "KeyspaceSchema", "LocalStore", "ModelStore", "Relation",
    "TableSchema", "parse_predicate",
]
