from __future__ import annotations

import csv
import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nosqlkit.bench import (
    CSV_HEADER,
    LAYERS,
    TargetPolicy,
    WorkloadSpec,
    csv_text,
    emit_csv,
    run_bench,
    synthetic_records,
    writer_split,
    writer_targets,
)
from nosqlkit.errors import IoFailure


@given(st.integers(1, 100), st.integers(1, 10))
def test_writer_split_is_even(writers, targets):
    split = writer_split(writers, targets)
    assert sum(split) == writers and max(split) - min(split) <= 1
    assert split == sorted(split, reverse=True)


def test_writer_targets():
    nodes = ["n1", "n2", "n3"]
    assert writer_targets(4, nodes, TargetPolicy.SINGLE) == ["n1"] * 4
    assert writer_targets(4, nodes, TargetPolicy.BALANCED) == ["n1", "n1", "n2", "n3"]


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(layer="sql")
    with pytest.raises(ValueError):
        WorkloadSpec(writers=0)
    assert WorkloadSpec(policy="balanced").policy is TargetPolicy.BALANCED


def test_synthetic_records_are_deterministic():
    a = synthetic_records(5, 1, 8)
    assert a == synthetic_records(5, 1, 8) and a != synthetic_records(5, 2, 8)
    assert [r["id"] for r in a] == [1, 2, 3, 4, 5] and all(len(r["note"]) == 8 for r in a)


@pytest.mark.parametrize("layer", LAYERS)
def test_every_layer_reads_back_everything(layer):
    r = run_bench(WorkloadSpec(layer, records=60, writers=4, policy="balanced", seed=1))
    assert r.errors == 0 and r.ops == 60
    assert r.read_back == len(r.acknowledged) == 60
    assert r.per_writer == (15, 15, 15, 15)


def test_single_target_builds_more_lag_than_balanced():
    single = run_bench(WorkloadSpec("kv", 200, 6, "single"), read_back=False)
    balanced = run_bench(WorkloadSpec("kv", 200, 6, "balanced"), read_back=False)
    assert balanced.lag <= single.lag
    assert set(single.targets) == {"n1"} and len(set(balanced.targets)) == 3


def test_csv_output(tmp_path):
    r = run_bench(WorkloadSpec("kv", 10, 2), read_back=False)
    rows = list(csv.reader(io.StringIO(csv_text([r]))))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[1][:4] == ["kv", "10", "2", "single"]
    out = tmp_path / "b.csv"
    emit_csv([r], out)
    assert out.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    with pytest.raises(IoFailure):
        emit_csv([r], tmp_path / "missing" / "b.csv")
