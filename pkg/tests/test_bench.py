import csv
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import nearest_rank
from urbanmob.bench import (
    DocumentTarget,
    DuplicatingStore,
    InsertMode,
    LatencyHistogram,
    NormalizedStore,
    bench_insert,
    bench_insert_under_load,
    bench_query,
    percentile,
)
from urbanmob.docmodel import parse_document
from urbanmob.geodesy import BoundingBox, GeoPoint, generate_mesh
from urbanmob.store import Cluster

BCN = BoundingBox(GeoPoint(41.32, 2.05), GeoPoint(41.47, 2.23))


def test_percentile_small():
    assert percentile([1, 2, 3, 4], 50) == 2
    assert percentile([5], 50) == 5
    assert percentile([5], 70) == 5
    assert percentile([3, 1, 2], 100) == 3
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1], 0)


def test_percentile_uniform_matches_oracle():
    rng = random.Random(3)
    xs = [rng.random() for _ in range(1000)]
    for p in (1, 50, 70, 99, 100):
        assert percentile(xs, p) == nearest_rank(xs, p)


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=200), st.integers(1, 100))
def test_percentile_property(xs, p):
    assert percentile(xs, p) == nearest_rank(xs, p)


def test_histogram(tmp_path):
    xs = [0.001 * i for i in range(1, 101)]
    h = LatencyHistogram.from_samples(xs)
    assert sum(h.counts) == 100 and len(h.bucket_edges) == len(h.counts) + 1
    assert h.median == xs[49] and h.p70 == xs[69]
    h.write_csv(tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert sum(int(r["count"]) for r in rows) == 100
    empty = LatencyHistogram.from_samples([])
    assert empty.error and empty.median is None


def test_stores_dedupe(corpus_lines):
    docs = [parse_document(ln) for ln in corpus_lines[:200]]
    for store in (NormalizedStore(), DuplicatingStore(), DocumentTarget(Cluster())):
        assert all(store.insert_document(d) for d in docs)
        assert not store.insert_document(docs[0])
        assert store.count() == 200


@pytest.mark.parametrize("mode", list(InsertMode))
def test_bench_insert_small(mode, corpus_lines, tmp_path):
    res = bench_insert(mode, corpus_lines, batch_size=200, n_batches=4, out_dir=tmp_path)
    assert res.inserted == 800 and res.docs_after == 800
    assert [t.db_docs_before for t in res.timings] == [0, 200, 400, 600]
    assert all(t.elapsed_s > 0 for t in res.timings)
    rows = list(csv.DictReader(open(tmp_path / "insert_timings.csv")))
    assert [int(r["batch_index"]) for r in rows] == [0, 1, 2, 3]
    assert json.loads((tmp_path / "insert_summary.json").read_text())["inserted"] == 800


def test_bench_insert_short_corpus(corpus_lines):
    with pytest.raises(ValueError):
        bench_insert(InsertMode.DOCUMENT, corpus_lines[:10], batch_size=10, n_batches=2)


def test_bench_query_outputs(corpus_lines, tmp_path):
    c = Cluster()
    bench_insert(InsertMode.DOCUMENT, corpus_lines, batch_size=1000, n_batches=3, cluster=c)
    mesh = generate_mesh(BCN, 2.0)
    res = bench_query(mesh, c, out_dir=tmp_path)
    assert len(res.samples) == len(mesh.points)
    rows = list(csv.DictReader(open(tmp_path / "query_latencies.csv")))
    lat = [float(r["latency_s"]) for r in rows]
    assert res.histogram.median == nearest_rank(lat, 50)
    assert res.histogram.p70 == nearest_rank(lat, 70)
    assert sum(res.histogram.counts) == len(lat)
    assert json.loads((tmp_path / "query_summary.json").read_text())["queries"] == len(lat)


def test_bench_query_empty_mesh(tmp_path):
    res = bench_query([], Cluster(), out_dir=tmp_path)
    assert res.histogram.error and res.summary()["median_s"] is None
    assert (tmp_path / "query_latencies.csv").read_text().count("\n") == 1


@pytest.mark.parametrize("workers", [0, 2])
def test_insert_under_load(workers, corpus_lines, tmp_path):
    mesh = generate_mesh(BCN, 2.0)
    res = bench_insert_under_load(corpus_lines, mesh, workers, batch_size=300, n_batches=3,
                                  out_dir=tmp_path)
    assert res.insert.inserted == 900
    assert (tmp_path / "insert_timings.csv").exists()
    assert (tmp_path / "query_latencies.csv").exists()
    if workers == 0:
        assert res.queries == []
    else:
        assert res.queries
        assert json.loads((tmp_path / "load_summary.json").read_text())["queries"] == len(res.queries)
