"""Insertion and geo-query benchmarks with CSV/JSON reporting."""

from __future__ import annotations

import csv
import enum
import gc
import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from ..docmodel import parse_document
from ..geodesy import GeoPoint, Mesh
from ..geoquery import GeoNearParams, geo_near
from ..store import Cluster, ReadPreference
from .stores import DocumentTarget, DuplicatingStore, NormalizedStore

logger = logging.getLogger(__name__)


class InsertMode(enum.Enum):
    NORMALIZED = "normalized"
    NORMALIZED_DUPLICATING = "duplicating"
    DOCUMENT = "document"


@dataclass
class BatchTiming:
    batch_index: int
    db_docs_before: int
    elapsed_s: float


@dataclass
class InsertBenchResult:
    mode: InsertMode
    timings: list[BatchTiming]
    inserted: int
    docs_before: int
    docs_after: int

    @property
    def elapsed(self) -> list[float]:
        return [t.elapsed_s for t in self.timings]

    @property
    def last_over_first(self) -> float:
        e = self.elapsed
        return e[-1] / e[0] if e else float("nan")

    @property
    def spearman(self) -> float:
        """Rank correlation between batch index and batch time."""
        e = self.elapsed
        if len(e) < 2:
            return float("nan")
        return float(spearmanr(np.arange(len(e)), e)[0])

    def summary(self) -> dict:
        return {"mode": self.mode.value, "batches": len(self.timings),
                "inserted": self.inserted, "docs_before": self.docs_before,
                "docs_after": self.docs_after, "total_s": sum(self.elapsed),
                "last_over_first": self.last_over_first, "spearman": self.spearman}


def make_target(mode: InsertMode, cluster: Optional[Cluster] = None,
                collection: str = "stream"):
    if mode is InsertMode.NORMALIZED:
        return NormalizedStore()
    if mode is InsertMode.NORMALIZED_DUPLICATING:
        return DuplicatingStore()
    return DocumentTarget(cluster if cluster is not None else Cluster(), collection)


def _as_lines(corpus) -> list[bytes]:
    if isinstance(corpus, (str, Path)):
        with open(corpus, "rb") as f:
            return [ln.rstrip(b"\n") for ln in f if ln.strip()]
    return [ln if isinstance(ln, bytes) else ln.encode("utf-8") for ln in corpus]


def write_insert_timings(timings: Sequence[BatchTiming], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["batch_index", "db_docs_before", "elapsed_s"])
        for t in timings:
            w.writerow([t.batch_index, t.db_docs_before, repr(t.elapsed_s)])


def bench_insert(mode: InsertMode, corpus, batch_size: int = 10_000, n_batches: int = 20,
                 target=None, cluster: Optional[Cluster] = None, collection: str = "stream",
                 out_dir=None) -> InsertBenchResult:
    """Time ``n_batches`` batches of ``batch_size`` inserts.

    ``corpus`` is an NDJSON path or a sequence of NDJSON lines; each line is
    parsed inside the timed region, as a receiving process would. The cyclic
    garbage collector is paused while a batch is timed. After each Document
    batch the secondaries catch up, outside the timed region.
    """
    if batch_size < 1 or n_batches < 1:
        raise ValueError("batch_size and n_batches must be positive")
    lines = _as_lines(corpus)
    need = batch_size * n_batches
    if len(lines) < need:
        raise ValueError(f"corpus has {len(lines)} documents, {need} needed")
    if target is None:
        target = make_target(mode, cluster, collection)
    before = target.count()
    timings = []
    inserted = 0
    gc_was_enabled = gc.isenabled()
    try:
        for b in range(n_batches):
            batch = lines[b * batch_size:(b + 1) * batch_size]
            db_before = target.count()
            gc.collect()
            gc.disable()
            t0 = time.perf_counter()
            for line in batch:
                inserted += target.insert_document(parse_document(line))
            elapsed = time.perf_counter() - t0
            if gc_was_enabled:
                gc.enable()
            timings.append(BatchTiming(b, db_before, elapsed))
            if isinstance(target, DocumentTarget):
                target.cluster.advance()
            logger.info("%s batch %d: %.3f s", mode.value, b, elapsed)
    finally:
        if gc_was_enabled:
            gc.enable()
    res = InsertBenchResult(mode, timings, inserted, before, target.count())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_insert_timings(timings, out / "insert_timings.csv")
        (out / "insert_summary.json").write_text(json.dumps(res.summary(), indent=1) + "\n")
    return res


# -- geo query latency ---------------------------------------------------------


def percentile(samples: Iterable[float], p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest sample."""
    xs = sorted(samples)
    if not xs:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    rank = math.ceil(Fraction(p) * len(xs) / 100)
    return xs[max(rank, 1) - 1]


@dataclass
class LatencyHistogram:
    samples: list[float]
    bucket_edges: list[float]
    counts: list[int]
    median: Optional[float]
    p70: Optional[float]
    error: Optional[str] = None

    @classmethod
    def from_samples(cls, samples: Sequence[float], bins: Optional[int] = None
                     ) -> "LatencyHistogram":
        samples = list(samples)
        if not samples:
            return cls([], [], [], None, None, "no samples")
        if bins is None:
            bins = max(1, min(50, math.ceil(math.sqrt(len(samples)))))
        counts, edges = np.histogram(samples, bins=bins)
        return cls(samples, [float(e) for e in edges], [int(c) for c in counts],
                   percentile(samples, 50), percentile(samples, 70))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["edge_lo", "edge_hi", "count"])
            for lo, hi, c in zip(self.bucket_edges, self.bucket_edges[1:], self.counts):
                w.writerow([repr(lo), repr(hi), c])


@dataclass
class QuerySample:
    point_lat: float
    point_lon: float
    latency_s: float
    hits: int
    scanned: int


QUERY_FIELDS = ["point_lat", "point_lon", "latency_s", "hits", "scanned"]


def write_query_latencies(samples: Sequence[QuerySample], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(QUERY_FIELDS)
        for s in samples:
            w.writerow([repr(s.point_lat), repr(s.point_lon), repr(s.latency_s),
                        s.hits, s.scanned])


def timed_geo_near(view, point: GeoPoint, radius_miles: float, max_results: int) -> QuerySample:
    t0 = time.perf_counter()
    res = geo_near(view, GeoNearParams(point, radius_miles, max_results), size_of=view.size_of)
    dt = time.perf_counter() - t0
    return QuerySample(point.lat, point.lon, dt, len(res.hits), res.scanned)


@dataclass
class QueryBenchResult:
    samples: list[QuerySample]
    histogram: LatencyHistogram

    def summary(self) -> dict:
        h = self.histogram
        return {"queries": len(self.samples), "median_s": h.median, "p70_s": h.p70,
                "error": h.error,
                "total_hits": sum(s.hits for s in self.samples)}


def bench_query(mesh: Mesh | Sequence[GeoPoint], cluster: Cluster, collection: str = "stream",
                radius_miles: float = 1.0, max_results: int = 2**31,
                pref: ReadPreference = ReadPreference.SECONDARY, sync: bool = True,
                out_dir=None) -> QueryBenchResult:
    """One timed geo_near per mesh point; raw latencies kept for the histogram."""
    if sync:
        cluster.advance()
    view = cluster.geo_view(collection, pref)
    samples = [timed_geo_near(view, p, radius_miles, max_results) for p in mesh]
    hist = LatencyHistogram.from_samples([s.latency_s for s in samples])
    if hist.error:
        logger.error("bench_query: %s (empty mesh?)", hist.error)
    res = QueryBenchResult(samples, hist)
    if out_dir is not None:
        write_query_outputs(res, out_dir)
    return res


def write_query_outputs(res: QueryBenchResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_query_latencies(res.samples, out / "query_latencies.csv")
    res.histogram.write_csv(out / "histogram.csv")
    (out / "query_summary.json").write_text(json.dumps(res.summary(), indent=1) + "\n")


# -- insertion under query load -------------------------------------------------


@dataclass
class LoadBenchResult:
    insert: InsertBenchResult
    queries: list[QuerySample] = field(default_factory=list)

    def summary(self) -> dict:
        lat = [q.latency_s for q in self.queries]
        return {**self.insert.summary(), "queries": len(lat),
                "query_median_s": percentile(lat, 50) if lat else None,
                "query_p70_s": percentile(lat, 70) if lat else None}


def bench_insert_under_load(corpus, mesh: Mesh | Sequence[GeoPoint], n_query_workers: int,
                            batch_size: int = 10_000, n_batches: int = 20,
                            mode: InsertMode = InsertMode.DOCUMENT,
                            cluster: Optional[Cluster] = None, collection: str = "stream",
                            radius_miles: float = 1.0, replication_interval_s: float = 0.05,
                            out_dir=None) -> LoadBenchResult:
    """Insert on the primaries while workers loop geo_near over the mesh on
    secondaries. With no workers this is exactly :func:`bench_insert`."""
    if n_query_workers < 0:
        raise ValueError("n_query_workers must be >= 0")
    cluster = cluster if cluster is not None else Cluster()
    if n_query_workers == 0:
        res = LoadBenchResult(bench_insert(mode, corpus, batch_size, n_batches,
                                           cluster=cluster, collection=collection,
                                           out_dir=out_dir))
        if out_dir is not None:
            write_query_latencies([], Path(out_dir) / "query_latencies.csv")
        return res

    points = list(mesh)
    if not points:
        raise ValueError("query load needs a non-empty mesh")
    stop = threading.Event()
    lock = threading.Lock()
    queries: list[QuerySample] = []
    view = cluster.geo_view(collection, ReadPreference.SECONDARY)

    def worker(k: int):
        i = k
        while not stop.is_set():
            s = timed_geo_near(view, points[i % len(points)], radius_miles, 2**31)
            with lock:
                queries.append(s)
            i += n_query_workers

    threads = [threading.Thread(target=worker, args=(k,), daemon=True, name=f"geoq-{k}")
               for k in range(n_query_workers)]
    cluster.start_replication(replication_interval_s)
    for t in threads:
        t.start()
    try:
        ins = bench_insert(mode, corpus, batch_size, n_batches, cluster=cluster,
                           collection=collection)
    finally:
        stop.set()
        for t in threads:
            t.join()
        cluster.stop_replication()
    res = LoadBenchResult(ins, queries)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_insert_timings(ins.timings, out / "insert_timings.csv")
        write_query_latencies(queries, out / "query_latencies.csv")
        (out / "load_summary.json").write_text(json.dumps(res.summary(), indent=1) + "\n")
    return res
