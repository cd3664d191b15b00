from .runner import (
    BatchTiming,
    InsertBenchResult,
    InsertMode,
    LatencyHistogram,
    LoadBenchResult,
    QueryBenchResult,
    QuerySample,
    bench_insert,
    bench_insert_under_load,
    bench_query,
    make_target,
    percentile,
)
from .stores import DocumentTarget, DuplicatingStore, NormalizedStore, SortedIndex
