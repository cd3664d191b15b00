"""Walk the whole acquisition pipeline in one process on a simulated clock.

Generates a synthetic city, samples the stream into the sharded store,
ranks mobile users in Barcelona, harvests their timelines within the rate
limits and reports geoNear latency over the 1-mile mesh.

    python demos/pipeline.py
"""

import json

from urbanmob.bench import bench_query
from urbanmob.clock import SimClock
from urbanmob.docmodel import canonical_bytes
from urbanmob.geodesy import generate_mesh, region_from_config
from urbanmob.restsim import RestClient, RestService, TimelineSource, schedule
from urbanmob.selection import SelectedUsers, SelectionConfig, build_stats
from urbanmob.store import Cluster
from urbanmob.streamsim import StreamConfig, StreamService, generate_world, ingest, iter_statuses
from urbanmob.streamsim.world import DEFAULT_METROS


def main():
    clock = SimClock(1_800_000.0)
    world = generate_world(7, n_users=1500)
    corpus = [canonical_bytes(d) for d in iter_statuses(world, 60_000)]

    cluster = Cluster(clock=clock)
    stream = StreamService(corpus, StreamConfig(sample_rate=0.5), seed=7, clock=clock)
    report = ingest(stream, "demo", cluster)
    migrations = cluster.rebalance()
    cluster.advance()
    print("ingest:", json.dumps(report.to_dict()))
    shards = cluster.cluster_stats()["collections"]["stream"]["shards"]
    print(f"balancer moved {len(migrations)} chunks; documents per shard:", {k: v["docs"] for k, v in shards.items()})

    region = region_from_config(DEFAULT_METROS["barcelona"])
    cfg = SelectionConfig(region)
    stats = build_stats(cluster, cfg)
    selected = SelectedUsers(protected=[]).rerank(stats, cfg)
    print(f"users seen in region: {len(stats)}, movers selected: {len(selected)}")
    for uid in list(selected)[:5]:
        s = stats[uid]
        print(f"  user {uid}: {s.geo_count} geo tweets at {s.distinct_locations} locations")

    source = TimelineSource.from_docs(iter_statuses(world, 60_000), world)
    client = RestClient(RestService(source, clock=clock), "demo", clock)
    log = schedule(selected, client, cluster, 2 * 900)
    print(f"harvest: {log.count(outcome='ok')} ok, {log.count(outcome='RateLimited')} rate limited,"
          f" {len(selected.protected)} protected users dropped")

    res = bench_query(generate_mesh(region, 1.0), cluster)
    print("geoNear over mesh:", json.dumps(res.summary()))


if __name__ == "__main__":
    main()
