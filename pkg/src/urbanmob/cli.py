"""Command-line entry point: ``urbanmob <subcommand> [flags]``.

All subcommands read one JSON config (``--config``) and accept
``--set key.path=value`` overrides (JSON values, flags win). Work products
live under ``paths.state_dir`` (world, corpus, cluster snapshot, progress
file) and ``paths.out_dir`` (CSV and JSON reports).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Optional

from .clock import SimClock, WallClock
from .config import ConfigError, PipelineConfig
from .docmodel import DocumentError, canonical_bytes
from .geodesy import GeoPoint, generate_mesh
from .geoquery import GeoNearParams, density_grid, geo_near
from .store import Cluster, ClusterError, ReadPreference, restore, snapshot

log = logging.getLogger("urbanmob")

STREAM_ENV = "URBANMOB_STREAM_ENDPOINT"
REST_ENV = "URBANMOB_REST_ENDPOINT"


class CliError(Exception):
    pass


class Pipeline:
    """Paths and persisted state shared by the subcommands."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.state = cfg.state_dir
        self.out = cfg.out_dir

    # files
    @property
    def world_path(self) -> Path:
        return self.state / "world.json"

    @property
    def corpus_path(self) -> Path:
        return self.state / "corpus.ndjson"

    @property
    def cluster_dir(self) -> Path:
        return self.state / "cluster"

    @property
    def selected_path(self) -> Path:
        return self.state / "selected.csv"

    @property
    def progress_path(self) -> Path:
        return self.state / "state.json"

    def progress(self) -> dict:
        if self.progress_path.exists():
            return json.loads(self.progress_path.read_text())
        return {"steps": {}, "protected": []}

    def record(self, step: str, info: dict, **extra) -> None:
        p = self.progress()
        p["steps"][step] = info
        p.update(extra)
        self.state.mkdir(parents=True, exist_ok=True)
        tmp = self.progress_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(p, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, self.progress_path)

    def world(self):
        from .streamsim.world import SyntheticWorld
        if not self.world_path.exists():
            raise CliError(f"{self.world_path} missing; run `gen` first")
        return SyntheticWorld.from_dict(json.loads(self.world_path.read_text()))

    def require_corpus(self) -> Path:
        if not self.corpus_path.exists():
            raise CliError(f"{self.corpus_path} missing; run `gen` first")
        return self.corpus_path

    def cluster(self) -> Cluster:
        if (self.cluster_dir / "metadata.json").exists():
            return restore(self.cluster_dir)
        return Cluster(self.cfg.cluster)

    def save_cluster(self, cluster: Cluster) -> None:
        snapshot(cluster, self.cluster_dir)

    def out_file(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _endpoint(flag: Optional[str], env: str) -> Optional[str]:
    return flag or os.environ.get(env) or None


def _wait_for_interrupt(duration: Optional[float]) -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait(duration)


# -- subcommands ---------------------------------------------------------------


def cmd_gen(p: Pipeline, args) -> int:
    from .streamsim.world import generate_corpus, generate_world
    cfg = p.cfg
    w = cfg.raw["world"]
    world = generate_world(cfg.seed, n_users=w["n_users"],
                           metro_regions={k: cfg.region(k) for k in cfg.raw["regions"]},
                           metro_fraction=w["metro_fraction"], bot_fraction=w["bot_fraction"],
                           protected_fraction=w["protected_fraction"],
                           geolocated_fraction=w["geolocated_fraction"],
                           mean_friends=w["mean_friends"])
    n = args.events if args.events is not None else cfg.raw["corpus"]["n_events"]
    p.state.mkdir(parents=True, exist_ok=True)
    tmp = p.world_path.with_suffix(".tmp")
    tmp.write_bytes(canonical_bytes(world.to_dict()) + b"\n")
    os.replace(tmp, p.world_path)
    generate_corpus(world, n, p.corpus_path)
    p.record("gen", {"users": len(world.users), "events": n})
    print(f"wrote {n} events for {len(world.users)} users to {p.corpus_path}")
    return 0


def _stream_service(p: Pipeline, clock=None):
    from .streamsim import StreamService
    return StreamService(p.require_corpus(), p.cfg.stream, seed=p.cfg.seed,
                         clock=clock or WallClock())


def cmd_serve_stream(p: Pipeline, args) -> int:
    from .streamsim import serve
    server = serve(_stream_service(p), args.host, args.port)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        _wait_for_interrupt(args.duration)
    finally:
        server.shutdown()
        server.server_close()
    return 0


def _rest_service(p: Pipeline, clock):
    from .restsim import RestService, TimelineSource
    src = TimelineSource.from_ndjson(p.require_corpus(), p.world())
    return RestService(src, p.cfg.rest, clock)


def cmd_serve_rest(p: Pipeline, args) -> int:
    from .restsim import serve_rest
    server = serve_rest(_rest_service(p, WallClock()), args.host, args.port)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        _wait_for_interrupt(args.duration)
    finally:
        server.shutdown()
        server.server_close()
    return 0


def cmd_ingest(p: Pipeline, args) -> int:
    from .streamsim import ingest
    endpoint = _endpoint(args.endpoint, STREAM_ENV)
    cluster = p.cluster()
    if endpoint is None:
        endpoint = _stream_service(p, SimClock(time.time()))
    report = ingest(endpoint, args.credential, cluster, "stream", max_frames=args.max_frames)
    migrations = cluster.rebalance()
    cluster.advance()
    p.save_cluster(cluster)
    out = {**report.to_dict(), "migrations": len(migrations)}
    _write_json(p.out_file("ingest_report.json"), out)
    p.record("ingest", out)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_select_users(p: Pipeline, args) -> int:
    from .selection import SelectedUsers, build_stats
    cfg = p.cfg
    if args.region:
        cfg.raw["selection"]["region"] = args.region
        cfg.validate()
    sel_cfg = cfg.selection
    cluster = p.cluster()
    cluster.advance()
    stats = build_stats(cluster.geo_view(sel_cfg.collection, ReadPreference.PRIMARY), sel_cfg)
    protected = p.progress().get("protected", [])
    sel = SelectedUsers(protected=protected).rerank(stats, sel_cfg)
    sel.to_csv(p.selected_path)
    shutil.copyfile(p.selected_path, p.out_file("selected_users.csv"))
    info = {"region": cfg.raw["selection"]["region"], "users_in_region": len(stats),
            "selected": len(sel)}
    p.record("select-users", info)
    print(json.dumps(info, sort_keys=True))
    return 0


def _harvest(p: Pipeline, args, timelines: bool, network: bool, step: str) -> int:
    from .restsim import RestClient, ScheduleConfig, schedule
    from .selection import SelectedUsers
    if not p.selected_path.exists():
        raise CliError(f"{p.selected_path} missing; run `select-users` first")
    prog = p.progress()
    sel = SelectedUsers.from_csv(p.selected_path, prog.get("protected", []))
    endpoint = _endpoint(args.endpoint, REST_ENV)
    if endpoint is None:
        clock = SimClock(time.time())
        endpoint = _rest_service(p, clock)
    else:
        clock = WallClock()
    sc = p.cfg.raw["schedule"]
    passes = args.passes if args.passes is not None else sc["passes"]
    duration = args.duration if args.duration is not None else sc["duration_s"]
    cluster = p.cluster()
    client = RestClient(endpoint, args.credential, clock)
    try:
        slog = schedule(sel, client, cluster, duration,
                        ScheduleConfig(timelines=timelines, network=network,
                                       guard_s=sc["guard_s"], max_passes=passes or None))
    finally:
        client.close()
    cluster.advance()
    p.save_cluster(cluster)
    name = "timelines" if timelines else "network"
    slog.to_csv(p.out_file(f"schedule_{name}.csv"))
    sel.to_csv(p.selected_path)
    info = {"requests": len(slog), "ok": slog.count(outcome="ok"),
            "rate_limited": slog.count(outcome="RateLimited"),
            "protected_removed": sorted(set(sel.protected) - set(prog.get("protected", []))),
            "selected": len(sel)}
    p.record(step, info, protected=sorted(sel.protected))
    print(json.dumps(info, sort_keys=True))
    return 0


def cmd_fetch_timelines(p: Pipeline, args) -> int:
    return _harvest(p, args, True, False, "fetch-timelines")


def cmd_fetch_network(p: Pipeline, args) -> int:
    return _harvest(p, args, False, True, "fetch-network")


def cmd_geonear(p: Pipeline, args) -> int:
    cluster = p.cluster()
    params = GeoNearParams(GeoPoint(args.lat, args.lon), args.radius, args.num)
    view = cluster.geo_view(args.collection, ReadPreference.PRIMARY)
    res = geo_near(view, params, size_of=view.size_of)
    path = p.out_file("geonear.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["doc_id", "distance_miles"])
        for doc_id, d in res.hits:
            w.writerow([doc_id, repr(d)])
    print(json.dumps({"hits": len(res.hits), "truncated": res.truncated,
                      "scanned": res.scanned, "bytes": res.bytes}, sort_keys=True))
    return 0


def cmd_density(p: Pipeline, args) -> int:
    region_name = args.region or p.cfg.raw["selection"]["region"]
    region = p.cfg.region(region_name)
    cluster = p.cluster()
    grid = density_grid(cluster.geo_view(args.collection, ReadPreference.PRIMARY).points(),
                        region, args.cell)
    grid.to_csv(p.out_file(f"density_{region_name}.csv"))
    print(json.dumps({"region": region_name, "cells": int(grid.counts.size),
                      "total": grid.total}, sort_keys=True))
    return 0


def _bench_lines(p: Pipeline, n: int) -> list[bytes]:
    from .streamsim.world import iter_statuses
    if p.corpus_path.exists():
        with open(p.corpus_path, "rb") as f:
            lines = [ln.rstrip(b"\n") for ln in f if ln.strip()]
        if len(lines) >= n:
            return lines[:n]
    return [canonical_bytes(d) for d in iter_statuses(p.world(), n)]


def cmd_bench_insert(p: Pipeline, args) -> int:
    from .bench import InsertMode, bench_insert
    b = p.cfg.raw["bench"]
    bs = args.batch_size or b["batch_size"]
    nb = args.n_batches or b["n_batches"]
    mode = InsertMode(args.mode)
    res = bench_insert(mode, _bench_lines(p, bs * nb), bs, nb,
                       cluster=Cluster(p.cfg.cluster), out_dir=p.out / f"bench_insert_{mode.value}")
    print(json.dumps(res.summary(), sort_keys=True))
    return 0


def _mesh(p: Pipeline, region_name: Optional[str]):
    name = region_name or p.cfg.raw["selection"]["region"]
    s = p.cfg.raw["selection"]
    return generate_mesh(p.cfg.region(name), s["spacing_miles"])


def cmd_bench_query(p: Pipeline, args) -> int:
    from .bench import bench_query
    cluster = p.cluster()
    mesh = _mesh(p, args.region)
    res = bench_query(mesh, cluster, args.collection, p.cfg.raw["selection"]["radius_miles"],
                      out_dir=p.out)
    summary = res.summary()
    print(json.dumps(summary, sort_keys=True))
    if res.histogram.error:
        print(f"error: {res.histogram.error}", file=sys.stderr)
        return 1
    return 0


def cmd_bench_load(p: Pipeline, args) -> int:
    from .bench import InsertMode, bench_insert_under_load
    b = p.cfg.raw["bench"]
    bs = args.batch_size or b["batch_size"]
    nb = args.n_batches or b["n_batches"]
    workers = args.workers if args.workers is not None else b["query_workers"]
    res = bench_insert_under_load(_bench_lines(p, bs * nb), _mesh(p, args.region), workers,
                                  bs, nb, InsertMode.DOCUMENT, Cluster(p.cfg.cluster),
                                  out_dir=p.out / "bench_load")
    print(json.dumps(res.summary(), sort_keys=True))
    return 0


def cmd_stats(p: Pipeline, args) -> int:
    print(json.dumps(p.cluster().cluster_stats(), sort_keys=True, indent=1))
    return 0


def cmd_snapshot(p: Pipeline, args) -> int:
    snapshot(p.cluster(), args.dir)
    print(f"snapshot written to {args.dir}")
    return 0


def cmd_restore(p: Pipeline, args) -> int:
    cluster = restore(args.dir)
    p.save_cluster(cluster)
    print(f"restored {args.dir} into {p.cluster_dir}")
    return 0


# -- argument parsing -------------------------------------------------------------


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(item, "expected key.path=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="urbanmob", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (dotted path, JSON value)")
    ap.add_argument("--state-dir", help="overrides paths.state_dir")
    ap.add_argument("--out-dir", help="overrides paths.out_dir")
    ap.add_argument("--seed", type=int, help="overrides seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen", cmd_gen, "generate the synthetic world and corpus")
    sp.add_argument("--events", type=int, help="overrides corpus.n_events")

    for name, fn, what in (("serve-stream", cmd_serve_stream, "sample stream"),
                           ("serve-rest", cmd_serve_rest, "REST API")):
        sp = add(name, fn, f"serve the mock {what} over TCP")
        sp.add_argument("--host", default="127.0.0.1")
        sp.add_argument("--port", type=int, default=0, help="0 picks a free port")
        sp.add_argument("--duration", type=float, help="stop after this many seconds")

    sp = add("ingest", cmd_ingest, "consume the stream into the cluster")
    sp.add_argument("--endpoint", help=f"host:port (or ${STREAM_ENV}); in-process if unset")
    sp.add_argument("--credential", default="ingest")
    sp.add_argument("--max-frames", type=int)

    sp = add("select-users", cmd_select_users, "rank mobile users in a region")
    sp.add_argument("--region")

    for name, fn in (("fetch-timelines", cmd_fetch_timelines),
                     ("fetch-network", cmd_fetch_network)):
        sp = add(name, fn, f"harvest {name.split('-')[1]} for the selected users")
        sp.add_argument("--endpoint", help=f"host:port (or ${REST_ENV}); in-process if unset")
        sp.add_argument("--credential", default="harvest")
        sp.add_argument("--passes", type=int, help="0 = unlimited until --duration")
        sp.add_argument("--duration", type=float, help="seconds on the harvest clock")

    sp = add("geonear", cmd_geonear, "one geoNear query")
    sp.add_argument("--lat", type=float, required=True)
    sp.add_argument("--lon", type=float, required=True)
    sp.add_argument("--radius", type=float, default=1.0, help="miles")
    sp.add_argument("--num", type=int, default=100)
    sp.add_argument("--collection", default="stream")

    sp = add("density", cmd_density, "geo-tweet density grid as CSV")
    sp.add_argument("--region")
    sp.add_argument("--cell", type=float, default=0.5, help="cell size in miles")
    sp.add_argument("--collection", default="stream")

    sp = add("bench-insert", cmd_bench_insert, "insertion throughput benchmark")
    sp.add_argument("--mode", choices=["normalized", "duplicating", "document"],
                    default="document")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--n-batches", type=int)

    sp = add("bench-query", cmd_bench_query, "geoNear latency over the mesh")
    sp.add_argument("--region")
    sp.add_argument("--collection", default="stream")

    sp = add("bench-load", cmd_bench_load, "insertion under concurrent geo queries")
    sp.add_argument("--region")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--n-batches", type=int)

    add("stats", cmd_stats, "cluster topology, lag and counts")
    for name, fn in (("snapshot", cmd_snapshot), ("restore", cmd_restore)):
        sp = add(name, fn, f"{name} the cluster state")
        sp.add_argument("--dir", required=True)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        overrides = _parse_set(args.set)
        if args.state_dir:
            overrides["paths.state_dir"] = args.state_dir
        if args.out_dir:
            overrides["paths.out_dir"] = args.out_dir
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = PipelineConfig.load(args.config, overrides)
        return args.fn(Pipeline(cfg), args)
    except (CliError, ConfigError, ClusterError, DocumentError, OSError, ValueError) as e:
        print(f"urbanmob {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
