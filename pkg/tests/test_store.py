import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import deletion, status
from oracles import brute_route
from urbanmob.clock import SimClock
from urbanmob.store import (
    Cluster,
    ClusterConfig,
    NoEligibleMember,
    NoPrimaryAvailable,
    ReadPreference,
    UnknownCollection,
    restore,
    snapshot,
)
from urbanmob.store.cluster import KEY_MAX, KEY_MIN, Role

P, S = ReadPreference.PRIMARY, ReadPreference.SECONDARY
HOUR_MS = 3600 * 1000


def _prefix_ok(c):
    for rs in c.sets:
        primary = rs.primary
        if primary is None:
            continue
        seqs = [e.seq for e in primary.log]
        for m in rs.members:
            if not m.down:
                assert [e.seq for e in m.log] == seqs[:len(m.log)]


def test_default_topology(cluster):
    assert len(cluster.sets) == 3
    assert sum(len(rs.members) for rs in cluster.sets) == 9
    for rs in cluster.sets:
        roles = [m.role for m in rs.members]
        assert roles.count(Role.PRIMARY) == 1
        hidden = [m for m in rs.members if m.hidden]
        assert len(hidden) == 1 and hidden[0].role is Role.SECONDARY
        assert hidden[0].delay_ms == 72 * HOUR_MS
    assert cluster.cluster_stats()["collections"]["stream"]["docs"] == 0


def test_two_members_rejected():
    with pytest.raises(ValueError):
        Cluster(ClusterConfig(members_per_set=2))


def test_zero_delay_has_no_hidden_member():
    c = Cluster(ClusterConfig(delayed_member_delay_ms=0))
    assert not any(m.hidden for rs in c.sets for m in rs.members)


def test_single_chunk_routes_to_shard_zero(cluster):
    rng = random.Random(1)
    for _ in range(1000):
        k = rng.randrange(KEY_MIN, KEY_MAX)
        assert cluster.route(k) == 0 == cluster.route(k)


def test_split_and_migrate_routing(cluster):
    assert cluster.split_chunk("stream", 500)
    moves = cluster.rebalance()
    assert len(moves) == 1
    lo, hi = cluster.route(499, "stream"), cluster.route(500, "stream")
    assert lo != hi
    assert all(cluster.route(k, "stream") == lo for k in (KEY_MIN, 0, 499))
    assert all(cluster.route(k, "stream") == hi for k in (500, 10**12, KEY_MAX - 1))
    cluster.check_chunks("stream")


def test_insert_and_duplicate(cluster):
    ack = cluster.insert("stream", status(42))
    assert ack.inserted and ack.doc_id == 42 and ack.shard_id == 0
    assert cluster.get_by_id("stream", 42, P)["id"] == 42
    again = cluster.insert("stream", status(42, text="other"))
    assert again.already_present
    assert cluster.get_by_id("stream", 42, P)["text"] == "t42"
    assert cluster.count("stream") == 1


def test_deletion_record_stored_alongside(cluster):
    cluster.insert("stream", deletion(42))
    cluster.insert("stream", status(42))
    assert cluster.count("stream") == 2
    assert cluster.get_by_id("stream", 42, P)["id"] == 42
    assert "delete" in cluster.get_by_id("stream", 42, P, deletion=True)


def test_unknown_collection_and_document(cluster):
    with pytest.raises(UnknownCollection):
        cluster.insert("nope", status(1))
    with pytest.raises(UnknownCollection):
        cluster.get_by_id("nope", 1)
    with pytest.raises(ValueError):
        cluster.insert("stream", {"limit": 1})


def test_user_reads(cluster):
    assert cluster.find_by_user("stream", 5) == []
    assert cluster.max_tweet_id_for_user("stream", 5) is None
    for tid in (10, 99, 7):
        cluster.insert("stream", status(tid, uid=5))
    cluster.insert("stream", deletion(500, uid=5))
    assert cluster.max_tweet_id_for_user("stream", 5) == 99
    assert [d.get("id") for d in cluster.find_by_user("stream", 5)][:3] == [7, 10, 99]


def test_secondary_lags_until_advance(cluster, clock):
    cluster.insert("stream", status(1, uid=3))
    assert cluster.get_by_id("stream", 1, P) is not None
    assert cluster.get_by_id("stream", 1, S) is None
    assert cluster.max_tweet_id_for_user("stream", 3, S) is None
    cluster.advance()
    assert cluster.get_by_id("stream", 1, S) is not None
    assert cluster.max_tweet_id_for_user("stream", 3, S) == 1


def test_delay_boundary(cluster, clock):
    cluster.insert("stream", status(1))
    t = cluster.sets[0].primary.log[-1].wall_time
    hidden = cluster.sets[0].members[2]
    rep = cluster.advance(t + 71 * HOUR_MS)
    assert rep[0][2] == 0 and hidden.applied_seq == 0
    assert rep[0][1] == 1
    cluster.advance(t + 72 * HOUR_MS - 1)
    assert hidden.applied_seq == 0
    cluster.advance(t + 72 * HOUR_MS)
    assert hidden.applied_seq == 1


def test_failover_caught_up(cluster):
    for i in range(1, 21):
        cluster.insert("stream", status(i))
    cluster.advance()
    res = cluster.fail_primary(0)
    assert res.new_primary == 1 and res.lost_count == 0
    assert all(cluster.get_by_id("stream", i, P) for i in range(1, 21))


@pytest.mark.parametrize("k", [1, 5, 17])
def test_failover_loses_k(cluster, k):
    for i in range(1, 31):
        cluster.insert("stream", status(i))
    cluster.advance()
    for i in range(31, 31 + k):
        cluster.insert("stream", status(i))
    res = cluster.fail_primary(0)
    assert res.lost_count == k
    assert res.new_primary == 1
    assert sorted(key[0] for _, key in res.lost) == list(range(31, 31 + k))
    assert all(cluster.get_by_id("stream", i) is None for i in range(31, 31 + k))
    assert cluster.count("stream") == 30
    _prefix_ok(cluster)


def test_hidden_never_promoted(cluster):
    cluster.insert("stream", status(1))
    cluster.advance(10**15)
    cluster.fail_primary(0)
    with pytest.raises(NoEligibleMember):
        cluster.fail_primary(0)
    hidden = cluster.sets[0].members[2]
    assert hidden.role is Role.SECONDARY and hidden.hidden
    with pytest.raises(NoPrimaryAvailable):
        cluster.insert("stream", status(2))


def test_election_tie_goes_to_lowest_id():
    c = Cluster(ClusterConfig(members_per_set=4), clock=SimClock(1000.0))
    c.insert("stream", status(1))
    c.advance()
    assert c.fail_primary(0).new_primary == 1


def test_recover_member_rolls_back():
    c = Cluster(clock=SimClock(1000.0))
    for i in range(1, 11):
        c.insert("stream", status(i))
    c.advance()
    for i in range(11, 14):
        c.insert("stream", status(i))
    c.fail_primary(0)
    assert c.recover_member(0, 0) == 3
    c.advance()
    old = c.sets[0].member(0)
    assert old.role is Role.SECONDARY and not old.down
    assert len(old.data["stream"].docs) == 10
    _prefix_ok(c)


def test_reinsert_lost_matches_reference():
    ref = Cluster(clock=SimClock(1000.0))
    c = Cluster(clock=SimClock(1000.0))
    docs = [status(i, uid=i % 7) for i in range(1, 41)]
    for d in docs:
        ref.insert("stream", d)
    for d in docs[:35]:
        c.insert("stream", d)
    c.advance()
    for d in docs[35:]:
        c.insert("stream", d)
    res = c.fail_primary(0)
    c.advance()
    by_id = {d["id"]: d for d in docs}
    for _, (tid, _) in res.lost:
        c.insert("stream", by_id[tid])
    c.advance()
    ref.advance()
    assert list(c.iter_documents("stream", P)) == list(ref.iter_documents("stream", P))
    assert list(c.iter_documents("stream", S)) == list(ref.iter_documents("stream", S))


def test_rebalance_single_chunk_noop(cluster):
    assert cluster.rebalance() == []


def test_rebalance_six_chunks(cluster):
    for i in range(1, 61):
        cluster.insert("stream", status(i * 100))
    for at in (1000, 2000, 3000, 4000, 5000):
        cluster.split_chunk("stream", at)
    assert len(cluster.chunks["stream"]) == 6
    cluster.rebalance()
    counts = [sum(c.shard_id == s for c in cluster.chunks["stream"]) for s in range(3)]
    assert counts == [2, 2, 2]
    cluster.check_chunks("stream")
    for i in range(1, 61):
        assert cluster.get_by_id("stream", i * 100)["id"] == i * 100
    stats = cluster.cluster_stats()["collections"]["stream"]
    assert stats["docs"] == 60
    assert sum(c.doc_count for c in cluster.chunks["stream"]) == 60
    _prefix_ok(cluster)


def test_route_matches_brute_force(cluster):
    rng = random.Random(2)
    for _ in range(40):
        cluster.split_chunk("stream", rng.randrange(KEY_MIN + 1, KEY_MAX))
    cluster.rebalance()
    cluster.check_chunks("stream")
    chunks = cluster.chunks["stream"]
    for _ in range(10_000):
        k = rng.randrange(KEY_MIN, KEY_MAX)
        assert cluster.route(k, "stream") == brute_route(chunks, k)


def test_auto_split_at_median():
    c = Cluster(ClusterConfig(chunk_split_threshold_docs=100), clock=SimClock(0.0))
    for i in range(1, 1001):
        c.insert("stream", status(i))
    chunks = c.chunks["stream"]
    assert len(chunks) > 1
    c.check_chunks("stream")
    assert all(ch.doc_count <= 100 for ch in chunks)
    assert sum(ch.doc_count for ch in chunks) == 1000
    c.rebalance()
    assert c.count("stream") == 1000


def test_unique_ids_under_duplicate_heavy_load(cluster):
    rng = random.Random(3)
    seen = set()
    for _ in range(3000):
        tid = rng.randrange(1, 400)
        ack = cluster.insert("stream", status(tid))
        assert ack.inserted == (tid not in seen)
        seen.add(tid)
    assert cluster.count("stream") == len(seen)
    stats = cluster.cluster_stats()
    assert stats["collections"]["stream"]["docs"] == len(seen)


ops = st.lists(st.one_of(
    st.tuples(st.just("insert"), st.integers(1, 300)),
    st.tuples(st.just("tick"), st.integers(0, 5000)),
    st.tuples(st.just("advance"), st.just(0)),
    st.tuples(st.just("split"), st.integers(1, 300)),
    st.tuples(st.just("rebalance"), st.just(0)),
), max_size=60)


@settings(max_examples=80, deadline=None)
@given(ops)
def test_secondaries_are_prefixes(script):
    clock = SimClock(1000.0)
    c = Cluster(ClusterConfig(delayed_member_delay_ms=3000), clock=clock)
    for op, arg in script:
        if op == "insert":
            c.insert("stream", status(arg))
        elif op == "tick":
            clock.advance(arg / 1000)
        elif op == "advance":
            c.advance()
        elif op == "split":
            c.split_chunk("stream", arg)
        else:
            c.rebalance()
        _prefix_ok(c)
        c.check_chunks("stream")
        for rs in c.sets:
            for m in rs.members:
                assert m.applied_seq <= rs.primary.applied_seq


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 200), max_size=40), st.booleans(), st.booleans())
def test_hidden_member_never_read(ids, advance, fail):
    c = Cluster(clock=SimClock(1000.0))
    for tid in ids:
        c.insert("stream", status(tid, uid=1, lat=41.39, lon=2.17))
    if advance:
        c.advance()
    if fail and ids:
        c.fail_primary(0)
    sentinel = 10**9
    for rs in c.sets:
        hidden = rs.members[2]
        hidden.data["stream"].put((sentinel, 0), status(sentinel, uid=1, lat=41.39, lon=2.17))
    for pref in (P, S):
        for rs in c.sets:
            r = rs.reader(pref)
            assert r is None or not r.hidden
        assert c.get_by_id("stream", sentinel, pref) is None
        assert all(d["id"] != sentinel for d in c.find_by_user("stream", 1, pref))
        assert all(d["id"] != sentinel for d in c.iter_documents("stream", pref))
        view = c.geo_view("stream", pref)
        assert all(i != sentinel for i, _ in view.candidates(view_center(), 1.0))


def view_center():
    from urbanmob.geodesy import GeoPoint
    return GeoPoint(41.39, 2.17)


def test_secondary_read_falls_back_to_primary(cluster):
    cluster.insert("stream", status(1))
    cluster.sets[0].members[1].down = True
    assert cluster.get_by_id("stream", 1, S) is not None


def test_stats_lag_matches_advance(cluster):
    for i in range(1, 6):
        cluster.insert("stream", status(i))
    rep = cluster.advance()
    stats = cluster.cluster_stats()["replica_sets"][0]
    for m in stats["members"]:
        assert m["applied_seq"] == rep[0][m["member_id"]]
        assert m["lag"] == 5 - m["applied_seq"]


def test_snapshot_round_trip_is_bit_exact(tmp_path, clock):
    c = Cluster(ClusterConfig(chunk_split_threshold_docs=50), clock=clock)
    rng = random.Random(5)
    for i in range(400):
        c.insert("stream", status(rng.randrange(1, 10**12), uid=rng.randrange(1, 30),
                                  lat=41.3 + rng.random() / 5, lon=2.1 + rng.random() / 5))
        if i % 50 == 0:
            clock.advance(1)
            c.advance()
    c.insert("stream", deletion(77))
    c.insert("timeline", status(5, uid=1))
    c.rebalance()
    c.fail_primary(1)
    a = snapshot(c, tmp_path / "a")
    r = restore(a, clock=clock)
    b = snapshot(r, tmp_path / "b")
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for pref in (P, S):
        assert list(r.iter_documents("stream", pref)) == list(c.iter_documents("stream", pref))
    assert r.cluster_stats() == c.cluster_stats()
    r.insert("stream", status(10**13))
    assert r.get_by_id("stream", 10**13) is not None


def test_concurrent_writers_and_readers(clock):
    c = Cluster(ClusterConfig(chunk_split_threshold_docs=200), clock=clock)
    errors = []
    stop = threading.Event()

    def writer(base):
        try:
            for i in range(1500):
                c.insert("stream", status(base + i, uid=base, lat=41.39, lon=2.17))
        except Exception as e:  # pragma: no cover - surfaced below
            errors.append(e)

    def reader():
        try:
            view = c.geo_view("stream", S)
            while not stop.is_set():
                for doc_id, _ in view.candidates(view_center(), 1.0):
                    doc = view.fetch(doc_id)
                    assert doc["id"] == doc_id and "user" in doc
                c.count("stream", P)
                c.advance()
                c.rebalance()
        except Exception as e:  # pragma: no cover
            errors.append(e)

    ws = [threading.Thread(target=writer, args=(b,)) for b in (10**6, 2 * 10**6)]
    rs = [threading.Thread(target=reader) for _ in range(2)]
    for t in ws + rs:
        t.start()
    for t in ws:
        t.join()
    stop.set()
    for t in rs:
        t.join()
    assert not errors, errors
    assert c.count("stream") == 3000
    c.check_chunks("stream")
    c.advance()
    _prefix_ok(c)
