import csv
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import status
from urbanmob.clock import SimClock
from urbanmob.restsim import (
    ClientBudget,
    FixedWindowLimiter,
    NetworkSnapshot,
    NotFound,
    RateLimited,
    RateLimitPolicy,
    RestClient,
    RestService,
    ScheduleConfig,
    ScheduleLog,
    TimelineSource,
    Unauthorized,
    fetch_timeline_incremental,
    harvest_network,
    network_history,
    schedule,
    serve_rest,
)
from urbanmob.restsim.service import BadRequest
from urbanmob.selection import SelectedUsers
from urbanmob.store import Cluster

T0 = 1_800_000.0  # a window boundary (2000 * 900)


def _source(n_users=5, per_user=0, protected=(), friends=None):
    src = TimelineSource()
    for uid in range(1, n_users + 1):
        src.protected[uid] = uid in protected
        for k in range(per_user):
            src.add(status(uid * 100_000 + k + 1, uid=uid))
    for uid, ids in (friends or {}).items():
        src.set_friends(uid, ids)
    return src


def _rig(src=None, start=T0, **kw):
    clock = SimClock(start)
    svc = RestService(src if src is not None else _source(**kw), clock=clock)
    return clock, svc, RestClient(svc, "tok"), Cluster(clock=clock)


# -- limiter -----------------------------------------------------------------------


def test_policy_defaults():
    p = RateLimitPolicy()
    assert p.window_s == 900 and p.quota("user_timeline") == 180
    assert p.quota("friends_ids") == p.quota("followers_ids") == 15
    assert p.window_start(T0 + 899.9) == T0 and p.window_end(T0) == T0 + 900
    assert RateLimitPolicy.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        RateLimitPolicy(window_s=0)


def test_limiter_resets_exactly_at_boundary():
    lim = FixedWindowLimiter(RateLimitPolicy())
    for _ in range(15):
        assert lim.acquire("a", "friends_ids", T0 + 10)[0]
    assert lim.acquire("a", "friends_ids", T0 + 899.999) == (False, T0 + 900)
    assert lim.acquire("b", "friends_ids", T0 + 899.999)[0]
    assert lim.acquire("a", "followers_ids", T0 + 899.999)[0]
    assert lim.acquire("a", "friends_ids", T0 + 900)[0]
    assert lim.used("a", "friends_ids", T0 + 900) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from(
    ["user_timeline", "friends_ids", "followers_ids"]), st.floats(0, 5000)), max_size=400))
def test_limiter_never_over_grants(reqs):
    lim = FixedWindowLimiter(RateLimitPolicy())
    granted = {}
    for cred, method, dt in sorted(reqs, key=lambda r: r[2]):
        ok, reset = lim.acquire(f"c{cred}", method, T0 + dt)
        assert reset == RateLimitPolicy().window_end(T0 + dt)
        if ok:
            key = (cred, method, RateLimitPolicy().window_start(T0 + dt))
            granted[key] = granted.get(key, 0) + 1
    for (_, m, _), n in granted.items():
        assert n <= RateLimitPolicy().quota(m)


# -- service -------------------------------------------------------------------------


def test_timeline_newest_first_and_since():
    clock, svc, client, _ = _rig(n_users=1, per_user=500)
    page = client.user_timeline(1, 200)
    ids = [d["id"] for d in page]
    assert ids == list(range(100_500, 100_300, -1))
    assert client.user_timeline(1, 200, since_id=100_500) == []
    assert [d["id"] for d in client.user_timeline(1, 5, since_id=100_497)] == [100_500, 100_499,
                                                                                100_498]


def test_181st_call_rate_limited():
    clock, svc, client, _ = _rig(n_users=1, per_user=1, start=T0 + 100)
    for _ in range(180):
        client.user_timeline(1)
    with pytest.raises(RateLimited) as e:
        client.user_timeline(1)
    assert e.value.reset_at == T0 + 900
    clock.set(T0 + 900)
    client.user_timeline(1)


def test_16th_friends_ids_rate_limited():
    clock, svc, client, _ = _rig(n_users=2)
    for _ in range(15):
        client.friends_ids(1)
    with pytest.raises(RateLimited):
        client.friends_ids(1)
    client.followers_ids(1)


def test_errors():
    clock, svc, client, _ = _rig(n_users=2, protected=(2,))
    with pytest.raises(Unauthorized):
        client.user_timeline(2)
    with pytest.raises(NotFound):
        client.user_timeline(99)
    with pytest.raises(BadRequest):
        client.user_timeline(1, count=201)
    with pytest.raises(NotFound):
        client.call("statuses_show", user_id=1)


def test_followers_are_inverse_of_friends():
    src = _source(n_users=4, friends={1: [2, 3], 4: [1]})
    assert src.followers(1) == [4] and src.followers(2) == [1] and src.followers(4) == []


def test_source_from_world(world, corpus_docs):
    src = TimelineSource.from_docs(corpus_docs, world)
    assert set(src.protected) == {u.user_id for u in world.users}
    u = corpus_docs[0]["user"]["id"]
    page = src.timeline(u, 200)
    assert page and all(d["user"]["id"] == u for d in page)
    ids = [d["id"] for d in page]
    assert ids == sorted(ids, reverse=True)


# -- harvesting ------------------------------------------------------------------------


def _grow(src, uid, n, start):
    for k in range(n):
        src.add(status(start + k, uid=uid))


def test_fetch_thirty_new():
    src = _source(n_users=1)
    clock, svc, client, cluster = _rig(src)
    _grow(src, 1, 30, 1000)
    rep = fetch_timeline_incremental(client, 1, cluster)
    assert (rep.fetched, rep.inserted, rep.gap_possible) == (30, 30, False)


def test_fetch_250_then_idempotent():
    src = _source(n_users=1)
    clock, svc, client, cluster = _rig(src)
    _grow(src, 1, 250, 1000)
    rep = fetch_timeline_incremental(client, 1, cluster)
    assert rep.fetched == 200 and rep.inserted == 200 and rep.gap_possible
    assert cluster.max_tweet_id_for_user("timeline", 1) == 1249
    again = fetch_timeline_incremental(client, 1, cluster)
    assert again.since_id == 1249 and again.fetched == 0 and again.inserted == 0
    _grow(src, 1, 3, 5000)
    third = fetch_timeline_incremental(client, 1, cluster)
    assert third.inserted == 3 and not third.gap_possible


def test_fetch_protected_removes_user():
    src = _source(n_users=3, per_user=2, protected=(2,))
    clock, svc, client, cluster = _rig(src)
    sel = SelectedUsers([3, 2, 1])
    rep = fetch_timeline_incremental(client, 2, cluster, on_protected=sel.mark_protected)
    assert rep.protected and 2 not in sel.ranked and 2 in sel.protected
    assert cluster.count("timeline") == 0


def test_network_snapshot():
    src = _source(n_users=4, friends={1: [2, 3], 4: [1]})
    clock, svc, client, cluster = _rig(src)
    snap = harvest_network(client, 1, cluster)
    assert snap.friends == (2, 3) and snap.followers == (4,)
    assert network_history(cluster, 1) == [snap]


def test_snapshots_accumulate_in_order():
    src = _source(n_users=4, friends={1: [2]})
    clock, svc, client, cluster = _rig(src)
    s1 = harvest_network(client, 1, cluster)
    src.set_friends(1, [2, 3])
    s2 = harvest_network(client, 1, cluster)  # same instant: bumped by 1 ms
    clock.advance(60)
    s3 = harvest_network(client, 1, cluster)
    hist = network_history(cluster, 1)
    assert hist == [s1, s2, s3]
    assert s1.captured_at < s2.captured_at < s3.captured_at
    assert s2.friends == (2, 3)


def test_snapshot_ids_do_not_collide_across_users():
    src = _source(n_users=3)
    uids = [1, 1 + 2**20]
    src.protected[uids[1]] = False
    clock, svc, client, cluster = _rig(src)
    a = harvest_network(client, uids[0], cluster)
    b = harvest_network(client, uids[1], cluster)
    assert a.snapshot_id != b.snapshot_id
    assert network_history(cluster, uids[1]) == [b]


def test_snapshot_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        NetworkSnapshot(1, (2, 2), (), 0)


def test_protected_network_stores_nothing():
    clock, svc, client, cluster = _rig(n_users=2, protected=(2,))
    with pytest.raises(Unauthorized):
        harvest_network(client, 2, cluster)
    assert cluster.count("network") == 0


# -- scheduling -----------------------------------------------------------------------------


def test_budget_guard():
    b = ClientBudget(RateLimitPolicy(), guard_s=1.0)
    assert not b.available("user_timeline", T0 + 0.5)
    assert b.available("user_timeline", T0 + 1.0)
    assert not b.available("user_timeline", T0 + 899.0)
    assert b.next_opening(T0 + 0.5) == T0 + 1.0
    assert b.next_opening(T0 + 500) == T0 + 901.0
    with pytest.raises(ValueError):
        ClientBudget(RateLimitPolicy(), guard_s=500)


def test_schedule_empty_selection():
    clock, svc, client, cluster = _rig()
    assert len(schedule([], client, cluster, 3600)) == 0


def test_schedule_360_users_one_window():
    n = 360
    src = _source(n_users=n, per_user=1)
    clock, svc, client, cluster = _rig(src)
    ranked = list(range(n, 0, -1))
    log = schedule(ranked, client, cluster, 900, ScheduleConfig(network=False))
    tl = [e for e in log.entries if e.method == "user_timeline"]
    assert len(tl) == 180
    assert [e.user_id for e in tl] == ranked[:180]
    assert log.count(outcome="RateLimited") == 0


def test_schedule_ten_hours_compliant(tmp_path):
    src = _source(n_users=50, per_user=3, protected=(7,), friends={1: [2]})
    clock, svc, client, cluster = _rig(src, start=T0 + 123.4)
    sel = SelectedUsers(list(range(1, 51)))
    log = schedule(sel, client, cluster, 10 * 3600)
    assert log.count(outcome="RateLimited") == 0
    assert log.count("user_timeline", "ok") > 0 and log.count("friends_ids", "ok") > 0
    assert 7 not in sel.ranked
    for m in ("user_timeline", "friends_ids", "followers_ids"):
        per = {}
        for e in log.entries:
            if e.method == m:
                w = RateLimitPolicy().window_start(e.timestamp)
                per[w] = per.get(w, 0) + 1
        assert max(per.values()) == RateLimitPolicy().quota(m)
    log.to_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["timestamp", "method", "user_id", "outcome"] and len(rows) == len(log) + 1


class JitterClock:
    """Client-side clock that is off from the server's by up to ``max_s``."""

    def __init__(self, base, max_s, seed):
        self.base = base
        self.max_s = max_s
        self.rng = random.Random(seed)

    def now(self):
        return self.base.now() + self.rng.uniform(-self.max_s, self.max_s)

    def sleep(self, s):
        self.base.sleep(s)


@pytest.mark.parametrize("seed", range(5))
def test_schedule_tolerates_clock_jitter(seed):
    src = _source(n_users=40, per_user=1)
    base = SimClock(T0 - 0.3)
    svc = RestService(src, clock=base)
    client = RestClient(svc, "tok", clock=JitterClock(base, 0.95, seed))
    log = schedule(list(range(1, 41)), client, Cluster(clock=base), 5 * 3600)
    assert log.count(outcome="RateLimited") == 0
    assert 20 * 180 <= log.count("user_timeline", "ok") <= 21 * 180


def test_schedule_max_passes():
    clock, svc, client, cluster = _rig(n_users=10, per_user=1)
    log = schedule(list(range(1, 11)), client, cluster, 10**6,
                   ScheduleConfig(network=False, max_passes=2))
    assert log.count("user_timeline") == 20


def test_schedule_log_counts():
    log = ScheduleLog()
    log.record(1.0, "user_timeline", 1, "ok")
    log.record(2.0, "friends_ids", 1, "RateLimited")
    assert log.count() == 2 and log.count(outcome="ok") == 1 and log.count("friends_ids") == 1


# -- TCP ---------------------------------------------------------------------------------------


def test_tcp_round_trip():
    src = _source(n_users=2, per_user=5, protected=(2,), friends={1: [2]})
    clock = SimClock(T0 + 5)
    svc = RestService(src, RateLimitPolicy(quotas={"user_timeline": 2, "friends_ids": 1,
                                                   "followers_ids": 1}), clock=clock)
    server = serve_rest(svc)
    host, port = server.server_address
    client = RestClient(f"{host}:{port}", "tok", clock=clock)
    try:
        assert [d["id"] for d in client.user_timeline(1, 2)] == [100_005, 100_004]
        with pytest.raises(Unauthorized):
            client.user_timeline(2)
        with pytest.raises(RateLimited) as e:
            client.user_timeline(1)
        assert e.value.reset_at == T0 + 900
        assert client.friends_ids(1) == [2]
    finally:
        client.close()
        server.shutdown()
        server.server_close()
