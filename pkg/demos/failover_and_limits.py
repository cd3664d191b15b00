"""Show what the store and the REST mock do when things go wrong.

1. A primary fails while its secondaries lag: the unreplicated writes are
   reported lost and the 72 h hidden member stays out of the election.
2. A client ignoring rate limits is refused past its quota, while the
   budgeted scheduler never is.

    python demos/failover_and_limits.py
"""

from urbanmob.clock import SimClock
from urbanmob.restsim import RateLimited, RestClient, RestService, TimelineSource, schedule
from urbanmob.selection import SelectedUsers
from urbanmob.store import Cluster, NoEligibleMember


def tweet(i, uid=1):
    return {"id": i, "user": {"id": uid}, "text": f"tweet {i}", "timestamp_ms": str(1000 + i)}


def failover():
    cluster = Cluster(clock=SimClock(1000.0))
    for i in range(1, 101):
        cluster.insert("stream", tweet(i))
    cluster.advance()
    for i in range(101, 108):
        cluster.insert("stream", tweet(i))
    res = cluster.fail_primary(0)
    print(f"member {res.new_primary} promoted; {res.lost_count} acknowledged writes lost:",
          sorted(k[0] for _, k in res.lost))
    try:
        cluster.fail_primary(0)
    except NoEligibleMember as e:
        print("second failure:", e)


def rate_limits():
    src = TimelineSource()
    for uid in range(1, 31):
        src.protected[uid] = False
        src.add(tweet(uid * 1000, uid))
    clock = SimClock(1_800_000.0)
    svc = RestService(src, clock=clock)
    greedy = RestClient(svc, "greedy", clock)
    ok = 0
    try:
        while True:
            greedy.user_timeline(1 + ok % 30)
            ok += 1
    except RateLimited as e:
        print(f"greedy client: {ok} calls granted, then refused until t={e.reset_at:.0f}")

    polite = RestClient(svc, "polite", clock)
    log = schedule(SelectedUsers(list(range(1, 31))), polite, Cluster(clock=clock), 3 * 3600)
    print(f"scheduler over 3 h: {log.count(outcome='ok')} ok, "
          f"{log.count(outcome='RateLimited')} refused")


if __name__ == "__main__":
    failover()
    rate_limits()
