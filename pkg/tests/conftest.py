import pytest

from urbanmob.clock import SimClock
from urbanmob.docmodel import canonical_bytes
from urbanmob.store import Cluster, ClusterConfig
from urbanmob.streamsim import generate_world, iter_statuses


@pytest.fixture(scope="session")
def world():
    return generate_world(11, n_users=600)


@pytest.fixture(scope="session")
def corpus_docs(world):
    return list(iter_statuses(world, 3000))


@pytest.fixture(scope="session")
def corpus_lines(corpus_docs):
    return [canonical_bytes(d) for d in corpus_docs]


@pytest.fixture
def clock():
    return SimClock(1_000_000.0)


@pytest.fixture
def cluster(clock):
    return Cluster(ClusterConfig(), clock=clock)



def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
