import numpy as np
import pytest

from kstsim import client, sidechannel
from kstsim.kinematics import default_geometry
from kstsim.server import SimServer


@pytest.fixture(scope="session")
def geom():
    return default_geometry()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_q(rng, g, margin=0.05):
    lo, hi = g.q_min + margin, g.q_max - margin
    return lo + rng.random(7) * (hi - lo)


@pytest.fixture
def vserver():
    """Virtual-time server on free ports."""
    srv = SimServer(port=0, side_port=0, virtual=True).start()
    yield srv
    srv.stop()


@pytest.fixture
def wserver():
    """Wall-clock server on free ports."""
    srv = SimServer(port=0, side_port=0, virtual=False).start()
    yield srv
    srv.stop()


@pytest.fixture
def vconn(vserver):
    t = client.net_establishConnection(f"127.0.0.1:{vserver.port}")
    s = sidechannel.open_side_channel(port=vserver.side_port)
    yield t, s
    s.close()
    t.close()


# -- acceptance report -----------------------------------------------------------

ACCEPTANCE = {}


def report(n, name, ok, detail):
    ACCEPTANCE[n] = f"criterion {n} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(ACCEPTANCE[n])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
