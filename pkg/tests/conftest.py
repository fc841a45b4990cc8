import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "default",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"


@pytest.fixture(scope="session")
def frozen():
    return json.loads(ORACLES.read_text())


finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)
quat4 = st.lists(finite, min_size=4, max_size=4).map(np.array).filter(
    lambda q: np.linalg.norm(q) > 1e-3
)
unit_quat = quat4.map(lambda q: q / np.linalg.norm(q))
# ECEF-scale vectors: velocities to 300 m/s, positions near the Earth surface
velocity = st.lists(st.floats(-300, 300), min_size=3, max_size=3).map(np.array)
position = st.tuples(
    st.floats(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3),
    st.floats(-np.pi, np.pi),
    st.floats(-500.0, 20000.0),
).map(lambda g: (6378137.0 + g[2]) * np.array(
    [np.cos(g[0]) * np.cos(g[1]), np.cos(g[0]) * np.sin(g[1]), np.sin(g[0])]
))


def random_unit_quats(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_positions(rng, n, h_lo=0.0, h_hi=10000.0):
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * (6378137.0 + rng.uniform(h_lo, h_hi, (n, 1)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
