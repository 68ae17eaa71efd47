import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrsv.channel import (RandomWaypoint, Static, Topology, build_grid_mesh, build_line,
                            build_random, resolve, step_mobility)
from macrsv.core import COLLISION, SILENCE, NCTS, Clean
from macrsv.errors import ConfigError, DuplicateSender


def test_mesh_degrees():
    t = build_grid_mesh(5, 5, 200, 250)
    assert len(t.nodes) == 25
    assert t.degree(0) == 2 and t.degree(2) == 3 and t.degree(12) == 4
    assert t.neighbors(12) == {7, 11, 13, 17}


def test_range_below_spacing_disconnects():
    t = build_grid_mesh(5, 5, 200, 199)
    assert all(t.degree(v) == 0 for v in t.nodes)


def test_adjacency_symmetric_random():
    t = build_random(30, (1500, 300), 250, seed=4)
    for a, b in t.edges():
        assert a in t.neighbors(b) and b in t.neighbors(a)
        assert a != b


def test_topology_text_roundtrip():
    t = build_random(10, (500, 500), 250, seed=2)
    back = Topology.from_text(t.to_text())
    assert back == t
    assert back.adjacency == t.adjacency


def test_topology_text_needs_range():
    with pytest.raises(ConfigError):
        Topology.from_text("0 1 2\n")


def test_resolve_basic():
    t = build_line(3, 200, 250)  # 0 - 1 - 2
    obs = resolve([(0, NCTS(0))], t)
    assert obs[1] == Clean(NCTS(0)) and obs[0] == SILENCE and obs[2] == SILENCE
    obs = resolve([(0, NCTS(0)), (2, NCTS(2))], t)
    assert obs[1] == COLLISION
    # transmitter hears nothing even when a neighbor also sends
    obs = resolve([(0, NCTS(0)), (1, NCTS(1))], t)
    assert obs[0] == SILENCE and obs[1] == SILENCE and obs[2] == Clean(NCTS(1))


def test_duplicate_sender():
    t = build_line(2, 100, 250)
    with pytest.raises(DuplicateSender):
        resolve([(0, NCTS(0)), (0, NCTS(0))], t)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 11), unique=True), st.randoms(use_true_random=False))
def test_resolve_permutation_invariant(senders, rnd):
    t = build_random(12, (600, 600), 250, seed=9)
    tx = [(v, NCTS(v)) for v in senders]
    shuffled = tx[:]
    rnd.shuffle(shuffled)
    assert resolve(tx, t) == resolve(shuffled, t)


def test_static_mobility_is_identity():
    t = build_line(3, 10, 20)
    assert step_mobility(t, Static(), 0.1, np.random.default_rng(0)) is t


def test_waypoint_speed_and_bounds():
    t = build_random(20, (1500, 300), 250, seed=1)
    model = RandomWaypoint((1500, 300), 20.0)
    rng = np.random.default_rng(3)
    for _ in range(300):
        nxt = step_mobility(t, model, 0.11176, rng)
        for v in t.nodes:
            (x0, y0), (x1, y1) = t.positions[v], nxt.positions[v]
            assert np.hypot(x1 - x0, y1 - y0) <= 20.0 * 0.11176 + 1e-9
            assert 0 <= x1 <= 1500 and 0 <= y1 <= 300
        # adjacency follows the new positions
        assert nxt.adjacency == Topology(nxt.positions, 250).adjacency
        t = nxt


def test_waypoint_pause():
    t = Topology({0: (0.0, 0.0)}, 250)
    model = RandomWaypoint((10, 10), 1000.0, pause_s=5.0)
    rng = np.random.default_rng(0)
    t1 = step_mobility(t, model, 1.0, rng)   # reaches target quickly, starts pausing
    t2 = step_mobility(t1, model, 1.0, rng)  # still paused
    assert t1.positions == t2.positions
