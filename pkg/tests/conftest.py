import numpy as np
import pytest

from skybridge.bench import grid_benchmark, grid_graph
from skybridge.channel import ChannelParams, EnergyParams
from skybridge.env import EnvConfig, UavVanetEnv
from skybridge.road_graph import make_graph
from skybridge.traffic import TrafficSource


@pytest.fixture(scope="session")
def bench():
    return grid_benchmark()


@pytest.fixture(scope="session")
def small_graph():
    # 6-node path-with-a-branch, handy for hand-computed fragmentation
    #   0 -- 1 -- 2 -- 3
    #        |         |
    #        4         5
    positions = [(0, 0), (100, 0), (200, 0), (300, 0), (100, 100), (300, 100)]
    edges = [(0, 1), (1, 2), (2, 3), (1, 4), (3, 5)]
    return make_graph(positions, edges, rsu_vertices=(), uav_start=0)


@pytest.fixture()
def small_env(small_graph):
    # generous reach so every intersection is always feasible
    counts = [
        (2, 0, 3, 0, 1),
        (0, 1, 0, 0, 0),
        (1, 1, 1, 1, 1),
    ]
    traffic = TrafficSource(counts=tuple(tuple(r) for r in counts))
    energy = EnergyParams(hover_power=100.0, comm_power=20.0, fly_power=200.0,
                          speed=10.0, slot_seconds=60.0, battery=100_000.0)
    return UavVanetEnv(small_graph, traffic, energy, EnvConfig(horizon=3))


@pytest.fixture(scope="session")
def channel_params():
    return ChannelParams(a=9.61, b=0.16, eta_los=1.0, eta_nlos=20.0,
                         f_c=2.0e9, p_tx=30.0, gain=3.0, p_th=-80.0,
                         altitude=100.0)


def random_instance(rng, n_max=30):
    """Random connected (graph, edge_counts, uav_vertex, rsu set) instance.

    Spanning tree + extra chords, sparse vehicle counts so fragmentation
    actually happens.
    """
    n = int(rng.integers(2, n_max + 1))
    pos = rng.uniform(0, 1000, size=(n, 2))
    edges = set()
    order = rng.permutation(n)
    for i in range(1, n):
        u = int(order[i])
        v = int(order[int(rng.integers(0, i))])
        edges.add((min(u, v), max(u, v)))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(int(u), int(v)), max(int(u), int(v))))
    edges = sorted(edges)
    rsus = [int(v) for v in rng.choice(n, size=int(rng.integers(0, 3)), replace=False)]
    uav = int(rng.integers(0, n))
    g = make_graph([tuple(p) for p in pos], edges, rsus, uav)
    counts = np.where(rng.random(len(edges)) < 0.35,
                      rng.integers(1, 6, size=len(edges)), 0)
    return g, [int(c) for c in counts], uav
