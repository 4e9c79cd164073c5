"""Synthetic grid benchmark: a 5x5 road grid with two vehicle clusters on the
outermost columns and three empty columns in between. The clusters sit three
hops apart, so they stay disconnected (K=2) unless the UAV hovers over a
middle-column intersection, which merges them into one component. The optimal
behavior is easy to state but still has to be learned. Used by the comparison
runner and tests.
"""

from __future__ import annotations

from dataclasses import dataclass

from .channel import ChannelParams, EnergyParams
from .env import EnvConfig
from .policy import TrainConfig
from .road_graph import RoadTopologyGraph, make_graph
from .traffic import TrafficProfile, TrafficSource, generate_traffic


def grid_graph(rows: int = 5, cols: int = 5, spacing: float = 200.0,
               uav_start: int = 0, rsu=()) -> RoadTopologyGraph:
    """Grid road network; node id = r*cols + c, horizontal edges first."""
    positions = [(c * spacing, r * spacing) for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols - 1):
            edges.append((r * cols + c, r * cols + c + 1))
    for r in range(rows - 1):
        for c in range(cols):
            edges.append((r * cols + c, (r + 1) * cols + c))
    return make_graph(positions, edges, rsu, uav_start)


def _edge_id(graph: RoadTopologyGraph, u: int, v: int) -> int:
    key = (min(u, v), max(u, v))
    for eid, e in enumerate(graph.edges):
        if e == key:
            return eid
    raise KeyError(key)


@dataclass(frozen=True)
class Benchmark:
    graph: RoadTopologyGraph
    profile: TrafficProfile
    traffic: TrafficSource
    channel: ChannelParams
    energy: EnergyParams
    env_config: EnvConfig
    train_config: TrainConfig


def grid_benchmark(traffic_seed: int = 7, horizon: int = 40,
                   episodes: int = 600) -> Benchmark:
    """Vehicles live on the column-0 and column-4 vertical segments only
    (mean 4 per edge per slot); every other segment carries none, so the two
    clusters form K=2 components three hops apart. Hovering any column-2
    intersection turns the middle segment of each row into a c-edge chain and
    collapses K to 1. The UAV starts at the far corner of the left cluster;
    an RSU sits at the opposite corner."""
    rows = cols = 5
    graph = grid_graph(rows, cols, spacing=200.0, uav_start=0, rsu=(24,))
    cluster = set()
    for r in range(rows - 1):
        cluster.add(_edge_id(graph, r * cols + 0, (r + 1) * cols + 0))
        cluster.add(_edge_id(graph, r * cols + 4, (r + 1) * cols + 4))
    # zero out everything outside the two clusters (multiplicative profile)
    hotspots = tuple((eid, 0.0) for eid in range(graph.m) if eid not in cluster)
    profile = TrafficProfile(seed=traffic_seed, slots=horizon, base_rate=4.0,
                             hotspot_edges=hotspots)
    traffic = generate_traffic(profile, graph)
    channel = ChannelParams(a=9.61, b=0.16, eta_los=1.0, eta_nlos=20.0,
                            f_c=2.0e9, p_tx=30.0, gain=3.0, p_th=-80.0,
                            altitude=100.0)
    energy = EnergyParams(hover_power=100.0, comm_power=20.0, fly_power=200.0,
                          speed=10.0, slot_seconds=60.0, battery=600_000.0)
    env_config = EnvConfig(alpha=1.0, beta_energy=1.0, horizon=horizon)
    # strong fusion so the prior carries the behavior from episode one, and a
    # small annealed KL anchor so the learner can leave the prior's entropy
    # behind once it has soaked up the guidance
    train_config = TrainConfig(episodes=episodes, rollout_length=160,
                               num_envs=4, minibatch_size=128, c2=0.005,
                               learning_rate=1e-3, hidden=64,
                               lambda_fusion=3.0, beta_kl=0.01,
                               anneal_beta_kl=True)
    return Benchmark(graph=graph, profile=profile, traffic=traffic,
                     channel=channel, energy=energy, env_config=env_config,
                     train_config=train_config)
