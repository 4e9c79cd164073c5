import numpy as np
import pytest
from dataclasses import replace
from hypothesis import HealthCheck, given, settings, strategies as st

from skybridge.channel import EnergyParams, InfeasibleMoveError, slot_energy
from skybridge.env import EnvConfig, EnvConfigError, SnapshotError, UavVanetEnv, VectorEnv
from skybridge.road_graph import fragmentation, make_occupancy
from skybridge.traffic import TrafficSource


def test_reset_state(small_env):
    s = small_env.reset()
    assert s.slot == 1
    assert s.uav_vertex == small_env.graph.uav_start
    assert s.battery_remaining == small_env.energy.battery
    assert len(s.raw_state_vector) == small_env.graph.m + small_env.graph.n
    # raw vector layout: edge counts then vertex weights
    assert s.raw_state_vector[:small_env.graph.m] == small_env.traffic.slot_counts(1)
    assert s.raw_state_vector[small_env.graph.m + s.uav_vertex] == 2


def test_step_reward_matches_hand_computation(small_env):
    s = small_env.reset()
    action = 2
    flight = small_env.graph.distance(s.uav_vertex, action)
    energy = slot_energy(small_env.energy, flight)
    occ = make_occupancy(small_env.graph, small_env.traffic.slot_counts(1), action)
    k = fragmentation(small_env.graph, occ).component_count
    tr = small_env.step(action)
    expected = 1.0 / k - energy / small_env.energy.slot_energy_max
    assert tr.reward == pytest.approx(expected, abs=1e-12)
    assert tr.flight_m == flight
    assert tr.next_state.slot == 2
    assert tr.next_state.uav_vertex == action
    assert tr.next_state.battery_remaining == pytest.approx(
        s.battery_remaining - energy)


def test_reward_uses_post_move_occupancy_of_same_slot(small_env):
    # the fragment count must reflect the UAV at its destination with the
    # current slot's traffic, not the next slot's
    small_env.reset()
    tr = small_env.step(3)
    occ = make_occupancy(small_env.graph, small_env.traffic.slot_counts(1), 3)
    assert tr.fragment_count == fragmentation(small_env.graph, occ).component_count


def test_horizon_termination(small_env):
    small_env.reset()
    for t in range(3):
        tr = small_env.step(small_env.state.uav_vertex)
    assert tr.done
    assert tr.next_state.slot == 3   # horizon reached, no slot 4 traffic pulled


def test_battery_termination(small_graph):
    traffic = TrafficSource(counts=tuple([(1, 0, 0, 0, 0)] * 50))
    # battery covers exactly two hovering slots plus the reserve check
    energy = EnergyParams(hover_power=100.0, comm_power=20.0, fly_power=200.0,
                          speed=10.0, slot_seconds=60.0, battery=26_000.0)
    env = UavVanetEnv(small_graph, traffic, energy, EnvConfig(horizon=50))
    env.reset()
    tr1 = env.step(0)   # hover: 7200 J, remaining 18800 >= E0=12000
    assert not tr1.done
    tr2 = env.step(0)   # remaining 11600 < E0 -> done
    assert tr2.done
    assert tr2.next_state.battery_remaining < energy.slot_energy_max


def test_masking_raises_on_infeasible(small_graph):
    traffic = TrafficSource(counts=tuple([(1, 0, 0, 0, 0)] * 5))
    energy = EnergyParams(hover_power=100.0, comm_power=20.0, fly_power=200.0,
                          speed=1.0, slot_seconds=60.0, battery=600_000.0)  # reach 60 m
    env = UavVanetEnv(small_graph, traffic, energy, EnvConfig(horizon=5))
    env.reset()
    feas = env.feasible_actions()
    assert feas[0] and not feas[3]   # vertex 3 is 300 m away
    with pytest.raises(InfeasibleMoveError):
        env.step(3)


def test_unmasked_violation_terminates_without_clamping(small_graph):
    traffic = TrafficSource(counts=tuple([(1, 0, 0, 0, 0)] * 5))
    energy = EnergyParams(hover_power=100.0, comm_power=20.0, fly_power=200.0,
                          speed=1.0, slot_seconds=60.0, battery=600_000.0)
    env = UavVanetEnv(small_graph, traffic, energy,
                      EnvConfig(horizon=5, masking=False, violation_penalty=-2.5))
    s = env.reset()
    tr = env.step(3)
    assert tr.violation and tr.done
    assert tr.reward == -2.5
    assert tr.next_state.uav_vertex == s.uav_vertex   # no clamp to a feasible node


def test_snapshot_restore_round_trip(small_env):
    small_env.reset()
    small_env.step(1)
    token = small_env.snapshot()
    before = small_env.state
    tr_a = small_env.step(2)
    small_env.restore(token)
    assert small_env.state == before
    tr_b = small_env.step(2)
    assert tr_a.reward == tr_b.reward
    assert tr_a.next_state == tr_b.next_state


def test_snapshot_rejected_by_other_env(small_env, small_graph):
    small_env.reset()
    token = small_env.snapshot()
    other = UavVanetEnv(small_graph, TrafficSource(counts=tuple([(9, 0, 0, 0, 0)] * 3)),
                        small_env.energy, small_env.config)
    other.reset()
    with pytest.raises(SnapshotError):
        other.restore(token)


@settings(max_examples=50, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=6),
       st.integers(min_value=0, max_value=5))
def test_restore_raw_scoring_consistency(small_env, actions, start):
    """restore_raw installs a synthetic occupancy whose step rewards depend
    only on that occupancy, independent of the real traffic tape."""
    counts = [3, 0, 0, 1, 0]
    small_env.restore_raw(counts, start)
    token = small_env.snapshot()
    for a in actions:
        small_env.restore(token)
        tr = small_env.step(a)
        occ = make_occupancy(small_env.graph, counts, a)
        k = fragmentation(small_env.graph, occ).component_count
        energy = slot_energy(small_env.energy,
                             small_env.graph.distance(start, a))
        assert tr.reward == pytest.approx(
            1.0 / k - energy / small_env.energy.slot_energy_max)


def test_vector_env_auto_reset(small_graph):
    traffic = TrafficSource(counts=tuple([(1, 0, 0, 0, 0)] * 2))
    energy = EnergyParams(hover_power=100.0, comm_power=20.0, fly_power=200.0,
                          speed=10.0, slot_seconds=60.0, battery=600_000.0)
    venv = VectorEnv([UavVanetEnv(small_graph, traffic, energy, EnvConfig(horizon=2))
                      for _ in range(3)])
    venv.reset()
    venv.step_batch([0, 1, 2])
    trs = venv.step_batch([0, 1, 2])
    assert all(t.done for t in trs)
    assert all(e.state.slot == 1 for e in venv.envs)   # auto-reset happened


def test_horizon_traffic_mismatch(small_graph):
    traffic = TrafficSource(counts=tuple([(0, 0, 0, 0, 0)] * 2))
    energy = EnergyParams(hover_power=1.0, comm_power=1.0, fly_power=1.0,
                          speed=10.0, slot_seconds=60.0, battery=1e6)
    with pytest.raises(EnvConfigError):
        UavVanetEnv(small_graph, traffic, energy, EnvConfig(horizon=5))
