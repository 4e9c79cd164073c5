"""MDP environment: UAV relocation over intersections, fragmentation reward,
battery accounting, snapshot/restore, and a vectorized batch wrapper.

One step = one time slot: the UAV flies to the chosen intersection, hovers
and relays for the rest of the slot. The reward combines the fragment count
K(t) computed on the post-move occupancy of the same slot with the
normalized slot energy.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .channel import EnergyParams, InfeasibleMoveError, slot_energy
from .road_graph import RoadTopologyGraph, SlotOccupancy, fragmentation, make_occupancy
from .traffic import TrafficSource


class EnvConfigError(ValueError):
    pass


class SnapshotError(ValueError):
    """Stale or foreign snapshot token."""


@dataclass(frozen=True)
class EnvConfig:
    alpha: float = 1.0             # weight of the 1/K connectivity term
    beta_energy: float = 1.0       # weight of the E/E0 energy term
    horizon: int = 50              # episode length T in slots
    masking: bool = True           # infeasible actions are the caller's bug
    violation_penalty: float = -1.0  # terminal reward in unmasked mode
    cap_percentile: float = 99.0   # edge-count normalization percentile


@dataclass(frozen=True)
class EnvState:
    slot: int
    uav_vertex: int
    battery_remaining: float
    occupancy: SlotOccupancy
    raw_state_vector: tuple[int, ...]        # edge counts then vertex weights
    normalized_state_vector: tuple[float, ...]


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: int
    reward: float
    next_state: EnvState
    done: bool
    violation: bool = False
    # per-slot diagnostics for traces
    fragment_count: int = 0
    mean_fragment_weight: float = 0.0
    largest_fragment_weight: int = 0
    energy_j: float = 0.0
    flight_m: float = 0.0
    # filled by the trainer when collecting rollouts
    z_llm: tuple[float, ...] | None = None
    z_ppo: tuple[float, ...] | None = None
    log_prob: float | None = None
    value: float | None = None


@dataclass(frozen=True)
class SnapshotToken:
    env_fingerprint: str
    state: EnvState


def _state_vectors(graph: RoadTopologyGraph, occ: SlotOccupancy, cap: int):
    raw = tuple(occ.edge_vehicles) + tuple(occ.vertex_weight)
    norm = tuple(min(c / cap, 1.0) for c in occ.edge_vehicles) + \
        tuple(w / 2.0 for w in occ.vertex_weight)
    return raw, norm


class UavVanetEnv:
    """Single-owner environment instance over immutable map/traffic data."""

    def __init__(self, graph: RoadTopologyGraph, traffic: TrafficSource,
                 energy: EnergyParams, config: EnvConfig = EnvConfig()):
        energy.validate()
        if traffic.slots < config.horizon:
            raise EnvConfigError(
                f"traffic has {traffic.slots} slots but horizon is {config.horizon}"
            )
        if config.horizon < 1:
            raise EnvConfigError("horizon must be >= 1")
        self.graph = graph
        self.traffic = traffic
        self.energy = energy
        self.config = config
        self.vehicle_cap = traffic.vehicle_cap(config.cap_percentile)
        self._fingerprint = self._compute_fingerprint()
        self._state: EnvState | None = None
        # flight distances from every vertex, for masks and moves
        self._dist = [
            [graph.distance(u, v) for v in range(graph.n)] for u in range(graph.n)
        ]

    # -- identity ----------------------------------------------------------

    def _compute_fingerprint(self) -> str:
        h = hashlib.sha256(self.graph.fingerprint.encode())
        for row in self.traffic.counts:
            h.update(bytes(str(row), "ascii"))
        h.update(repr((self.energy, self.config)).encode())
        return h.hexdigest()

    # -- state assembly ----------------------------------------------------

    def _build_state(self, slot: int, uav_vertex: int, battery: float) -> EnvState:
        occ = make_occupancy(self.graph, self.traffic.slot_counts(slot), uav_vertex)
        raw, norm = _state_vectors(self.graph, occ, self.vehicle_cap)
        return EnvState(slot=slot, uav_vertex=uav_vertex, battery_remaining=battery,
                        occupancy=occ, raw_state_vector=raw,
                        normalized_state_vector=norm)

    def reset(self) -> EnvState:
        self._state = self._build_state(1, self.graph.uav_start, self.energy.battery)
        return self._state

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state

    @property
    def n_actions(self) -> int:
        return self.graph.n

    # -- dynamics ----------------------------------------------------------

    def feasible_actions(self, state: EnvState | None = None) -> tuple[bool, ...]:
        s = state if state is not None else self.state
        reach = self.energy.max_flight
        row = self._dist[s.uav_vertex]
        return tuple(row[j] <= reach for j in range(self.graph.n))

    def step(self, action: int) -> Transition:
        s = self.state
        if not (0 <= action < self.graph.n):
            raise ValueError(f"action {action} out of range [0,{self.graph.n})")
        flight = self._dist[s.uav_vertex][action]
        if flight > self.energy.max_flight:
            if self.config.masking:
                raise InfeasibleMoveError(
                    f"masked mode: policy chose infeasible action {action} "
                    f"({flight:.1f} m > {self.energy.max_flight:.1f} m)"
                )
            # unmasked mode: no clamping -- record the violation and terminate
            tr = Transition(state=s, action=action,
                            reward=self.config.violation_penalty,
                            next_state=s, done=True, violation=True)
            self._state = s
            return tr
        energy = slot_energy(self.energy, flight)
        battery = s.battery_remaining - energy
        # coverage applies for the hover part of the same slot
        moved_occ = make_occupancy(self.graph, s.occupancy.edge_vehicles, action)
        report = fragmentation(self.graph, moved_occ)
        k = report.component_count
        reward = (self.config.alpha / k
                  - self.config.beta_energy * energy / self.energy.slot_energy_max)
        done = s.slot >= self.config.horizon or battery < self.energy.slot_energy_max
        if s.slot < self.config.horizon:
            nxt = self._build_state(s.slot + 1, action, battery)
        else:
            raw, norm = _state_vectors(self.graph, moved_occ, self.vehicle_cap)
            nxt = EnvState(slot=s.slot, uav_vertex=action, battery_remaining=battery,
                           occupancy=moved_occ, raw_state_vector=raw,
                           normalized_state_vector=norm)
        self._state = nxt
        return Transition(state=s, action=action, reward=reward, next_state=nxt,
                          done=done, fragment_count=k,
                          mean_fragment_weight=float(report.mean_component_weight),
                          largest_fragment_weight=max(report.component_weights, default=0),
                          energy_j=energy, flight_m=flight)

    # -- snapshot / restore (Algorithm-2 style oracle support) --------------

    def snapshot(self, state: EnvState | None = None) -> SnapshotToken:
        return SnapshotToken(env_fingerprint=self._fingerprint,
                             state=state if state is not None else self.state)

    def restore(self, token: SnapshotToken) -> EnvState:
        if token.env_fingerprint != self._fingerprint:
            raise SnapshotError("snapshot token does not belong to this environment")
        self._state = token.state
        return self._state

    def restore_raw(self, edge_counts, uav_vertex: int) -> EnvState:
        """Install a synthetic state from raw integer occupancy (slot 1, full
        battery). Immediate rewards do not depend on slot or battery, so this
        is sufficient for per-action scoring of serialized states."""
        occ = make_occupancy(self.graph, edge_counts, uav_vertex)
        raw, norm = _state_vectors(self.graph, occ, self.vehicle_cap)
        # keep the real slot-1 traffic out of the picture: scoring only reads
        # the immediate reward, which is a function of this occupancy alone
        self._state = EnvState(slot=1, uav_vertex=uav_vertex,
                               battery_remaining=self.energy.battery,
                               occupancy=occ, raw_state_vector=raw,
                               normalized_state_vector=norm)
        return self._state

class VectorEnv:
    """A batch of independent environments stepped in lockstep.

    Finished environments auto-reset; results come back in input order.
    """

    def __init__(self, envs: list[UavVanetEnv]):
        if not envs:
            raise ValueError("need at least one environment")
        self.envs = envs

    def __len__(self):
        return len(self.envs)

    def reset(self) -> list[EnvState]:
        return [e.reset() for e in self.envs]

    def states(self) -> list[EnvState]:
        return [e.state for e in self.envs]

    def step_batch(self, actions) -> list[Transition]:
        if len(actions) != len(self.envs):
            raise ValueError(
                f"got {len(actions)} actions for {len(self.envs)} environments"
            )
        out = []
        for env, a in zip(self.envs, actions):
            tr = env.step(int(a))
            if tr.done:
                env.reset()
            out.append(tr)
        return out


def write_episode_trace(path, rows) -> None:
    """rows: iterable of (episode, slot, uav_vertex, action, reward, K, C,
    energy_J, flight_m)."""
    import csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "slot", "uav_vertex", "action", "reward",
                    "K", "C", "energy_J", "flight_m"])
        for row in rows:
            w.writerow(row)
