"""Per-slot vehicle counts: CSV trajectory replay or seeded synthetic generation.

Both paths produce the same artifact, a dense slot-indexed sequence of
per-edge vehicle counts (slot 1..T). Intra-edge position is dropped on
purpose: the connectivity model only consumes per-edge counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .road_graph import RoadTopologyGraph


class TrafficLoadError(ValueError):
    """Raised on malformed trajectory files or invalid profiles."""


@dataclass(frozen=True)
class TrafficSource:
    """Dense edge counts, counts[t-1][e] = vehicles on edge e in slot t."""
    counts: tuple[tuple[int, ...], ...]

    @property
    def slots(self) -> int:
        return len(self.counts)

    def slot_counts(self, t: int) -> tuple[int, ...]:
        return self.counts[t - 1]

    def vehicle_cap(self, percentile: float = 99.0) -> int:
        """Normalization cap for state vectors (at least 1)."""
        flat = [c for row in self.counts for c in row]
        return max(1, int(np.percentile(flat, percentile)))


def load_trajectories(path, graph: RoadTopologyGraph) -> TrafficSource:
    """Replay a `slot,vehicle_id,edge_id` CSV into dense per-slot edge counts.

    Slots missing from the file are expanded to all-zero rows up to the max
    slot seen. A vehicle may appear at most once per slot.
    """
    per_slot: dict[int, dict[str, int]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["slot", "vehicle_id", "edge_id"]:
            raise TrafficLoadError(f"{path}: expected header 'slot,vehicle_id,edge_id'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise TrafficLoadError(f"{path}: line {lineno}: expected 3 columns")
            try:
                slot = int(row[0])
                edge = int(row[2])
            except ValueError:
                raise TrafficLoadError(f"{path}: line {lineno}: non-integer slot/edge") from None
            veh = row[1].strip()
            if slot < 1:
                raise TrafficLoadError(f"{path}: line {lineno}: slot must be >= 1")
            if not (0 <= edge < graph.m):
                raise TrafficLoadError(f"{path}: line {lineno}: unknown edge id {edge}")
            slot_map = per_slot.setdefault(slot, {})
            if veh in slot_map and slot_map[veh] != edge:
                raise TrafficLoadError(
                    f"{path}: line {lineno}: vehicle '{veh}' appears on two edges in slot {slot}"
                )
            slot_map[veh] = edge
    if not per_slot:
        raise TrafficLoadError(f"{path}: no trajectory records (T >= 1 required)")
    t_max = max(per_slot)
    rows = []
    for t in range(1, t_max + 1):
        counts = [0] * graph.m
        for edge in per_slot.get(t, {}).values():
            counts[edge] += 1
        rows.append(tuple(counts))
    return TrafficSource(counts=tuple(rows))


@dataclass(frozen=True)
class TrafficProfile:
    seed: int
    slots: int
    base_rate: float                                   # mean vehicles per edge per slot
    hotspot_edges: tuple[tuple[int, float], ...] = ()  # (edge_id, multiplier)
    time_curve: tuple[tuple[int, int, float], ...] = ()  # (first_slot, last_slot, multiplier)

    def validate(self, graph: RoadTopologyGraph) -> None:
        if self.slots < 1:
            raise TrafficLoadError("profile: slots must be >= 1")
        if self.base_rate < 0:
            raise TrafficLoadError("profile: base_rate must be >= 0")
        for eid, mult in self.hotspot_edges:
            if not (0 <= eid < graph.m):
                raise TrafficLoadError(f"profile: hotspot edge {eid} not in map")
            if mult < 0:
                raise TrafficLoadError("profile: hotspot multiplier must be >= 0")
        if self.time_curve:
            covered = []
            for lo, hi, mult in self.time_curve:
                if mult < 0:
                    raise TrafficLoadError("profile: time multiplier must be >= 0")
                covered.append((lo, hi))
            covered.sort()
            cursor = 1
            for lo, hi in covered:
                if lo != cursor or hi < lo:
                    raise TrafficLoadError(
                        f"profile: time_curve must cover [1,{self.slots}] without gaps/overlap"
                    )
                cursor = hi + 1
            if cursor != self.slots + 1:
                raise TrafficLoadError(
                    f"profile: time_curve must cover [1,{self.slots}] without gaps/overlap"
                )


def generate_traffic(profile: TrafficProfile, graph: RoadTopologyGraph) -> TrafficSource:
    """Seeded Poisson counts, mean = base_rate * hotspot mult * time mult.

    Same (profile, graph) always yields bit-identical output.
    """
    profile.validate(graph)
    edge_mult = np.ones(graph.m)
    for eid, mult in profile.hotspot_edges:
        edge_mult[eid] *= mult
    slot_mult = np.ones(profile.slots)
    for lo, hi, mult in profile.time_curve:
        slot_mult[lo - 1:hi] = mult
    rng = np.random.default_rng(profile.seed)
    rows = []
    for t in range(profile.slots):
        lam = profile.base_rate * edge_mult * slot_mult[t]
        counts = rng.poisson(lam)
        rows.append(tuple(int(c) for c in counts))
    return TrafficSource(counts=tuple(rows))


def profile_from_dict(d: dict) -> TrafficProfile:
    return TrafficProfile(
        seed=int(d["seed"]),
        slots=int(d["slots"]),
        base_rate=float(d["base_rate"]),
        hotspot_edges=tuple((int(e), float(m)) for e, m in d.get("hotspot_edges", [])),
        time_curve=tuple((int(a), int(b), float(m)) for a, b, m in d.get("time_curve", [])),
    )


def profile_to_dict(p: TrafficProfile) -> dict:
    return {
        "seed": p.seed,
        "slots": p.slots,
        "base_rate": p.base_rate,
        "hotspot_edges": [[e, m] for e, m in p.hotspot_edges],
        "time_curve": [[a, b, m] for a, b, m in p.time_curve],
    }
