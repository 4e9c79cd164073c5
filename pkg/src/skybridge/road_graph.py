"""Road topology graph, per-slot connectivity classification and fragmentation metrics.

The road network is a static undirected graph (intersections + road segments).
Each time slot carries dynamic weights: vehicles per edge and a coverage weight
per vertex (0 = uncovered, 1 = RSU, 2 = UAV overhead). Connectivity is decided
by classifying c-vertices / c-edges and counting connected components of the
dual graph whose vertices are the c-edges (adjacency = shared endpoint).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction


class MapFormatError(ValueError):
    """Raised when a map file is malformed or violates structural invariants."""


class StructuralError(ValueError):
    """Raised when occupancy dimensions do not match the loaded graph."""


@dataclass(frozen=True)
class RoadTopologyGraph:
    positions: tuple[tuple[float, float], ...]   # vertex id -> (x, y) in meters
    edges: tuple[tuple[int, int], ...]           # edge id -> (u, v), u < v
    rsu_vertices: frozenset[int]
    uav_start: int

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def incident(self) -> tuple[tuple[int, ...], ...]:
        """incident[v] = ids of edges touching vertex v."""
        inc: list[list[int]] = [[] for _ in range(self.n)]
        for eid, (u, v) in enumerate(self.edges):
            inc[u].append(eid)
            inc[v].append(eid)
        return tuple(tuple(lst) for lst in inc)

    def distance(self, u: int, v: int) -> float:
        (xu, yu), (xv, yv) = self.positions[u], self.positions[v]
        return math.hypot(xu - xv, yu - yv)

    @cached_property
    def longest_edge(self) -> float:
        return max(self.distance(u, v) for u, v in self.edges)

    @cached_property
    def fingerprint(self) -> str:
        """Stable content hash used by snapshots and checkpoints."""
        h = hashlib.sha256()
        for x, y in self.positions:
            h.update(f"{x!r},{y!r};".encode())
        for u, v in self.edges:
            h.update(f"{u},{v};".encode())
        h.update(",".join(map(str, sorted(self.rsu_vertices))).encode())
        h.update(f"|{self.uav_start}".encode())
        return h.hexdigest()

    def validate(self) -> None:
        n, m = self.n, self.m
        if n < 2:
            raise MapFormatError("map needs at least 2 vertices")
        if m < 1:
            raise MapFormatError("map needs at least 1 edge")
        seen = set()
        for eid, (u, v) in enumerate(self.edges):
            if not (0 <= u < n and 0 <= v < n):
                raise MapFormatError(f"edge {eid}: endpoint out of range")
            if u == v:
                raise MapFormatError(f"edge {eid}: self-loop not allowed")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise MapFormatError(f"edge {eid}: duplicate undirected edge {key}")
            seen.add(key)
        for r in self.rsu_vertices:
            if not (0 <= r < n):
                raise MapFormatError(f"rsu vertex {r} out of range")
        if not (0 <= self.uav_start < n):
            raise MapFormatError(f"uav_start {self.uav_start} out of range")
        # connectivity check (BFS over the static topology)
        reached = {0}
        frontier = [0]
        while frontier:
            v = frontier.pop()
            for eid in self.incident[v]:
                u, w = self.edges[eid]
                other = w if u == v else u
                if other not in reached:
                    reached.add(other)
                    frontier.append(other)
        if len(reached) != n:
            raise MapFormatError("map graph is disconnected")


def make_graph(positions, edges, rsu_vertices, uav_start) -> RoadTopologyGraph:
    g = RoadTopologyGraph(
        positions=tuple((float(x), float(y)) for x, y in positions),
        edges=tuple((min(int(u), int(v)), max(int(u), int(v))) for u, v in edges),
        rsu_vertices=frozenset(int(r) for r in rsu_vertices),
        uav_start=int(uav_start),
    )
    g.validate()
    return g


@dataclass(frozen=True)
class SlotOccupancy:
    edge_vehicles: tuple[int, ...]   # vehicles per edge id
    vertex_weight: tuple[int, ...]   # 0 / 1 (RSU) / 2 (UAV), UAV wins over RSU
    uav_vertex: int

    def check(self, graph: RoadTopologyGraph) -> None:
        if len(self.edge_vehicles) != graph.m or len(self.vertex_weight) != graph.n:
            raise StructuralError(
                f"occupancy dims ({len(self.edge_vehicles)},{len(self.vertex_weight)}) "
                f"do not match graph ({graph.m},{graph.n})"
            )
        if any(c < 0 for c in self.edge_vehicles):
            raise StructuralError("negative vehicle count")


def make_occupancy(graph: RoadTopologyGraph, edge_counts, uav_vertex: int) -> SlotOccupancy:
    """Build a slot occupancy; vertex weights derived from RSU set and UAV position."""
    counts = tuple(int(c) for c in edge_counts)
    weights = []
    for v in range(graph.n):
        if v == uav_vertex:
            weights.append(2)
        elif v in graph.rsu_vertices:
            weights.append(1)
        else:
            weights.append(0)
    occ = SlotOccupancy(counts, tuple(weights), int(uav_vertex))
    occ.check(graph)
    return occ


def classify_connectivity(graph: RoadTopologyGraph, occ: SlotOccupancy):
    """Two-pass classification: c-vertices first, then c-edges.

    v is a c-vertex iff it is covered (weight > 0) or some incident edge
    carries vehicles. e is a c-edge iff it carries vehicles or either
    endpoint is a c-vertex.
    """
    occ.check(graph)
    c_vertices = set()
    for v in range(graph.n):
        if occ.vertex_weight[v] > 0:
            c_vertices.add(v)
        elif any(occ.edge_vehicles[e] > 0 for e in graph.incident[v]):
            c_vertices.add(v)
    c_edges = set()
    for eid, (u, v) in enumerate(graph.edges):
        if occ.edge_vehicles[eid] > 0 or u in c_vertices or v in c_vertices:
            c_edges.add(eid)
    return c_vertices, c_edges


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:   # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass(frozen=True)
class DualConnectivityGraph:
    """Component partition of the dual graph (one dual vertex per c-edge).

    Components are materialized instead of dual edges: two c-edges belong to
    the same component iff they are linked by a chain of shared endpoints.
    Component order: by smallest contained edge id; edge ids sorted inside.
    """
    components: tuple[tuple[int, ...], ...]
    dual_weights: dict[int, int] = field(default_factory=dict)  # c-edge id -> p_e


def build_dcg(graph: RoadTopologyGraph, occ: SlotOccupancy,
              c_edges: set[int], c_vertices: set[int]) -> DualConnectivityGraph:
    uf = _UnionFind(c_edges)
    for v in range(graph.n):
        inc = [e for e in graph.incident[v] if e in c_edges]
        for a, b in zip(inc, inc[1:]):   # union consecutive incident c-edges
            uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for e in c_edges:
        groups.setdefault(uf.find(e), []).append(e)
    comps = sorted((tuple(sorted(g)) for g in groups.values()), key=lambda c: c[0])
    weights = {e: occ.edge_vehicles[e] for e in c_edges}
    return DualConnectivityGraph(components=tuple(comps), dual_weights=weights)


@dataclass(frozen=True)
class FragmentationReport:
    component_count: int                 # K(t)
    component_weights: tuple[int, ...]   # n_1..n_K, sum of dual vertex weights
    mean_component_weight: Fraction      # C(t) = sum(n_i) / K
    c_edge_ids: frozenset[int]
    c_vertex_ids: frozenset[int]


def fragmentation_metrics(dcg: DualConnectivityGraph,
                          c_vertices: set[int] | frozenset[int] = frozenset()) -> FragmentationReport:
    k = len(dcg.components)
    weights = tuple(sum(dcg.dual_weights[e] for e in comp) for comp in dcg.components)
    c = Fraction(sum(weights), k) if k else Fraction(0)
    return FragmentationReport(
        component_count=k,
        component_weights=weights,
        mean_component_weight=c,
        c_edge_ids=frozenset(dcg.dual_weights),
        c_vertex_ids=frozenset(c_vertices),
    )


def fragmentation(graph: RoadTopologyGraph, occ: SlotOccupancy) -> FragmentationReport:
    """Classify, build the dual partition and report K(t), n_i, C(t) in one call."""
    c_vertices, c_edges = classify_connectivity(graph, occ)
    dcg = build_dcg(graph, occ, c_edges, c_vertices)
    return fragmentation_metrics(dcg, c_vertices)


# ---------------------------------------------------------------------------
# Map file format
#
#   # comment / blank lines ignored
#   node <id> <x> <y>
#   edge <id> <u> <v>
#   rsu <id> [<id> ...]
#   uav_start <id>
# ---------------------------------------------------------------------------

def parse_map_text(text: str) -> RoadTopologyGraph:
    nodes: dict[int, tuple[float, float]] = {}
    edges: dict[int, tuple[int, int]] = {}
    rsus: list[int] = []
    uav_start = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "node":
                if len(args) != 3:
                    raise ValueError("expected: node <id> <x> <y>")
                nid = int(args[0])
                if nid in nodes:
                    raise ValueError(f"duplicate node id {nid}")
                nodes[nid] = (float(args[1]), float(args[2]))
            elif kind == "edge":
                if len(args) != 3:
                    raise ValueError("expected: edge <id> <u> <v>")
                eid = int(args[0])
                if eid in edges:
                    raise ValueError(f"duplicate edge id {eid}")
                edges[eid] = (int(args[1]), int(args[2]))
            elif kind == "rsu":
                if not args:
                    raise ValueError("expected: rsu <id> [<id> ...]")
                rsus.extend(int(a) for a in args)
            elif kind == "uav_start":
                if len(args) != 1:
                    raise ValueError("expected: uav_start <id>")
                uav_start = int(args[0])
            else:
                raise ValueError(f"unknown directive '{kind}'")
        except ValueError as exc:
            raise MapFormatError(f"line {lineno}: {exc}") from None
    if not nodes:
        raise MapFormatError("no 'node' entries in map file")
    if sorted(nodes) != list(range(len(nodes))):
        raise MapFormatError("node ids must be contiguous 0..n-1")
    if sorted(edges) != list(range(len(edges))):
        raise MapFormatError("edge ids must be contiguous 0..m-1")
    if uav_start is None:
        raise MapFormatError("missing 'uav_start' entry")
    return make_graph(
        positions=[nodes[i] for i in range(len(nodes))],
        edges=[edges[i] for i in range(len(edges))],
        rsu_vertices=rsus,
        uav_start=uav_start,
    )


def load_map(path) -> RoadTopologyGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_map_text(fh.read())


def dump_map_text(graph: RoadTopologyGraph) -> str:
    lines = []
    for i, (x, y) in enumerate(graph.positions):
        lines.append(f"node {i} {x} {y}")
    for eid, (u, v) in enumerate(graph.edges):
        lines.append(f"edge {eid} {u} {v}")
    if graph.rsu_vertices:
        lines.append("rsu " + " ".join(map(str, sorted(graph.rsu_vertices))))
    lines.append(f"uav_start {graph.uav_start}")
    return "\n".join(lines) + "\n"
