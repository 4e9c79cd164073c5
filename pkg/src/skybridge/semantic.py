"""State serialization, per-action reward scoring, SFT dataset emission and
the scorer abstraction (oracle / table / external process backends).

The wire formats are deliberately byte-stable: serialized inputs are
canonical JSON used as dedup/cache keys, and scorer outputs are single-line
JSON objects carrying a digit string of length n.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from .env import UavVanetEnv
from .road_graph import RoadTopologyGraph

SCORE_STAR = 9
INSTRUCTION_VERSION = 1
INSTRUCTION = (
    "You are a road-network topology expert controlling a relay UAV. "
    "The input JSON describes one time slot: 'vehicle_per_edge' lists the "
    "vehicle count on every road segment (canonical edge order) and "
    "'node_weight' marks intersection coverage (0 = uncovered, 1 = roadside "
    "unit, 2 = current UAV position). Rate every intersection as the UAV's "
    "next hover target with an integer score from 0 (worst) to 9 (best), "
    "preferring targets that merge disconnected vehicle clusters at low "
    "flight cost. Reply with exactly one JSON object "
    '{"scores": "<one digit per intersection, canonical node order>"} '
    "and nothing else."
)


class SerializationError(ValueError):
    pass


class ScorerTransportError(RuntimeError):
    """External scorer process/socket failure or timeout."""


@dataclass(frozen=True)
class SerializedState:
    instruction: str
    input: str   # canonical JSON text (byte-stable)


@dataclass(frozen=True)
class ActionScoreVector:
    scores: tuple[int, ...]
    score_star: int = SCORE_STAR

    @property
    def digits(self) -> str:
        return "".join(str(s) for s in self.scores)


@dataclass(frozen=True)
class SftRecord:
    instruction: str
    input: str
    output: str   # canonical JSON {"scores":"<digits>"}


def canonical_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)


def serialize_state(raw_state_vector, graph: RoadTopologyGraph) -> SerializedState:
    raw = list(int(v) for v in raw_state_vector)
    if len(raw) != graph.m + graph.n:
        raise SerializationError(
            f"raw state length {len(raw)} != m+n = {graph.m + graph.n}"
        )
    payload = canonical_json({
        "vehicle_per_edge": raw[:graph.m],
        "node_weight": raw[graph.m:],
    })
    return SerializedState(instruction=INSTRUCTION, input=payload)


def deserialize_input(text: str, graph: RoadTopologyGraph):
    """Parse a serialized input back into (edge_counts, uav_vertex)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SerializationError(f"input is not JSON: {exc}") from None
    try:
        edges = [int(v) for v in obj["vehicle_per_edge"]]
        weights = [int(v) for v in obj["node_weight"]]
    except (KeyError, TypeError, ValueError):
        raise SerializationError("input JSON missing/invalid fields") from None
    if len(edges) != graph.m or len(weights) != graph.n:
        raise SerializationError("input JSON has wrong dimensions for this map")
    uavs = [i for i, w in enumerate(weights) if w == 2]
    if len(uavs) != 1:
        raise SerializationError("input JSON must mark exactly one UAV vertex")
    return edges, uavs[0]


def score_actions(env: UavVanetEnv, token) -> np.ndarray:
    """Immediate reward for every action from the snapshotted state.

    Infeasible actions (under masking) get the sentinel -beta_energy, which
    is strictly below any feasible reward.
    """
    state = token.state
    env.restore(token)
    feasible = env.feasible_actions(state)
    sentinel = -env.config.beta_energy
    rewards = np.full(env.n_actions, sentinel, dtype=np.float64)
    for a in range(env.n_actions):
        if not feasible[a]:
            continue
        env.restore(token)
        rewards[a] = env.step(a).reward
    env.restore(token)
    return rewards


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (np.round would round half to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def neutral_scores(n: int, score_star: int = SCORE_STAR) -> ActionScoreVector:
    mid = int(round_half_away(np.array([score_star / 2.0]))[0])
    return ActionScoreVector(scores=(mid,) * n, score_star=score_star)


def discretize_scores(r, score_star: int = SCORE_STAR) -> ActionScoreVector:
    """Map a reward vector onto integer digits 0..score_star by range
    normalization. Constant vectors map to the neutral mid score."""
    r = np.asarray(r, dtype=np.float64)
    lo, hi = r.min(), r.max()
    if hi == lo:
        return neutral_scores(len(r), score_star)
    digits = round_half_away((r - lo) / (hi - lo) * score_star).astype(int)
    return ActionScoreVector(scores=tuple(int(d) for d in digits), score_star=score_star)


def output_text(vec: ActionScoreVector) -> str:
    return canonical_json({"scores": vec.digits})


def parse_output(text: str, n: int, score_star: int = SCORE_STAR) -> ActionScoreVector:
    """Validate a scorer output line: JSON object with a digit string of
    length n. Raises SerializationError otherwise."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SerializationError(f"output is not JSON: {exc}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("scores"), str):
        raise SerializationError("output JSON must be {\"scores\": \"<digits>\"}")
    digits = obj["scores"]
    if len(digits) != n or not digits.isdigit():
        raise SerializationError(f"scores must be {n} decimal digits")
    return ActionScoreVector(scores=tuple(int(c) for c in digits), score_star=score_star)


# ---------------------------------------------------------------------------
# State collection (baseline exploration) and SFT dataset emission
# ---------------------------------------------------------------------------

class StateDatabase:
    """Insertion-ordered store of raw states, deduplicated by serialized bytes."""

    def __init__(self, graph: RoadTopologyGraph):
        self.graph = graph
        self._entries: dict[str, tuple[int, ...]] = {}

    def __len__(self):
        return len(self._entries)

    def add(self, raw_state_vector) -> bool:
        key = serialize_state(raw_state_vector, self.graph).input
        if key in self._entries:
            return False
        self._entries[key] = tuple(int(v) for v in raw_state_vector)
        return True

    def raw_states(self) -> list[tuple[int, ...]]:
        return list(self._entries.values())

    def serialized(self) -> list[SerializedState]:
        return [SerializedState(INSTRUCTION, key) for key in self._entries]

    def save_jsonl(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for key in self._entries:
                fh.write(key + "\n")
        os.replace(tmp, path)

    @classmethod
    def load_jsonl(cls, path, graph: RoadTopologyGraph) -> "StateDatabase":
        db = cls(graph)
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    edges, uav = deserialize_input(line, graph)
                except SerializationError as exc:
                    raise SerializationError(f"{path}: line {lineno}: {exc}") from None
                from .road_graph import make_occupancy
                occ = make_occupancy(graph, edges, uav)
                db.add(tuple(occ.edge_vehicles) + tuple(occ.vertex_weight))
        return db


@dataclass
class CollectResult:
    db: StateDatabase
    episodes_run: int
    states_seen: int   # pre-dedup count

    @property
    def dedup_ratio(self) -> float:
        return len(self.db) / self.states_seen if self.states_seen else 0.0


def collect_states(graph, traffic, energy, env_config, train_config,
                   n_target: int, k_max: int) -> CollectResult:
    """Run baseline (prior-free) PPO exploration while harvesting deduplicated
    raw states; stops at n_target states or k_max episodes."""
    from dataclasses import replace
    from .train import run_training
    db = StateDatabase(graph)
    seen = [0]

    def sink(raw_state_vector) -> bool:
        seen[0] += 1
        db.add(raw_state_vector)
        return len(db) >= n_target

    baseline_cfg = replace(train_config, lambda_fusion=0.0, beta_kl=0.0,
                           episodes=k_max)
    result = run_training(graph, traffic, energy, env_config, baseline_cfg,
                          scorer=None, state_sink=sink)
    return CollectResult(db=db, episodes_run=len(result.episode_rewards),
                         states_seen=seen[0])


def build_sft_dataset(db: StateDatabase, env: UavVanetEnv, out_path,
                      score_star: int = SCORE_STAR) -> int:
    """One record per stored state, JSONL in insertion order. Atomic write."""
    if len(db) == 0:
        raise ValueError("state database is empty")
    tmp = f"{out_path}.tmp"
    count = 0
    with open(tmp, "w", encoding="utf-8") as fh:
        for raw in db.raw_states():
            ser = serialize_state(raw, env.graph)
            edges, uav = deserialize_input(ser.input, env.graph)
            env.restore_raw(edges, uav)
            token = env.snapshot()
            rewards = score_actions(env, token)
            vec = discretize_scores(rewards, score_star)
            rec = {"instruction": ser.instruction, "input": ser.input,
                   "output": output_text(vec)}
            try:
                fh.write(canonical_json(rec) + "\n")
            except OSError as exc:
                raise OSError(f"failed writing record {count}: {exc}") from exc
            count += 1
    os.replace(tmp, out_path)
    return count


def load_sft_jsonl(path) -> list[SftRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(SftRecord(instruction=obj["instruction"],
                                         input=obj["input"], output=obj["output"]))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise SerializationError(f"{path}: line {lineno}: bad SFT record") from None
    return records


# ---------------------------------------------------------------------------
# Scorer backends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreItem:
    vector: ActionScoreVector
    status: str          # "ok" | "miss" | "parse_error"
    raw_output: str      # the output text actually produced/received


class OracleScorer:
    """Ground-truth backend: per-action immediate rewards from the environment,
    digitized. Pure, hence memoizable by serialized input bytes."""

    def __init__(self, env: UavVanetEnv, score_star: int = SCORE_STAR,
                 cache: bool = True):
        self.env = env
        self.score_star = score_star
        self._cache: dict[str, ActionScoreVector] | None = {} if cache else None

    def score_one(self, state: SerializedState) -> ActionScoreVector:
        if self._cache is not None and state.input in self._cache:
            return self._cache[state.input]
        edges, uav = deserialize_input(state.input, self.env.graph)
        self.env.restore_raw(edges, uav)
        token = self.env.snapshot()
        vec = discretize_scores(score_actions(self.env, token), self.score_star)
        if self._cache is not None:
            self._cache[state.input] = vec
        return vec

    def score_batch(self, states: list[SerializedState]) -> list[ScoreItem]:
        out = []
        for s in states:
            vec = self.score_one(s)
            out.append(ScoreItem(vector=vec, status="ok", raw_output=output_text(vec)))
        return out


class TableScorer:
    """Replay backend: lookup by serialized input bytes; misses fall back to
    the neutral vector."""

    def __init__(self, table: dict[str, ActionScoreVector], n_actions: int,
                 score_star: int = SCORE_STAR):
        self.table = table
        self.n_actions = n_actions
        self.score_star = score_star

    @classmethod
    def from_sft_jsonl(cls, path, n_actions: int,
                       score_star: int = SCORE_STAR) -> "TableScorer":
        table = {}
        for rec in load_sft_jsonl(path):
            table[rec.input] = parse_output(rec.output, n_actions, score_star)
        return cls(table, n_actions, score_star)

    def score_batch(self, states: list[SerializedState]) -> list[ScoreItem]:
        out = []
        for s in states:
            vec = self.table.get(s.input)
            if vec is None:
                fallback = neutral_scores(self.n_actions, self.score_star)
                out.append(ScoreItem(vector=fallback, status="miss",
                                     raw_output=output_text(fallback)))
            else:
                out.append(ScoreItem(vector=vec, status="ok",
                                     raw_output=output_text(vec)))
        return out


class _LineChannel:
    """Newline-delimited JSON over a subprocess stdio pipe or a TCP socket."""

    def __init__(self, *, command=None, host=None, port=None):
        self.proc = None
        self.sock = None
        self._buf = b""
        if command is not None:
            self.proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                bufsize=0,
            )
            self._rfd = self.proc.stdout
        elif host is not None:
            self.sock = socket.create_connection((host, port))
            self._rfd = None
        else:
            raise ValueError("need a command or a host/port")

    def send_line(self, line: str) -> None:
        data = line.encode("utf-8") + b"\n"
        try:
            if self.proc is not None:
                self.proc.stdin.write(data)
                self.proc.stdin.flush()
            else:
                self.sock.sendall(data)
        except (BrokenPipeError, OSError) as exc:
            raise ScorerTransportError(f"scorer write failed: {exc}") from exc

    def recv_line(self, deadline: float) -> str:
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ScorerTransportError("scorer response timed out")
            chunk = self._read_some(remaining)
            if not chunk:
                raise ScorerTransportError("scorer closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8", errors="replace")

    def _read_some(self, timeout: float) -> bytes:
        import selectors
        if self.proc is not None:
            if self.proc.poll() is not None:
                raise ScorerTransportError(
                    f"scorer process exited with code {self.proc.returncode}"
                )
            sel = selectors.DefaultSelector()
            sel.register(self._rfd, selectors.EVENT_READ)
            ready = sel.select(timeout)
            sel.close()
            if not ready:
                raise ScorerTransportError("scorer response timed out")
            return os.read(self._rfd.fileno(), 65536)
        self.sock.settimeout(timeout)
        try:
            return self.sock.recv(65536)
        except socket.timeout:
            raise ScorerTransportError("scorer response timed out") from None

    def close(self) -> None:
        if self.proc is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            self.proc.terminate()
            self.proc.wait(timeout=5)
        if self.sock is not None:
            self.sock.close()


class ExternalScorer:
    """Request/response NDJSON protocol against an external scoring process.

    Requests: {"id": k, "instruction": ..., "input": ...} one per line.
    Responses: {"id": k, "output": <text>}; the output text must itself parse
    as {"scores": "<n digits>"}. Invalid outputs degrade to the neutral
    vector with status "parse_error" (counted for PSR); transport failures
    raise ScorerTransportError.
    """

    def __init__(self, n_actions: int, *, command=None, host=None, port=None,
                 batch_cap: int = 128, timeout_s: float = 30.0,
                 score_star: int = SCORE_STAR):
        self.n_actions = n_actions
        self.batch_cap = batch_cap
        self.timeout_s = timeout_s
        self.score_star = score_star
        self.channel = _LineChannel(command=command, host=host, port=port)
        self._next_id = 0

    def close(self) -> None:
        self.channel.close()

    def score_batch(self, states: list[SerializedState]) -> list[ScoreItem]:
        out: list[ScoreItem] = []
        for lo in range(0, len(states), self.batch_cap):
            out.extend(self._score_chunk(states[lo:lo + self.batch_cap]))
        return out

    def _score_chunk(self, states: list[SerializedState]) -> list[ScoreItem]:
        ids = []
        for s in states:
            req_id = self._next_id
            self._next_id += 1
            ids.append(req_id)
            self.channel.send_line(canonical_json(
                {"id": req_id, "instruction": s.instruction, "input": s.input}
            ))
        deadline = time.monotonic() + self.timeout_s
        pending: dict[int, str] = {}
        raw_by_id: dict[int, str] = {}
        want = set(ids)
        while want:
            line = self.channel.recv_line(deadline)
            rid, output = self._parse_response(line)
            if rid is None:
                # unattributable garbage line: charge it to the oldest pending id
                rid = min(want)
                output = line
            if rid in want:
                want.discard(rid)
                raw_by_id[rid] = output
        items = []
        for rid in ids:
            raw = raw_by_id[rid]
            try:
                vec = parse_output(raw, self.n_actions, self.score_star)
                items.append(ScoreItem(vector=vec, status="ok", raw_output=raw))
            except SerializationError:
                fallback = neutral_scores(self.n_actions, self.score_star)
                items.append(ScoreItem(vector=fallback, status="parse_error",
                                       raw_output=raw))
        return items

    @staticmethod
    def _parse_response(line: str):
        try:
            obj = json.loads(line)
            rid = obj["id"]
            output = obj["output"]
            if not isinstance(rid, int) or not isinstance(output, str):
                return None, None
            return rid, output
        except (json.JSONDecodeError, KeyError, TypeError):
            return None, None
