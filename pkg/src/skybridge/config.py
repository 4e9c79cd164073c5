"""Run configuration: one YAML file describing map, traffic, radio/energy
parameters, training setup and the scorer backend. All cross-field checks
happen at load time so commands can fail fast with exit code 2.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import yaml

from .channel import ChannelParams, EnergyParams
from .env import EnvConfig
from .policy import TrainConfig
from .road_graph import RoadTopologyGraph, load_map
from .traffic import TrafficSource, generate_traffic, load_trajectories, profile_from_dict


class ConfigError(ValueError):
    pass


@dataclass
class ScorerConfig:
    backend: str = "oracle"          # oracle | table | external
    table_path: str | None = None
    command: list[str] | None = None  # external over stdio
    host: str | None = None           # external over TCP
    port: int | None = None
    batch_cap: int = 128
    timeout_s: float = 30.0


@dataclass
class RunConfig:
    map_path: str
    traffic_mode: str                 # replay | profile
    traffic_path: str | None
    traffic_profile: dict | None
    channel: ChannelParams
    energy: EnergyParams
    env: EnvConfig
    train: TrainConfig
    scorer: ScorerConfig
    output_dir: str = "out"
    collect_n_target: int = 500
    collect_k_max: int = 200
    eval_episodes: int = 20
    compare_seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    compare_window: int = 100
    compare_threshold_fraction: float = 0.9
    pure_semantic_episodes: int = 50
    # resolved artifacts
    graph: RoadTopologyGraph = None
    traffic: TrafficSource = None


def _dataclass_from(cls, d: dict, where: str):
    allowed = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    coerced = {}
    for k, v in d.items():
        t = allowed[k].type
        try:
            # yaml reads "2.0e9" as a string (it wants e+9); be forgiving
            if t == "float" or t is float:
                v = float(v)
            elif t == "int" or t is int:
                v = int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{k}: expected a number, got {v!r}") from None
        coerced[k] = v
    return cls(**coerced)


def load_config(path, seed_override: int | None = None,
                output_dir_override: str | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        map_path = resolve(doc["map"])
    except KeyError:
        raise ConfigError("missing required key 'map'") from None
    graph = load_map(map_path)

    tdoc = doc.get("traffic", {})
    mode = tdoc.get("mode")
    if mode not in ("replay", "profile"):
        raise ConfigError("traffic.mode must be 'replay' or 'profile'")
    traffic_path = None
    profile_doc = None
    if mode == "replay":
        if "path" not in tdoc:
            raise ConfigError("traffic.mode=replay requires traffic.path")
        traffic_path = resolve(tdoc["path"])
        traffic = load_trajectories(traffic_path, graph)
    else:
        if "profile" not in tdoc:
            raise ConfigError("traffic.mode=profile requires traffic.profile")
        profile_doc = tdoc["profile"]
        traffic = generate_traffic(profile_from_dict(profile_doc), graph)

    channel = _dataclass_from(ChannelParams, doc.get("channel", {}), "channel")
    channel.validate()
    energy = _dataclass_from(EnergyParams, doc.get("energy", {}), "energy")
    energy.validate()
    env_cfg = _dataclass_from(EnvConfig, doc.get("env", {}), "env")
    train_cfg = _dataclass_from(TrainConfig, doc.get("train", {}), "train")
    if seed_override is not None:
        from dataclasses import replace
        train_cfg = replace(train_cfg, seed=seed_override)
    train_cfg.validate()
    scorer_doc = dict(doc.get("scorer", {}))
    if isinstance(scorer_doc.get("command"), str):
        import shlex
        scorer_doc["command"] = shlex.split(scorer_doc["command"])
    scorer = _dataclass_from(ScorerConfig, scorer_doc, "scorer")
    if scorer.backend not in ("oracle", "table", "external"):
        raise ConfigError("scorer.backend must be oracle, table or external")
    if scorer.backend == "table" and not scorer.table_path:
        raise ConfigError("scorer.backend=table requires scorer.table_path")
    if scorer.backend == "external" and not (scorer.command or scorer.host):
        raise ConfigError("scorer.backend=external requires command or host/port")
    if scorer.table_path:
        scorer.table_path = resolve(scorer.table_path)

    if traffic.slots < env_cfg.horizon:
        raise ConfigError(
            f"traffic provides {traffic.slots} slots, horizon needs {env_cfg.horizon}"
        )

    misc = doc.get("run", {})
    cfg = RunConfig(
        map_path=map_path, traffic_mode=mode, traffic_path=traffic_path,
        traffic_profile=profile_doc, channel=channel, energy=energy,
        env=env_cfg, train=train_cfg, scorer=scorer,
        output_dir=output_dir_override or misc.get("output_dir", "out"),
        collect_n_target=int(misc.get("collect_n_target", 500)),
        collect_k_max=int(misc.get("collect_k_max", 200)),
        eval_episodes=int(misc.get("eval_episodes", 20)),
        compare_seeds=tuple(misc.get("compare_seeds", [1, 2, 3, 4, 5])),
        compare_window=int(misc.get("compare_window", 100)),
        compare_threshold_fraction=float(misc.get("compare_threshold_fraction", 0.9)),
        pure_semantic_episodes=int(misc.get("pure_semantic_episodes", 50)),
        graph=graph, traffic=traffic,
    )
    return cfg


def build_scorer(cfg: RunConfig):
    """Instantiate the configured scorer backend against the run's map."""
    from .env import UavVanetEnv
    from .semantic import ExternalScorer, OracleScorer, TableScorer
    if cfg.scorer.backend == "oracle":
        env = UavVanetEnv(cfg.graph, cfg.traffic, cfg.energy, cfg.env)
        return OracleScorer(env)
    if cfg.scorer.backend == "table":
        return TableScorer.from_sft_jsonl(cfg.scorer.table_path, cfg.graph.n)
    return ExternalScorer(cfg.graph.n, command=cfg.scorer.command,
                          host=cfg.scorer.host, port=cfg.scorer.port,
                          batch_cap=cfg.scorer.batch_cap,
                          timeout_s=cfg.scorer.timeout_s)
