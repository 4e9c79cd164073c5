"""Rollout collection and the training loop tying together environments,
the scorer dispatcher and the policy update.

Single-worker execution is bit-reproducible for a fixed config and seed
(oracle/table scorers only; an external scorer is outside our control).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from .channel import EnergyParams
from .env import EnvConfig, UavVanetEnv, VectorEnv
from .policy import (ActorCritic, RolloutBuffer, TrainConfig, UpdateDiverged,
                     checkpoint_save, config_hash, fused_logits, gae_advantages,
                     normalize_llm_logits, sa_ppo_update)
from .road_graph import RoadTopologyGraph
from .semantic import serialize_state
from .traffic import TrafficSource


@dataclass
class EpisodeStats:
    reward: float
    flight_m: float
    mean_k: float
    mean_c: float
    mean_largest: float
    slots: int


@dataclass
class TrainResult:
    model: ActorCritic | None
    episode_rewards: list[float]
    episodes: list[EpisodeStats]
    update_rows: list[dict]
    diverged: bool = False

    @property
    def mean_flight(self) -> float:
        return float(np.mean([e.flight_m for e in self.episodes])) if self.episodes else 0.0

    @property
    def mean_c(self) -> float:
        return float(np.mean([e.mean_c for e in self.episodes])) if self.episodes else 0.0

    @property
    def mean_largest(self) -> float:
        return float(np.mean([e.mean_largest for e in self.episodes])) if self.episodes else 0.0


class _EpisodeTracker:
    def __init__(self, n_envs: int):
        self._acc = [self._blank() for _ in range(n_envs)]
        self.finished: list[EpisodeStats] = []

    @staticmethod
    def _blank():
        return {"reward": 0.0, "flight": 0.0, "k": [], "c": [], "lg": [], "slots": 0}

    def record(self, i: int, tr) -> bool:
        a = self._acc[i]
        a["reward"] += tr.reward
        a["flight"] += tr.flight_m
        a["k"].append(tr.fragment_count)
        a["c"].append(tr.mean_fragment_weight)
        a["lg"].append(tr.largest_fragment_weight)
        a["slots"] += 1
        if tr.done:
            self.finished.append(EpisodeStats(
                reward=a["reward"], flight_m=a["flight"],
                mean_k=float(np.mean(a["k"])) if a["k"] else 0.0,
                mean_c=float(np.mean(a["c"])) if a["c"] else 0.0,
                mean_largest=float(np.mean(a["lg"])) if a["lg"] else 0.0,
                slots=a["slots"],
            ))
            self._acc[i] = self._blank()
            return True
        return False


def _prior_logits(scorer, states, graph) -> np.ndarray:
    serialized = [serialize_state(s.raw_state_vector, graph) for s in states]
    items = scorer.score_batch(serialized)
    return np.stack([normalize_llm_logits(it.vector.scores) for it in items])


def run_training(graph: RoadTopologyGraph, traffic: TrafficSource,
                 energy: EnergyParams, env_config: EnvConfig,
                 config: TrainConfig, scorer=None, state_sink=None,
                 loss_csv=None, episodes_csv=None,
                 checkpoint_path=None, checkpoint_every: int = 0,
                 resume_from=None, map_hash: str | None = None) -> TrainResult:
    """Train until the episode budget is exhausted (or state_sink asks to stop).

    state_sink, when given, is called with every visited raw state vector and
    may return True to stop collection early (experience-collection stage).
    """
    config.validate()
    semantic_on = config.lambda_fusion > 0 or config.beta_kl > 0
    if semantic_on and scorer is None:
        raise ValueError("semantic terms enabled but no scorer provided")
    torch.manual_seed(config.seed)
    state_dim = graph.m + graph.n
    if resume_from is not None:
        from .policy import checkpoint_load
        model = checkpoint_load(resume_from, map_hash=map_hash,
                                expect_dims=(state_dim, graph.n))
    else:
        model = ActorCritic(state_dim, graph.n, config.hidden)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed + 1)
    venv = VectorEnv([UavVanetEnv(graph, traffic, energy, env_config)
                      for _ in range(config.num_envs)])
    venv.reset()
    tracker = _EpisodeTracker(len(venv))
    update_rows: list[dict] = []
    diverged = False
    stop = False
    update_idx = 0
    planned_updates = max(1, math.ceil(
        config.episodes * env_config.horizon / (config.rollout_length * config.num_envs)
    ))
    lam = config.lambda_fusion

    while not stop and len(tracker.finished) < config.episodes:
        n = len(venv)
        roll = {k: [] for k in ("states", "actions", "rewards", "dones",
                                "values", "logp", "z_llm", "masks")}
        for _ in range(config.rollout_length):
            states = venv.states()
            if state_sink is not None:
                for s in states:
                    if state_sink(s.raw_state_vector):
                        stop = True
                        break
                if stop:
                    break
            obs = np.array([s.normalized_state_vector for s in states], dtype=np.float64)
            masks = np.array([venv.envs[i].feasible_actions() for i in range(n)])
            obs_t = torch.from_numpy(obs)
            masks_t = torch.from_numpy(masks)
            with torch.no_grad():
                z_ppo = model.logits(obs_t)
                values = model.value(obs_t)
                if semantic_on:
                    z_llm = _prior_logits(scorer, states, graph)
                    z_llm_t = torch.from_numpy(z_llm)
                else:
                    z_llm, z_llm_t = None, None
                z_exec = fused_logits(z_ppo, z_llm_t, lam, masks_t)
                probs = torch.softmax(z_exec, dim=-1)
                actions = torch.multinomial(probs, 1, generator=gen).squeeze(1)
                if config.ratio_on == "fused":
                    logp_all = torch.log_softmax(z_exec, dim=-1)
                else:
                    logp_all = torch.log_softmax(
                        fused_logits(z_ppo, None, 0.0, masks_t), dim=-1)
                logp = logp_all.gather(1, actions.unsqueeze(1)).squeeze(1)
            trs = venv.step_batch(actions.tolist())
            for i, tr in enumerate(trs):
                tracker.record(i, tr)
            roll["states"].append(obs)
            roll["actions"].append(actions.numpy())
            roll["rewards"].append(np.array([t.reward for t in trs]))
            roll["dones"].append(np.array([float(t.done) for t in trs]))
            roll["values"].append(values.numpy())
            roll["logp"].append(logp.numpy())
            roll["masks"].append(masks)
            if semantic_on:
                roll["z_llm"].append(z_llm)
            if len(tracker.finished) >= config.episodes:
                break
        if stop or not roll["states"]:
            break
        t_len = len(roll["states"])
        with torch.no_grad():
            last_obs = np.array([s.normalized_state_vector for s in venv.states()],
                                dtype=np.float64)
            last_values = model.value(torch.from_numpy(last_obs)).numpy()
        rewards = np.stack(roll["rewards"])
        values = np.stack(roll["values"])
        dones = np.stack(roll["dones"])
        adv, rets = gae_advantages(rewards, values, dones, last_values,
                                   config.gamma, config.gae_lambda)
        buffer = RolloutBuffer(
            states=np.concatenate(roll["states"]),
            actions=np.concatenate(roll["actions"]).astype(np.int64),
            old_log_probs=np.concatenate(roll["logp"]),
            advantages=adv.reshape(-1),
            returns=rets.reshape(-1),
            z_llm=np.concatenate(roll["z_llm"]) if semantic_on else None,
            masks=np.concatenate(roll["masks"]),
        )
        beta = config.beta_kl
        if config.anneal_beta_kl and beta > 0:
            beta = beta * max(0.0, 1.0 - update_idx / planned_updates)
        try:
            diag = sa_ppo_update(buffer, model, optimizer, config, gen, beta_kl=beta)
        except UpdateDiverged:
            diverged = True
            break
        update_idx += 1
        update_rows.append({"update": update_idx, **diag,
                            "mean_reward": float(rewards.mean())})
        if checkpoint_path and checkpoint_every and update_idx % checkpoint_every == 0:
            checkpoint_save(model, checkpoint_path,
                            map_hash=map_hash or graph.fingerprint,
                            cfg_hash=config_hash(config))
    if checkpoint_path and not diverged:
        checkpoint_save(model, checkpoint_path,
                        map_hash=map_hash or graph.fingerprint,
                        cfg_hash=config_hash(config))
    result = TrainResult(model=model,
                         episode_rewards=[e.reward for e in tracker.finished],
                         episodes=tracker.finished, update_rows=update_rows,
                         diverged=diverged)
    if loss_csv:
        write_loss_csv(loss_csv, update_rows)
    if episodes_csv:
        write_episodes_csv(episodes_csv, tracker.finished)
    return result


def write_loss_csv(path, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update", "loss", "clip_loss", "value_loss", "entropy",
                    "kl", "mean_reward"])
        for r in rows:
            w.writerow([r["update"], repr(r["loss"]), repr(r["clip_loss"]),
                        repr(r["value_loss"]), repr(r["entropy"]), repr(r["kl"]),
                        repr(r["mean_reward"])])
    os.replace(tmp, path)


def write_episodes_csv(path, episodes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "reward", "flight_m", "mean_K", "mean_C", "slots"])
        for i, e in enumerate(episodes, start=1):
            w.writerow([i, repr(e.reward), repr(e.flight_m), repr(e.mean_k),
                        repr(e.mean_c), e.slots])
    os.replace(tmp, path)


def run_pure_semantic(graph: RoadTopologyGraph, traffic: TrafficSource,
                      energy: EnergyParams, env_config: EnvConfig,
                      scorer, episodes: int, seed: int) -> TrainResult:
    """Prior-only baseline: sample actions from softmax(z_llm), no learning."""
    gen = torch.Generator().manual_seed(seed)
    env = UavVanetEnv(graph, traffic, energy, env_config)
    env.reset()
    tracker = _EpisodeTracker(1)
    while len(tracker.finished) < episodes:
        state = env.state
        mask = torch.tensor(env.feasible_actions())
        z_llm = torch.from_numpy(
            _prior_logits(scorer, [state], graph)[0])
        probs = torch.softmax(fused_logits(z_llm, None, 0.0, mask), dim=-1)
        action = int(torch.multinomial(probs, 1, generator=gen))
        tr = env.step(action)
        tracker.record(0, tr)
        if tr.done:
            env.reset()
    return TrainResult(model=None,
                       episode_rewards=[e.reward for e in tracker.finished],
                       episodes=tracker.finished, update_rows=[])


def run_policy_rollouts(model: ActorCritic, graph: RoadTopologyGraph,
                        traffic: TrafficSource, energy: EnergyParams,
                        env_config: EnvConfig, episodes: int, seed: int,
                        scorer=None, lambda_fusion: float = 0.0,
                        trace_rows: list | None = None) -> TrainResult:
    """Frozen-policy evaluation episodes; optionally appends trace rows
    (episode, slot, uav_vertex, action, reward, K, C, energy_J, flight_m)."""
    gen = torch.Generator().manual_seed(seed)
    env = UavVanetEnv(graph, traffic, energy, env_config)
    env.reset()
    tracker = _EpisodeTracker(1)
    ep = 1
    while len(tracker.finished) < episodes:
        state = env.state
        obs = torch.tensor([state.normalized_state_vector], dtype=torch.float64)
        mask = torch.tensor([env.feasible_actions()])
        with torch.no_grad():
            z_ppo = model.logits(obs)
            z_llm = None
            if scorer is not None and lambda_fusion > 0:
                z_llm = torch.from_numpy(_prior_logits(scorer, [state], graph))
            probs = torch.softmax(
                fused_logits(z_ppo, z_llm, lambda_fusion, mask), dim=-1)
        action = int(torch.multinomial(probs[0], 1, generator=gen))
        tr = env.step(action)
        if trace_rows is not None:
            trace_rows.append([ep, state.slot, state.uav_vertex, action,
                               repr(tr.reward), tr.fragment_count,
                               repr(tr.mean_fragment_weight),
                               repr(tr.energy_j), repr(tr.flight_m)])
        if tracker.record(0, tr):
            ep += 1
        if tr.done:
            env.reset()
    return TrainResult(model=model,
                       episode_rewards=[e.reward for e in tracker.finished],
                       episodes=tracker.finished, update_rows=[])
