"""Actor-critic network, PPO machinery, logit fusion and the semantic-prior
regularized update.

Everything runs in float64 on CPU so that finite-difference gradient checks
and bit-reproducibility contracts hold. The prior logits are constants in
the update: no gradient flows through them.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

MASK_LOGIT = -1e9
NORM_EPS = 1e-7   # epsilon in the prior-logit normalization


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    c1: float = 0.5            # value loss coefficient
    c2: float = 0.01           # entropy coefficient
    beta_kl: float = 0.05      # KL-to-prior coefficient
    lambda_fusion: float = 1.0
    learning_rate: float = 3e-4
    minibatch_size: int = 64
    epochs_per_update: int = 4
    rollout_length: int = 256
    num_envs: int = 4
    seed: int = 0
    hidden: int = 128
    episodes: int = 400        # training budget
    anneal_beta_kl: bool = False
    ratio_on: str = "fused"    # importance ratio from "fused" or "actor" policy

    def validate(self) -> None:
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must be in (0,1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        if self.lambda_fusion < 0 or self.beta_kl < 0:
            raise ValueError("lambda_fusion and beta_kl must be >= 0")
        if self.ratio_on not in ("fused", "actor"):
            raise ValueError("ratio_on must be 'fused' or 'actor'")


def _mlp(in_dim: int, hidden: int, out_dim: int, out_gain: float) -> nn.Sequential:
    layers = [nn.Linear(in_dim, hidden), nn.Tanh(),
              nn.Linear(hidden, hidden), nn.Tanh(),
              nn.Linear(hidden, out_dim)]
    for i, layer in enumerate(layers):
        if isinstance(layer, nn.Linear):
            gain = out_gain if i == len(layers) - 1 else np.sqrt(2.0)
            nn.init.orthogonal_(layer.weight, gain=gain)
            nn.init.zeros_(layer.bias)
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    def __init__(self, state_dim: int, n_actions: int, hidden: int = 128):
        super().__init__()
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.actor = _mlp(state_dim, hidden, n_actions, out_gain=0.01)
        self.critic = _mlp(state_dim, hidden, 1, out_gain=1.0)
        self.double()

    def logits(self, states: torch.Tensor) -> torch.Tensor:
        return self.actor(states)

    def value(self, states: torch.Tensor) -> torch.Tensor:
        return self.critic(states).squeeze(-1)


def normalize_llm_logits(scores) -> np.ndarray:
    """Center and scale integer action scores into prior logits.

    Population std; a constant score vector maps to all-zero logits.
    """
    y = np.asarray(scores, dtype=np.float64)
    return (y - y.mean()) / (y.std() + NORM_EPS)


def fused_logits(z_ppo: torch.Tensor, z_llm: torch.Tensor | None,
                 lam: float, mask: torch.Tensor | None = None) -> torch.Tensor:
    # lam == 0 must reduce to the raw actor logits bit-for-bit
    z = z_ppo if (lam == 0.0 or z_llm is None) else z_ppo + lam * z_llm
    if mask is not None:
        z = torch.where(mask, z, torch.full_like(z, MASK_LOGIT))
    return z


def fuse(z_ppo: torch.Tensor, z_llm: torch.Tensor | None, lam: float,
         mask: torch.Tensor | None = None) -> torch.Tensor:
    """Fused action distribution softmax(z_ppo + lam * z_llm) with masking."""
    if mask is not None and not bool(mask.any()):
        raise ValueError("all actions masked")
    return torch.softmax(fused_logits(z_ppo, z_llm, lam, mask), dim=-1)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   last_values: np.ndarray, gamma: float, gae_lambda: float):
    """Generalized advantage estimates over a [T, N] rollout.

    dones[t, i] marks that env i's episode ended at step t (no bootstrap
    across the boundary). Returns (advantages, returns), both [T, N].
    """
    t_len, n_env = rewards.shape
    adv = np.zeros((t_len, n_env), dtype=np.float64)
    last_gae = np.zeros(n_env, dtype=np.float64)
    next_values = last_values.astype(np.float64)
    for t in range(t_len - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * not_done - values[t]
        last_gae = delta + gamma * gae_lambda * not_done * last_gae
        adv[t] = last_gae
        next_values = values[t]
    return adv, adv + values


def masked_entropy(probs: torch.Tensor, log_probs: torch.Tensor) -> torch.Tensor:
    """Entropy per row, treating zero-probability (masked) entries as 0."""
    contrib = torch.where(probs > 0, probs * log_probs, torch.zeros_like(probs))
    return -contrib.sum(dim=-1)


def masked_kl(p: torch.Tensor, log_p: torch.Tensor, log_q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) per row over the support of p (masked entries have p=0)."""
    contrib = torch.where(p > 0, p * (log_p - log_q), torch.zeros_like(p))
    return contrib.sum(dim=-1)


def sa_ppo_loss(model: ActorCritic, config: TrainConfig, states: torch.Tensor,
                actions: torch.Tensor, old_log_probs: torch.Tensor,
                advantages: torch.Tensor, returns: torch.Tensor,
                z_llm: torch.Tensor | None, masks: torch.Tensor | None,
                beta_kl: float | None = None):
    """Clipped-surrogate + value + entropy + KL-to-prior loss on one minibatch.

    old_log_probs must come from the same distribution family selected by
    config.ratio_on. Returns (loss, diagnostics dict of floats).
    """
    lam = config.lambda_fusion
    beta = config.beta_kl if beta_kl is None else beta_kl
    z_ppo = model.logits(states)
    if config.ratio_on == "fused":
        z_pol = fused_logits(z_ppo, z_llm, lam, masks)
    else:
        z_pol = fused_logits(z_ppo, None, 0.0, masks)
    log_probs = torch.log_softmax(z_pol, dim=-1)
    probs = torch.exp(log_probs)
    new_lp = log_probs.gather(1, actions.unsqueeze(1)).squeeze(1)
    ratio = torch.exp(new_lp - old_log_probs)
    clipped = torch.clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon)
    l_clip = torch.min(ratio * advantages, clipped * advantages).mean()
    values = model.value(states)
    l_vf = ((values - returns) ** 2).mean()
    # entropy bonus is always taken on the executed (fused) policy
    if config.ratio_on == "fused":
        ent_log_probs, ent_probs = log_probs, probs
    else:
        z_exec = fused_logits(z_ppo, z_llm, lam, masks)
        ent_log_probs = torch.log_softmax(z_exec, dim=-1)
        ent_probs = torch.exp(ent_log_probs)
    entropy = masked_entropy(ent_probs, ent_log_probs).mean()
    loss = -l_clip + config.c1 * l_vf - config.c2 * entropy
    kl_val = 0.0
    if beta != 0.0:
        if z_llm is None:
            raise ValueError("beta_kl > 0 requires prior logits in the buffer")
        z_prior = fused_logits(z_llm, None, 0.0, masks)
        log_prior = torch.log_softmax(z_prior, dim=-1)
        kl = masked_kl(ent_probs, ent_log_probs, log_prior).mean()
        loss = loss + beta * kl
        kl_val = float(kl.detach())
    diag = {
        "clip_loss": float(-l_clip.detach()),
        "value_loss": float(l_vf.detach()),
        "entropy": float(entropy.detach()),
        "kl": kl_val,
    }
    return loss, diag


@dataclass
class RolloutBuffer:
    """Flattened update batch; arrays indexed [sample]."""
    states: np.ndarray        # [B, state_dim] float64 (normalized state vectors)
    actions: np.ndarray       # [B] int64
    old_log_probs: np.ndarray  # [B] log-prob under the behavior policy family
    advantages: np.ndarray    # [B] normalized at update time
    returns: np.ndarray       # [B]
    z_llm: np.ndarray | None  # [B, n_actions] or None
    masks: np.ndarray | None  # [B, n_actions] bool or None


class UpdateDiverged(RuntimeError):
    pass


def sa_ppo_update(buffer: RolloutBuffer, model: ActorCritic,
                  optimizer: torch.optim.Optimizer, config: TrainConfig,
                  generator: torch.Generator, beta_kl: float | None = None) -> dict:
    """Run epochs_per_update passes of minibatch gradient descent on the
    regularized loss. Returns averaged loss diagnostics."""
    b = len(buffer.actions)
    adv = buffer.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    states = torch.from_numpy(buffer.states)
    actions = torch.from_numpy(buffer.actions)
    old_lp = torch.from_numpy(buffer.old_log_probs)
    advantages = torch.from_numpy(adv)
    returns = torch.from_numpy(buffer.returns)
    z_llm = None if buffer.z_llm is None else torch.from_numpy(buffer.z_llm)
    masks = None if buffer.masks is None else torch.from_numpy(buffer.masks)
    totals: dict[str, float] = {"loss": 0.0, "clip_loss": 0.0, "value_loss": 0.0,
                                "entropy": 0.0, "kl": 0.0}
    steps = 0
    for _ in range(config.epochs_per_update):
        perm = torch.randperm(b, generator=generator)
        for lo in range(0, b, config.minibatch_size):
            idx = perm[lo:lo + config.minibatch_size]
            loss, diag = sa_ppo_loss(
                model, config, states[idx], actions[idx], old_lp[idx],
                advantages[idx], returns[idx],
                None if z_llm is None else z_llm[idx],
                None if masks is None else masks[idx],
                beta_kl=beta_kl,
            )
            if not torch.isfinite(loss):
                raise UpdateDiverged(f"non-finite loss: {float(loss)!r}; diag={diag}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            totals["loss"] += float(loss.detach())
            for k, v in diag.items():
                totals[k] += v
            steps += 1
    return {k: v / steps for k, v in totals.items()}


# ---------------------------------------------------------------------------
# Checkpoints: magic + version + json header (hashes, shapes) + little-endian
# float64 weight payload.
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"SKYBCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode()).hexdigest()


def checkpoint_save(model: ActorCritic, path, map_hash: str, cfg_hash: str) -> None:
    tensors = [(name, t.detach().cpu().numpy().astype("<f8"))
               for name, t in model.state_dict().items()]
    header = {
        "version": CKPT_VERSION,
        "map_hash": map_hash,
        "config_hash": cfg_hash,
        "state_dim": model.state_dim,
        "n_actions": model.n_actions,
        "hidden": model.hidden,
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(arr.tobytes())


def checkpoint_load(path, map_hash: str | None = None,
                    expect_dims: tuple[int, int] | None = None) -> ActorCritic:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(CKPT_MAGIC)
    if len(data) < off + 4:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off:off + hlen])
    except json.JSONDecodeError:
        raise CheckpointError("corrupt checkpoint header") from None
    off += hlen
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} != {CKPT_VERSION}")
    if map_hash is not None and header["map_hash"] != map_hash:
        raise CheckpointError("checkpoint was trained on a different map")
    if expect_dims is not None and (header["state_dim"], header["n_actions"]) != expect_dims:
        raise CheckpointError(
            f"checkpoint dims ({header['state_dim']},{header['n_actions']}) "
            f"do not match environment {expect_dims}"
        )
    model = ActorCritic(header["state_dim"], header["n_actions"], header["hidden"])
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(data):
            raise CheckpointError("truncated checkpoint payload")
        arr = np.frombuffer(data[off:off + nbytes], dtype="<f8").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        off += nbytes
    if off != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    model.load_state_dict(state)
    return model
