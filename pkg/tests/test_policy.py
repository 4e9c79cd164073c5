import numpy as np
import pytest
import torch
from dataclasses import replace

from skybridge.policy import (
    ActorCritic,
    CheckpointError,
    MASK_LOGIT,
    NORM_EPS,
    RolloutBuffer,
    TrainConfig,
    UpdateDiverged,
    checkpoint_load,
    checkpoint_save,
    config_hash,
    fuse,
    fused_logits,
    gae_advantages,
    masked_entropy,
    masked_kl,
    normalize_llm_logits,
    sa_ppo_loss,
    sa_ppo_update,
)

torch.set_default_dtype(torch.float64)


def test_normalize_llm_logits():
    z = normalize_llm_logits([0, 9])
    assert abs(z[0] + z[1]) < 1e-12     # centered
    assert abs(z[1] - 4.5 / (4.5 + NORM_EPS)) < 1e-15
    # constant vector -> all zeros, no blow-up
    assert np.allclose(normalize_llm_logits([5, 5, 5]), 0.0)


def test_fusion_lambda_zero_bit_exact():
    rng = np.random.default_rng(1)
    for _ in range(100):
        z_ppo = torch.from_numpy(rng.normal(size=7))
        z_llm = torch.from_numpy(rng.normal(size=7))
        p = fuse(z_ppo, z_llm, lam=0.0)
        q = torch.softmax(z_ppo, dim=-1)
        assert torch.equal(p, q)        # bitwise, not approx


def test_fusion_prior_only():
    rng = np.random.default_rng(2)
    z_llm = torch.from_numpy(rng.normal(size=5))
    p = fuse(torch.zeros(5), z_llm, lam=1.0)
    assert torch.allclose(p, torch.softmax(z_llm, dim=-1))


def test_fusion_mask():
    z = torch.zeros(4)
    mask = torch.tensor([True, False, True, False])
    p = fuse(z, None, 0.0, mask)
    assert p[1] == 0.0 and p[3] == 0.0
    assert abs(float(p.sum()) - 1.0) < 1e-12
    with pytest.raises(ValueError, match="all actions masked"):
        fuse(z, None, 0.0, torch.zeros(4, dtype=torch.bool))


def test_fusion_dominance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        z_ppo = torch.from_numpy(rng.normal(size=9))
        z_llm = torch.from_numpy(rng.normal(size=9))
        if (z_llm == z_llm.max()).sum() > 1:
            continue
        p = fuse(z_ppo, z_llm, lam=1e3)
        assert int(p.argmax()) == int(z_llm.argmax())


def test_gae_against_brute_force():
    rng = np.random.default_rng(4)
    T, N = 12, 3
    rewards = rng.normal(size=(T, N))
    values = rng.normal(size=(T, N))
    dones = (rng.random((T, N)) < 0.2).astype(float)
    last_values = rng.normal(size=N)
    gamma, lam = 0.95, 0.9
    adv, rets = gae_advantages(rewards, values, dones, last_values, gamma, lam)
    # brute force: explicit discounted sum of deltas, truncated at dones
    for i in range(N):
        for t in range(T):
            acc, coef = 0.0, 1.0
            for k in range(t, T):
                nv = last_values[i] if k == T - 1 else values[k + 1, i]
                delta = rewards[k, i] + gamma * nv * (1 - dones[k, i]) - values[k, i]
                acc += coef * delta
                if dones[k, i]:
                    break
                coef *= gamma * lam
            assert abs(adv[t, i] - acc) < 1e-10
    assert np.allclose(rets, adv + values)


def test_masked_entropy_and_kl_no_nan():
    p = torch.tensor([[0.5, 0.5, 0.0]])
    logp = torch.log(torch.where(p > 0, p, torch.ones_like(p)))
    ent = masked_entropy(p, logp)
    assert torch.isfinite(ent).all()
    assert abs(float(ent) - np.log(2)) < 1e-12
    kl = masked_kl(p, logp, logp)
    assert abs(float(kl)) < 1e-15


def _toy_batch(seed=0, n_state=6, n_act=4, b=16, with_prior=True):
    rng = np.random.default_rng(seed)
    states = torch.from_numpy(rng.normal(size=(b, n_state)))
    actions = torch.from_numpy(rng.integers(0, n_act, size=b))
    old_lp = torch.from_numpy(np.log(rng.uniform(0.05, 0.9, size=b)))
    adv = torch.from_numpy(rng.normal(size=b))
    rets = torch.from_numpy(rng.normal(size=b))
    z_llm = torch.from_numpy(rng.normal(size=(b, n_act))) if with_prior else None
    masks = torch.from_numpy(rng.random((b, n_act)) < 0.8)
    masks[:, 0] = True   # never fully masked
    return states, actions, old_lp, adv, rets, z_llm, masks


def test_loss_gradient_matches_finite_differences():
    torch.manual_seed(7)
    cfg = TrainConfig(beta_kl=0.07, lambda_fusion=0.8, c1=0.4, c2=0.02)
    model = ActorCritic(6, 4, hidden=8)
    batch = _toy_batch()
    loss, _ = sa_ppo_loss(model, cfg, *batch)
    loss.backward()
    eps = 1e-6
    worst = 0.0
    for param in model.parameters():
        g = param.grad.reshape(-1)
        flat = param.data.reshape(-1)
        idxs = np.linspace(0, len(flat) - 1, min(10, len(flat))).astype(int)
        for i in idxs:
            orig = float(flat[i])
            flat[i] = orig + eps
            lp, _ = sa_ppo_loss(model, cfg, *batch)
            flat[i] = orig - eps
            lm, _ = sa_ppo_loss(model, cfg, *batch)
            flat[i] = orig
            fd = (float(lp) - float(lm)) / (2 * eps)
            denom = max(abs(fd), abs(float(g[i])), 1e-8)
            worst = max(worst, abs(fd - float(g[i])) / denom)
    assert worst < 1e-4


def test_kl_zero_when_policy_equals_prior():
    # force the fused policy onto the prior: zero actor output, lam=1
    cfg = TrainConfig(beta_kl=0.5, lambda_fusion=1.0, c1=0.0, c2=0.0)
    model = ActorCritic(6, 4, hidden=8)
    with torch.no_grad():
        model.actor[-1].weight.zero_()
        model.actor[-1].bias.zero_()
        for layer in model.actor[:-1]:
            if hasattr(layer, "weight"):
                layer.weight.zero_()
                layer.bias.zero_()
    states, actions, old_lp, adv, rets, z_llm, _ = _toy_batch(with_prior=True)
    _, diag = sa_ppo_loss(model, cfg, states, actions, old_lp, adv, rets,
                          z_llm, None)
    assert abs(diag["kl"]) < 1e-10


def test_beta_zero_skips_kl_term():
    cfg = TrainConfig(beta_kl=0.0, lambda_fusion=0.0)
    model = ActorCritic(6, 4, hidden=8)
    states, actions, old_lp, adv, rets, _, masks = _toy_batch(with_prior=False)
    _, diag = sa_ppo_loss(model, cfg, states, actions, old_lp, adv, rets,
                          None, masks)
    assert diag["kl"] == 0.0


def test_update_diverges_on_nonfinite():
    cfg = TrainConfig(beta_kl=0.0, lambda_fusion=0.0, minibatch_size=8)
    model = ActorCritic(6, 4, hidden=8)
    rng = np.random.default_rng(5)
    buf = RolloutBuffer(
        states=rng.normal(size=(16, 6)),
        actions=rng.integers(0, 4, size=16).astype(np.int64),
        old_log_probs=np.full(16, np.nan),
        advantages=rng.normal(size=16),
        returns=rng.normal(size=16),
        z_llm=None, masks=None,
    )
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    with pytest.raises(UpdateDiverged):
        sa_ppo_update(buf, model, opt, cfg, torch.Generator().manual_seed(0))


def test_model_is_float64():
    model = ActorCritic(6, 4, hidden=8)
    assert all(p.dtype == torch.float64 for p in model.parameters())


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    model = ActorCritic(10, 5, hidden=12)
    path = tmp_path / "model.bin"
    checkpoint_save(model, path, map_hash="abc", cfg_hash="def")
    again = checkpoint_load(path, map_hash="abc", expect_dims=(10, 5))
    for (n1, t1), (n2, t2) in zip(model.state_dict().items(),
                                  again.state_dict().items()):
        assert n1 == n2 and torch.equal(t1, t2)


def test_checkpoint_guards(tmp_path):
    model = ActorCritic(10, 5, hidden=12)
    path = tmp_path / "model.bin"
    checkpoint_save(model, path, map_hash="abc", cfg_hash="def")
    with pytest.raises(CheckpointError, match="different map"):
        checkpoint_load(path, map_hash="zzz")
    with pytest.raises(CheckpointError, match="dims"):
        checkpoint_load(path, map_hash="abc", expect_dims=(10, 6))
    data = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_load(tmp_path / "trunc.bin")
    (tmp_path / "trail.bin").write_bytes(data + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_load(tmp_path / "trail.bin")
    (tmp_path / "junk.bin").write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_load(tmp_path / "junk.bin")


def test_config_hash_sensitivity():
    a = TrainConfig()
    assert config_hash(a) == config_hash(TrainConfig())
    assert config_hash(a) != config_hash(replace(a, seed=1))
