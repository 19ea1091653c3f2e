"""Learner: network forward/init, advantage estimation, the optimizer loss
and its analytic gradients, the update loop, and checkpoint IO."""

import numpy as np
import pytest

from fliplab.engine import DEFENDER, GameConfig
from fliplab.errors import CheckpointError, ConfigError
from fliplab.learner import (AdamState, FixedOpponent, MixtureOpponent,
                             NetPolicy, RolloutBuffer, TrainConfig,
                             compute_advantages, forward_batch, forward_cells,
                             init_network, load_checkpoint, loss_and_grads,
                             ppo_update, sample_index, save_checkpoint,
                             train_against)
from fliplab.learner.checkpoint import FORMAT_VERSION, MAGIC
from fliplab.learner.network import LOGIT_BOUND, bound_logits
from fliplab.learner.ppo import adam_step, clip_grads
from fliplab.backends import ActorDesc
from fliplab.seeding import TAG_SHUFFLE, stream

OBS_DIM = 34
ACT_DIM = 3


def small_params(seed=0, hidden=(8, 8)):
    return init_network(OBS_DIM, ACT_DIM, hidden, seed=seed)


def random_buffer(rng, n_steps=24, n_episodes=3, params=None):
    """A synthetic buffer with plausible values and perturbed behavior logp."""
    params = params or small_params()
    cells = np.stack([rng.integers(0, 17, size=n_steps),
                      rng.integers(17, 34, size=n_steps)], axis=1).astype(np.int32)
    out = forward_batch(params, cells)
    actions = np.array([sample_index(p, rng.random()) for p in out["probs"]])
    # offset behavior log-probs so the surrogate ratios straddle the clip range
    logp = out["logp"][np.arange(n_steps), actions] + rng.uniform(-0.4, 0.4, n_steps)
    rewards = rng.normal(0.0, 1.0, n_steps)
    values = out["values"] + rng.normal(0.0, 0.5, n_steps)
    bounds = np.sort(rng.choice(np.arange(1, n_steps), n_episodes - 1,
                                replace=False))
    starts = np.concatenate([[0], bounds]).astype(np.int64)
    return RolloutBuffer(cells, actions, logp, rewards, values, starts), params


# ---------------------------------------------------------------------------
# network basics

def test_init_network_shapes_and_heads():
    p = small_params(hidden=(16, 8))
    assert p.w1.shape == (16, OBS_DIM) and p.v1.shape == (16, OBS_DIM)
    assert p.w2.shape == (8, 16) and p.v2.shape == (8, 16)
    assert p.wp.shape == (ACT_DIM, 8) and p.wv.shape == (8,)
    assert p.obs_dim == OBS_DIM and p.action_dim == ACT_DIM
    assert p.hidden == (16, 8)
    # heads start near zero: fresh policies are near-uniform, values near 0
    cells = np.array([[16, 33]], dtype=np.int32)
    probs, logp, value = forward_cells(p, cells[0])
    assert np.all(np.abs(probs - 1.0 / 3.0) < 0.05)
    assert abs(value) < 1.0


def test_init_network_deterministic_by_seed():
    a, b = small_params(seed=3), small_params(seed=3)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), small_params(seed=4).flat())


def test_forward_cells_matches_forward_batch():
    p = small_params(seed=1)
    cells = np.array([[2, 20], [16, 33], [0, 17]], dtype=np.int32)
    out = forward_batch(p, cells)
    for i, row in enumerate(cells):
        probs, logp, value = forward_cells(p, row)
        assert np.allclose(probs, out["probs"][i], atol=1e-12)
        assert np.allclose(logp, out["logp"][i], atol=1e-12)
        assert value == pytest.approx(out["values"][i], abs=1e-12)


def test_probabilities_normalized_and_logits_bounded():
    p = small_params(seed=2)
    # blow up the policy head: logits must stay inside the soft bound and
    # probabilities keep a positive exploration floor
    p.wp[:] = 0.0
    p.bp[:] = np.array([500.0, -500.0, 0.0])
    probs, logp, _ = forward_cells(p, np.array([16, 33]))
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    floor = 1.0 / (1.0 + 2.0 * np.exp(2.0 * LOGIT_BOUND))
    assert probs.min() >= floor * 0.999
    assert probs.max() <= 1.0 - 2.0 * floor * 0.999
    assert np.all(np.abs(bound_logits(p.bp)) <= LOGIT_BOUND)


def test_sample_index_cumulative_rule():
    probs = np.array([0.2, 0.5, 0.3])
    assert sample_index(probs, 0.1) == 0
    assert sample_index(probs, 0.21) == 1
    assert sample_index(probs, 0.69) == 1
    assert sample_index(probs, 0.71) == 2
    assert sample_index(probs, 0.999999999) == 2


def test_net_policy_greedy_consumes_no_randomness():
    from fliplab.engine import KnowledgeState

    p = small_params(seed=5)
    pol = NetPolicy(p, memory_limit=16, greedy=True)
    rng = stream(0)
    before = rng.bit_generator.state["state"]["state"]
    pol.reset(rng)
    kn = KnowledgeState(DEFENDER, 1)
    pol.act(kn)
    after = rng.bit_generator.state["state"]["state"]
    assert before == after


# ---------------------------------------------------------------------------
# advantage estimation oracle

def test_gae_hand_computed_single_episode():
    buffer = RolloutBuffer(
        cells=np.zeros((3, 2), dtype=np.int32),
        actions=np.zeros(3, dtype=np.int64),
        logp=np.zeros(3),
        rewards=np.array([1.0, 0.0, 2.0]),
        values=np.array([0.5, 0.2, 0.1]),
        starts=np.array([0]),
    )
    adv, ret = compute_advantages(buffer, gamma=0.9, lam=0.8)
    # backwards recursion, no bootstrap past the horizon:
    # t=2: d = 2 - 0.1 = 1.9                      -> A = 1.9
    # t=1: d = 0 + 0.9*0.1 - 0.2 = -0.11          -> A = -0.11 + 0.72*1.9
    # t=0: d = 1 + 0.9*0.2 - 0.5 = 0.68           -> A = 0.68 + 0.72*A1
    assert adv == pytest.approx([1.58576, 1.258, 1.9], abs=1e-12)
    assert ret == pytest.approx([2.08576, 1.458, 2.0], abs=1e-12)


def test_gae_respects_episode_boundaries():
    buffer = RolloutBuffer(
        cells=np.zeros((2, 2), dtype=np.int32),
        actions=np.zeros(2, dtype=np.int64),
        logp=np.zeros(2),
        rewards=np.array([1.0, 2.0]),
        values=np.array([0.3, 0.4]),
        starts=np.array([0, 1]),  # two single-step episodes
    )
    adv, _ = compute_advantages(buffer, gamma=0.99, lam=0.95)
    # single-step episodes reduce to r - v regardless of gamma/lambda
    assert adv == pytest.approx([0.7, 1.6], abs=1e-12)


def test_gae_monte_carlo_limit():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=7)
    values = rng.normal(size=7)
    buffer = RolloutBuffer(
        cells=np.zeros((7, 2), dtype=np.int32),
        actions=np.zeros(7, dtype=np.int64),
        logp=np.zeros(7),
        rewards=rewards,
        values=values,
        starts=np.array([0]),
    )
    adv, ret = compute_advantages(buffer, gamma=1.0, lam=1.0)
    # gamma = lambda = 1 collapses to reward-to-go minus baseline
    to_go = np.cumsum(rewards[::-1])[::-1]
    assert adv == pytest.approx(to_go - values, abs=1e-10)
    assert ret == pytest.approx(to_go, abs=1e-10)


def test_buffer_validation_rejects_malformed():
    good = RolloutBuffer(np.zeros((2, 2), np.int32), np.zeros(2, np.int64),
                         np.zeros(2), np.zeros(2), np.zeros(2), np.array([0]))
    good.validate()
    bad = RolloutBuffer(np.zeros((2, 2), np.int32), np.zeros(2, np.int64),
                        np.zeros(2), np.zeros(2), np.zeros(2), np.array([1]))
    with pytest.raises(ConfigError):
        bad.validate()
    with pytest.raises(ConfigError):
        RolloutBuffer(np.zeros((0, 2), np.int32), np.zeros(0, np.int64),
                      np.zeros(0), np.zeros(0), np.zeros(0),
                      np.array([0])).validate()


# ---------------------------------------------------------------------------
# loss and analytic gradients

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    buffer, params = random_buffer(rng)
    adv, ret = compute_advantages(buffer, 0.99, 0.95)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    config = TrainConfig(hidden=(8, 8))

    def loss_at(flat):
        probe = params.copy()
        probe.assign_flat(flat)
        total, _, _ = loss_and_grads(probe, buffer.cells, buffer.actions,
                                     buffer.logp, adv, ret, config)
        return total

    _, grads, _ = loss_and_grads(params, buffer.cells, buffer.actions,
                                 buffer.logp, adv, ret, config)
    flat_grads = np.concatenate([g.ravel() for g in grads])
    flat = params.flat()
    h = 3e-5
    coords = rng.choice(len(flat), size=120, replace=False)
    worst = 0.0
    for c in coords:
        fp, fm = flat.copy(), flat.copy()
        fp[c] += h
        fm[c] -= h
        numeric = (loss_at(fp) - loss_at(fm)) / (2 * h)
        denom = max(abs(numeric), abs(flat_grads[c]), 1e-8)
        worst = max(worst, abs(numeric - flat_grads[c]) / denom)
    # the clipped surrogate is only piecewise smooth: coordinates whose
    # perturbation crosses a clip/min branch boundary pick up O(h) error,
    # so the bound is looser than machine-precision smooth-function checks
    assert worst <= 1e-4, f"worst relative gradient error {worst:.3e}"


def test_loss_value_matches_direct_formula():
    """Recompute the clipped-surrogate loss from forward outputs and compare."""
    rng = np.random.default_rng(11)
    buffer, params = random_buffer(rng, n_steps=16, n_episodes=2)
    adv, ret = compute_advantages(buffer, 0.99, 0.95)
    config = TrainConfig(hidden=(8, 8), clip_epsilon=0.2, value_coef=0.5,
                         entropy_coef=0.01)
    total, _, stats = loss_and_grads(params, buffer.cells, buffer.actions,
                                     buffer.logp, adv, ret, config)
    out = forward_batch(params, buffer.cells)
    lp = out["logp"][np.arange(16), buffer.actions]
    ratio = np.exp(lp - buffer.logp)
    clipped = np.clip(ratio, 0.8, 1.2)
    policy = -np.minimum(ratio * adv, clipped * adv).mean()
    value = np.mean((out["values"] - ret) ** 2)
    entropy = -(out["probs"] * out["logp"]).sum(axis=1).mean()
    assert total == pytest.approx(policy + 0.5 * value - 0.01 * entropy,
                                  abs=1e-12)
    assert stats["policy_loss"] == pytest.approx(policy, abs=1e-12)
    assert stats["value_loss"] == pytest.approx(value, abs=1e-12)
    assert stats["entropy"] == pytest.approx(entropy, abs=1e-12)
    assert stats["clip_fraction"] == pytest.approx(
        np.mean(np.abs(ratio - 1.0) > 0.2), abs=1e-12)


def test_clipped_samples_contribute_no_policy_gradient():
    """A sample pushed far outside the clip range must stop influencing the
    policy gradient (the clipped branch is constant in the parameters)."""
    params = small_params(seed=3)
    cells = np.array([[5, 20]], dtype=np.int32)
    out = forward_batch(params, cells)
    action = np.array([0])
    lp = out["logp"][0, 0]
    config = TrainConfig(hidden=(8, 8), value_coef=0.0, entropy_coef=0.0)
    # ratio = exp(lp - logp_old) = 2.0 with positive advantage: clipped at 1.2
    # and min() takes the clipped branch -> zero gradient everywhere
    logp_old = np.array([lp - np.log(2.0)])
    _, grads, _ = loss_and_grads(params, cells, action, logp_old,
                                 np.array([1.0]), out["values"], config)
    assert all(np.allclose(g, 0.0, atol=1e-15) for g in grads)
    # the same ratio with negative advantage stays on the unclipped branch
    _, grads, _ = loss_and_grads(params, cells, action, logp_old,
                                 np.array([-1.0]), out["values"], config)
    assert any(np.abs(g).max() > 1e-8 for g in grads)


def test_zero_advantage_zero_coefs_gives_zero_gradient():
    rng = np.random.default_rng(13)
    buffer, params = random_buffer(rng, n_steps=12, n_episodes=2)
    config = TrainConfig(hidden=(8, 8), value_coef=0.0, entropy_coef=0.0)
    # behavior logp exactly on-policy: ratio == 1 everywhere
    out = forward_batch(params, buffer.cells)
    logp = out["logp"][np.arange(12), buffer.actions]
    _, grads, _ = loss_and_grads(params, buffer.cells, buffer.actions, logp,
                                 np.zeros(12), out["values"], config)
    assert all(np.allclose(g, 0.0, atol=1e-15) for g in grads)


def test_value_gradient_flows_only_into_value_tensors():
    rng = np.random.default_rng(17)
    buffer, params = random_buffer(rng, n_steps=12, n_episodes=2)
    config = TrainConfig(hidden=(8, 8), value_coef=0.5, entropy_coef=0.0)
    out = forward_batch(params, buffer.cells)
    logp = out["logp"][np.arange(12), buffer.actions]
    ret = out["values"] + 1.0  # pure value error, zero advantage
    _, grads, _ = loss_and_grads(params, buffer.cells, buffer.actions, logp,
                                 np.zeros(12), ret, config)
    names = params.names()
    for name, g in zip(names, grads):
        if name in ("v1", "c1", "v2", "c2", "wv", "bv"):
            assert np.abs(g).max() > 0.0, f"{name} should receive gradient"
        else:
            assert np.allclose(g, 0.0, atol=1e-15), f"{name} should not"


# ---------------------------------------------------------------------------
# optimizer machinery

def test_adam_step_matches_reference_formula():
    params = small_params(seed=1)
    grads = [np.full_like(t, 0.5) for t in params.tensors()]
    config = TrainConfig(hidden=(8, 8), learning_rate=1e-2)
    new_params, state = adam_step(params, grads, AdamState.init(params), config)
    # first step: mhat = g, vhat = g^2 -> delta = lr * g / (|g| + eps)
    expected_delta = 1e-2 * 0.5 / (0.5 + 1e-8)
    diff = params.flat() - new_params.flat()
    assert np.allclose(diff, expected_delta, atol=1e-12)
    assert state.t == 1


def test_clip_grads_rescales_to_max_norm():
    grads = [np.array([3.0, 4.0])]  # norm 5
    clipped, norm = clip_grads(grads, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(clipped[0]) == pytest.approx(1.0, abs=1e-12)
    same, norm2 = clip_grads(grads, max_norm=0.0)  # 0 disables clipping
    assert norm2 == pytest.approx(5.0)
    assert np.array_equal(same[0], grads[0])


def test_ppo_update_deterministic_and_changes_params():
    rng = np.random.default_rng(23)
    buffer, params = random_buffer(rng, n_steps=40, n_episodes=4)
    config = TrainConfig(hidden=(8, 8), minibatch_size=16)
    out1 = ppo_update(params.copy(), buffer, config,
                      rng=stream((9, TAG_SHUFFLE)))
    out2 = ppo_update(params.copy(), buffer, config,
                      rng=stream((9, TAG_SHUFFLE)))
    assert np.array_equal(out1[0].flat(), out2[0].flat())
    assert not np.array_equal(out1[0].flat(), params.flat())
    # full-batch path is deterministic without any rng involvement
    config0 = TrainConfig(hidden=(8, 8), minibatch_size=0)
    a = ppo_update(params.copy(), buffer, config0)
    b = ppo_update(params.copy(), buffer, config0)
    assert np.array_equal(a[0].flat(), b[0].flat())


def test_ppo_update_minibatch_order_matters_but_seeded():
    rng = np.random.default_rng(29)
    buffer, params = random_buffer(rng, n_steps=40, n_episodes=4)
    config = TrainConfig(hidden=(8, 8), minibatch_size=16)
    out1 = ppo_update(params.copy(), buffer, config, rng=stream((1, TAG_SHUFFLE)))
    out2 = ppo_update(params.copy(), buffer, config, rng=stream((2, TAG_SHUFFLE)))
    assert not np.array_equal(out1[0].flat(), out2[0].flat())


def test_training_error_on_nonfinite_loss():
    from fliplab.errors import TrainingError

    rng = np.random.default_rng(31)
    buffer, params = random_buffer(rng, n_steps=8, n_episodes=1)
    buffer.rewards[0] = np.nan
    with pytest.raises(TrainingError):
        ppo_update(params, buffer, TrainConfig(hidden=(8, 8)))


# ---------------------------------------------------------------------------
# bandit smoke test: the full update loop solves a trivial decision problem

def test_bandit_convergence_to_best_action():
    """Single-state bandit: action 1 pays +1, others pay 0. The policy must
    put > 0.95 probability on the paying action within 200 updates."""
    params = init_network(OBS_DIM, ACT_DIM, (16, 16), seed=0)
    adam = AdamState.init(params)
    config = TrainConfig(hidden=(16, 16), minibatch_size=0, gamma=0.99,
                         learning_rate=3e-3)
    cells_row = np.array([16, 33], dtype=np.int32)
    rng = stream(42)
    batch = 64
    for update in range(200):
        out = forward_batch(params, np.tile(cells_row, (batch, 1)))
        actions = np.array([sample_index(p, rng.random()) for p in out["probs"]])
        rewards = (actions == 1).astype(float)
        buffer = RolloutBuffer(
            cells=np.tile(cells_row, (batch, 1)).astype(np.int32),
            actions=actions,
            logp=out["logp"][np.arange(batch), actions],
            rewards=rewards,
            values=out["values"],
            starts=np.arange(batch, dtype=np.int64),  # single-step episodes
        )
        params, adam, _ = ppo_update(params, buffer, config, adam,
                                     rng=stream((update, TAG_SHUFFLE)))
        probs, _, _ = forward_cells(params, cells_row)
        if probs[1] > 0.95:
            break
    probs, _, _ = forward_cells(params, cells_row)
    assert probs[1] > 0.95, f"bandit did not converge: p={probs}"


# ---------------------------------------------------------------------------
# config validation

@pytest.mark.parametrize("kwargs", [
    {"gamma": 0.0}, {"gamma": 1.0001}, {"gae_lambda": 0.0},
    {"clip_epsilon": 0.0}, {"learning_rate": 0.0}, {"minibatch_size": -1},
    {"max_grad_norm": -0.5}, {"total_epochs": 0}, {"episodes_per_update": 0},
])
def test_invalid_train_config_rejected(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# opponent samplers

def test_fixed_opponent_consumes_no_randomness():
    desc = ActorDesc.from_heuristic("sleep")
    sampler = FixedOpponent("z", desc)
    rng = stream(0)
    before = rng.bit_generator.state["state"]["state"]
    assert sampler.sample(rng) == ("z", desc)
    assert rng.bit_generator.state["state"]["state"] == before


def test_mixture_opponent_respects_weights():
    members = [(name, ActorDesc.from_heuristic("sleep")) for name in "abc"]
    sampler = MixtureOpponent(members, [0.7, 0.3, 0.0])
    rng = stream(3)
    draws = [sampler.sample(rng)[0] for _ in range(4000)]
    freq = {name: draws.count(name) / 4000 for name in "abc"}
    assert freq["a"] == pytest.approx(0.7, abs=0.03)
    assert freq["b"] == pytest.approx(0.3, abs=0.03)
    assert freq["c"] == 0.0


def test_mixture_opponent_validates_distribution():
    members = [("a", ActorDesc.from_heuristic("sleep"))]
    with pytest.raises(ConfigError):
        MixtureOpponent(members, [0.5])
    with pytest.raises(ConfigError):
        MixtureOpponent(members, [0.5, 0.5])
    with pytest.raises(ConfigError):
        MixtureOpponent([("a", None), ("b", None)], [1.2, -0.2])


# ---------------------------------------------------------------------------
# the training loop

def test_train_against_smoke_and_reproducible(game, tiny_train):
    opp = FixedOpponent("p2", ActorDesc.from_heuristic("periodic:phase=2"))
    r1 = train_against(game, opp, tiny_train, seed=5)
    r2 = train_against(game, opp, tiny_train, seed=5)
    assert len(r1.curve) == tiny_train.total_epochs
    assert len(r1.opponent_log) == tiny_train.episodes_per_epoch
    assert set(r1.opponent_log) == {"p2"}
    assert np.array_equal(r1.params.flat(), r2.params.flat())
    assert r1.curve == r2.curve
    assert len(r1.update_stats) == 2  # 4 episodes in blocks of 2


def test_train_against_resume_continues_from_params(game, tiny_train):
    opp = FixedOpponent("p2", ActorDesc.from_heuristic("periodic:phase=2"))
    r1 = train_against(game, opp, tiny_train, seed=5)
    r2 = train_against(game, opp, tiny_train, seed=5, params=r1.params,
                       epochs=1, start_epoch=1)
    assert not np.array_equal(r1.params.flat(), r2.params.flat())


# ---------------------------------------------------------------------------
# checkpoint IO

def test_checkpoint_roundtrip_f32_precision(tmp_path):
    params = small_params(seed=9)
    meta = {"note": "unit", "epoch": 3}
    path = tmp_path / "net.ckpt"
    digest = save_checkpoint(path, params, meta)
    assert isinstance(digest, str) and len(digest) >= 16
    ckpt = load_checkpoint(path)
    assert ckpt.meta["note"] == "unit" and ckpt.meta["epoch"] == 3
    for a, b in zip(params.tensors(), ckpt.params.tensors()):
        # storage is little-endian float32
        assert np.allclose(a, b, atol=1e-6)
        assert np.array_equal(np.asarray(a, dtype="<f4"), b)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMINE!" + bytes(64))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    params = small_params(seed=9)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_version_mismatch(tmp_path):
    import struct

    params = small_params(seed=9)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params)
    blob = bytearray(path.read_bytes())
    offset = len(MAGIC)
    blob[offset:offset + 4] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(path)
    assert "version" in str(info.value)


def test_checkpoint_missing_file_raises(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_checkpoint_roundtrips_through_net_policy(tmp_path, game):
    """A reloaded checkpoint behaves identically at f32 resolution."""
    params = small_params(seed=4)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path).params
    cells = np.array([3, 21], dtype=np.int32)
    p_orig, _, v_orig = forward_cells(params, cells)
    p_load, _, v_load = forward_cells(loaded, cells)
    assert np.allclose(p_orig, p_load, atol=1e-6)
    assert v_orig == pytest.approx(v_load, abs=1e-4)
