"""Backend dispatch rules and compiled/python parity.

The compiled kernel must be a drop-in replacement: identical RNG streams,
identical episode outcomes, and learner rollouts that agree to float
round-off. Parity tests skip when the extension is not built.
"""

import numpy as np
import pytest

from fliplab.backends import (ActorDesc, available_backends, resolve_backend,
                              simulate)
from fliplab.engine import GameConfig
from fliplab.errors import ConfigError
from fliplab.learner import init_network

GAME = GameConfig(horizon=50)
HAS_COMPILED = "compiled" in available_backends()
needs_compiled = pytest.mark.skipif(not HAS_COMPILED,
                                    reason="compiled extension not built")

KEYS = [(3, 0, i) for i in range(6)]


def _net(seed=0, game=GAME, greedy=False):
    params = init_network(game.obs_dim, game.action_dim, (8, 8), seed=seed)
    return ActorDesc.from_network(params, greedy=greedy)


# ---------------------------------------------------------------------------
# selection rules

def test_python_backend_always_available():
    assert "python" in available_backends()


def test_resolve_explicit_python():
    assert resolve_backend(GAME, "python") == "python"


def test_resolve_unknown_name():
    with pytest.raises(ConfigError):
        resolve_backend(GAME, "fortran")


@needs_compiled
def test_resolve_auto_prefers_compiled_for_single_resource():
    assert resolve_backend(GAME, None) == "compiled"
    assert resolve_backend(GAME, "auto") == "compiled"


@needs_compiled
def test_resolve_compiled_rejects_multi_resource():
    multi = GameConfig(num_resources=2)
    with pytest.raises(ConfigError):
        resolve_backend(multi, "compiled")
    # auto falls back rather than failing
    assert resolve_backend(multi, None) == "python"


def test_env_variable_selects_backend(monkeypatch):
    monkeypatch.setenv("FLIPLAB_BACKEND", "python")
    assert resolve_backend(GAME, None) == "python"
    # explicit argument still wins over the environment
    monkeypatch.setenv("FLIPLAB_BACKEND", "nonsense")
    assert resolve_backend(GAME, "python") == "python"
    with pytest.raises(ConfigError):
        resolve_backend(GAME, None)


def test_learner_side_requires_network_actor():
    sleepers = ActorDesc.from_heuristic("sleep")
    with pytest.raises(ValueError):
        simulate(GAME, sleepers, sleepers, KEYS, learner_side=0,
                 backend="python")


# ---------------------------------------------------------------------------
# parity: heuristic vs heuristic

@needs_compiled
@pytest.mark.parametrize("d_spec,a_spec", [
    ("sleep", "periodic:phase=4,delay=random"),
    ("pc:phase=3,delay=random", "awake:lambda=0.3"),
    ("reta:phase=6", "burst:phase=5,delay=random,burst=2"),
    ("pac:phase=4", "random:p=0.35"),
])
def test_heuristic_parity_bit_exact(d_spec, a_spec):
    d = ActorDesc.from_heuristic(d_spec)
    a = ActorDesc.from_heuristic(a_spec)
    py = simulate(GAME, d, a, KEYS, want_trace=True, backend="python")
    cc = simulate(GAME, d, a, KEYS, want_trace=True, backend="compiled")
    assert np.array_equal(py.rewards, cc.rewards)
    assert np.array_equal(py.ownership, cc.ownership)
    assert np.array_equal(py.actions, cc.actions)
    assert np.array_equal(py.owners, cc.owners)
    assert np.array_equal(py.step_rewards, cc.step_rewards)


@needs_compiled
def test_network_vs_heuristic_parity():
    net = _net(seed=4)
    opp = ActorDesc.from_heuristic("periodic:phase=4,delay=random")
    py = simulate(GAME, net, opp, KEYS, want_trace=True, learner_side=0,
                  backend="python")
    cc = simulate(GAME, net, opp, KEYS, want_trace=True, learner_side=0,
                  backend="compiled")
    assert np.array_equal(py.rewards, cc.rewards)
    assert np.array_equal(py.actions, cc.actions)
    assert np.array_equal(py.learner.cells, cc.learner.cells)
    assert np.array_equal(py.learner.actions, cc.learner.actions)
    assert np.array_equal(py.learner.rewards, cc.learner.rewards)
    np.testing.assert_allclose(py.learner.logp, cc.learner.logp,
                               rtol=0, atol=1e-10)
    np.testing.assert_allclose(py.learner.values, cc.learner.values,
                               rtol=0, atol=1e-10)


@needs_compiled
def test_network_vs_network_parity():
    d, a = _net(seed=1), _net(seed=2)
    py = simulate(GAME, d, a, KEYS, want_trace=True, learner_side=1,
                  backend="python")
    cc = simulate(GAME, d, a, KEYS, want_trace=True, learner_side=1,
                  backend="compiled")
    assert np.array_equal(py.rewards, cc.rewards)
    assert np.array_equal(py.actions, cc.actions)
    assert np.array_equal(py.learner.actions, cc.learner.actions)
    np.testing.assert_allclose(py.learner.logp, cc.learner.logp,
                               rtol=0, atol=1e-10)


@needs_compiled
def test_greedy_network_parity():
    net = _net(seed=7, greedy=True)
    opp = ActorDesc.from_heuristic("awake:lambda=0.1")
    py = simulate(GAME, net, opp, KEYS, want_trace=True, backend="python")
    cc = simulate(GAME, net, opp, KEYS, want_trace=True, backend="compiled")
    assert np.array_equal(py.actions, cc.actions)
    assert np.array_equal(py.rewards, cc.rewards)


@needs_compiled
def test_parity_on_paper_sized_game():
    game = GameConfig()  # horizon 100, memory 16
    d = ActorDesc.from_heuristic("reta:phase=4")
    a = ActorDesc.from_heuristic("pac:phase=4")
    keys = [(9, i) for i in range(10)]
    py = simulate(game, d, a, keys, backend="python")
    cc = simulate(game, d, a, keys, backend="compiled")
    assert np.array_equal(py.rewards, cc.rewards)
    assert np.array_equal(py.ownership, cc.ownership)


# ---------------------------------------------------------------------------
# result shapes

def test_simulate_shapes_and_trace_flag():
    d = ActorDesc.from_heuristic("sleep")
    a = ActorDesc.from_heuristic("periodic:phase=5")
    res = simulate(GAME, d, a, KEYS, backend="python")
    assert res.rewards.shape == (len(KEYS), 2)
    assert res.ownership.shape == (len(KEYS), 2, 1)
    assert res.actions is None and res.owners is None
    assert res.learner is None

    traced = simulate(GAME, d, a, KEYS, want_trace=True, backend="python")
    assert traced.actions.shape == (len(KEYS), GAME.horizon, 2)
    assert traced.owners.shape == (len(KEYS), GAME.horizon, 1)
    assert traced.step_rewards.shape == (len(KEYS), GAME.horizon, 2)
    # ownership fractions are consistent with the owner trace
    frac = (traced.owners[:, :, 0] == 0).mean(axis=1)
    np.testing.assert_allclose(traced.ownership[:, 0, 0], frac, atol=1e-12)


def test_learner_rollout_matches_episode_totals():
    net = _net(seed=3)
    opp = ActorDesc.from_heuristic("periodic:phase=4,delay=random")
    res = simulate(GAME, net, opp, KEYS, learner_side=0, backend="python")
    assert res.learner.rewards.shape == (len(KEYS), GAME.horizon)
    np.testing.assert_allclose(res.learner.rewards.sum(axis=1),
                               res.rewards[:, 0], atol=1e-12)
    # behaviour log-probs are genuine log-probabilities
    assert np.all(res.learner.logp <= 0.0)
