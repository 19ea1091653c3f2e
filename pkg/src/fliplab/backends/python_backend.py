"""Pure NumPy episode driver.

This is the reference implementation: it composes the object-level engine and
policy classes step by step. The compiled kernel is validated against it.
"""

from __future__ import annotations

import numpy as np

from ..engine import ATTACKER, DEFENDER, GameConfig, encode_action, new_game, resolve_step
from ..heuristics import make_heuristic
from ..learner.network import NetPolicy
from ..seeding import ROLE_ATTACKER, ROLE_DEFENDER, ROLE_ENGINE, normalize_key, stream
from .types import ActorDesc, BatchResult, LearnerRollout

NAME = "python"


def _instantiate(desc: ActorDesc, config: GameConfig):
    if desc.kind == "heuristic":
        return make_heuristic(desc.heuristic)
    return NetPolicy(desc.params, config.memory_limit, greedy=desc.greedy)


def simulate(config: GameConfig, defender: ActorDesc, attacker: ActorDesc,
             episode_keys, want_trace: bool = False,
             learner_side: int | None = None) -> BatchResult:
    """Run one matchup over a batch of episode keys."""
    defender.validate()
    attacker.validate()
    keys = [normalize_key(k) for k in episode_keys]
    n = len(keys)
    horizon, n_res = config.horizon, config.num_resources

    rewards = np.zeros((n, 2))
    ownership = np.zeros((n, 2, n_res))
    actions_tr = np.zeros((n, horizon, 2), dtype=np.int16) if want_trace else None
    owners_tr = np.zeros((n, horizon, n_res), dtype=np.int8) if want_trace else None
    rewards_tr = np.zeros((n, horizon, 2)) if want_trace else None

    rollout = None
    if learner_side is not None:
        side_desc = defender if learner_side == DEFENDER else attacker
        if side_desc.kind != "network":
            raise ValueError("learner side must be a network actor")
        rollout = LearnerRollout(
            cells=np.zeros((n, horizon, 2 * n_res), dtype=np.int32),
            actions=np.zeros((n, horizon), dtype=np.int16),
            logp=np.zeros((n, horizon)),
            values=np.zeros((n, horizon)),
            rewards=np.zeros((n, horizon)),
        )

    for e, key in enumerate(keys):
        policies = (_instantiate(defender, config), _instantiate(attacker, config))
        policies[DEFENDER].reset(stream(key, ROLE_DEFENDER))
        policies[ATTACKER].reset(stream(key, ROLE_ATTACKER))
        state = new_game(config, stream(key, ROLE_ENGINE))
        owned = np.zeros((2, n_res))
        for t in range(horizon):
            act_d = policies[DEFENDER].act(state.knowledge[DEFENDER])
            act_a = policies[ATTACKER].act(state.knowledge[ATTACKER])
            out = resolve_step(state, act_d, act_a)
            rewards[e] += out.rewards
            for r in range(n_res):
                owned[out.owners[r], r] += 1
            if want_trace:
                actions_tr[e, t, 0] = encode_action(act_d, n_res)
                actions_tr[e, t, 1] = encode_action(act_a, n_res)
                owners_tr[e, t] = out.owners
                rewards_tr[e, t] = out.rewards
            if rollout is not None:
                learner_policy = policies[learner_side]
                rollout.cells[e, t] = learner_policy.last_cells
                rollout.actions[e, t] = learner_policy.last_index
                rollout.logp[e, t] = learner_policy.last_logp
                rollout.values[e, t] = learner_policy.last_value
                rollout.rewards[e, t] = out.rewards[learner_side]
        ownership[e] = owned / horizon

    return BatchResult(rewards, ownership, actions_tr, owners_tr, rewards_tr, rollout)
