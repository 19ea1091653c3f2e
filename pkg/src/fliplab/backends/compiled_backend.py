"""Wrapper around the Cython episode kernel.

Prepares flat argument buffers, runs the kernel, and boxes the outputs into
the same ``BatchResult`` the pure NumPy driver returns. The kernel only
handles single-resource games; callers go through the package-level
``simulate`` dispatcher, which falls back to the reference driver otherwise.
"""

from __future__ import annotations

import numpy as np

from ..engine import DEFENDER, GameConfig
from ..seeding import ROLE_ATTACKER, ROLE_DEFENDER, normalize_key, stream
from . import _ckernel
from .types import ActorDesc, BatchResult, LearnerRollout

NAME = "compiled"


def supports(config: GameConfig) -> bool:
    return config.num_resources == 1


def _side_args(desc: ActorDesc):
    if desc.kind == "heuristic":
        spec = desc.heuristic
        conf = {
            "kind": _ckernel.KIND_CODES[spec.kind],
            "phase": spec.phase,
            "delay": spec.delay,
            "burst": spec.burst,
            "prob": spec.flip_prob,
            "lam": spec.rate,
        }
        return conf, None
    p = desc.params
    arrays = {
        "w1t": np.ascontiguousarray(p.w1.T, dtype=np.float64),
        "b1": np.ascontiguousarray(p.b1, dtype=np.float64),
        "w2": np.ascontiguousarray(p.w2, dtype=np.float64),
        "b2": np.ascontiguousarray(p.b2, dtype=np.float64),
        "wp": np.ascontiguousarray(p.wp, dtype=np.float64),
        "bp": np.ascontiguousarray(p.bp, dtype=np.float64),
        "v1t": np.ascontiguousarray(p.v1.T, dtype=np.float64),
        "c1": np.ascontiguousarray(p.c1, dtype=np.float64),
        "v2": np.ascontiguousarray(p.v2, dtype=np.float64),
        "c2": np.ascontiguousarray(p.c2, dtype=np.float64),
        "wv": np.ascontiguousarray(p.wv, dtype=np.float64),
        "bv": np.ascontiguousarray(p.bv, dtype=np.float64),
    }
    return {"kind": _ckernel.NET_CODE, "greedy": desc.greedy}, arrays


def simulate(config: GameConfig, defender: ActorDesc, attacker: ActorDesc,
             episode_keys, want_trace: bool = False,
             learner_side: int | None = None) -> BatchResult:
    defender.validate()
    attacker.validate()
    if not supports(config):
        raise ValueError("compiled backend handles single-resource games only")
    keys = [normalize_key(k) for k in episode_keys]
    n = len(keys)
    horizon = config.horizon

    if learner_side is not None:
        side_desc = defender if learner_side == DEFENDER else attacker
        if side_desc.kind != "network":
            raise ValueError("learner side must be a network actor")

    rewards = np.zeros((n, 2))
    ownership = np.zeros((n, 2, 1))
    if want_trace:
        actions_tr = np.zeros((n, horizon, 2), dtype=np.int16)
        owners_tr = np.zeros((n, horizon, 1), dtype=np.int8)
        rewards_tr = np.zeros((n, horizon, 2))
    else:
        actions_tr = np.zeros((0, 0, 2), dtype=np.int16)
        owners_tr = np.zeros((0, 0, 1), dtype=np.int8)
        rewards_tr = np.zeros((0, 0, 2))
    if learner_side is not None:
        lrn_cells = np.zeros((n, horizon, 2), dtype=np.int32)
        lrn_actions = np.zeros((n, horizon), dtype=np.int16)
        lrn_logp = np.zeros((n, horizon))
        lrn_values = np.zeros((n, horizon))
        lrn_rewards = np.zeros((n, horizon))
    else:
        lrn_cells = np.zeros((0, 0, 2), dtype=np.int32)
        lrn_actions = np.zeros((0, 0), dtype=np.int16)
        lrn_logp = np.zeros((0, 0))
        lrn_values = np.zeros((0, 0))
        lrn_rewards = np.zeros((0, 0))

    if n > 0:
        conf0, arrays0 = _side_args(defender)
        conf1, arrays1 = _side_args(attacker)
        gens0 = [stream(key, ROLE_DEFENDER) for key in keys]
        gens1 = [stream(key, ROLE_ATTACKER) for key in keys]
        _ckernel.run_batch(
            horizon, config.memory_limit, config.initial_owner, config.gain,
            config.cost_sleep, config.cost_flip, config.cost_check,
            conf0, arrays0, conf1, arrays1, gens0, gens1,
            rewards, ownership,
            want_trace, actions_tr, owners_tr, rewards_tr,
            -1 if learner_side is None else learner_side,
            lrn_cells, lrn_actions, lrn_logp, lrn_values, lrn_rewards)

    rollout = None
    if learner_side is not None:
        rollout = LearnerRollout(lrn_cells, lrn_actions, lrn_logp, lrn_values,
                                 lrn_rewards)
    return BatchResult(
        rewards, ownership,
        actions_tr if want_trace else None,
        owners_tr if want_trace else None,
        rewards_tr if want_trace else None,
        rollout)
