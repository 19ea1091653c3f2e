"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fliplab.engine import (ATTACKER, DEFENDER, Action, ActionType, GameConfig,
                            new_game, resolve_step)
from fliplab.heuristics import make_heuristic
from fliplab.learner import TrainConfig
from fliplab.seeding import stream


@pytest.fixture
def game() -> GameConfig:
    return GameConfig()


@pytest.fixture
def tiny_train() -> TrainConfig:
    """A training config small enough for sub-second unit tests."""
    return TrainConfig(total_epochs=1, episodes_per_epoch=4,
                       episodes_per_update=2, hidden=(8, 8))


def play_script(config: GameConfig, defender_script, attacker_script):
    """Run scripted action lists through the engine; returns (outcomes, state).

    Scripts are lists of Action; both must have the same length.
    """
    assert len(defender_script) == len(attacker_script)
    state = new_game(config)
    outcomes = []
    for act_d, act_a in zip(defender_script, attacker_script):
        outcomes.append(resolve_step(state, act_d, act_a))
    return outcomes, state


def pattern_string(spec: str, steps: int, seed: int = 0,
                   num_resources: int = 1) -> str:
    """First `steps` actions of a heuristic as S/F/C characters."""
    policy = make_heuristic(spec)
    policy.reset(stream(seed))
    from fliplab.engine import KnowledgeState

    knowledge = KnowledgeState(ATTACKER, num_resources)
    letters = {ActionType.SLEEP: "S", ActionType.FLIP: "F", ActionType.CHECK: "C"}
    out = []
    for _ in range(steps):
        action = policy.act(knowledge)
        out.append(letters[action.kind])
        knowledge.age()
    return "".join(out)


def all_single_resource_actions():
    return [Action(ActionType.SLEEP, 0), Action(ActionType.FLIP, 0),
            Action(ActionType.CHECK, 0)]
