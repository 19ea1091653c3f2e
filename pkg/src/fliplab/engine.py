"""Two-player stealthy-takeover game engine.

Players silently own resources and earn one unit of gain per owned resource
per step. Flip grabs a resource (and reveals its state to the flipper), Check
only reveals, Sleep does nothing. Neither player sees the opponent's moves;
each player's knowledge advances only through its own Flip/Check reveals.

Conventions fixed here and relied on everywhere else:

* Step indices run 0..horizon-1. Ownership resolution, rewards, and reveals
  for step t all happen inside resolve_step; afterwards every "time since"
  counter ages by one, so a policy deciding at step t+1 sees age 1 for an
  event of step t.
* Reveals report the post-resolution owner of the probed resource together
  with that owner's capture step.
* With exactly two players the tie-break draw in the ownership rule is
  unreachable (the previous owner is always among the contestants), so
  episode outcomes do not depend on the engine RNG stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigError, EpisodeFinishedError, ProtocolError
from .seeding import ROLE_ATTACKER, ROLE_DEFENDER, ROLE_ENGINE, normalize_key, stream

DEFENDER = 0
ATTACKER = 1
PLAYERS = (DEFENDER, ATTACKER)


class ActionType(IntEnum):
    SLEEP = 0
    FLIP = 1
    CHECK = 2


@dataclass(frozen=True)
class Action:
    kind: ActionType
    resource: int = 0

    def label(self) -> str:
        if self.kind == ActionType.SLEEP:
            return "sleep"
        name = "flip" if self.kind == ActionType.FLIP else "check"
        return f"{name}:{self.resource}"


SLEEP = Action(ActionType.SLEEP, 0)


def flip(resource: int = 0) -> Action:
    return Action(ActionType.FLIP, resource)


def check(resource: int = 0) -> Action:
    return Action(ActionType.CHECK, resource)


def encode_action(action: Action, num_resources: int) -> int:
    """Flat index layout: [Sleep, Flip r0, Check r0, Flip r1, Check r1, ...]."""
    if action.kind == ActionType.SLEEP:
        return 0
    if not 0 <= action.resource < num_resources:
        raise ConfigError(
            f"resource {action.resource} out of range for R={num_resources}"
        )
    base = 1 + 2 * action.resource
    return base if action.kind == ActionType.FLIP else base + 1


def decode_action(index: int, num_resources: int) -> Action:
    if index == 0:
        return SLEEP
    if not 0 < index <= 2 * num_resources:
        raise ConfigError(f"action index {index} out of range for R={num_resources}")
    resource, rem = divmod(index - 1, 2)
    return Action(ActionType.FLIP if rem == 0 else ActionType.CHECK, resource)


def action_label(index: int, num_resources: int) -> str:
    return decode_action(index, num_resources).label()


@dataclass(frozen=True)
class GameConfig:
    horizon: int = 100
    num_resources: int = 1
    cost_sleep: float = 0.0
    cost_check: float = 1.0
    cost_flip: float = 2.0
    gain: float = 1.0
    memory_limit: int = 16
    initial_owner: int = DEFENDER
    base_seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.num_resources < 1:
            raise ConfigError("num_resources must be >= 1")
        if self.memory_limit < 1:
            raise ConfigError("memory_limit must be >= 1")
        if self.initial_owner not in PLAYERS:
            raise ConfigError("initial_owner must be 0 (defender) or 1 (attacker)")
        for name in ("cost_sleep", "cost_check", "cost_flip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def action_dim(self) -> int:
        return 1 + 2 * self.num_resources

    @property
    def obs_dim(self) -> int:
        return (2 * self.memory_limit + 2) * self.num_resources

    def action_cost(self, action: Action) -> float:
        if action.kind == ActionType.SLEEP:
            return self.cost_sleep
        if action.kind == ActionType.FLIP:
            return self.cost_flip
        return self.cost_check


class KnowledgeState:
    """One player's private view of the board.

    own_flip_age[r]: steps since this player's last Flip of r, -1 for never.
    observed_owner[r]: owner revealed by the last own Flip/Check of r, -1 unknown.
    observed_capture_age[r]: steps since that owner's capture of r, -1 unknown.

    The two observed_* fields move together: they are refreshed only by this
    player's own reveals and both age by one every step.
    """

    __slots__ = ("player", "opponent", "num_resources", "own_flip_age",
                 "observed_owner", "observed_capture_age")

    def __init__(self, player: int, num_resources: int):
        self.player = player
        self.opponent = 1 - player
        self.num_resources = num_resources
        self.own_flip_age = np.full(num_resources, -1, dtype=np.int64)
        self.observed_owner = np.full(num_resources, -1, dtype=np.int64)
        self.observed_capture_age = np.full(num_resources, -1, dtype=np.int64)

    @property
    def believes_owned(self) -> np.ndarray:
        return self.observed_owner == self.player

    def age(self) -> None:
        self.own_flip_age[self.own_flip_age >= 0] += 1
        self.observed_capture_age[self.observed_capture_age >= 0] += 1

    def copy(self) -> "KnowledgeState":
        dup = KnowledgeState(self.player, self.num_resources)
        dup.own_flip_age[:] = self.own_flip_age
        dup.observed_owner[:] = self.observed_owner
        dup.observed_capture_age[:] = self.observed_capture_age
        return dup


@dataclass
class EngineState:
    config: GameConfig
    t: int
    owner: np.ndarray
    last_capture: np.ndarray
    knowledge: tuple[KnowledgeState, KnowledgeState]
    rng: np.random.Generator


def new_game(config: GameConfig, engine_rng: np.random.Generator | None = None) -> EngineState:
    """Fresh episode state: initial owner holds everything, capture time 0.

    The initial owner starts knowing it owns every resource (capture age 0);
    the other player starts with no information.
    """
    r = config.num_resources
    owner = np.full(r, config.initial_owner, dtype=np.int64)
    capture = np.zeros(r, dtype=np.int64)
    knowledge = (KnowledgeState(DEFENDER, r), KnowledgeState(ATTACKER, r))
    holder = knowledge[config.initial_owner]
    holder.observed_owner[:] = config.initial_owner
    holder.observed_capture_age[:] = 0
    if engine_rng is None:
        engine_rng = stream(config.base_seed, ROLE_ENGINE)
    return EngineState(config, 0, owner, capture, knowledge, engine_rng)


@dataclass
class StepOutcome:
    step: int
    owners: np.ndarray
    rewards: np.ndarray
    revealed: tuple[list, list]  # per player: (resource, owner, capture_step)
    contested: np.ndarray


def _validate_action(action, num_resources: int, who: str) -> None:
    if not isinstance(action, Action) or not isinstance(action.kind, ActionType):
        raise ProtocolError(f"{who} returned {action!r}, expected an Action")
    if action.kind != ActionType.SLEEP and not 0 <= action.resource < num_resources:
        raise ProtocolError(
            f"{who} targeted resource {action.resource}, valid range is 0..{num_resources - 1}"
        )


def resolve_step(state: EngineState, defender_action: Action, attacker_action: Action) -> StepOutcome:
    """Advance the game one step and return what happened.

    Order inside the step: ownership resolution for every contested resource,
    then rewards on post-resolution ownership, then knowledge reveals and
    counter aging.
    """
    cfg = state.config
    if state.t >= cfg.horizon:
        raise EpisodeFinishedError(f"episode horizon {cfg.horizon} already reached")
    _validate_action(defender_action, cfg.num_resources, "defender")
    _validate_action(attacker_action, cfg.num_resources, "attacker")

    actions = (defender_action, attacker_action)
    t = state.t
    contested = np.zeros(cfg.num_resources, dtype=bool)
    for r in range(cfg.num_resources):
        flippers = [p for p in PLAYERS
                    if actions[p].kind == ActionType.FLIP and actions[p].resource == r]
        contested[r] = len(flippers) > 1
        if not flippers or state.owner[r] in flippers:
            continue  # uncontested, or the holder defends by flipping too
        if len(flippers) == 1:
            winner = flippers[0]
        else:
            # Uniform tie-break among contestants. Unreachable with two
            # players (the previous owner would be a contestant), kept for
            # rule completeness.
            winner = flippers[int(state.rng.integers(len(flippers)))]
        state.owner[r] = winner
        state.last_capture[r] = t

    rewards = np.zeros(2, dtype=np.float64)
    for p in PLAYERS:
        owned = int(np.count_nonzero(state.owner == p))
        rewards[p] = cfg.gain * owned - cfg.action_cost(actions[p])

    revealed: tuple[list, list] = ([], [])
    for p in PLAYERS:
        kn = state.knowledge[p]
        act = actions[p]
        if act.kind != ActionType.SLEEP:
            r = act.resource
            owner_now = int(state.owner[r])
            captured_at = int(state.last_capture[r])
            kn.observed_owner[r] = owner_now
            kn.observed_capture_age[r] = t - captured_at
            revealed[p].append((r, owner_now, captured_at))
        if act.kind == ActionType.FLIP:
            kn.own_flip_age[act.resource] = 0
        kn.age()

    state.t = t + 1
    return StepOutcome(t, state.owner.copy(), rewards, revealed, contested)


def active_cells(knowledge: KnowledgeState, memory_limit: int) -> np.ndarray:
    """Flat indices of the two hot cells per resource in the observation.

    Per resource: cells 0..M-1 bucket the own-flip age (clamped at M-1),
    cell M means "never flipped". The second block repeats the layout for the
    opponent's capture age; its M cell doubles as "not known to be the
    opponent's".
    """
    m = memory_limit
    seg = 2 * m + 2
    out = np.empty(2 * knowledge.num_resources, dtype=np.int64)
    for r in range(knowledge.num_resources):
        base = r * seg
        age = int(knowledge.own_flip_age[r])
        out[2 * r] = base + (m if age < 0 else min(age, m - 1))
        if knowledge.observed_owner[r] == knowledge.opponent:
            cell = min(int(knowledge.observed_capture_age[r]), m - 1)
        else:
            cell = m
        out[2 * r + 1] = base + m + 1 + cell
    return out


def observation_from_knowledge(knowledge: KnowledgeState, memory_limit: int) -> np.ndarray:
    vec = np.zeros((2 * memory_limit + 2) * knowledge.num_resources, dtype=np.float64)
    vec[active_cells(knowledge, memory_limit)] = 1.0
    return vec


def observe(state: EngineState, player: int) -> np.ndarray:
    """One-hot observation vector for the given player at the current step."""
    return observation_from_knowledge(state.knowledge[player], state.config.memory_limit)


@dataclass
class EpisodeResult:
    total_reward: np.ndarray      # (2,)
    ownership: np.ndarray         # (2, R) fraction of steps owned
    actions: np.ndarray | None    # (T, 2) flat action indices
    owners: np.ndarray | None     # (T, R)
    rewards: np.ndarray | None    # (T, 2)
    seed_key: tuple[int, ...]


def run_episode(config: GameConfig, defender_policy, attacker_policy, seed,
                want_trace: bool = True, engine_seed=None) -> EpisodeResult:
    """Play one full episode between two policies.

    `seed` addresses the episode: defender, attacker, and engine streams are
    derived from it by role, so reruns with the same key reproduce the episode
    exactly regardless of what else ran in the process.
    """
    key = normalize_key(seed)
    gen_d = stream(key, ROLE_DEFENDER)
    gen_a = stream(key, ROLE_ATTACKER)
    gen_e = stream(key if engine_seed is None else normalize_key(engine_seed), ROLE_ENGINE)

    state = new_game(config, gen_e)
    defender_policy.reset(gen_d)
    attacker_policy.reset(gen_a)

    horizon, n_res = config.horizon, config.num_resources
    if want_trace:
        actions_tr = np.zeros((horizon, 2), dtype=np.int64)
        owners_tr = np.zeros((horizon, n_res), dtype=np.int64)
        rewards_tr = np.zeros((horizon, 2), dtype=np.float64)
    else:
        actions_tr = owners_tr = rewards_tr = None

    totals = np.zeros(2, dtype=np.float64)
    owned_steps = np.zeros((2, n_res), dtype=np.int64)
    for t in range(horizon):
        act_d = defender_policy.act(state.knowledge[DEFENDER])
        act_a = attacker_policy.act(state.knowledge[ATTACKER])
        out = resolve_step(state, act_d, act_a)
        totals += out.rewards
        for r in range(n_res):
            owned_steps[out.owners[r], r] += 1
        if want_trace:
            actions_tr[t, 0] = encode_action(act_d, n_res)
            actions_tr[t, 1] = encode_action(act_a, n_res)
            owners_tr[t] = out.owners
            rewards_tr[t] = out.rewards

    ownership = owned_steps.astype(np.float64) / horizon
    return EpisodeResult(totals, ownership, actions_tr, owners_tr, rewards_tr, key)


def ownership_fraction(owners: np.ndarray, player: int, resource: int = 0) -> float:
    """Fraction of steps the player owned the resource, from an owners trace."""
    col = owners[:, resource]
    return float(np.count_nonzero(col == player)) / len(col)


def write_trace_csv(path, result: EpisodeResult, num_resources: int) -> None:
    """One row per step: actions, owner per resource, rewards."""
    if result.actions is None:
        raise ValueError("episode was run without a trace")
    owner_cols = [f"owner_r{r}" for r in range(num_resources)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "defender_action", "attacker_action",
                         *owner_cols, "defender_reward", "attacker_reward"])
        for t in range(len(result.actions)):
            writer.writerow([
                t,
                action_label(int(result.actions[t, 0]), num_resources),
                action_label(int(result.actions[t, 1]), num_resources),
                *[int(result.owners[t, r]) for r in range(num_resources)],
                repr(float(result.rewards[t, 0])),
                repr(float(result.rewards[t, 1])),
            ])
