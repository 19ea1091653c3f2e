"""Population training over a pool of opponents.

The PSRO-style loop keeps one continuing defender network. Each iteration it
trains for one epoch against opponents sampled from the current meta-strategy
sigma, appends a row of utilities (defender vs every pool member) to the
matrix, and recomputes sigma from that latest row. Three response objectives
are supported: raw reward, win rate by ownership threshold, and normalized
performance gap against frozen specialist references. IBR is the same loop
driven by an externally forced sequence of one-hot sigmas.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .backends import ActorDesc, simulate
from .engine import DEFENDER, GameConfig
from .errors import ConfigError
from .learner import (AdamState, MixtureOpponent, TrainConfig, init_network,
                      train_against)
from .seeding import TAG_EVAL, TAG_FINAL_EVAL

__all__ = [
    "PoolMember", "default_pool", "RewardObjective", "WinRateByOwnership",
    "NormalizedGap", "win_rate_by_ownership", "performance_gap",
    "normalized_gaps", "UtilityRow", "evaluate_utilities", "mss_uniform",
    "mss_softmax", "PSROConfig", "PSROResult", "flip_psro", "ibr_train",
    "SpecialistResult", "train_specialists", "IBR_ORDER",
]


@dataclass(frozen=True)
class PoolMember:
    member_id: str
    desc: ActorDesc

    @property
    def label(self) -> str:
        if self.desc.kind == "heuristic":
            return self.desc.heuristic.canonical()
        return f"network:{self.member_id}"


def heuristic_member(member_id: str, spec: str) -> PoolMember:
    return PoolMember(member_id, ActorDesc.from_heuristic(spec))


def default_pool() -> tuple[PoolMember, ...]:
    """The five-attacker training pool with default parameters."""
    return (
        heuristic_member("periodic", "periodic:phase=4,delay=random"),
        heuristic_member("burst", "burst:phase=8,delay=random,burst=3"),
        heuristic_member("awake", "awake:lambda=0.05"),
        heuristic_member("pc", "pc:phase=4,delay=random"),
        heuristic_member("pac", "pac:phase=4"),
    )


IBR_ORDER = ("awake", "burst", "periodic", "pc", "pac")


# ---------------------------------------------------------------------------
# response objectives

@dataclass(frozen=True)
class RewardObjective:
    name = "reward"


@dataclass(frozen=True)
class WinRateByOwnership:
    threshold: float = 0.5
    name = "winrate"

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"ownership threshold must be in (0, 1], got {self.threshold}")


@dataclass(frozen=True)
class NormalizedGap:
    """references[j] = frozen specialist reward against pool member j."""

    references: tuple[float, ...]
    name = "normgap"

    def __post_init__(self):
        if len(self.references) < 1 or not np.all(np.isfinite(self.references)):
            raise ConfigError("normalized-gap references must be finite and non-empty")


def win_rate_by_ownership(ownership_fractions, threshold: float) -> float:
    """Fraction of episodes the defender owned strictly more than threshold.

    Exactly hitting the threshold counts as a loss.
    """
    fr = np.asarray(ownership_fractions, dtype=float)
    if fr.size == 0:
        raise ConfigError("win rate needs at least one episode")
    return float(np.mean(fr > threshold))


def performance_gap(reward: float, specialist_reward: float) -> float:
    return max(0.0, float(specialist_reward) - float(reward))


def normalized_gaps(gaps) -> np.ndarray:
    """Min-max normalize to [0, 1]; an all-equal vector maps to zeros."""
    g = np.asarray(gaps, dtype=float)
    if g.size < 2:
        raise ConfigError("normalized gaps need at least two pool members")
    span = g.max() - g.min()
    if span == 0.0:
        return np.zeros_like(g)
    return (g - g.min()) / span


@dataclass
class UtilityRow:
    """One evaluation of a defender against every pool member."""

    values: np.ndarray          # objective units, one per member
    mean_rewards: np.ndarray    # raw defender mean episode reward
    mean_ownership: np.ndarray  # defender ownership fraction in [0, 1]
    member_ids: tuple[str, ...]
    episodes: int


def evaluate_utilities(policy: ActorDesc, pool, objective, episodes: int, seed,
                       game: GameConfig, backend: str | None = None,
                       tag: int = TAG_EVAL) -> UtilityRow:
    """Policy plays defender against each member over seeded episodes."""
    if episodes < 1:
        raise ConfigError("evaluation needs at least one episode")
    members = list(pool)
    if isinstance(objective, NormalizedGap) and len(objective.references) != len(members):
        raise ConfigError(
            f"normalized-gap references cover {len(objective.references)} members, "
            f"pool has {len(members)}; train specialists for the full pool first")
    mean_rewards = np.zeros(len(members))
    mean_ownership = np.zeros(len(members))
    values = np.zeros(len(members))
    for j, member in enumerate(members):
        keys = [(seed, tag, j, e) for e in range(episodes)]
        batch = simulate(game, policy, member.desc, keys, backend=backend)
        rewards = batch.rewards[:, DEFENDER]
        fractions = batch.ownership[:, DEFENDER, :].mean(axis=1)
        mean_rewards[j] = rewards.mean()
        mean_ownership[j] = fractions.mean()
        if isinstance(objective, WinRateByOwnership):
            values[j] = win_rate_by_ownership(fractions, objective.threshold)
        else:
            values[j] = rewards.mean()
    if isinstance(objective, NormalizedGap):
        gaps = [performance_gap(mean_rewards[j], objective.references[j])
                for j in range(len(members))]
        values = normalized_gaps(gaps)
    return UtilityRow(values, mean_rewards, mean_ownership,
                      tuple(m.member_id for m in members), episodes)


# ---------------------------------------------------------------------------
# meta-strategy solvers

def mss_uniform(pool_size: int) -> np.ndarray:
    if pool_size < 1:
        raise ConfigError("empty pool")
    return np.full(pool_size, 1.0 / pool_size)


def mss_softmax(values, objective, temperature: float = 1.0) -> np.ndarray:
    """softmax(difficulty / temperature) over the latest utility row.

    Difficulty is 1 - winrate for the ownership objective and the normalized
    gap itself for the gap objective, so harder opponents get more mass.
    """
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if isinstance(objective, RewardObjective):
        raise ConfigError("the reward objective uses the uniform meta-strategy")
    v = np.asarray(values, dtype=float)
    difficulty = (1.0 - v) if isinstance(objective, WinRateByOwnership) else v
    z = difficulty / temperature
    z = z - z.max()
    ex = np.exp(z)
    return ex / ex.sum()


# ---------------------------------------------------------------------------
# the training loops

@dataclass(frozen=True)
class PSROConfig:
    game: GameConfig = field(default_factory=GameConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pool: tuple[PoolMember, ...] | None = None  # None -> default_pool()
    iterations: int = 200
    eval_episodes: int = 20
    final_eval_episodes: int = 100
    objective: object = field(default_factory=RewardObjective)
    temperature: float = 1.0
    self_play: bool = False
    seed: int = 0
    sigma_override: tuple | None = None  # one sigma per iteration (IBR hook)
    backend: str | None = None

    def __post_init__(self):
        if self.iterations < 1 or self.eval_episodes < 1 or self.final_eval_episodes < 1:
            raise ConfigError("iteration and episode counts must be >= 1")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")


@dataclass
class PSROResult:
    params: object                 # final NetworkParams
    pool: list                     # final pool (grown under self-play)
    utility_rows: list             # one UtilityRow per iteration
    sigmas: list                   # sigma used for training each iteration
    curve: list                    # mean training reward per iteration
    opponent_log: list             # sampled opponent id per training episode
    final_row: UtilityRow          # final evaluation at final_eval_episodes
    objective: object


def flip_psro(config: PSROConfig, *, initial_params=None,
              save_hook=None) -> PSROResult:
    """Run the population loop.

    initial_params resumes from an earlier checkpoint's parameters (optimizer
    state starts fresh). save_hook(iteration, params), when given, fires after
    each iteration for periodic checkpointing.
    """
    pool = list(config.pool if config.pool is not None else default_pool())
    if not pool:
        raise ConfigError("empty opponent pool")
    if isinstance(config.objective, NormalizedGap):
        if len(config.objective.references) != len(pool):
            raise ConfigError(
                "normalized-gap objective needs one specialist reference per pool "
                "member; run specialist training first")
        if config.self_play:
            raise ConfigError(
                "self-play extension is incompatible with the normalized-gap "
                "objective: appended checkpoints have no specialist reference")

    if initial_params is None:
        params = init_network(config.game.obs_dim, config.game.action_dim,
                              config.train.hidden, seed=config.seed)
    else:
        params = initial_params.copy()
    adam = AdamState.init(params)
    result = PSROResult(params=params, pool=pool, utility_rows=[], sigmas=[],
                        curve=[], opponent_log=[], final_row=None,
                        objective=config.objective)

    sigma = mss_uniform(len(pool))
    for t in range(config.iterations):
        if config.sigma_override is not None:
            sigma = np.asarray(config.sigma_override[t], dtype=float)
            if len(sigma) != len(pool):
                raise ConfigError(f"sigma override at iteration {t} has length "
                                  f"{len(sigma)}, pool has {len(pool)}")
        result.sigmas.append(sigma.copy())

        sampler = MixtureOpponent([(m.member_id, m.desc) for m in pool], sigma)
        tr = train_against(config.game, sampler, config.train, config.seed,
                           params=params, adam=adam, epochs=1, start_epoch=t,
                           backend=config.backend)
        params, adam = tr.params, tr.adam
        result.curve.extend(tr.curve)
        result.opponent_log.extend(tr.opponent_log)

        row = evaluate_utilities(ActorDesc.from_network(params), pool,
                                 config.objective, config.eval_episodes,
                                 (config.seed, t), config.game,
                                 backend=config.backend)
        result.utility_rows.append(row)

        if config.self_play:
            pool.append(PoolMember(f"selfplay{t}",
                                   ActorDesc.from_network(params.copy())))
        if isinstance(config.objective, RewardObjective):
            sigma = mss_uniform(len(pool))
        else:
            sigma = mss_softmax(row.values, config.objective, config.temperature)
            if config.self_play:
                # new member enters with zero mass until it has been evaluated
                sigma = np.append(sigma, 0.0)
                sigma = sigma / sigma.sum()
        if save_hook is not None:
            save_hook(t, params)

    result.params = params
    result.final_row = evaluate_utilities(
        ActorDesc.from_network(params), pool, config.objective,
        config.final_eval_episodes, config.seed, config.game,
        backend=config.backend, tag=TAG_FINAL_EVAL)
    return result


def ibr_train(config: PSROConfig, order=IBR_ORDER,
              epochs_per_opponent: int | None = None, *, initial_params=None,
              save_hook=None) -> PSROResult:
    """Sequential best response: one-hot sigma schedules over the pool.

    The total budget (config.iterations) splits evenly across the order
    unless epochs_per_opponent says otherwise.
    """
    pool = list(config.pool if config.pool is not None else default_pool())
    ids = [m.member_id for m in pool]
    try:
        hot = [ids.index(name) for name in order]
    except ValueError as exc:
        raise ConfigError(f"IBR order names a member outside the pool: {exc}")
    if epochs_per_opponent is None:
        epochs_per_opponent = max(1, config.iterations // len(hot))
    schedule = []
    for k in hot:
        one = np.zeros(len(pool))
        one[k] = 1.0
        schedule.extend([tuple(one)] * epochs_per_opponent)
    schedule = schedule[:config.iterations]
    while len(schedule) < config.iterations:
        schedule.append(schedule[-1])
    cfg = replace(config, pool=tuple(pool), sigma_override=tuple(schedule),
                  objective=RewardObjective(), self_play=False)
    return flip_psro(cfg, initial_params=initial_params, save_hook=save_hook)


@dataclass
class SpecialistResult:
    member_id: str
    params: object
    curve: list
    reference: float  # frozen mean reward vs its opponent, final evaluation


def train_specialists(pool, game: GameConfig, train: TrainConfig, seed,
                      epochs: int | None = None, final_eval_episodes: int = 100,
                      backend: str | None = None) -> dict[str, SpecialistResult]:
    """One independent best-response run per pool member."""
    from .learner import FixedOpponent

    out: dict[str, SpecialistResult] = {}
    for j, member in enumerate(pool):
        run_seed = (seed, j)
        tr = train_against(game, FixedOpponent(member.member_id, member.desc),
                           train, run_seed, epochs=epochs, backend=backend)
        row = evaluate_utilities(ActorDesc.from_network(tr.params), [member],
                                 RewardObjective(), final_eval_episodes,
                                 run_seed, game, backend=backend,
                                 tag=TAG_FINAL_EVAL)
        out[member.member_id] = SpecialistResult(
            member_id=member.member_id, params=tr.params, curve=tr.curve,
            reference=float(row.mean_rewards[0]))
    return out
