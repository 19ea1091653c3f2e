"""Clipped-surrogate policy optimization with hand-derived gradients.

Everything here is plain NumPy and purely functional: an update maps
(params, buffer, adam state) to new values without mutating the inputs.
The gradient of the full loss (clipped policy surrogate + weighted MSE
value error - entropy bonus) is derived analytically and checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..backends.types import ActorDesc, LearnerRollout
from ..engine import DEFENDER, GameConfig
from ..errors import ConfigError, TrainingError
from ..seeding import TAG_OPPONENT, TAG_SHUFFLE, TAG_TRAIN, stream
from .network import LOGIT_BOUND, NetworkParams, forward_batch, init_network


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 4
    episodes_per_update: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    hidden: tuple[int, int] = (64, 64)
    total_epochs: int = 200
    episodes_per_epoch: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    minibatch_size: int = 64     # 0 = one full-batch pass per epoch
    max_grad_norm: float = 0.5   # 0 = no clipping

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must be in (0, 1], got {self.gae_lambda}")
        if self.clip_epsilon <= 0.0:
            raise ConfigError(f"clip_epsilon must be positive, got {self.clip_epsilon}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.minibatch_size < 0 or self.max_grad_norm < 0:
            raise ConfigError("minibatch_size and max_grad_norm must be >= 0")
        for name in ("epochs_per_update", "episodes_per_update", "total_epochs",
                     "episodes_per_epoch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class RolloutBuffer:
    """Whole episodes, flattened. ``starts`` marks each episode's first row."""

    cells: np.ndarray    # (B, 2R) int32 active observation cells
    actions: np.ndarray  # (B,) int action indices
    logp: np.ndarray     # (B,) behavior log-probabilities
    rewards: np.ndarray  # (B,)
    values: np.ndarray   # (B,)
    starts: np.ndarray   # (E,) int, increasing, starts[0] == 0

    @property
    def num_steps(self) -> int:
        return len(self.actions)

    @property
    def num_episodes(self) -> int:
        return len(self.starts)

    def episode_slices(self):
        bounds = np.append(self.starts, self.num_steps)
        return [slice(int(bounds[i]), int(bounds[i + 1]))
                for i in range(self.num_episodes)]

    def validate(self) -> None:
        n = self.num_steps
        if n == 0:
            raise ConfigError("empty rollout buffer")
        for name in ("actions", "logp", "rewards", "values"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"buffer field {name} length mismatch")
        if len(self.starts) == 0 or self.starts[0] != 0:
            raise ConfigError("episode starts must begin at 0")
        if np.any(np.diff(self.starts) <= 0) or self.starts[-1] >= n:
            raise ConfigError("episode starts must increase and stay in range")

    @staticmethod
    def from_rollouts(rollouts: list[LearnerRollout]) -> "RolloutBuffer":
        """Concatenate (N, T)-shaped batch rollouts into one flat buffer."""
        cells = np.concatenate([r.cells.reshape(-1, r.cells.shape[-1]) for r in rollouts])
        actions = np.concatenate([r.actions.ravel() for r in rollouts]).astype(np.int64)
        logp = np.concatenate([r.logp.ravel() for r in rollouts])
        values = np.concatenate([r.values.ravel() for r in rollouts])
        rewards = np.concatenate([r.rewards.ravel() for r in rollouts])
        lengths = [r.actions.shape[1] for r in rollouts for _ in range(r.actions.shape[0])]
        starts = np.cumsum([0] + lengths[:-1]).astype(np.int64)
        return RolloutBuffer(cells, actions, logp, rewards, values, starts)

    @staticmethod
    def from_episodes(episodes) -> "RolloutBuffer":
        """Build from per-episode dicts with keys cells/actions/logp/rewards/values."""
        starts, at = [], 0
        for ep in episodes:
            starts.append(at)
            at += len(ep["actions"])
        return RolloutBuffer(
            cells=np.concatenate([np.asarray(ep["cells"], dtype=np.int32) for ep in episodes]),
            actions=np.concatenate([np.asarray(ep["actions"], dtype=np.int64) for ep in episodes]),
            logp=np.concatenate([np.asarray(ep["logp"], dtype=float) for ep in episodes]),
            rewards=np.concatenate([np.asarray(ep["rewards"], dtype=float) for ep in episodes]),
            values=np.concatenate([np.asarray(ep["values"], dtype=float) for ep in episodes]),
            starts=np.asarray(starts, dtype=np.int64),
        )


def compute_advantages(buffer: RolloutBuffer, gamma: float, lam: float):
    """Generalized advantage estimates, no bootstrap past episode ends.

    Returns (advantages, returns) with returns = advantages + values.
    """
    buffer.validate()
    adv = np.zeros(buffer.num_steps)
    for sl in buffer.episode_slices():
        r = buffer.rewards[sl]
        v = buffer.values[sl]
        carry = 0.0
        last_v = 0.0  # terminal value is zero: episodes end at the horizon
        for t in range(len(r) - 1, -1, -1):
            delta = r[t] + gamma * last_v - v[t]
            carry = delta + gamma * lam * carry
            adv[sl][t] = carry
            last_v = v[t]
    return adv, adv + buffer.values


def loss_and_grads(params: NetworkParams, cells, actions, logp_old, adv, ret,
                   config: TrainConfig):
    """Full PPO loss and its analytic gradient in canonical tensor order.

    Returns (total loss, grads list matching params.tensors(), stats dict).
    """
    out = forward_batch(params, cells)
    h1, h2 = out["h1"], out["h2"]
    g1, g2 = out["g1"], out["g2"]
    probs, logp, values = out["probs"], out["logp"], out["values"]
    n = len(actions)
    rows = np.arange(n)

    lp_taken = logp[rows, actions]
    ratio = np.exp(lp_taken - logp_old)
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = -np.minimum(surr1, surr2).mean()
    vdiff = values - ret
    value_loss = np.mean(vdiff * vdiff)
    ent = -(probs * logp).sum(axis=1)
    entropy = ent.mean()
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    # d(policy loss)/d(logp of the taken action): the min() passes gradient
    # through the unclipped branch only when that branch attains the min
    use_unclipped = surr1 <= surr2
    dlp_taken = np.where(use_unclipped, -ratio * adv, 0.0) / n
    dlogits = -dlp_taken[:, None] * probs
    dlogits[rows, actions] += dlp_taken
    # entropy bonus: d(-c_e * mean(H))/dlogits = c_e/n * p * (logp + H)
    dlogits += (config.entropy_coef / n) * probs * (logp + ent[:, None])
    dvalues = (2.0 * config.value_coef / n) * vdiff

    # policy network: chain through the logit soft-clip,
    # d(bound(u))/du = 1 - (bound(u)/B)^2
    du = dlogits * (1.0 - (out["logits"] / LOGIT_BOUND) ** 2)
    g_wp = du.T @ h2
    g_bp = du.sum(axis=0)
    dh2 = du @ params.wp
    dz2 = dh2 * (1.0 - h2 * h2)
    g_w2 = dz2.T @ h1
    g_b2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2
    dz1 = dh1 * (1.0 - h1 * h1)
    g_b1 = dz1.sum(axis=0)
    g_w1t = np.zeros((params.obs_dim, h1.shape[1]))
    for k in range(cells.shape[1]):
        np.add.at(g_w1t, cells[:, k], dz1)
    g_w1 = np.ascontiguousarray(g_w1t.T)

    # value network
    g_wv = dvalues @ g2
    g_bv = np.array([dvalues.sum()])
    dg2 = dvalues[:, None] * params.wv
    dy2 = dg2 * (1.0 - g2 * g2)
    g_v2 = dy2.T @ g1
    g_c2 = dy2.sum(axis=0)
    dg1 = dy2 @ params.v2
    dy1 = dg1 * (1.0 - g1 * g1)
    g_c1 = dy1.sum(axis=0)
    g_v1t = np.zeros((params.obs_dim, g1.shape[1]))
    for k in range(cells.shape[1]):
        np.add.at(g_v1t, cells[:, k], dy1)
    g_v1 = np.ascontiguousarray(g_v1t.T)

    grads = [g_w1, g_b1, g_w2, g_b2, g_wp, g_bp,
             g_v1, g_c1, g_v2, g_c2, g_wv, g_bv]
    stats = {
        "total_loss": float(total),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_epsilon)),
        "approx_kl": float(np.mean(logp_old - lp_taken)),
    }
    return total, grads, stats


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @staticmethod
    def init(params: NetworkParams) -> "AdamState":
        return AdamState(m=[np.zeros_like(x) for x in params.tensors()],
                         v=[np.zeros_like(x) for x in params.tensors()])


def adam_step(params: NetworkParams, grads, state: AdamState,
              config: TrainConfig):
    """One adaptive-moment update; returns fresh (params, state)."""
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = state.t + 1
    new_tensors, new_m, new_v = [], [], []
    for x, g, m, v in zip(params.tensors(), grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        new_tensors.append(x - config.learning_rate * mhat / (np.sqrt(vhat) + eps))
        new_m.append(m)
        new_v.append(v)
    fields = dict(zip(params.names(), new_tensors))
    return replace(params, **fields), AdamState(new_m, new_v, t)


def clip_grads(grads, max_norm: float):
    """Global-norm gradient clipping. Returns (grads, pre-clip norm)."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def ppo_update(params: NetworkParams, buffer: RolloutBuffer, config: TrainConfig,
               adam: AdamState | None = None, rng: np.random.Generator | None = None):
    """epochs_per_update passes over the buffer; returns (params, adam, stats).

    With minibatch_size > 0 each pass visits shuffled minibatches and
    advantages are normalized per minibatch; with 0 each pass is one
    full-batch step normalized over the whole buffer. Per-minibatch
    normalization is deliberate: it amplifies relative differences inside
    quiet minibatches, and that gradient noise is what lets the policy leave
    the all-sleep equilibrium (globally scaled advantages there are too small
    to move it). Gradients are clipped by global norm. The shuffle order
    comes from rng, so updates stay deterministic under a seeded stream.
    """
    adv, ret = compute_advantages(buffer, config.gamma, config.gae_lambda)
    if config.normalize_advantages and config.minibatch_size == 0:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    if adam is None:
        adam = AdamState.init(params)
    if rng is None:
        rng = stream((0, TAG_SHUFFLE))
    n = len(buffer.actions)
    stats = {}

    def step(idx):
        nonlocal params, adam, stats
        a = adv[idx]
        if config.normalize_advantages and config.minibatch_size > 0:
            a = (a - a.mean()) / (a.std() + 1e-8)
        total, grads, stats = loss_and_grads(
            params, buffer.cells[idx], buffer.actions[idx], buffer.logp[idx],
            a, ret[idx], config)
        if not np.isfinite(total):
            raise TrainingError(f"non-finite loss in update: {stats}")
        grads, stats["grad_norm"] = clip_grads(grads, config.max_grad_norm)
        params, adam = adam_step(params, grads, adam, config)

    for _ in range(config.epochs_per_update):
        if config.minibatch_size == 0:
            step(np.arange(n))
            continue
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            idx = order[lo:lo + config.minibatch_size]
            if len(idx) < 2:
                continue
            step(idx)
    if not np.isfinite(params.flat()).all():
        raise TrainingError("non-finite parameters after update")
    return params, adam, stats


class FixedOpponent:
    """Sampler that always plays the same opponent. Consumes no randomness."""

    def __init__(self, member_id: str, desc: ActorDesc):
        self.member_id = member_id
        self.desc = desc

    def sample(self, rng):
        return self.member_id, self.desc


class MixtureOpponent:
    """Sampler over (id, ActorDesc) pairs; one uniform draw per episode."""

    def __init__(self, members, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if len(members) != len(sigma):
            raise ConfigError("mixture weights do not match members")
        if np.any(sigma < 0) or abs(sigma.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must form a distribution")
        self.members = list(members)
        self._cum = np.cumsum(sigma)

    def sample(self, rng):
        u = rng.random()
        idx = min(int(np.searchsorted(self._cum, u, side="right")),
                  len(self.members) - 1)
        return self.members[idx]


@dataclass
class TrainResult:
    params: NetworkParams
    adam: AdamState
    curve: list = field(default_factory=list)          # per-epoch mean reward
    opponent_log: list = field(default_factory=list)   # opponent id per episode
    update_stats: list = field(default_factory=list)   # one dict per update


def train_against(game: GameConfig, sampler, config: TrainConfig, seed,
                  params: NetworkParams | None = None,
                  adam: AdamState | None = None,
                  epochs: int | None = None, start_epoch: int = 0,
                  backend: str | None = None) -> TrainResult:
    """Train the defender network with per-episode opponent sampling.

    Episode keys are (seed, train tag, epoch, block, episode); the opponent
    stream has its own key per block, so results are independent of how
    episodes get batched per opponent.
    """
    from ..backends import simulate  # deferred: backends pull in this package

    if params is None:
        params = init_network(game.obs_dim, game.action_dim, config.hidden,
                              seed=seed)
    if adam is None:
        adam = AdamState.init(params)
    if epochs is None:
        epochs = config.total_epochs

    result = TrainResult(params=params, adam=adam)
    per_update = config.episodes_per_update
    for epoch in range(start_epoch, start_epoch + epochs):
        epoch_rewards = []
        done = 0
        block = 0
        while done < config.episodes_per_epoch:
            count = min(per_update, config.episodes_per_epoch - done)
            opp_rng = stream((seed, TAG_OPPONENT, epoch, block))
            drawn = [sampler.sample(opp_rng) for _ in range(count)]
            keys = [(seed, TAG_TRAIN, epoch, block, i) for i in range(count)]
            result.opponent_log.extend(member_id for member_id, _ in drawn)

            # batch per distinct opponent, keeping each episode's own key
            groups: dict[int, list[int]] = {}
            order: list[tuple[str, ActorDesc]] = []
            for i, (member_id, desc) in enumerate(drawn):
                gid = next((j for j, (mid, _) in enumerate(order) if mid == member_id),
                           None)
                if gid is None:
                    gid = len(order)
                    order.append((member_id, desc))
                groups.setdefault(gid, []).append(i)

            rollouts = []
            learner = ActorDesc.from_network(result.params)
            for gid, (member_id, desc) in enumerate(order):
                batch = simulate(game, learner, desc,
                                 [keys[i] for i in groups[gid]],
                                 learner_side=DEFENDER, backend=backend)
                rollouts.append(batch.learner)
                epoch_rewards.extend(batch.rewards[:, DEFENDER].tolist())

            buffer = RolloutBuffer.from_rollouts(rollouts)
            new_params, new_adam, stats = ppo_update(
                result.params, buffer, config, result.adam,
                rng=stream((seed, TAG_SHUFFLE, epoch, block)))
            result.params, result.adam = new_params, new_adam
            result.update_stats.append(stats)
            done += count
            block += 1
        result.curve.append(float(np.mean(epoch_rewards)))
    return result
