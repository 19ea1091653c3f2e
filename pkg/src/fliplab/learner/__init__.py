"""Policy network, PPO optimizer, and checkpoint IO."""

from .checkpoint import PolicyCheckpoint, load_checkpoint, save_checkpoint
from .network import (NetPolicy, NetworkParams, forward_batch, forward_cells,
                      init_network, sample_index)
from .ppo import (AdamState, FixedOpponent, MixtureOpponent, RolloutBuffer,
                  TrainConfig, TrainResult, adam_step, compute_advantages,
                  loss_and_grads, ppo_update, train_against)

__all__ = [
    "AdamState", "FixedOpponent", "MixtureOpponent", "NetPolicy",
    "NetworkParams", "PolicyCheckpoint", "RolloutBuffer", "TrainConfig",
    "TrainResult", "adam_step", "compute_advantages", "forward_batch",
    "forward_cells", "init_network", "load_checkpoint", "loss_and_grads",
    "ppo_update", "sample_index", "save_checkpoint", "train_against",
]
