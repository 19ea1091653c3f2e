"""Shared actor/result containers for the episode backends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..heuristics import HeuristicSpec, parse_spec
from ..learner.network import NetworkParams


@dataclass(frozen=True)
class ActorDesc:
    """What plays one side of a match: a heuristic spec or network weights."""

    kind: str  # "heuristic" | "network"
    heuristic: HeuristicSpec | None = None
    params: NetworkParams | None = None
    greedy: bool = False

    @staticmethod
    def from_heuristic(spec) -> "ActorDesc":
        if isinstance(spec, str):
            spec = parse_spec(spec)
        return ActorDesc("heuristic", heuristic=spec)

    @staticmethod
    def from_network(params: NetworkParams, greedy: bool = False) -> "ActorDesc":
        return ActorDesc("network", params=params, greedy=greedy)

    def validate(self) -> None:
        if self.kind == "heuristic":
            if self.heuristic is None:
                raise ConfigError("heuristic actor without a spec")
        elif self.kind == "network":
            if self.params is None:
                raise ConfigError("network actor without parameters")
        else:
            raise ConfigError(f"unknown actor kind {self.kind!r}")


@dataclass
class LearnerRollout:
    """Per-step data for one side across a batch, consumed by PPO updates."""

    cells: np.ndarray    # (N, T, 2R) int32 active observation cells
    actions: np.ndarray  # (N, T) int16 flat action indices
    logp: np.ndarray     # (N, T) float64 behavior log-probs
    values: np.ndarray   # (N, T) float64 value estimates
    rewards: np.ndarray  # (N, T) float64 learner-side step rewards


@dataclass
class BatchResult:
    rewards: np.ndarray          # (N, 2) episode totals
    ownership: np.ndarray        # (N, 2, R) fraction of steps owned
    actions: np.ndarray | None   # (N, T, 2) flat indices, when traced
    owners: np.ndarray | None    # (N, T, R)
    step_rewards: np.ndarray | None  # (N, T, 2)
    learner: LearnerRollout | None
