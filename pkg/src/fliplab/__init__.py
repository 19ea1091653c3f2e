"""Stealthy-takeover game laboratory.

Simulator, heuristic agents, PPO best-response training, and a population
training loop with ownership-aware meta-strategy solvers, plus an experiment
harness and CLI around them.
"""

from .engine import (
    ATTACKER,
    DEFENDER,
    Action,
    ActionType,
    EpisodeResult,
    GameConfig,
    decode_action,
    encode_action,
    new_game,
    observe,
    resolve_step,
    run_episode,
)
from .heuristics import HeuristicSpec, make_heuristic, parse_spec

__version__ = "0.1.0"
