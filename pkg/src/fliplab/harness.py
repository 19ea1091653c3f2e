"""Experiment runner and statistics layer.

Tournaments, parameter sweeps, checkpoint evaluation tables, and transfer
suites, all with per-cell derived seeds so a bounded worker pool can run
cells in any order without changing a single number. Tables export as CSV
with repr-formatted floats, which round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import __version__
from .backends import ActorDesc, resolve_backend, simulate
from .engine import ATTACKER, DEFENDER, GameConfig
from .errors import ConfigError, SpecError
from .metagame import PoolMember, default_pool
from .seeding import TAG_EVAL, TAG_TOURNAMENT

__all__ = [
    "MatchupResult", "Summary", "summarize", "tournament", "parameter_sweep",
    "evaluate_checkpoint", "transfer_eval", "ExperimentPreset", "PRESETS",
    "FIG1_ROSTER", "TRANSFER_ROSTER", "pool_roster", "write_matchup_csv",
    "read_matchup_csv", "write_eval_csv", "write_curve_csv", "write_sigma_csv",
    "write_utility_csv", "write_manifest", "default_workers",
]


class Summary(NamedTuple):
    mean: float
    std: float
    se: float
    count: int


def summarize(values) -> Summary:
    """Mean, sample std (n-1 denominator, 0 when n == 1), SE, count."""
    v = np.asarray(values, dtype=float)
    if v.size < 1:
        raise ConfigError("summarize needs at least one value")
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return Summary(float(v.mean()), std, std / float(np.sqrt(v.size)), int(v.size))


@dataclass
class MatchupResult:
    defender_id: str
    attacker_id: str
    defender_label: str
    attacker_label: str
    episodes: int
    mean_reward: float
    std_reward: float
    mean_ownership: float           # defender side, fraction in [0, 1]
    rewards: np.ndarray             # raw per-episode defender rewards
    ownership: np.ndarray           # raw per-episode defender ownership
    attacker_ownership: np.ndarray  # raw per-episode attacker ownership


def _roster(entries) -> list[tuple[str, ActorDesc, str]]:
    """Normalize (id, spec|ActorDesc) pairs or bare spec strings."""
    out = []
    errors = []
    for entry in entries:
        if isinstance(entry, str):
            ident, payload = entry, entry
        else:
            ident, payload = entry
        try:
            if isinstance(payload, ActorDesc):
                desc = payload
            elif isinstance(payload, PoolMember):
                desc = payload.desc
            else:
                desc = ActorDesc.from_heuristic(payload)
            desc.validate()
        except SpecError as exc:
            errors.append(f"{ident}: {exc}")
            continue
        label = desc.heuristic.canonical() if desc.kind == "heuristic" else f"network:{ident}"
        out.append((str(ident), desc, label))
    if errors:
        raise SpecError("bad agent specs: " + "; ".join(errors))
    return out


def default_workers() -> int:
    return min(8, os.cpu_count() or 1)


def tournament(defenders, attackers, episodes: int, seed,
               game: GameConfig | None = None, workers: int | None = None,
               backend: str | None = None) -> dict[tuple[str, str], MatchupResult]:
    """All pairings, each cell seeded by (seed, tag, row, col, episode)."""
    if episodes < 1:
        raise ConfigError("tournament needs episodes >= 1")
    game = game or GameConfig()
    dd = _roster(defenders)
    aa = _roster(attackers)
    workers = workers or default_workers()

    def run_cell(cell):
        i, j = cell
        d_id, d_desc, d_label = dd[i]
        a_id, a_desc, a_label = aa[j]
        keys = [(seed, TAG_TOURNAMENT, i, j, e) for e in range(episodes)]
        batch = simulate(game, d_desc, a_desc, keys, backend=backend)
        rew = batch.rewards[:, DEFENDER]
        own_d = batch.ownership[:, DEFENDER, :].mean(axis=1)
        own_a = batch.ownership[:, ATTACKER, :].mean(axis=1)
        s = summarize(rew)
        return (d_id, a_id), MatchupResult(
            d_id, a_id, d_label, a_label, episodes, s.mean, s.std,
            float(own_d.mean()), rew, own_d, own_a)

    cells = [(i, j) for i in range(len(dd)) for j in range(len(aa))]
    results: dict[tuple[str, str], MatchupResult] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for key, value in pool.map(run_cell, cells):
            results[key] = value
    return results


def parameter_sweep(defender_specs, attacker_specs, episodes: int, seed,
                    game: GameConfig | None = None, workers: int | None = None,
                    backend: str | None = None):
    """Tournament over a parameter grid; same cell semantics, grid labels."""
    return tournament(defender_specs, attacker_specs, episodes, seed,
                      game=game, workers=workers, backend=backend)


def _eval_rows(policy: ActorDesc, opponents, episodes: int, seed,
               game: GameConfig, workers: int | None, backend: str | None):
    roster = _roster(opponents)
    workers = workers or default_workers()

    def run_one(j):
        o_id, o_desc, o_label = roster[j]
        keys = [(seed, TAG_EVAL, j, e) for e in range(episodes)]
        batch = simulate(game, policy, o_desc, keys, backend=backend)
        rew = batch.rewards[:, DEFENDER]
        own = batch.ownership[:, DEFENDER, :].mean(axis=1)
        s = summarize(rew)
        so = summarize(own)
        return {
            "opponent_id": o_id, "opponent_spec": o_label, "episodes": episodes,
            "mean_reward": s.mean, "std_reward": s.std,
            "mean_ownership_pct": 100.0 * so.mean,
            "std_ownership_pct": 100.0 * so.std,
        }

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(run_one, range(len(roster))))
    average = {
        "opponent_id": "average", "opponent_spec": "average", "episodes": episodes,
        "mean_reward": float(np.mean([r["mean_reward"] for r in rows])),
        "std_reward": float(np.mean([r["std_reward"] for r in rows])),
        "mean_ownership_pct": float(np.mean([r["mean_ownership_pct"] for r in rows])),
        "std_ownership_pct": float(np.mean([r["std_ownership_pct"] for r in rows])),
    }
    return rows, average


def evaluate_checkpoint(params, opponents, episodes: int, seed,
                        game: GameConfig | None = None,
                        workers: int | None = None, backend: str | None = None,
                        greedy: bool = False):
    """Reward/ownership table of a trained defender vs each opponent.

    Returns (rows, average_row); rows carry mean/std reward and ownership
    percentage, mirroring the reward and ownership tables.
    """
    game = game or GameConfig()
    if params.obs_dim != game.obs_dim or params.action_dim != game.action_dim:
        raise ConfigError(
            f"checkpoint dims ({params.obs_dim}, {params.action_dim}) do not "
            f"match the game ({game.obs_dim}, {game.action_dim})")
    policy = ActorDesc.from_network(params, greedy=greedy)
    return _eval_rows(policy, opponents, episodes, seed, game, workers, backend)


TRANSFER_ROSTER = (
    ("P(6)", "periodic:phase=6,delay=random"),
    ("P(8)", "periodic:phase=8,delay=random"),
    ("B(8,6)", "burst:phase=8,delay=random,burst=6"),
    ("B(16,3)", "burst:phase=16,delay=random,burst=3"),
    ("PC(8)", "pc:phase=8,delay=random"),
    ("PAC(6)", "pac:phase=6"),
    ("PAC(8)", "pac:phase=8"),
)


def transfer_eval(params, episodes: int, seed, game: GameConfig | None = None,
                  opponents=TRANSFER_ROSTER, workers: int | None = None,
                  backend: str | None = None):
    """evaluate_checkpoint over the unseen-opponent roster."""
    return evaluate_checkpoint(params, opponents, episodes, seed, game=game,
                               workers=workers, backend=backend)


def pool_roster() -> tuple[tuple[str, ActorDesc], ...]:
    return tuple((m.member_id, m.desc) for m in default_pool())


# Bar-chart roster: the default-parameter agents plus the prominent sweep
# variants discussed alongside them.
FIG1_ROSTER = (
    ("Sleep", "sleep"),
    ("Random(0.33)", "random:p=0.33"),
    ("Periodic(4)", "periodic:phase=4,delay=random"),
    ("Burst(8,3)", "burst:phase=8,delay=random,burst=3"),
    ("Awake(0.05)", "awake:lambda=0.05"),
    ("Awake(0.5)", "awake:lambda=0.5"),
    ("Reta(2)", "reta:phase=2"),
    ("Reta(4)", "reta:phase=4"),
    ("PC(4)", "pc:phase=4,delay=random"),
    ("PAC(4)", "pac:phase=4"),
    ("PAC(8)", "pac:phase=8"),
)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    game: GameConfig
    description: str
    episodes: int = 100
    psro_temperature: float = 0.25
    psro_self_play: bool = False


PRESETS = {
    "paper-default": ExperimentPreset(
        name="paper-default",
        game=GameConfig(),
        description="T=100, R=1, costs sleep/check/flip = 0/1/2, gain 1",
    ),
    "cheap-check": ExperimentPreset(
        name="cheap-check",
        game=GameConfig(cost_check=0.1),
        description="checking at 20x lower cost than flipping (0.1 vs 2)",
    ),
    "self-play": ExperimentPreset(
        name="self-play",
        game=GameConfig(cost_check=0.1),
        description="flip 2, check 0.1; pool extended with own checkpoints",
        psro_self_play=True,
    ),
}


# ---------------------------------------------------------------------------
# file formats: repr floats so CSV round-trips are exact

def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_matchup_csv(path, results: dict[tuple[str, str], MatchupResult]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["defender", "attacker", "defender_spec", "attacker_spec",
                    "episodes", "mean_reward", "std_reward", "mean_ownership"])
        for (d_id, a_id) in sorted(results):
            r = results[(d_id, a_id)]
            w.writerow([r.defender_id, r.attacker_id, r.defender_label,
                        r.attacker_label, r.episodes, _fmt(r.mean_reward),
                        _fmt(r.std_reward), _fmt(r.mean_ownership)])


def read_matchup_csv(path):
    """Parse a tournament CSV back into plain row dicts (exact floats)."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rec["episodes"] = int(rec["episodes"])
            for k in ("mean_reward", "std_reward", "mean_ownership"):
                rec[k] = float(rec[k])
            rows.append(rec)
    return rows


def write_eval_csv(path, rows, average) -> None:
    cols = ["opponent_id", "opponent_spec", "episodes", "mean_reward",
            "std_reward", "mean_ownership_pct", "std_ownership_pct"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in list(rows) + [average]:
            w.writerow([_fmt(row[c]) for c in cols])


def write_curve_csv(path, curve) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_reward"])
        for epoch, value in enumerate(curve):
            w.writerow([epoch, _fmt(float(value))])


def write_sigma_csv(path, sigmas, member_ids_per_iter) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "member_id", "sigma"])
        for it, sigma in enumerate(sigmas):
            ids = member_ids_per_iter[it]
            for member_id, value in zip(ids, sigma):
                w.writerow([it, member_id, _fmt(float(value))])


def write_utility_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "member_id", "utility", "mean_reward",
                    "mean_ownership"])
        for it, row in enumerate(rows):
            for j, member_id in enumerate(row.member_ids):
                w.writerow([it, member_id, _fmt(float(row.values[j])),
                            _fmt(float(row.mean_rewards[j])),
                            _fmt(float(row.mean_ownership[j]))])


def write_manifest(path, command: str, *, game: GameConfig, seed, episodes=None,
                   backend: str | None = None, workers: int | None = None,
                   outputs=(), extra: dict | None = None) -> dict:
    """Provenance snapshot sufficient to replay the run."""
    manifest = {
        "command": command,
        "version": __version__,
        "game": {
            "horizon": game.horizon,
            "num_resources": game.num_resources,
            "cost_sleep": game.cost_sleep,
            "cost_check": game.cost_check,
            "cost_flip": game.cost_flip,
            "gain": game.gain,
            "memory_limit": game.memory_limit,
            "initial_owner": game.initial_owner,
        },
        "seed": seed,
        "episodes": episodes,
        "backend": backend or resolve_backend(game),
        "workers": workers,
        "outputs": list(outputs),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
