"""Command-line front end.

Subcommands: tournament, sweep, train, eval, export. Every run writes its
outputs plus a manifest.json snapshot (command, resolved game, seeds,
backend) sufficient to replay it. Exit codes: 0 success, 1 runtime failure,
2 configuration/spec errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, harness, metagame
from .backends import available_backends, resolve_backend
from .engine import GameConfig
from .errors import CheckpointError, ConfigError, FlipLabError, SpecError
from .harness import PRESETS
from .heuristics import grammar_help
from .learner import (FixedOpponent, TrainConfig, load_checkpoint,
                      save_checkpoint, train_against)
from .metagame import (NormalizedGap, PSROConfig, RewardObjective,
                       WinRateByOwnership, default_pool, evaluate_utilities,
                       flip_psro, ibr_train)
from .seeding import TAG_FINAL_EVAL

_ENGINE_KEYS = {"horizon", "num_resources", "cost_sleep", "cost_check",
                "cost_flip", "gain", "memory_limit", "initial_owner"}
_TRAIN_KEYS = {"learning_rate", "gamma", "gae_lambda", "clip_epsilon",
               "epochs_per_update", "episodes_per_update", "value_coef",
               "entropy_coef", "hidden", "total_epochs", "episodes_per_epoch",
               "adam_beta1", "adam_beta2", "adam_eps", "normalize_advantages",
               "minibatch_size", "max_grad_norm"}
_PSRO_KEYS = {"iterations", "eval_episodes", "final_eval_episodes",
              "temperature", "self_play", "own_threshold", "mss"}
_TOP_KEYS = {"engine", "agents", "train", "psro", "output_dir", "seed",
             "episodes", "workers", "backend", "preset"}
_AGENT_KEYS = {"defenders", "attackers"}


def load_run_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    for key, allowed in (("", _TOP_KEYS), ("engine", _ENGINE_KEYS),
                         ("train", _TRAIN_KEYS), ("psro", _PSRO_KEYS),
                         ("agents", _AGENT_KEYS)):
        section = doc if key == "" else doc.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key or 'top level'} must be an object")
        unknown = set(section) - allowed
        if unknown:
            where = key or "top level"
            raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")
    return doc


def _resolve(flag_value, config_value, env_name=None, default=None):
    if flag_value is not None:
        return flag_value
    if env_name and os.environ.get(env_name) not in (None, ""):
        return os.environ[env_name]
    if config_value is not None:
        return config_value
    return default


def _build_game(args, doc) -> GameConfig:
    preset_name = _resolve(getattr(args, "preset", None), doc.get("preset"),
                           default="paper-default")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; "
                          f"choose from {sorted(PRESETS)}")
    game = PRESETS[preset_name].game
    overrides = doc.get("engine", {})
    if overrides:
        game = replace(game, **overrides)
    return game


def _build_train(doc) -> TrainConfig:
    section = dict(doc.get("train", {}))
    if "hidden" in section:
        section["hidden"] = tuple(section["hidden"])
    return TrainConfig(**section)


def _common(sub):
    sub.add_argument("--config", help="JSON run config; flags override file values")
    sub.add_argument("--preset", choices=sorted(PRESETS),
                     help="experiment preset (default paper-default)")
    sub.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    sub.add_argument("--episodes", type=int, default=None,
                     help="episodes per cell/evaluation (default 100)")
    sub.add_argument("--output-dir", default=None,
                     help="where outputs go (env FLIPLAB_OUTPUT_DIR, default runs/<command>)")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker threads for independent cells (env FLIPLAB_WORKERS)")
    sub.add_argument("--backend", choices=["auto", "compiled", "python"], default=None,
                     help="episode backend (env FLIPLAB_BACKEND, default auto)")


def build_parser() -> argparse.ArgumentParser:
    epilog = (
        "presets:\n"
        + "\n".join(f"  {name}: {p.description}" for name, p in sorted(PRESETS.items()))
        + "\n\n" + grammar_help()
    )
    parser = argparse.ArgumentParser(
        prog="fliplab",
        description="FlipIt-style takeover game: tournaments, PPO training, "
                    "population (PSRO) experiments.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    t = subs.add_parser("tournament", help="heuristic-vs-heuristic matrix",
                        epilog=epilog,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--defenders", nargs="+", default=None, help="defender spec strings")
    t.add_argument("--attackers", nargs="+", default=None, help="attacker spec strings")
    _common(t)

    s = subs.add_parser("sweep", help="parameter sweep for one agent family",
                        epilog=epilog,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--family", required=True, help="heuristic kind to sweep")
    s.add_argument("--param", required=True, help="parameter name, e.g. phase")
    s.add_argument("--values", required=True, help="comma list, e.g. 2,4,8")
    s.add_argument("--base", default="", help="extra fixed params, e.g. delay=random")
    s.add_argument("--side", choices=["defender", "attacker"], default="defender",
                   help="which side the swept family plays")
    s.add_argument("--opponents", nargs="+", required=True, help="opponent specs")
    _common(s)

    tr = subs.add_parser("train", help="PPO training: specialist, IBR, or PSRO",
                         epilog=epilog,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    tr.add_argument("--mode", choices=["specialist", "ibr", "psro"], required=True)
    tr.add_argument("--opponent", help="specialist mode: fixed opponent spec")
    tr.add_argument("--order", default=",".join(metagame.IBR_ORDER),
                    help="ibr mode: comma list of pool member ids")
    tr.add_argument("--mss", choices=["uniform", "gap", "own"], default="uniform",
                    help="psro mode: meta-strategy solver")
    tr.add_argument("--own-threshold", type=float, default=0.5,
                    help="psro --mss own: ownership win threshold")
    tr.add_argument("--temperature", type=float, default=None,
                    help="softmax MSS temperature (preset default 0.25)")
    tr.add_argument("--self-play", choices=["on", "off"], default=None,
                    help="psro mode: extend the pool with own checkpoints "
                         "(default: preset setting)")
    tr.add_argument("--specialist-refs",
                    help="psro --mss gap: JSON file {member_id: specialist reward}")
    tr.add_argument("--epochs", type=int, default=None,
                    help="specialist total epochs (default 200)")
    tr.add_argument("--iterations", type=int, default=None,
                    help="ibr/psro iterations (default 200)")
    tr.add_argument("--eval-episodes", type=int, default=20,
                    help="per-iteration utility-row episodes per member")
    tr.add_argument("--final-eval-episodes", type=int, default=100)
    tr.add_argument("--name", default=None, help="artifact basename (default: mode)")
    tr.add_argument("--save-every", type=int, default=0,
                    help="also checkpoint every N epochs/iterations (0 = final only)")
    tr.add_argument("--resume",
                    help="continue from a checkpoint (parameters only; "
                         "optimizer state restarts)")
    _common(tr)

    ev = subs.add_parser("eval", help="evaluate a checkpoint against a roster",
                         epilog=epilog,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--roster", default="pool",
                    help="pool | transfer | fig1 | space-separated specs")
    ev.add_argument("--greedy", action="store_true",
                    help="argmax actions instead of sampling")
    _common(ev)

    ex = subs.add_parser("export", help="pivot a tournament CSV into plot data",
                         epilog=epilog,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    ex.add_argument("--tournament", required=True, help="tournament.csv to pivot")
    ex.add_argument("--out", default=None, help="output CSV (default fig_data.csv)")
    _common(ex)
    return parser


def _setup(args):
    doc = load_run_config(args.config) if args.config else {}
    game = _build_game(args, doc)
    seed = int(_resolve(args.seed, doc.get("seed"), default=0))
    episodes = int(_resolve(args.episodes, doc.get("episodes"), default=100))
    outdir = Path(_resolve(args.output_dir, doc.get("output_dir"),
                           env_name="FLIPLAB_OUTPUT_DIR",
                           default=os.path.join("runs", args.command)))
    outdir.mkdir(parents=True, exist_ok=True)
    workers = _resolve(args.workers, doc.get("workers"), env_name="FLIPLAB_WORKERS")
    workers = int(workers) if workers is not None else harness.default_workers()
    backend = _resolve(args.backend, doc.get("backend"), env_name="FLIPLAB_BACKEND")
    if backend == "auto":
        backend = None
    resolve_backend(game, backend)  # fail fast on an unusable choice
    return doc, game, seed, episodes, outdir, workers, backend


def _print_matrix(results):
    defenders = sorted({d for d, _ in results})
    attackers = sorted({a for _, a in results})
    width = max([len(x) for x in defenders + attackers] + [10]) + 2
    print("defender \\ attacker".ljust(width)
          + "".join(a.rjust(width) for a in attackers))
    for d in defenders:
        cells = []
        for a in attackers:
            r = results[(d, a)]
            cells.append(f"{r.mean_reward:.1f}±{r.std_reward:.1f}".rjust(width))
        print(d.ljust(width) + "".join(cells))


def _print_eval(rows, average):
    width = 14
    print("opponent".ljust(18) + "reward".rjust(width) + "ownership%".rjust(width))
    for row in list(rows) + [average]:
        print(row["opponent_id"].ljust(18)
              + f"{row['mean_reward']:.1f}±{row['std_reward']:.1f}".rjust(width)
              + f"{row['mean_ownership_pct']:.1f}".rjust(width))


def cmd_tournament(args) -> int:
    doc, game, seed, episodes, outdir, workers, backend = _setup(args)
    agents = doc.get("agents", {})
    defenders = args.defenders or agents.get("defenders") or [s for _, s in harness.FIG1_ROSTER]
    attackers = args.attackers or agents.get("attackers") or [s for _, s in harness.FIG1_ROSTER]
    results = harness.tournament(defenders, attackers, episodes, seed,
                                 game=game, workers=workers, backend=backend)
    csv_path = outdir / "tournament.csv"
    harness.write_matchup_csv(csv_path, results)
    harness.write_manifest(outdir / "manifest.json", "tournament", game=game,
                           seed=seed, episodes=episodes, backend=backend,
                           workers=workers, outputs=[csv_path.name],
                           extra={"defenders": list(defenders),
                                  "attackers": list(attackers)})
    _print_matrix(results)
    print(f"wrote {csv_path}")
    return 0


def cmd_sweep(args) -> int:
    doc, game, seed, episodes, outdir, workers, backend = _setup(args)
    base = f",{args.base}" if args.base else ""
    swept = [f"{args.family}:{args.param}={v}{base}"
             for v in args.values.split(",") if v]
    if not swept:
        raise ConfigError("empty sweep grid")
    if args.side == "defender":
        defenders, attackers = swept, args.opponents
    else:
        defenders, attackers = args.opponents, swept
    results = harness.parameter_sweep(defenders, attackers, episodes, seed,
                                      game=game, workers=workers, backend=backend)
    csv_path = outdir / "sweep.csv"
    harness.write_matchup_csv(csv_path, results)
    harness.write_manifest(outdir / "manifest.json", "sweep", game=game,
                           seed=seed, episodes=episodes, backend=backend,
                           workers=workers, outputs=[csv_path.name],
                           extra={"defenders": list(defenders),
                                  "attackers": list(attackers)})
    _print_matrix(results)
    print(f"wrote {csv_path}")
    return 0


def _train_specialist(args, game, train_cfg, seed, outdir, backend, name):
    if not args.opponent:
        raise ConfigError("specialist mode needs --opponent <spec>")
    from .backends import ActorDesc
    desc = ActorDesc.from_heuristic(args.opponent)
    params = None
    if args.resume:
        params = load_checkpoint(args.resume).params
    epochs = args.epochs or train_cfg.total_epochs
    sampler = FixedOpponent(args.opponent, desc)
    if args.save_every > 0:
        # chunked run: identical stream to one shot because epoch indices and
        # optimizer state carry across chunks
        adam, curve, done = None, [], 0
        while done < epochs:
            step = min(args.save_every, epochs - done)
            part = train_against(game, sampler, train_cfg, seed, params=params,
                                 adam=adam, epochs=step, start_epoch=done,
                                 backend=backend)
            params, adam = part.params, part.adam
            curve.extend(part.curve)
            done += step
            save_checkpoint(outdir / f"{name}_ep{done}.ckpt", params,
                            {"mode": "specialist", "opponent": args.opponent,
                             "seed": seed, "epoch": done})
    else:
        full = train_against(game, sampler, train_cfg, seed, params=params,
                             epochs=epochs, backend=backend)
        params, curve = full.params, full.curve
    member = metagame.PoolMember(args.opponent, desc)
    row = evaluate_utilities(
        ActorDesc.from_network(params), [member], RewardObjective(),
        args.final_eval_episodes, seed, game, backend=backend, tag=TAG_FINAL_EVAL)
    meta = {"mode": "specialist", "opponent": args.opponent, "seed": seed,
            "epochs": epochs, "final_reward": float(row.mean_rewards[0])}
    print(f"specialist vs {args.opponent}: final reward "
          f"{row.mean_rewards[0]:.1f} over {args.final_eval_episodes} episodes")
    return params, curve, meta, {}


def _psro_objective(args, pool):
    if args.mss == "uniform":
        return RewardObjective()
    if args.mss == "own":
        return WinRateByOwnership(args.own_threshold)
    if not args.specialist_refs:
        raise ConfigError(
            "--mss gap needs --specialist-refs <json>; produce it with "
            "`fliplab train --mode specialist` runs first")
    try:
        refs = json.loads(Path(args.specialist_refs).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read specialist refs: {exc}") from exc
    missing = [m.member_id for m in pool if m.member_id not in refs]
    if missing:
        raise ConfigError(
            f"specialist refs missing members {missing}; train specialists "
            "for the full pool first")
    return NormalizedGap(tuple(float(refs[m.member_id]) for m in pool))


def _train_population(args, game, train_cfg, seed, outdir, backend, name,
                      preset_name):
    pool = default_pool()
    iterations = args.iterations or 200
    preset = PRESETS[preset_name]
    temperature = args.temperature if args.temperature is not None \
        else preset.psro_temperature
    if args.self_play is None:
        self_play = preset.psro_self_play
    else:
        self_play = args.self_play == "on"
    cfg = PSROConfig(game=game, train=train_cfg, pool=pool,
                     iterations=iterations, eval_episodes=args.eval_episodes,
                     final_eval_episodes=args.final_eval_episodes,
                     objective=_psro_objective(args, pool) if args.mode == "psro"
                     else RewardObjective(),
                     temperature=temperature, self_play=self_play, seed=seed,
                     backend=backend)
    initial = load_checkpoint(args.resume).params if args.resume else None
    hook = None
    if args.save_every > 0:
        def hook(t, params):
            if (t + 1) % args.save_every == 0:
                save_checkpoint(outdir / f"{name}_it{t + 1}.ckpt", params,
                                {"mode": args.mode, "seed": seed,
                                 "iteration": t + 1})
    if args.mode == "ibr":
        order = tuple(x for x in args.order.split(",") if x)
        result = ibr_train(cfg, order=order, initial_params=initial,
                           save_hook=hook)
        meta = {"mode": "ibr", "order": list(order)}
    else:
        result = flip_psro(cfg, initial_params=initial, save_hook=hook)
        meta = {"mode": "psro", "mss": args.mss, "temperature": temperature,
                "self_play": self_play}
        if args.mss == "own":
            meta["own_threshold"] = args.own_threshold
    meta.update({"seed": seed, "iterations": iterations,
                 "final_avg_reward": float(result.final_row.mean_rewards.mean()),
                 "final_avg_ownership_pct":
                     float(100 * result.final_row.mean_ownership.mean())})
    print(f"{args.mode}: final average pool reward "
          f"{result.final_row.mean_rewards.mean():.1f}, ownership "
          f"{100 * result.final_row.mean_ownership.mean():.1f}%")

    ids_per_iter = [row.member_ids for row in result.utility_rows]
    extra_files = {}
    sig = outdir / f"sigma_{name}.csv"
    harness.write_sigma_csv(sig, result.sigmas, ids_per_iter)
    extra_files[sig.name] = sig
    util = outdir / f"utilities_{name}.csv"
    harness.write_utility_csv(util, result.utility_rows)
    extra_files[util.name] = util
    return result.params, result.curve, meta, extra_files


def cmd_train(args) -> int:
    doc, game, seed, _episodes, outdir, workers, backend = _setup(args)
    train_cfg = _build_train(doc)
    psro_doc = doc.get("psro", {})
    if args.iterations is None and "iterations" in psro_doc:
        args.iterations = int(psro_doc["iterations"])
    if args.temperature is None and "temperature" in psro_doc:
        args.temperature = float(psro_doc["temperature"])
    if args.self_play is None and "self_play" in psro_doc:
        args.self_play = "on" if psro_doc["self_play"] else "off"
    if "own_threshold" in psro_doc:
        args.own_threshold = float(psro_doc["own_threshold"])
    if "mss" in psro_doc and args.mss == "uniform":
        args.mss = str(psro_doc["mss"])
    if "eval_episodes" in psro_doc:
        args.eval_episodes = int(psro_doc["eval_episodes"])
    if "final_eval_episodes" in psro_doc:
        args.final_eval_episodes = int(psro_doc["final_eval_episodes"])

    preset_name = _resolve(getattr(args, "preset", None), doc.get("preset"),
                           default="paper-default")
    name = args.name or args.mode
    if args.mode == "specialist":
        params, curve, meta, extra_files = _train_specialist(
            args, game, train_cfg, seed, outdir, backend, name)
    else:
        params, curve, meta, extra_files = _train_population(
            args, game, train_cfg, seed, outdir, backend, name, preset_name)

    ckpt = outdir / f"{name}.ckpt"
    digest = save_checkpoint(ckpt, params, meta)
    curve_path = outdir / f"curve_{name}.csv"
    harness.write_curve_csv(curve_path, curve)
    outputs = [ckpt.name, curve_path.name] + sorted(extra_files)
    harness.write_manifest(outdir / "manifest.json", "train", game=game,
                           seed=seed, backend=backend, workers=workers,
                           outputs=outputs, extra={"train": meta,
                                                   "checkpoint_sha256": digest})
    print(f"wrote {ckpt}")
    return 0


def _pick_roster(roster: str):
    if roster == "pool":
        return harness.pool_roster()
    if roster == "transfer":
        return harness.TRANSFER_ROSTER
    if roster == "fig1":
        return harness.FIG1_ROSTER
    return [s for s in roster.split() if s]


def cmd_eval(args) -> int:
    doc, game, seed, episodes, outdir, workers, backend = _setup(args)
    ckpt = load_checkpoint(args.checkpoint)
    roster = _pick_roster(args.roster)
    rows, average = harness.evaluate_checkpoint(
        ckpt.params, roster, episodes, seed, game=game, workers=workers,
        backend=backend, greedy=args.greedy)
    label = args.roster if args.roster in ("pool", "transfer", "fig1") else "custom"
    csv_path = outdir / f"table_{label}.csv"
    harness.write_eval_csv(csv_path, rows, average)
    harness.write_manifest(outdir / "manifest.json", "eval", game=game,
                           seed=seed, episodes=episodes, backend=backend,
                           workers=workers, outputs=[csv_path.name],
                           extra={"checkpoint": str(args.checkpoint),
                                  "roster": label, "greedy": args.greedy})
    _print_eval(rows, average)
    print(f"wrote {csv_path}")
    return 0


def cmd_export(args) -> int:
    _doc, game, seed, _episodes, outdir, _workers, _backend = _setup(args)
    rows = harness.read_matchup_csv(args.tournament)
    defenders, attackers = [], []
    for r in rows:
        if r["defender"] not in defenders:
            defenders.append(r["defender"])
        if r["attacker"] not in attackers:
            attackers.append(r["attacker"])
    cell = {(r["defender"], r["attacker"]): r["mean_reward"] for r in rows}
    out = Path(args.out) if args.out else outdir / "fig_data.csv"
    import csv as _csv
    with out.open("w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["defender"] + attackers)
        for d in defenders:
            w.writerow([d] + [repr(cell[(d, a)]) for a in attackers])
    harness.write_manifest(outdir / "manifest.json", "export", game=game,
                           seed=seed, outputs=[out.name],
                           extra={"source": str(args.tournament)})
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "tournament": cmd_tournament,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "eval": cmd_eval,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SpecError, ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlipLabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
