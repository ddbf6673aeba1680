"""Command-line surface: generate, pretrain, train, evaluate, ablate, sweep, serve.

Configuration is a flat key=value text file (``#`` starts a comment); every
key is also available as a ``--key value`` command-line flag, and flags win
over the file. ``convrec train --help`` lists the keys.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .catalog import SyntheticSpec, dump_catalog, generate_synthetic, load_catalog
from .embeddings import pretrain_translational_report, save_embeddings, load_embeddings
from .harness import (ABLATION_FLAGS, DqnPolicy, ExperimentConfig,
                      MaxEntropyPolicy, RandomPolicy, build_world,
                      desk_scale_config, evaluate, run_ablation, run_sweep,
                      simulation_pairs, split_pairs, train, write_records_jsonl,
                      write_rows_csv)
from .policy import DqnAgent
from .simulator import MODE_HARD, MODE_SOFT, RewardConfig
from .soft_estimation import UseConfig

# key -> (section, attribute, parser); sections: cfg, use, rewards, synthetic
_BOOL = lambda s: s.lower() in ("1", "true", "yes", "on")
CONFIG_KEYS = {
    "catalog_dir": ("cfg", "catalog_dir", str),
    "embeddings_path": ("cfg", "embeddings_path", str),
    "pretrain": ("cfg", "pretrain", _BOOL),
    "pretrain_epochs": ("cfg", "pretrain_epochs", int),
    "embed_dim": ("cfg", "embed_dim", int),
    "mode": ("cfg", "mode", str),
    "max_turns": ("cfg", "max_turns", int),
    "vague_ratio": ("cfg", "vague_ratio", float),
    "vague_click_prob": ("cfg", "vague_click_prob", float),
    "target_set_size": ("cfg", "target_set_size", int),
    "n_top": ("cfg", "n_top", int),
    "k_ask": ("cfg", "k_ask", int),
    "batch_size": ("cfg", "batch_size", int),
    "lr": ("cfg", "lr", float),
    "l2": ("cfg", "l2", float),
    "buffer_capacity": ("cfg", "buffer_capacity", int),
    "rl_gamma": ("cfg", "rl_gamma", float),
    "hidden": ("cfg", "hidden", int),
    "sample_cap": ("cfg", "sample_cap", int),
    "episodes": ("cfg", "episodes", int),
    "eval_every": ("cfg", "eval_every", int),
    "eval_episodes": ("cfg", "eval_episodes", int),
    "seed": ("cfg", "seed", int),
    "lambda1": ("use", "lambda1", float),
    "lambda2": ("use", "lambda2", float),
    "gamma": ("use", "gamma", float),
    "use_personalized": ("use", "use_personalized", _BOOL),
    "use_average_correction": ("use", "use_average_correction", _BOOL),
    "use_decay": ("use", "use_decay", _BOOL),
    "rec_suc": ("rewards", "rec_suc", float),
    "rec_fail": ("rewards", "rec_fail", float),
    "ask_suc": ("rewards", "ask_suc", float),
    "ask_fail": ("rewards", "ask_fail", float),
    "quit": ("rewards", "quit", float),
    "n_users": ("synthetic", "n_users", int),
    "n_items": ("synthetic", "n_items", int),
    "n_attributes": ("synthetic", "n_attributes", int),
    "n_types": ("synthetic", "n_types", int),
    "world_seed": ("synthetic", "seed", int),
}


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Assemble the config: preset -> config file -> command-line flags."""
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        raw.update(parse_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            raw[key] = flag

    cfg = desk_scale_config() if getattr(args, "desk_scale", False) else ExperimentConfig()
    use_updates, reward_updates, synth_updates, cfg_updates = {}, {}, {}, {}
    buckets = {"use": use_updates, "rewards": reward_updates,
               "synthetic": synth_updates, "cfg": cfg_updates}
    for key, value in raw.items():
        section, attr, parser = CONFIG_KEYS[key]
        buckets[section][attr] = parser(value) if isinstance(value, str) else value
    if use_updates:
        cfg = replace(cfg, use=replace(cfg.use, **use_updates))
    if reward_updates:
        cfg = replace(cfg, rewards=replace(cfg.rewards, **reward_updates))
    if synth_updates:
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, **synth_updates))
    if cfg_updates:
        cfg = replace(cfg, **cfg_updates)
    return cfg


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--desk-scale", action="store_true", dest="desk_scale",
                        help="start from the laptop-sized preset")
    for key in CONFIG_KEYS:
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)


def _echo(msg: str) -> None:
    print(msg, flush=True)


def cmd_generate(args) -> int:
    spec = SyntheticSpec(
        n_users=args.users, n_items=args.items, n_attributes=args.attributes,
        n_types=args.types, seed=args.seed)
    catalog = generate_synthetic(spec)
    dump_catalog(catalog, args.out)
    _echo(f"wrote {catalog.n_users} users / {catalog.n_items} items / "
          f"{catalog.n_attributes} attributes to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    catalog = load_catalog(args.data)
    table, report = pretrain_translational_report(
        catalog, epochs=args.epochs, seed=args.seed, dim=args.dim)
    save_embeddings(table, args.out)
    _echo(f"loss {report.loss_curve[0]:.4f} -> {report.loss_curve[-1]:.4f}; "
          f"saved embeddings to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    catalog, table = build_world(config)
    pairs = split_pairs(simulation_pairs(catalog, config.target_set_size,
                                         seed=config.seed), seed=config.seed)
    result = train(config, catalog, table, pairs, log=_echo)
    result.agent.save(out_dir / "agent.pt")
    save_embeddings(table, out_dir / "embeddings.npz")
    write_rows_csv(result.eval_history, out_dir / "metrics.csv")
    metrics, records = evaluate(DqnPolicy(result.agent), catalog, pairs["test"],
                                config, config.eval_episodes, seed=config.seed + 999)
    write_records_jsonl(records, out_dir / "final_eval.jsonl")
    _echo(f"final: SR={metrics.sr:.3f} AT={metrics.at:.2f} hDCG={metrics.hdcg:.3f}")
    return 0


def cmd_evaluate(args) -> int:
    config = build_config(args)
    catalog, table = build_world(config)
    pairs = split_pairs(simulation_pairs(catalog, config.target_set_size,
                                         seed=config.seed), seed=config.seed)
    if args.policy == "agent":
        if not args.checkpoint:
            _echo("--checkpoint is required for the agent policy")
            return 2
        agent = DqnAgent.load(args.checkpoint, catalog, table)
        policy = DqnPolicy(agent)
    elif args.policy == "max-entropy":
        policy = MaxEntropyPolicy(n_rec=config.n_top, k_ask=config.k_ask, seed=config.seed)
    else:
        policy = RandomPolicy(n_rec=config.n_top, k_ask=config.k_ask, seed=config.seed)
    metrics, records = evaluate(policy, catalog, pairs["test"], config,
                                args.episodes_eval, seed=config.seed + 999)
    if args.out:
        write_records_jsonl(records, args.out)
    _echo(json.dumps({"sr": metrics.sr, "at": metrics.at, "hdcg": metrics.hdcg,
                      "episodes": metrics.episodes}))
    return 0


def cmd_ablate(args) -> int:
    config = build_config(args)
    flags = args.flags.split(",") if args.flags else list(ABLATION_FLAGS)
    modes = args.modes.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_ablation(config, flags, modes, seeds, log=_echo)
    if args.out:
        write_rows_csv(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    config = build_config(args)
    grid: dict[str, list] = {}
    for part in args.grid.split(";"):
        key, values = part.split("=", 1)
        grid[key.strip()] = [float(v) for v in values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_sweep(config, grid, seeds, log=_echo)
    if args.out:
        write_rows_csv(rows, args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    catalog = load_catalog(args.data)
    table = load_embeddings(args.embeddings)
    app = create_app(catalog, table, args.checkpoint_dir,
                     journal_path=args.journal, recover=bool(args.journal))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="convrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--attributes", type=int, default=50)
    p.add_argument("--types", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="pretrain embeddings on catalog triplets")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="online training of the agent")
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy evaluation of a policy")
    _add_config_flags(p)
    p.add_argument("--policy", choices=("agent", "max-entropy", "random"), default="agent")
    p.add_argument("--checkpoint")
    p.add_argument("--episodes-eval", type=int, default=500)
    p.add_argument("--out", help="write per-episode records (JSON lines)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train/evaluate estimator ablations")
    _add_config_flags(p)
    p.add_argument("--flags", help=f"comma list from {ABLATION_FLAGS}")
    p.add_argument("--modes", default=MODE_SOFT, help=f"comma list of {MODE_SOFT},{MODE_HARD}")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", help="write the comparison table (CSV)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="hyperparameter grid sweep")
    _add_config_flags(p)
    p.add_argument("--grid", required=True,
                   help="semicolon-separated grids, e.g. 'gamma=0.1,0.5;vague_ratio=0.5,0.8'")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", help="write sweep results (CSV)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the live session HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--journal")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
