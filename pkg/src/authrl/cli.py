"""Command-line entry point: ``authrl <subcommand> ...``.

Global flags (before the subcommand): ``--seed`` overrides every run-level
seed of the config, ``--config`` names a YAML config file and ``--out-dir``
is the directory that relative output paths are written under.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import return_curves, write_csv
from .baseline import fit_baseline
from .config import load_config
from .crr import train_crr
from .dataset import read_jsonl, write_jsonl
from .dqn import train
from .errors import AuthRLError, ConfigError
from .experiments import (CURVE_COLUMNS, generate_dataset, run_coverage, run_experiment,
                          run_exploration, write_report)
from .nn import load_checkpoint, save_checkpoint
from .ope import evaluate
from .policy import Actor, Greedy, parse_policy


def _out(args, path) -> Path:
    path = Path(path)
    if not path.is_absolute():
        path = Path(args.out_dir) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _config(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "wu", None) is not None or getattr(args, "wc", None) is not None:
        config = config.with_reward(args.wu, args.wc)
    return config


def _read_probe_series(path):
    with open(path, newline="") as fh:
        p = [float(r["p_action_a_probe"]) for r in csv.DictReader(fh)]
    return [(x, 1.0 - x) for x in p]


# -- subcommands ------------------------------------------------------------------------

def cmd_gen_data(args):
    config = _config(args)
    data = config.data
    updates = {}
    if args.users is not None:
        updates["n_users"] = args.users
    if args.episodes_per_user is not None:
        updates["episodes_per_user"] = args.episodes_per_user
    if args.behavior is not None:
        updates["behavior"] = args.behavior
    if args.day_length is not None:
        updates["day_length"] = args.day_length
    if args.cost_a is not None:
        updates["cost_a"] = args.cost_a
    config = replace(config, data=replace(data, **updates))
    rows = generate_dataset(config)
    write_jsonl(rows, _out(args, args.out))
    return 0


def cmd_train_dqn(args):
    config = _config(args)
    rows = read_jsonl(args.data)
    net, metrics = train(rows, config.dqn)
    save_checkpoint(net, _out(args, args.out))
    if args.metrics:
        metrics.write_csv(_out(args, args.metrics))
    return 0


def cmd_train_crr(args):
    config = _config(args)
    rows = read_jsonl(args.data)
    actor, critic, metrics = train_crr(rows, config.crr)
    save_checkpoint(actor, _out(args, args.out_actor))
    save_checkpoint(critic, _out(args, args.out_critic))
    if args.metrics:
        metrics.write_csv(_out(args, args.metrics))
    return 0


def cmd_train_baseline(args):
    config = _config(args)
    model = fit_baseline(read_jsonl(args.data), config.baseline)
    save_checkpoint(model, _out(args, args.out))
    return 0


def cmd_evaluate(args):
    config = _config(args)
    rows = read_jsonl(args.data)
    q_model = load_checkpoint(args.model)
    target = Actor(load_checkpoint(args.actor)) if args.actor else Greedy(q_model)
    series = _read_probe_series(args.metrics) if args.metrics else None
    ev = config.eval
    report = evaluate(rows, q_model, target, config.reward, ev.gamma, ev.train_split, ev.seed,
                      series, ev.window)
    write_report(report.to_dict(), _out(args, args.report))
    return 0


def cmd_analyze(args):
    config = _config(args)
    # coverage and exploration write their standard file names under --out-dir
    if args.study == "coverage":
        run_coverage(config, _out(args, "pca_coverage.csv").parent)
    elif args.study == "exploration":
        run_exploration(config, _out(args, "return_curves.csv").parent)
    else:
        if not args.policy:
            raise ConfigError("analyze returns needs at least one --policy")
        policies = {spec: parse_policy(spec) for spec in args.policy}
        lengths = args.lengths if args.lengths else range(config.env.horizon + 1)
        users = range(args.users)
        curves = return_curves(config.env, policies, lengths, args.episodes, users,
                               run_seed=config.data.run_seed)
        write_csv(curves, _out(args, args.out or "return_curves.csv"), CURVE_COLUMNS)
    return 0


def cmd_run(args):
    out = run_experiment(args.recipe, args.out_dir, seed=args.seed, run_name=args.name)
    print(out)
    return 0


# -- parser -----------------------------------------------------------------------------

def _reward_flags(p):
    p.add_argument("--wu", type=float, help="engagement weight w_u (overrides the config)")
    p.add_argument("--wc", type=float, help="cost weight w_c (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="authrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, help="override every run-level seed")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--out-dir", default=".", help="base directory for relative outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate, log and join a JSON-lines dataset")
    p.add_argument("--users", type=int)
    p.add_argument("--episodes-per-user", type=int)
    p.add_argument("--behavior", help="behaviour policy, e.g. fixed:0.5")
    p.add_argument("--day-length", type=int, help="steps per synthetic day")
    p.add_argument("--cost-a", type=float, help="cost metric of action A")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-dqn", help="offline DQN / Double / Dueling DQN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    _reward_flags(p)
    p.set_defaults(func=cmd_train_dqn)

    p = sub.add_parser("train-crr", help="critic-regularized regression")
    p.add_argument("--data", required=True)
    p.add_argument("--out-actor", required=True)
    p.add_argument("--out-critic", required=True)
    p.add_argument("--metrics")
    _reward_flags(p)
    p.set_defaults(func=cmd_train_crr)

    p = sub.add_parser("train-baseline", help="supervised two-model baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _reward_flags(p)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("evaluate", help="offline diagnostics and IS / DR estimates")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="Q-network checkpoint (DR model)")
    p.add_argument("--actor", help="actor checkpoint; default target is greedy in --model")
    p.add_argument("--metrics", help="training metrics CSV, for the stability series")
    p.add_argument("--report", required=True)
    _reward_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="coverage, exploration or return-curve studies")
    p.add_argument("study", choices=("coverage", "exploration", "returns"))
    p.add_argument("--policy", action="append", help="policy spec (returns study; repeatable)")
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--users", type=int, default=100)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out", help="CSV path of the returns study")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="run an experiment recipe")
    p.add_argument("recipe")
    p.add_argument("--name", help="artifact directory name (default: recipe and timestamp)")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AuthRLError, OSError) as exc:
        print(f"authrl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
