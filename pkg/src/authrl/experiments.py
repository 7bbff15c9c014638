"""End-to-end experiment recipes.

A recipe file is a config file (see :mod:`authrl.config`) with one extra
top-level key, ``recipe``, naming the pipeline:

``fig3``
    state coverage of fixed behavioural policies, ``pca_coverage.csv`` and
    ``pca_points.csv``.
``fig4``
    exploration-diversity study, ``return_curves.csv`` (mean over seeds)
    and ``return_curves_per_seed.csv``.
``pipeline``
    generate and log a dataset, train DQN, CRR and the supervised baseline,
    evaluate the learned policies offline and on held-out users, and run
    the coverage study.

Each run writes into a fresh timestamped directory together with
``config.yaml``, the fully resolved recipe. Running that snapshot again
reproduces every CSV, JSON and JSONL file byte for byte.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .analysis import (coverage_study, exploration_study, pca2, return_curves, split_users,
                       write_csv)
from .baseline import fit_baseline
from .config import Config, config_from_dict, dump_config
from .crr import train_crr
from .dataset import trajectories_to_rows, write_jsonl
from .dqn import train
from .env import simulate
from .errors import ConfigError
from .nn import save_checkpoint
from .ope import evaluate
from .policy import Actor, FixedProb, Greedy, parse_policy

RECIPES = ("fig3", "fig4", "pipeline")

COVERAGE_COLUMNS = ["policy", "p_a", "generalized_variance", "hull_area",
                    "explained_variance_1", "explained_variance_2", "n_states"]
CURVE_COLUMNS = ["policy", "length", "mean", "stderr"]
SUMMARY_COLUMNS = CURVE_COLUMNS + ["ci_low", "ci_high", "n_seeds"]


# -- stages shared with the command line ------------------------------------------------

def generate_dataset(config: Config, user_seeds=None, behavior=None) -> list:
    """Simulate the behaviour policy and turn the logs into MDP rows."""
    data = config.data
    policy = parse_policy(behavior or data.behavior)
    if user_seeds is None:
        user_seeds = range(data.n_users)
    trajs = simulate(config.env, policy, user_seeds, data.run_seed, data.episodes_per_user)
    day_length = data.day_length or config.env.horizon
    return trajectories_to_rows(trajs, day_length, data.cost_a)


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def coverage_points(config: Config) -> list:
    """Projected states per behavioural policy, for scatter plots."""
    a = config.analysis
    out = []
    for p in a.p_values:
        trajs = simulate(config.env, FixedProb(p), range(a.coverage_users), a.coverage_run_seed)
        proj = pca2(np.array([s.state for tr in trajs for s in tr.steps]))
        for x, y in proj.projected:
            out.append({"policy": f"fixed:{p}", "pc1": float(x), "pc2": float(y)})
    return out


def run_coverage(config: Config, out: Path) -> list:
    a = config.analysis
    records = coverage_study(config.env, a.p_values, a.coverage_users, a.coverage_run_seed)
    write_csv(records, out / "pca_coverage.csv", COVERAGE_COLUMNS)
    write_csv(coverage_points(config), out / "pca_points.csv", ["policy", "pc1", "pc2"])
    return records


def run_exploration(config: Config, out: Path):
    a = config.analysis
    dqn_config = replace(config.dqn, **a.study_dqn)
    per_seed, summary = exploration_study(
        config.env, a.p_values, seeds=range(a.seeds), n_users=a.study_users,
        dqn_config=dqn_config, eval_episodes_per_user=a.eval_episodes_per_user,
        lengths=a.lengths, cost_a=config.data.cost_a)
    write_csv(summary, out / "return_curves.csv", SUMMARY_COLUMNS)
    write_csv(per_seed, out / "return_curves_per_seed.csv", ["seed", "p_a"] + CURVE_COLUMNS)
    return per_seed, summary


def run_pipeline(config: Config, out: Path) -> dict:
    """generate -> log -> train (DQN, CRR, baseline) -> evaluate -> analyze."""
    train_users, eval_users = split_users(config.data.n_users, config.data.run_seed)
    rows = generate_dataset(config, user_seeds=train_users)
    write_jsonl(rows, out / "data.jsonl")

    net, metrics = train(rows, config.dqn)
    save_checkpoint(net, out / "dqn.json")
    metrics.write_csv(out / "dqn_metrics.csv")

    actor, critic, crr_metrics = train_crr(rows, config.crr)
    save_checkpoint(actor, out / "crr_actor.json")
    save_checkpoint(critic, out / "crr_critic.json")
    crr_metrics.write_csv(out / "crr_metrics.csv")

    baseline = fit_baseline(rows, config.baseline)
    save_checkpoint(baseline, out / "baseline.json")

    ev = config.eval
    reports = {
        "dqn": evaluate(rows, net, Greedy(net), config.reward, ev.gamma, ev.train_split,
                        ev.seed, metrics.action_distributions(), ev.window),
        "crr": evaluate(rows, critic, Actor(actor), config.reward, ev.gamma, ev.train_split,
                        ev.seed, crr_metrics.action_distributions(), ev.window),
    }
    for name, rep in reports.items():
        write_report(rep.to_dict(), out / f"report_{name}.json")

    policies = {
        "behavior": parse_policy(config.data.behavior),
        "dqn": Greedy(net),
        "crr": Actor(actor),
        "baseline": Greedy(baseline),
    }
    curves = return_curves(config.env, policies, range(config.env.horizon + 1),
                           episodes_per_point=len(eval_users) * 10, user_seeds=eval_users,
                           run_seed=config.data.run_seed + 1)
    write_csv(curves, out / "return_curves.csv", CURVE_COLUMNS)
    run_coverage(config, out)
    return {name: rep.to_dict() for name, rep in reports.items()}


# -- recipes ----------------------------------------------------------------------------

def load_recipe(path):
    """Parse a recipe file into ``(name, Config)``; every check happens before any work."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"recipe file {str(path)!r} not found")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = dict(raw)
    name = raw.pop("recipe", None)
    if name not in RECIPES:
        raise ConfigError(f"{path}: 'recipe' must be one of {list(RECIPES)}, got {name!r}")
    return name, config_from_dict(raw, path.parent)


def _fresh_dir(out_dir: Path, name: str, run_name: str | None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if run_name is None:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        run_name = f"{name}-{stamp}"
    target = out_dir / run_name
    k = 1
    while target.exists():
        k += 1
        target = out_dir / f"{run_name}-{k}"
    target.mkdir()
    return target


def run_experiment(recipe, out_dir=".", seed: int | None = None,
                   run_name: str | None = None) -> Path:
    """Run a recipe file; returns the artifact directory.

    ``seed`` overrides every run-level seed. ``run_name`` replaces the
    timestamped directory name.
    """
    name, config = load_recipe(recipe)
    if seed is not None:
        config = config.with_seed(seed)
    out = _fresh_dir(Path(out_dir), name, run_name)
    snapshot = {"recipe": name, **config.to_dict()}
    (out / "config.yaml").write_text(yaml.safe_dump(snapshot, sort_keys=True))
    if name == "fig3":
        run_coverage(config, out)
    elif name == "fig4":
        run_exploration(config, out)
    else:
        run_pipeline(config, out)
    return out


def write_recipe(path, name: str, config: Config | None = None) -> None:
    """Write a self-contained recipe file (the same format as a run snapshot)."""
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}")
    body = yaml.safe_load(dump_config(config or Config()))
    Path(path).write_text(yaml.safe_dump({"recipe": name, **body}, sort_keys=True))
