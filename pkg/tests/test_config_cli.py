import csv
import json

import pytest
import yaml

from authrl import __version__
from authrl.cli import main
from authrl.config import Config, config_from_dict, dump_config, load_config
from authrl.dataset import read_jsonl
from authrl.errors import ConfigError
from authrl.experiments import load_recipe, run_experiment, write_recipe

SMALL = {
    "env": {"horizon": 3, "state_dim": 4},
    "data": {"n_users": 30},
    "dqn": {"epochs": 2, "hidden_layers": [8], "batch_size": 16},
    "crr": {"epochs": 2, "hidden_layers": [8], "batch_size": 16},
    "baseline": {"epochs": 2, "hidden_layers": [8]},
    "eval": {"window": 3},
    "analysis": {"coverage_users": 20, "seeds": 2, "study_users": 15,
                 "eval_episodes_per_user": 2, "p_values": [0.5, 0.9],
                 "study_dqn": {"epochs": 1, "hidden_layers": [4]}},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


# -- configuration --------------------------------------------------------------------

def test_defaults_without_file():
    assert load_config(None) == Config()


def test_load_small_config(small_config):
    cfg = load_config(small_config)
    assert cfg.env.horizon == 3 and cfg.dqn.hidden_layers == (8,)
    assert cfg.analysis.p_values == (0.5, 0.9)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"dqn": {"learning_rat": 0.1}})
    with pytest.raises(ConfigError):
        config_from_dict({"optimiser": {}})


def test_reward_is_shared():
    cfg = config_from_dict({"reward": {"w_u": 1.0, "w_c": 0.5}})
    assert cfg.dqn.reward == cfg.crr.reward == cfg.baseline.reward == cfg.reward
    with pytest.raises(ConfigError):
        config_from_dict({"dqn": {"reward": {"w_u": 2.0}}})


def test_section_file_reference(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "dqn.yaml").write_text("epochs: 7\n")
    main_cfg = tmp_path / "main.yaml"
    main_cfg.write_text("dqn: sub/dqn.yaml\n")
    assert load_config(main_cfg).dqn.epochs == 7
    main_cfg.write_text("dqn: sub/missing.yaml\n")
    with pytest.raises(ConfigError):
        load_config(main_cfg)


def test_dump_round_trip():
    cfg = config_from_dict(SMALL).with_reward(1.0, 0.3)
    assert config_from_dict(yaml.safe_load(dump_config(cfg))) == cfg


def test_with_seed_keeps_world():
    cfg = config_from_dict({"env": {"seed": 5}}).with_seed(9)
    assert cfg.env.seed == 5
    assert cfg.data.run_seed == cfg.dqn.seed == cfg.crr.seed == cfg.eval.seed == 9


# -- recipes --------------------------------------------------------------------------

def test_recipe_errors_before_work(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("recipe: fig5\n")
    with pytest.raises(ConfigError):
        run_experiment(bad, tmp_path / "out")
    bad.write_text("recipe: fig3\ndqn: nowhere.yaml\n")
    with pytest.raises(ConfigError):
        run_experiment(bad, tmp_path / "out")
    assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())
    with pytest.raises(ConfigError):
        load_recipe(tmp_path / "absent.yaml")


def test_fig3_recipe_and_snapshot_rerun(tmp_path):
    recipe = tmp_path / "fig3.yaml"
    write_recipe(recipe, "fig3", config_from_dict(SMALL))
    first = run_experiment(recipe, tmp_path / "runs")
    assert first.name.startswith("fig3-")
    rows = list(csv.DictReader(open(first / "pca_coverage.csv")))
    assert [r["policy"] for r in rows] == ["fixed:0.5", "fixed:0.9"]
    again = run_experiment(first / "config.yaml", tmp_path / "runs", run_name="again")
    for name in ("pca_coverage.csv", "pca_points.csv", "config.yaml"):
        assert (first / name).read_bytes() == (again / name).read_bytes()


def test_fig4_recipe_columns(tmp_path):
    recipe = tmp_path / "fig4.yaml"
    write_recipe(recipe, "fig4", config_from_dict(SMALL))
    out = run_experiment(recipe, tmp_path, run_name="f4")
    header = (out / "return_curves.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["policy", "length", "mean", "stderr"]


def test_pipeline_recipe(tmp_path):
    recipe = tmp_path / "p.yaml"
    write_recipe(recipe, "pipeline", config_from_dict(SMALL))
    out = run_experiment(recipe, tmp_path, run_name="p", seed=3)
    for name in ("data.jsonl", "dqn.json", "crr_actor.json", "baseline.json",
                 "report_dqn.json", "report_crr.json", "return_curves.csv", "pca_coverage.csv"):
        assert (out / name).is_file(), name
    report = json.loads((out / "report_dqn.json").read_text())
    assert report["is_estimate"]["n"] > 0
    assert yaml.safe_load((out / "config.yaml").read_text())["dqn"]["seed"] == 3


# -- command line ---------------------------------------------------------------------

def run_cli(*args):
    return main([str(a) for a in args])


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_gen_data_and_train(tmp_path, small_config):
    base = ("--config", small_config, "--out-dir", tmp_path)
    assert run_cli(*base, "gen-data", "--users", 12, "--out", "d.jsonl") == 0
    rows = read_jsonl(tmp_path / "d.jsonl")
    assert len(rows) == 12 * 3
    assert run_cli(*base, "train-dqn", "--data", tmp_path / "d.jsonl", "--out", "q.json",
                   "--metrics", "m.csv") == 0
    assert run_cli(*base, "evaluate", "--data", tmp_path / "d.jsonl", "--model",
                   tmp_path / "q.json", "--metrics", tmp_path / "m.csv",
                   "--report", "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert set(report) >= {"td_ratio", "stability_series", "kl_to_behavior", "q_gap",
                           "is_estimate", "dr_estimate"}


def test_cli_errors_return_two(tmp_path, capsys):
    assert run_cli("--out-dir", tmp_path, "train-dqn", "--data", tmp_path / "none.jsonl",
                   "--out", "q.json") == 2
    assert "authrl: error" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("dqn: {epochz: 1}\n")
    assert run_cli("--config", bad, "gen-data", "--out", tmp_path / "d.jsonl") == 2


def test_returns_study(tmp_path):
    assert run_cli("--out-dir", tmp_path, "analyze", "returns", "--policy", "fixed:0.5",
                   "--policy", "fixed:1.0", "--lengths", 0, 5, "--users", 5, "--episodes", 20,
                   "--out", "curves.csv") == 0
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "policy,length,mean,stderr" and len(lines) == 5
    assert lines[1].startswith("fixed:0.5,0,0.0,0.0")
