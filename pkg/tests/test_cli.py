"""Command-line interface tests via click's test runner."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from iclearn import Gridworld, PpoConfig, generate_expert, save_trajectories
from iclearn.cli import main


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def expert_file(tmp_path_factory):
    # small demonstration set from a quickly trained policy
    env = Gridworld("gridworld-a", 7, [(0, 0), (0, 6)], (6, 3),
                    [(3, 2), (3, 3), (3, 4)], horizon=10)
    cfg = PpoConfig(gamma=1.0, beta=0.99, epochs=2, episodes_per_epoch=4,
                    updates_per_epoch=3)
    trajs, _, _ = generate_expert(env, cfg, 5, np.random.default_rng(0))
    path = tmp_path_factory.mktemp("expert") / "expert.jsonl"
    save_trajectories(path, trajs)
    return str(path)


def test_help_lists_subcommands():
    result = CliRunner().invoke(main, ["--help"])
    assert result.exit_code == 0
    for name in ("gen-expert", "icl", "ablate", "metrics", "oracle"):
        assert name in result.output


def test_gen_expert_writes_artifacts(tmp_path):
    out = tmp_path / "expert"
    result = CliRunner().invoke(main, [
        "gen-expert", "--env", "gridworld-a", "--seed", "1",
        "--ppo-epochs", "2", "--episodes", "4", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert (out / "expert.jsonl").exists()
    assert (out / "train_expert.csv").exists()
    assert (out / "policy_expert.npz").exists()
    config = json.loads((out / "config.json").read_text())
    assert config["env"] == "gridworld-a"
    assert config["episodes"] == 4
    assert len((out / "expert.jsonl").read_text().splitlines()) == 4
    assert "4 trajectories" in result.output


def test_icl_run_writes_run_tree(tmp_path, expert_file):
    out = tmp_path / "run"
    result = CliRunner().invoke(main, [
        "icl", "--env", "gridworld-a", "--expert", expert_file,
        "--seed", "1", "--iters", "1", "--ppo-epochs", "2",
        "--adjust-epochs", "2", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert (out / "metrics_all.csv").exists()
    assert (out / "aggregate.csv").exists()
    seed_dir = out / "seed01"
    assert (seed_dir / "metrics.csv").exists()
    assert (seed_dir / "checkpoints" / "constraint_final.npz").exists()
    assert "seed 1: final nad" in result.output


def test_icl_multi_seed_aggregate(tmp_path, expert_file):
    out = tmp_path / "multi"
    result = CliRunner().invoke(main, [
        "icl", "--env", "gridworld-a", "--expert", expert_file,
        "--seeds", "1,2", "--iters", "1", "--ppo-epochs", "2",
        "--adjust-epochs", "2", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert (out / "seed01").is_dir() and (out / "seed02").is_dir()
    rows = _read_csv(out / "metrics_all.csv")
    assert sorted({r["seed"] for r in rows}) == ["1", "2"]
    agg = _read_csv(out / "aggregate.csv")
    assert agg[0]["n_seeds"] == "2"


def test_config_file_and_flag_precedence(tmp_path, expert_file):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "n_iterations": 1, "ppo_epochs": 2, "adjust_epochs": 9,
        "episodes_per_epoch": 4, "updates_per_epoch": 3, "flow_epochs": 5,
    }))
    out = tmp_path / "run"
    result = CliRunner().invoke(main, [
        "icl", "--env", "gridworld-a", "--expert", expert_file,
        "--config", str(config), "--adjust-epochs", "2", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    # the flag overrides the config file: 2 adjustment epochs, not 9
    saved = json.loads((out / "seed01" / "config.json").read_text())
    assert saved["adjust_epochs"] == 2
    assert saved["ppo_epochs"] == 2


def test_unknown_config_field_rejected(tmp_path, expert_file):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"not_a_field": 1}))
    result = CliRunner().invoke(main, [
        "icl", "--env", "gridworld-a", "--expert", expert_file,
        "--config", str(config), "--out", str(tmp_path / "run"),
    ])
    assert result.exit_code != 0
    assert "unknown config fields" in result.output


def test_ablate_requires_valid_variant(tmp_path, expert_file):
    result = CliRunner().invoke(main, [
        "ablate", "--variant", "bogus", "--env", "gridworld-a",
        "--expert", expert_file, "--out", str(tmp_path / "run"),
    ])
    assert result.exit_code != 0


def test_ablate_records_variant(tmp_path, expert_file):
    out = tmp_path / "ablation"
    result = CliRunner().invoke(main, [
        "ablate", "--variant", "no-mixture", "--env", "gridworld-a",
        "--expert", expert_file, "--iters", "1", "--ppo-epochs", "2",
        "--adjust-epochs", "2", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    saved = json.loads((out / "seed01" / "config.json").read_text())
    assert saved["variant"] == "no-mixture"


def test_metrics_command(tmp_path, expert_file):
    out_csv = tmp_path / "metrics.csv"
    result = CliRunner().invoke(main, [
        "metrics", "--env", "gridworld-a", "--expert", expert_file,
        "--agent", expert_file, "--out", str(out_csv),
    ])
    assert result.exit_code == 0, result.output
    assert "nad: 0.000000" in result.output
    rows = _read_csv(out_csv)
    assert rows[0]["metric"] == "nad"
    assert float(rows[0]["value"]) == 0.0


def test_metrics_requires_something_to_compute(tmp_path, expert_file):
    result = CliRunner().invoke(main, [
        "metrics", "--env", "gridworld-a", "--expert", expert_file,
    ])
    assert result.exit_code != 0
    assert "nothing to compute" in result.output


def test_oracle_command_chain_mdp(tmp_path):
    spec = Path("src/iclearn/specs/chain5.json")
    out = tmp_path / "oracle"
    result = CliRunner().invoke(main, [
        "oracle", "--mdp-spec", str(spec), "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert "converged: True" in result.output
    assert "non-expert policies pushed above beta: True" in result.output
    rows = _read_csv(out / "oracle_trace.csv")
    assert list(rows[0]) == ["iteration", "reward", "constraint_value", "adjusted_min"]
    assert len(rows) >= 1
