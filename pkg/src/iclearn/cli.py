"""Command-line interface.

Subcommands: gen-expert (train a policy on the true constraint and sample
demonstrations), icl (the full learning loop, optionally over several seeds),
ablate (icl with a variant), metrics (distances/MSE for saved artifacts), and
oracle (exact tabular alternation from an MDP spec).

Option precedence: built-in defaults, then a --config JSON file, then
explicit command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import runio
from .adjust import load_constraint
from .crl import PpoConfig, generate_expert
from .envs import make_env
from .icl import PPO_EPOCHS_DEFAULT, VARIANTS, IclConfig, run
from .metrics import accrual, cmse, nad
from .oracle import alternate, load_mdp_spec, reward_scaled_constraint
from .trajectories import load_trajectories, save_trajectories

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(IclConfig)}


def _load_config_file(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise click.ClickException("config file must hold a JSON object")
    unknown = data.keys() - _CONFIG_FIELDS
    if unknown:
        raise click.ClickException(f"unknown config fields: {sorted(unknown)}")
    return data


def _build_config(config_path, flag_values: dict) -> IclConfig:
    merged: dict = {}
    if config_path:
        merged.update(_load_config_file(config_path))
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return IclConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise click.ClickException(str(exc))


@click.group()
def main():
    """Constraint learning from demonstrations: training, metrics, oracle."""


@main.command("gen-expert")
@click.option("--env", "env_id", default="gridworld-a", show_default=True)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--beta", default=None, type=float, help="Constraint threshold (default: env).")
@click.option("--gamma", default=None, type=float, help="Discount (default: env).")
@click.option("--ppo-epochs", default=None, type=int, help="Training epochs (default: env family).")
@click.option("--episodes", default=50, show_default=True, type=int,
              help="Demonstration trajectories to sample.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen_expert_cmd(env_id, seed, beta, gamma, ppo_epochs, episodes, out_dir):
    """Train an expert against the true constraint and save demonstrations."""
    env = make_env(env_id)
    family = "gridworld" if env.state_dim == 2 else "cartpole"
    cfg = PpoConfig(
        gamma=gamma if gamma is not None else env.gamma,
        beta=beta if beta is not None else env.beta,
        epochs=ppo_epochs if ppo_epochs is not None else PPO_EPOCHS_DEFAULT[family],
    )
    rng = np.random.default_rng(seed)
    trajectories, policy, log = generate_expert(env, cfg, episodes, rng)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectories(out / "expert.jsonl", trajectories)
    runio.write_csv(out / "train_expert.csv", runio.TRAIN_FIELDS, log)
    from . import nn

    nn.save_params(out / "policy_expert.npz", policy.mlp)
    runio.write_config(out / "config.json", dataclasses.asdict(cfg),
                       extra={"env": env_id, "seed": seed, "episodes": episodes})
    mean_r = float(np.mean([t.total_reward for t in trajectories]))
    click.echo(f"wrote {len(trajectories)} trajectories to {out / 'expert.jsonl'} "
               f"(mean reward {mean_r:.2f})")


def _run_one_seed(args) -> list[dict]:
    cfg_dict, expert_path, out_dir = args
    cfg = IclConfig(**cfg_dict)
    env = make_env(cfg.env)
    expert = load_trajectories(expert_path)
    result = run(cfg, expert, env=env)
    runio.write_run_dir(out_dir, result, env)
    return runio.metric_rows(cfg.env, cfg.seed, result.history)


def _icl_options(fn):
    options = [
        click.option("--env", "env_id", default=None, help="Built-in id or spec path."),
        click.option("--expert", "expert_path", required=True,
                     type=click.Path(exists=True), help="Expert trajectory file."),
        click.option("--seed", default=None, type=int),
        click.option("--seeds", default=None, help="Comma-separated seed list."),
        click.option("--iters", default=None, type=int, help="Outer iterations."),
        click.option("--ppo-epochs", default=None, type=int),
        click.option("--adjust-epochs", default=None, type=int),
        click.option("--lambda", "lam", default=None, type=float,
                     help="Expert hinge multiplier."),
        click.option("--beta", default=None, type=float),
        click.option("--gamma", default=None, type=float),
        click.option("--eps", default=None, type=float, help="Convergence tolerance."),
        click.option("--config", "config_path", default=None,
                     type=click.Path(exists=True), help="JSON config file."),
        click.option("--workers", default=1, show_default=True, type=int),
        click.option("--out", "out_dir", required=True, type=click.Path()),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _run_icl(env_id, expert_path, seed, seeds, iters, ppo_epochs, adjust_epochs,
             lam, beta, gamma, eps, config_path, workers, out_dir, variant):
    flag_values = {
        "env": env_id, "n_iterations": iters, "ppo_epochs": ppo_epochs,
        "adjust_epochs": adjust_epochs, "lam": lam, "beta": beta,
        "gamma": gamma, "eps": eps, "variant": variant,
    }
    base = _build_config(config_path, flag_values)
    if seeds is not None:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    elif seed is not None:
        seed_list = [seed]
    else:
        seed_list = [base.seed]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (dataclasses.asdict(dataclasses.replace(base, seed=s)), expert_path,
         str(out / f"seed{s:02d}"))
        for s in seed_list
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_rows = list(pool.map(_run_one_seed, jobs))
    else:
        all_rows = [_run_one_seed(job) for job in jobs]
    flat = [row for rows in all_rows for row in rows]
    runio.write_csv(out / "metrics_all.csv", runio.METRIC_FIELDS, flat)
    runio.write_aggregate_csv(out / "aggregate.csv", flat)
    finals = {}
    for rows in all_rows:
        last = rows[-1]
        finals[last["seed"]] = (last["nad"], last["cmse"])
    for s in seed_list:
        nad_v, cmse_v = finals[s]
        click.echo(f"seed {s}: final nad {nad_v:.4f}, cmse {cmse_v:.4f}")
    click.echo(f"run artifacts in {out}")


@main.command("icl")
@_icl_options
def icl_cmd(**kwargs):
    """Learn the constraint from expert demonstrations."""
    _run_icl(variant="full", **kwargs)


@main.command("ablate")
@click.option("--variant", required=True, type=click.Choice(VARIANTS))
@_icl_options
def ablate_cmd(variant, **kwargs):
    """Run an ablation variant of the learning loop."""
    _run_icl(variant=variant, **kwargs)


@main.command("metrics")
@click.option("--env", "env_id", required=True)
@click.option("--expert", "expert_path", required=True, type=click.Path(exists=True))
@click.option("--agent", "agent_path", default=None, type=click.Path(exists=True),
              help="Second trajectory file for the accrual distance.")
@click.option("--constraint", "constraint_path", default=None, type=click.Path(exists=True),
              help="Constraint checkpoint (npz) for the constraint MSE.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write results as CSV instead of printing only.")
def metrics_cmd(env_id, expert_path, agent_path, constraint_path, out_path):
    """Evaluate saved artifacts: accrual distance and/or constraint MSE."""
    env = make_env(env_id)
    expert = load_trajectories(expert_path)
    rows = []
    if agent_path is not None:
        agent = load_trajectories(agent_path)
        value = nad(accrual(expert, env), accrual(agent, env), env)
        rows.append({"metric": "nad", "value": value})
        click.echo(f"nad: {value:.6f}")
    if constraint_path is not None:
        net = load_constraint(env, constraint_path)
        value = cmse(net.values, env)
        rows.append({"metric": "cmse", "value": value})
        click.echo(f"cmse: {value:.6f}")
    if not rows:
        raise click.ClickException("nothing to compute: pass --agent and/or --constraint")
    if out_path is not None:
        runio.write_csv(out_path, ("metric", "value"), rows)


@main.command("oracle")
@click.option("--mdp-spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--beta", default=None, type=float, help="Override the spec's threshold.")
@click.option("--max-iter", default=50, show_default=True, type=int)
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Directory for the alternation trace CSV.")
def oracle_cmd(spec_path, beta, max_iter, out_dir):
    """Exact tabular alternation; verifies convergence to the expert occupancy."""
    mdp, true_c, spec_beta = load_mdp_spec(spec_path)
    beta = beta if beta is not None else spec_beta
    result = alternate(mdp, true_c, beta, max_iter=max_iter)
    gap = float(np.abs(result.final_occupancy - result.expert_occupancy).max())
    click.echo(f"converged: {result.converged} after {result.n_iterations} adjustments")
    click.echo(f"occupancy gap to expert (L-inf): {gap:.2e}")
    separated = all(
        float((tr.occupancy * result.final_constraint).sum()) > beta + 1e-9
        for tr in result.trace
        if np.abs(tr.occupancy - result.expert_occupancy).max() > 1e-6
    )
    click.echo(f"non-expert policies pushed above beta: {separated}")
    scaled = reward_scaled_constraint(mdp, result.expert_occupancy, beta)
    expert_value = float((result.expert_occupancy * scaled).sum())
    click.echo(f"certificate check: expert value under scaled-reward table "
               f"= {expert_value:.6f} (beta {beta})")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        runio.write_oracle_trace(out / "oracle_trace.csv", result)
        click.echo(f"trace written to {out / 'oracle_trace.csv'}")


if __name__ == "__main__":
    main()
