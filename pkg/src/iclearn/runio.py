"""Run-directory persistence: config snapshots, CSV artifacts, checkpoints.

Layout of one run directory::

    config.json                 settings snapshot with schema_version
    metrics.csv                 per-iteration summary keyed (env, seed, iteration)
    constraint_iterNN.csv       learned constraint over the grid
    accrual_expert.csv          expert visitation histogram
    accrual_iterNN.csv          per-iteration policy visitation histogram
    train_iterNN.csv            per-epoch policy-training log
    adjust_iterNN.csv           per-epoch adjustment log
    checkpoints/                constraint/policy npz per iteration, flow.npz
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from . import nn
from .flow import save_flow

SCHEMA_VERSION = 1

TRAIN_FIELDS = ("epoch", "mean_reward", "mean_violations", "j_constraint", "corrections")
ADJUST_FIELDS = ("epoch", "loss", "j_mix", "j_expert")
METRIC_FIELDS = ("env", "seed", "iteration", "nad", "cmse", "policy_weight", "j_expert")


def _grid_columns(env) -> list[str]:
    return ["x", "y"] if env.grid().kind == "euclidean-2d" else ["x", "action"]


def write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fieldnames})


def write_grid_csv(path, env, values, value_name: str) -> None:
    """One row per grid bin: coordinate columns plus a value column."""
    grid = env.grid()
    cols = _grid_columns(env)
    values = np.asarray(values, dtype=float).ravel()
    if values.shape[0] != grid.n_bins:
        raise ValueError("value vector does not match the grid size")
    rows = [
        {cols[0]: grid.points[i, 0], cols[1]: grid.points[i, 1], value_name: values[i]}
        for i in range(grid.n_bins)
    ]
    write_csv(path, cols + [value_name], rows)


def write_config(path, cfg, extra=None) -> None:
    payload = {"schema_version": SCHEMA_VERSION}
    payload.update(dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else dict(cfg))
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def metric_rows(env_name: str, seed: int, history) -> list[dict]:
    return [
        {
            "env": env_name, "seed": seed, "iteration": rec.iteration,
            "nad": rec.nad, "cmse": rec.cmse,
            "policy_weight": rec.policy_weight, "j_expert": rec.j_expert,
        }
        for rec in history
    ]


def write_run_dir(out_dir, result, env) -> Path:
    """Persist one finished run; returns the directory path."""
    out = Path(out_dir)
    ckpt = out / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    write_config(out / "config.json", cfg)
    write_csv(out / "metrics.csv", METRIC_FIELDS,
               metric_rows(cfg.env, cfg.seed, result.history))
    write_grid_csv(out / "accrual_expert.csv", env, result.expert_accrual, "mass")
    for rec in result.history:
        tag = f"iter{rec.iteration:02d}"
        write_grid_csv(out / f"constraint_{tag}.csv", env, rec.constraint_grid, "constraint")
        write_grid_csv(out / f"accrual_{tag}.csv", env, rec.accrual, "mass")
        write_csv(out / f"train_{tag}.csv", TRAIN_FIELDS, rec.train_log)
        write_csv(out / f"adjust_{tag}.csv", ADJUST_FIELDS, rec.adjust_log)
    for i, policy in enumerate(result.policies, start=1):
        nn.save_params(ckpt / f"policy_iter{i:02d}.npz", policy.mlp)
    nn.save_params(ckpt / "constraint_final.npz", result.constraint.mlp)
    save_flow(ckpt / "flow.npz", result.flow)
    return out


def write_aggregate_csv(path, rows) -> None:
    """Mean and std of nad/cmse across seeds, grouped by iteration."""
    by_iter: dict[int, list[dict]] = {}
    for row in rows:
        by_iter.setdefault(int(row["iteration"]), []).append(row)
    out_rows = []
    for iteration in sorted(by_iter):
        group = by_iter[iteration]
        nads = np.array([float(g["nad"]) for g in group])
        cmses = np.array([float(g["cmse"]) for g in group])
        out_rows.append({
            "iteration": iteration,
            "n_seeds": len(group),
            "nad_mean": nads.mean(), "nad_std": nads.std(),
            "cmse_mean": cmses.mean(), "cmse_std": cmses.std(),
        })
    write_csv(path, ("iteration", "n_seeds", "nad_mean", "nad_std",
                      "cmse_mean", "cmse_std"), out_rows)


def write_oracle_trace(path, result) -> None:
    """Alternation trace: per-iteration reward, constraint value, adjusted min."""
    rows = [
        {
            "iteration": tr.iteration,
            "reward": tr.reward,
            "constraint_value": tr.constraint_value,
            "adjusted_min": tr.adjusted_min,
        }
        for tr in result.trace
    ]
    write_csv(path, ("iteration", "reward", "constraint_value", "adjusted_min"), rows)
