"""Experiment orchestration: evaluation sweeps, training runs, persistence.

Result CSVs are deterministic for a fixed config and seeds: rows are
sorted by (instance_id, seed) and wall-clock timings live only in the run
manifest.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..envs.grid import GridMap
from ..envs.gtb import GtbMap, gtb_step
from ..metrics import EpisodeOutcome, gtb_normalize, metrics_summary
from ..mgrpo import load_checkpoint, save_checkpoint, train
from ..planner import (
    BlocksInstance,
    RemoteLowLevel,
    StitchedPlan,
    hsrl_plan,
    instance_optimal_length,
)
from ..policy import RemotePolicy, SoftmaxPolicy, SoftmaxPolicyParams, TaskKind
from .config import ExperimentConfig, config_hash
from .datasets import load_dataset

RESULT_COLUMNS = (
    "instance_id",
    "seed",
    "solved",
    "plan_len",
    "optimal_len",
    "d",
    "errors",
    "expansions_used",
    "config_hash",
)

_TASK_KINDS = {
    "maze": TaskKind.MAZE,
    "floorplan": TaskKind.FLOORPLAN,
    "blocksworld": TaskKind.BLOCKSWORLD,
    "gtb": TaskKind.GTB,
}


def build_policy(policy_spec: tuple):
    """policy_spec: ("synthetic", weights-or-None) or ("remote", url, task)."""
    kind = policy_spec[0]
    if kind == "synthetic":
        weights = policy_spec[1]
        if weights is None:
            return SoftmaxPolicy()
        return SoftmaxPolicy(SoftmaxPolicyParams(weights=np.array(weights, dtype=float)))
    return RemotePolicy(base_url=policy_spec[1], task_kind=_TASK_KINDS[policy_spec[2]])


def _fmt_len(value: float) -> str:
    return "inf" if math.isinf(value) else str(int(value))


def run_grid_episode(task: str, instance: GridMap, policy, planner_cfg, mode: str, seed: int, low_level=None) -> dict:
    optimal = instance_optimal_length(instance, planner_cfg.blocks_search_depth)
    result = hsrl_plan(
        instance, policy, planner_cfg, mode=mode, rng=seed,
        task_kind=_TASK_KINDS[task], low_level=low_level,
    )
    if isinstance(result, StitchedPlan):
        return {
            "solved": 1,
            "plan_len": result.plan.length,
            "optimal_len": optimal,
            "d": 0,
            "errors": 0,
            "expansions_used": result.expansions_used,
        }
    end = result.end_state if result.end_state is not None else instance.start
    return {
        "solved": 0,
        "plan_len": result.partial_plan.length,
        "optimal_len": optimal,
        "d": end.manhattan(instance.goal),
        "errors": 0,
        "expansions_used": result.expansions_used,
    }


def run_blocks_episode(instance: BlocksInstance, policy, planner_cfg, mode: str, seed: int) -> dict:
    optimal = instance_optimal_length(instance, planner_cfg.blocks_search_depth)
    result = hsrl_plan(instance, policy, planner_cfg, mode=mode, rng=seed)
    if isinstance(result, StitchedPlan):
        return {
            "solved": 1,
            "plan_len": result.plan.length,
            "optimal_len": optimal,
            "d": 0,
            "errors": 0,
            "expansions_used": result.expansions_used,
        }
    end = result.end_state if result.end_state is not None else instance.initial
    return {
        "solved": 0,
        "plan_len": result.partial_plan.length,
        "optimal_len": optimal,
        "d": end.support_mismatch(instance.goal),
        "errors": 0,
        "expansions_used": result.expansions_used,
    }


def run_gtb_episode(gtb: GtbMap, policy, planner_cfg, mode: str, seed: int, low_level=None) -> dict:
    """Plan each objective leg, then execute the moves with error counting.
    The episode stops once the error budget is exhausted."""
    optimal = 0
    legs = list(zip((gtb.start, *gtb.objectives), gtb.objectives))
    for a, b in legs:
        leg_opt = instance_optimal_length(gtb.as_grid(a, b))
        optimal += leg_opt if math.isfinite(leg_opt) else 0
    pos, errors, next_obj, steps, expansions = gtb.start, 0, 0, 0, 0
    aborted = False
    for a, b in legs:
        leg_grid = gtb.as_grid(pos, b)
        result = hsrl_plan(
            leg_grid, policy, planner_cfg, mode=mode, rng=seed,
            task_kind=TaskKind.GTB, low_level=low_level,
        )
        if not isinstance(result, StitchedPlan):
            aborted = True
            break
        expansions += result.expansions_used
        for act in result.plan.actions:
            pos, errors, hit = gtb_step(gtb, pos, act, errors, next_obj)
            steps += 1
            if hit:
                next_obj += 1
            if errors > gtb.max_errors:
                aborted = True
                break
        if aborted:
            break
    solved = next_obj >= len(gtb.objectives)
    target = gtb.objectives[min(next_obj, len(gtb.objectives) - 1)]
    return {
        "solved": int(solved),
        "plan_len": steps,
        "optimal_len": optimal,
        "d": 0 if solved else pos.manhattan(target),
        "errors": errors,
        "expansions_used": expansions,
        "max_errors": gtb.max_errors,
    }


def _episode_job(args) -> tuple[dict, float]:
    task, instance_id, instance, seed, planner_cfg, mode, policy_spec = args
    policy = build_policy(policy_spec)
    low_level = None
    if planner_cfg.low_level == "remote":
        remote = policy if isinstance(policy, RemotePolicy) else build_policy(
            ("remote", policy_spec[1] if policy_spec[0] == "remote" else None, task)
        )
        low_level = RemoteLowLevel(remote, retries=planner_cfg.remote_retries)
    started = time.perf_counter()
    if task in ("maze", "floorplan"):
        row = run_grid_episode(task, instance, policy, planner_cfg, mode, seed, low_level)
    elif task == "blocksworld":
        row = run_blocks_episode(instance, policy, planner_cfg, mode, seed)
    else:
        row = run_gtb_episode(instance, policy, planner_cfg, mode, seed, low_level)
    wall_ms = (time.perf_counter() - started) * 1000.0
    row["instance_id"] = instance_id
    row["seed"] = seed
    return row, wall_ms


def _policy_spec(cfg: ExperimentConfig, checkpoint_path) -> tuple:
    if cfg.policy_mode == "remote":
        return ("remote", cfg.remote_url, cfg.task)
    if checkpoint_path:
        params, _step = load_checkpoint(checkpoint_path)
        return ("synthetic", [float(w) for w in params.weights])
    return ("synthetic", None)


def _row_to_outcome(row: dict) -> EpisodeOutcome:
    return EpisodeOutcome(
        solved=bool(row["solved"]),
        plan_length=row["plan_len"],
        optimal_length=row["optimal_len"],
        final_distance=row["d"],
        errors=row["errors"],
        max_errors=row.get("max_errors", row["errors"]),
    )


def _difficulty_bucket(optimal_len: float, width: int = 5) -> str:
    if math.isinf(optimal_len):
        return "unsolvable"
    lo = int(optimal_len) // width * width
    return f"{lo}-{lo + width - 1}"


def write_results_csv(path, rows: list[dict], include_max_errors: bool) -> None:
    columns = RESULT_COLUMNS[:-1] + (("max_errors",) if include_max_errors else ()) + ("config_hash",)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = dict(row)
            out["optimal_len"] = _fmt_len(float(row["optimal_len"]))
            writer.writerow([out[c] for c in columns])


def write_difficulty_csv(path, rows: list[dict]) -> None:
    buckets: dict[str, list[dict]] = {}
    for row in rows:
        buckets.setdefault(_difficulty_bucket(float(row["optimal_len"])), []).append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["difficulty", "n", "cr", "or"])
        for bucket in sorted(buckets, key=lambda b: (b == "unsolvable", b)):
            group = buckets[bucket]
            outcomes = [_row_to_outcome(r) for r in group]
            cr = sum(o.solved for o in outcomes) / len(outcomes)
            opt = sum(1 for o in outcomes if o.solved and o.plan_length == o.optimal_length) / len(outcomes)
            writer.writerow([bucket, len(group), cr, opt])


def evaluate(cfg: ExperimentConfig, checkpoint_path=None, out_dir=None) -> Path:
    """Run the full test sweep; writes results.csv, metrics.json,
    cr_by_difficulty.csv and manifest.json. Never mutates the dataset."""
    task, ids, instances = load_dataset(cfg.dataset_dir, "test", cfg.task)
    if not instances:
        raise ValueError(f"empty test split under {cfg.dataset_dir}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = _policy_spec(cfg, checkpoint_path)
    jobs = [
        (task, iid, inst, seed, cfg.planner, cfg.eval_mode, spec)
        for iid, inst in zip(ids, instances)
        for seed in cfg.seeds
    ]
    started_at = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(job) for job in jobs]
    rows = [row for row, _ in results]
    timings = {f"{row['instance_id']}/{row['seed']}": ms for (row, ms) in results}
    run_hash = config_hash(cfg)
    for row in rows:
        row["config_hash"] = run_hash
    rows.sort(key=lambda r: (r["instance_id"], r["seed"]))

    write_results_csv(out / "results.csv", rows, include_max_errors=(task == "gtb"))
    write_difficulty_csv(out / "cr_by_difficulty.csv", rows)
    outcomes = [_row_to_outcome(r) for r in rows]
    summary = metrics_summary(outcomes, include_gtb=(task == "gtb"))
    with open(out / "metrics.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "config_hash": run_hash,
        "code_version": __version__,
        "started_at": started_at,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "checkpoint": str(checkpoint_path) if checkpoint_path else None,
        "rows": len(rows),
        "wall_ms": timings,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def train_run(cfg: ExperimentConfig, resume: bool = False) -> Path:
    """Train one checkpoint per seed on the train split; probes use the
    head of the test split."""
    task, ids, instances = load_dataset(cfg.dataset_dir, "train", cfg.task)
    if not instances:
        raise ValueError(f"empty train split under {cfg.dataset_dir}")
    _task, _pids, probe = load_dataset(cfg.dataset_dir, "test", cfg.task)
    probe = probe[: cfg.probe_size]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started_at = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    for seed in cfg.seeds:
        ckpt_path = out / f"checkpoint-{seed}.json"
        base_step = 0
        if cfg.policy_mode == "remote":
            policy = build_policy(("remote", cfg.remote_url, cfg.task))
        else:
            policy = SoftmaxPolicy()
            if resume and ckpt_path.exists():
                params, base_step = load_checkpoint(ckpt_path)
                policy = SoftmaxPolicy(params)
        train_cfg = replace(cfg.train, seed=seed)
        params, tlog = train(
            instances,
            policy,
            cfg.search,
            train_cfg,
            cfg.reward,
            cfg.planner,
            total_iterations=cfg.total_iterations,
            probe_instances=probe,
            probe_every=cfg.probe_every,
            instance_ids=ids,
        )
        if params is not None:  # remote runs keep their weights server-side
            save_checkpoint(params, ckpt_path, train_step=base_step + len(tlog.rows))
        tlog.write_csv(out / f"train_log-{seed}.csv")
    manifest = {
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "started_at": started_at,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seeds": list(cfg.seeds),
        "resume": resume,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def score_gtb_csv(results_path) -> dict:
    """Per-map normalized traversal scores plus the x100 aggregate."""
    with open(results_path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    required = {"instance_id", "d", "plan_len", "errors", "optimal_len", "max_errors"}
    if rows and not required <= set(rows[0]):
        missing = sorted(required - set(rows[0]))
        raise ValueError(f"results file lacks required columns: {missing}")
    if not rows:
        raise ValueError("results file has no rows")
    maps = []
    total = 0.0
    for row in rows:
        outcome = EpisodeOutcome(
            solved=bool(int(row.get("solved", 0))),
            plan_length=int(row["plan_len"]),
            optimal_length=float(row["optimal_len"]),
            final_distance=int(row["d"]),
            errors=int(row["errors"]),
            max_errors=int(row["max_errors"]),
        )
        result = gtb_normalize(outcome)
        maps.append(
            {
                "instance_id": row["instance_id"],
                "seed": row.get("seed", ""),
                "normalized": result.normalized,
                "reward": result.reward,
            }
        )
        total += result.normalized
    return {"maps": maps, "gtb_score": 100.0 * total / len(rows), "n": len(rows)}
