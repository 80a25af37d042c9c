"""Dataset generation and loading: instances as JSON files plus an index."""
from __future__ import annotations

import json
import shutil
from pathlib import Path

from ..envs.blocks import blocks_from_json, blocks_to_json, generate_blocksworld
from ..envs.grid import generate_floorplan, generate_maze, grid_from_json, grid_to_json
from ..envs.gtb import generate_gtb, gtb_from_json, gtb_to_json
from ..planner import BlocksInstance


def _write_index(out_dir: Path, task: str, params: dict, splits: dict[str, list[str]]) -> None:
    index = {"task": task, "params": params, "splits": splits}
    with open(out_dir / "index.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_instances(out_dir: Path, task: str, payloads: list[dict], split_at: int) -> dict:
    splits: dict[str, list[str]] = {"train": [], "test": []}
    for i, payload in enumerate(payloads):
        split = "train" if i < split_at else "test"
        name = f"{task}-{i:04d}.json"
        sub = out_dir / split
        sub.mkdir(parents=True, exist_ok=True)
        with open(sub / name, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
        splits[split].append(name)
    return splits


def parse_split(split: str, count: int) -> int:
    """'668/422' -> 668; the two parts must sum to the instance count."""
    try:
        train_n, test_n = (int(x) for x in split.split("/"))
    except ValueError as exc:
        raise ValueError(f"split must look like 'TRAIN/TEST', got {split!r}") from exc
    if train_n < 0 or test_n < 0 or train_n + test_n != count:
        raise ValueError(f"split {split!r} does not sum to count {count}")
    return train_n


def parse_range(text: str) -> tuple[int, int]:
    """'1-6' -> (1, 6); a bare number is a degenerate range."""
    parts = text.split("-")
    if len(parts) == 1:
        v = int(parts[0])
        return v, v
    lo, hi = int(parts[0]), int(parts[1])
    if lo > hi:
        raise ValueError(f"empty range {text!r}")
    return lo, hi


def generate_maze_dataset(
    out_dir,
    count: int,
    size: int,
    density: float,
    seed: int,
    split: str | None = None,
    min_goal_distance: int = 0,
) -> Path:
    if count <= 0:
        raise ValueError("count must be positive")
    out = Path(out_dir)
    train_n = parse_split(split, count) if split else count
    payloads = [
        grid_to_json(generate_maze(size, size, density, seed=seed + i, min_goal_distance=min_goal_distance))
        for i in range(count)
    ]
    out.mkdir(parents=True, exist_ok=True)
    splits = _write_instances(out, "maze", payloads, train_n)
    _write_index(out, "maze", {"count": count, "size": size, "density": density, "seed": seed}, splits)
    return out


def generate_floorplan_dataset(
    out_dir, maps: int, pairs: int, size: int, seed: int, split: str | None = None
) -> Path:
    if maps <= 0 or pairs <= 0:
        raise ValueError("maps and pairs must be positive")
    out = Path(out_dir)
    payloads = []
    for i in range(maps):
        for grid in generate_floorplan(size, size, seed=seed + i, pairs=pairs):
            payloads.append(grid_to_json(grid))
    train_n = parse_split(split, len(payloads)) if split else 0  # evaluation-only by default
    out.mkdir(parents=True, exist_ok=True)
    splits = _write_instances(out, "floorplan", payloads, train_n)
    _write_index(
        out, "floorplan", {"maps": maps, "pairs": pairs, "size": size, "seed": seed}, splits
    )
    return out


def generate_blocksworld_dataset(
    out_dir,
    count: int,
    blocks: int,
    train_steps: str,
    test_steps: str,
    seed: int,
    split: str | None = None,
    test_blocks: int | None = None,
) -> Path:
    """Train instances draw walk lengths from train_steps; test instances
    from test_steps (and optionally more blocks), for the harder
    out-of-distribution split."""
    if count <= 0:
        raise ValueError("count must be positive")
    out = Path(out_dir)
    train_n = parse_split(split, count) if split else (count + 1) // 2
    lo_tr, hi_tr = parse_range(train_steps)
    lo_te, hi_te = parse_range(test_steps)
    test_blocks = test_blocks or blocks
    import random

    rng = random.Random(seed)
    payloads = []
    for i in range(count):
        if i < train_n:
            steps = rng.randint(lo_tr, hi_tr)
            n = blocks
        else:
            steps = rng.randint(lo_te, hi_te)
            n = test_blocks
        initial, goal = generate_blocksworld(n, steps, seed=seed + 1000 + i)
        payloads.append(blocks_to_json(initial, goal))
    out.mkdir(parents=True, exist_ok=True)
    splits = _write_instances(out, "blocksworld", payloads, train_n)
    _write_index(
        out,
        "blocksworld",
        {
            "count": count,
            "blocks": blocks,
            "test_blocks": test_blocks,
            "train_steps": train_steps,
            "test_steps": test_steps,
            "seed": seed,
        },
        splits,
    )
    return out


def generate_gtb_dataset(
    out_dir,
    count: int,
    size: int,
    density: float,
    objectives: int,
    max_errors: int,
    seed: int,
) -> Path:
    if count <= 0:
        raise ValueError("count must be positive")
    out = Path(out_dir)
    payloads = [
        gtb_to_json(generate_gtb(size, size, density, objectives, max_errors, seed=seed + i))
        for i in range(count)
    ]
    out.mkdir(parents=True, exist_ok=True)
    splits = _write_instances(out, "gtb", payloads, 0)  # evaluation-only benchmark
    _write_index(
        out,
        "gtb",
        {
            "count": count,
            "size": size,
            "density": density,
            "objectives": objectives,
            "max_errors": max_errors,
            "seed": seed,
        },
        splits,
    )
    return out


def remove_dataset(out_dir) -> None:
    """Remove partial outputs after a failed generation."""
    shutil.rmtree(out_dir, ignore_errors=True)


def load_dataset(dataset_dir, split: str, task: str | None = None):
    """-> (task, [instance_id, ...], [instance, ...]) for one split."""
    root = Path(dataset_dir)
    index_path = root / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no index.json under {root}")
    with open(index_path) as fh:
        index = json.load(fh)
    actual_task = index["task"]
    if task and task != actual_task:
        raise ValueError(f"dataset task {actual_task!r} does not match configured {task!r}")
    ids, instances = [], []
    for name in index["splits"].get(split, []):
        with open(root / split / name) as fh:
            payload = json.load(fh)
        ids.append(name.removesuffix(".json"))
        if actual_task in ("maze", "floorplan"):
            instances.append(grid_from_json(payload))
        elif actual_task == "blocksworld":
            initial, goal = blocks_from_json(payload)
            instances.append(BlocksInstance(initial, goal))
        else:
            instances.append(gtb_from_json(payload))
    return actual_task, ids, instances
