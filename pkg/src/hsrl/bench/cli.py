"""Command-line interface.

Exit codes: 0 success, 2 usage or config errors, 3 runtime failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..envs.grid import grid_from_json, parse_grid_text
from ..mgrpo import RewardConfig, composite_reward, rewards_for_group
from ..planner import (
    PlannerConfig,
    StitchedPlan,
    hsrl_plan,
    instance_context,
    instance_optimal_length,
    propose_waypoints,
)
from ..policy import REMOTE_URL_ENV
from ..search import SearchConfig, SearchTree, backpropagate, dump_tree, expand_group, select_leaf
from .config import ConfigError, load_config
from .datasets import (
    generate_blocksworld_dataset,
    generate_floorplan_dataset,
    generate_gtb_dataset,
    generate_maze_dataset,
    remove_dataset,
)
from .runner import build_policy, evaluate, score_gtb_csv, train_run


def _load_map(path: Path):
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return grid_from_json(json.loads(text))
    return parse_grid_text(text)


def _policy_from_args(args) -> object:
    if getattr(args, "remote_url", None):
        return build_policy(("remote", args.remote_url, "maze"))
    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint:
        from ..mgrpo import load_checkpoint
        from ..policy import SoftmaxPolicy

        params, _ = load_checkpoint(checkpoint)
        return SoftmaxPolicy(params)
    return build_policy(("synthetic", None))


def cmd_generate(args) -> int:
    out = Path(args.out)
    try:
        if args.task == "maze":
            generate_maze_dataset(
                out, args.count, args.size, args.density, args.seed,
                split=args.split, min_goal_distance=args.min_distance,
            )
        elif args.task == "floorplan":
            generate_floorplan_dataset(out, args.maps, args.pairs, args.size, args.seed, args.split)
        elif args.task == "blocksworld":
            generate_blocksworld_dataset(
                out, args.count, args.blocks, args.train_steps, args.test_steps,
                args.seed, split=args.split, test_blocks=args.test_blocks,
            )
        else:
            generate_gtb_dataset(
                out, args.count, args.size, args.density, args.objectives,
                args.max_errors, args.seed,
            )
    except ValueError as exc:
        remove_dataset(out)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"dataset written to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = train_run(cfg, resume=args.resume)
    print(f"training outputs written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    if args.remote_url:
        cfg.policy_mode = "remote"
        cfg.remote_url = args.remote_url
    out = evaluate(cfg, checkpoint_path=args.checkpoint, out_dir=args.out)
    with open(Path(out) / "metrics.json") as fh:
        print(fh.read().rstrip())
    return 0


def cmd_plan(args) -> int:
    grid = _load_map(Path(args.map))
    policy = _policy_from_args(args)
    cfg = PlannerConfig(margin=args.margin, max_depth=args.max_depth)
    result = hsrl_plan(grid, policy, cfg, mode=args.mode, rng=args.seed)
    optimal = instance_optimal_length(grid)
    if not isinstance(result, StitchedPlan):
        print("no plan found", file=sys.stderr)
        return 3
    seq = propose_waypoints(policy, grid, mode=args.mode, max_depth=args.max_depth, rng=args.seed)
    report = {
        "waypoints": [[s.row, s.col] for s in seq.states],
        "subtask_lengths": list(result.per_subtask_lengths),
        "expansions_used": result.expansions_used,
        "optimal_length": int(optimal),
        "plan_length": result.plan.length,
    }
    print(result.plan.moves_string())
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_score_gtb(args) -> int:
    try:
        report = score_gtb_csv(args.results)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps({"gtb_score": report["gtb_score"], "n": report["n"]}, sort_keys=True))
    return 0


def cmd_dump_tree(args) -> int:
    grid = _load_map(Path(args.map))
    policy = _policy_from_args(args)
    scfg = SearchConfig(max_iterations=args.iterations, group_size=args.group_size)
    rcfg = RewardConfig()
    pcfg = PlannerConfig()
    tree = SearchTree(instance_context(grid), seed=args.seed)
    for _ in range(scfg.max_iterations):
        if tree.root.state == tree.goal:
            break
        leaf = select_leaf(tree, scfg)
        if tree.is_terminal(leaf, scfg):
            reward = composite_reward(tree.trajectory_states(leaf), grid, rcfg, planner_cfg=pcfg)
            backpropagate(leaf, reward)
            continue
        trajectories = expand_group(tree, leaf, policy, scfg)
        lists = [tree.trajectory_states(t[-1]) for t in trajectories]
        rewards, _ = rewards_for_group(lists, grid, rcfg, pcfg)
        for traj, reward in zip(trajectories, rewards):
            backpropagate(traj[-1], reward)
    text = dump_tree(tree)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset")
    gen_sub = gen.add_subparsers(dest="task", required=True)

    maze = gen_sub.add_parser("maze")
    maze.add_argument("--out", required=True)
    maze.add_argument("--count", type=int, required=True)
    maze.add_argument("--size", type=int, default=10)
    maze.add_argument("--density", type=float, default=0.4)
    maze.add_argument("--split", default=None, help="e.g. 668/422")
    maze.add_argument("--seed", type=int, default=0)
    maze.add_argument("--min-distance", type=int, default=0)

    floor = gen_sub.add_parser("floorplan")
    floor.add_argument("--out", required=True)
    floor.add_argument("--maps", type=int, default=50)
    floor.add_argument("--pairs", type=int, default=3)
    floor.add_argument("--size", type=int, default=20)
    floor.add_argument("--split", default=None)
    floor.add_argument("--seed", type=int, default=0)

    blocks = gen_sub.add_parser("blocksworld")
    blocks.add_argument("--out", required=True)
    blocks.add_argument("--count", type=int, required=True)
    blocks.add_argument("--blocks", type=int, default=5)
    blocks.add_argument("--test-blocks", type=int, default=None)
    blocks.add_argument("--train-steps", default="1-6")
    blocks.add_argument("--test-steps", default="7-10")
    blocks.add_argument("--split", default=None)
    blocks.add_argument("--seed", type=int, default=0)

    gtb = gen_sub.add_parser("gtb")
    gtb.add_argument("--out", required=True)
    gtb.add_argument("--count", type=int, required=True)
    gtb.add_argument("--size", type=int, default=20)
    gtb.add_argument("--density", type=float, default=0.2)
    gtb.add_argument("--objectives", type=int, default=3)
    gtb.add_argument("--max-errors", type=int, default=20)
    gtb.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="train a policy from a config file")
    tr.add_argument("--config", required=True)
    tr.add_argument("--resume", action="store_true")

    ev = sub.add_parser("evaluate", help="evaluate on the test split")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--out", default=None)
    ev.add_argument("--remote-url", default=None, help=f"overrides ${REMOTE_URL_ENV}")

    pl = sub.add_parser("plan", help="plan a single map")
    pl.add_argument("--map", required=True)
    pl.add_argument("--checkpoint", default=None)
    pl.add_argument("--remote-url", default=None)
    pl.add_argument("--mode", choices=("greedy", "sampled"), default="greedy")
    pl.add_argument("--margin", type=int, default=2)
    pl.add_argument("--max-depth", type=int, default=6)
    pl.add_argument("--seed", type=int, default=0)

    sc = sub.add_parser("score-gtb", help="score a results CSV")
    sc.add_argument("--results", required=True)
    sc.add_argument("--out", default=None)

    dt = sub.add_parser("dump-tree", help="run a search and dump the tree as JSON lines")
    dt.add_argument("--map", required=True)
    dt.add_argument("--checkpoint", default=None)
    dt.add_argument("--remote-url", default=None)
    dt.add_argument("--iterations", type=int, default=4)
    dt.add_argument("--group-size", type=int, default=4)
    dt.add_argument("--seed", type=int, default=0)
    dt.add_argument("--out", default=None)
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "plan": cmd_plan,
    "score-gtb": cmd_score_gtb,
    "dump-tree": cmd_dump_tree,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
