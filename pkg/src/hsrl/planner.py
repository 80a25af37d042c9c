"""Two-level planning: waypoint proposal, per-sub-task sub-environments,
exact (or remote) low-level solving, and merge-on-failure recovery.

A sub-task that cannot be solved inside its restricted sub-environment is
merged with its successor and replanned; in the worst case the
decomposition degrades to the original full-scale task, which makes the
pipeline complete whenever the instance itself is solvable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.blocks import BlocksState, apply_blocks_action, BlocksAction
from .envs.grid import (
    GridMap,
    Plan,
    Position,
    replay_plan,
    serialize_grid,
    with_endpoints,
)
from .oracles import astar_grid, blocks_optimal
from .policy import (
    EmptyCandidateSet,
    PolicyContext,
    TaskKind,
    sample_candidates,
)


@dataclass(frozen=True)
class BlocksInstance:
    initial: BlocksState
    goal: BlocksState

    def __post_init__(self):
        if self.initial.block_count != self.goal.block_count:
            raise ValueError("initial and goal must share one block universe")


@dataclass
class PlannerConfig:
    margin: int = 2
    max_depth: int = 6
    low_level: str = "oracle"  # "oracle" | "remote"
    blocks_search_depth: int = 24
    remote_retries: int = 3
    propose_temperature: float = 1.0
    rollout_budget: int = 1_000_000


@dataclass(frozen=True)
class WaypointSequence:
    states: tuple
    includes_endpoints: bool = True
    generated_goal: bool = False  # goal emitted by the policy, not appended

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        for a, b in zip(self.states, self.states[1:]):
            if a == b:
                raise ValueError("consecutive duplicate waypoints")

    def anchors(self) -> list:
        """The policy-generated states (start excluded, appended goal excluded)."""
        end = len(self.states) if self.generated_goal else len(self.states) - 1
        return list(self.states[1:end])


@dataclass(frozen=True)
class SubTask:
    from_state: object
    to_state: object
    sub_env: object  # (GridMap, offset) for grids; (initial, target, id_map) for blocks
    expansion_level: int = 0
    full_env: bool = False
    # waypoints this task covers; merges keep them so the rebuilt
    # sub-environment always contains both constituents' regions
    span: tuple = ()


@dataclass(frozen=True)
class StitchedPlan:
    plan: Plan
    per_subtask_lengths: tuple[int, ...]
    expansions_used: int

    def __post_init__(self):
        object.__setattr__(self, "per_subtask_lengths", tuple(self.per_subtask_lengths))
        if sum(self.per_subtask_lengths) != self.plan.length:
            raise ValueError("sub-task lengths do not add up to the plan length")


@dataclass(frozen=True)
class PlanFailure:
    reason: str
    partial_plan: Plan
    end_state: object
    expansions_used: int


def instance_start(instance):
    return instance.start if isinstance(instance, GridMap) else instance.initial


def instance_goal(instance):
    return instance.goal


def instance_context(instance, task_kind: TaskKind | None = None) -> PolicyContext:
    if isinstance(instance, GridMap):
        return PolicyContext(
            task_kind=task_kind or TaskKind.MAZE,
            env_summary=serialize_grid(instance),
            prefix=(instance.start,),
            goal=instance.goal,
        )
    return PolicyContext(
        task_kind=TaskKind.BLOCKSWORLD,
        env_summary=f"blocks:{instance.initial.block_count}",
        prefix=(instance.initial,),
        goal=instance.goal,
    )


def instance_optimal_length(instance, blocks_depth: int = 24) -> float:
    if isinstance(instance, GridMap):
        return astar_grid(instance, instance.start, instance.goal).length
    return blocks_optimal(instance.initial, instance.goal, max_depth=blocks_depth).length


# --------------------------------------------------------------------------
# Waypoint proposal


def propose_waypoints(
    policy,
    instance,
    m: int = 1,
    mode: str = "greedy",
    max_depth: int = 6,
    temperature: float = 1.0,
    rng=None,
    task_kind: TaskKind | None = None,
) -> WaypointSequence:
    """Query the policy step by step from the start until it emits the goal
    or the depth cap is reached; the goal is appended when not emitted.
    Sampled mode draws m candidates per step and keeps the most likely one;
    Greedy takes the modal candidate. Worst case degrades to [start, goal].
    """
    if mode not in ("greedy", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    ctx = instance_context(instance, task_kind)
    goal = instance_goal(instance)
    states = [instance_start(instance)]
    for _ in range(max_depth):
        if states[-1] == goal:
            break
        try:
            if mode == "greedy":
                out = policy.greedy(ctx, temperature)
            else:
                draws = sample_candidates(policy, ctx, m, temperature, rng)
                out = max(draws, key=lambda o: o.total_logprob)
        except EmptyCandidateSet:
            break
        if out.state is None or out.state == states[-1]:
            break
        states.append(out.state)
        ctx = ctx.extended(out.state)
    generated_goal = states[-1] == goal
    if not generated_goal:
        states.append(goal)
    return WaypointSequence(tuple(states), includes_endpoints=True, generated_goal=generated_goal)


# --------------------------------------------------------------------------
# Sub-environments


def span_window(grid: GridMap, points, margin: int) -> tuple[int, int, int, int]:
    """Clipped box covering every point (in- or out-of-bounds) plus margin."""
    rows = [p.row for p in points]
    cols = [p.col for p in points]
    top = max(0, min(rows) - margin)
    left = max(0, min(cols) - margin)
    bottom = min(grid.height - 1, max(max(rows) + margin, 0))
    right = min(grid.width - 1, max(max(cols) + margin, 0))
    return top, left, max(top, bottom), max(left, right)


def build_sub_env(
    grid: GridMap, a: Position, b: Position, margin: int, span=None
) -> tuple[GridMap, Position]:
    """Axis-aligned box spanned by a and b (and any extra `span` points,
    used by merges), expanded by `margin` and clipped. Returns the cropped
    map (start=a, goal=b in box coordinates) plus the top-left offset for
    mapping positions back to the full frame."""
    top, left, bottom, right = span_window(grid, list(span or ()) + [a, b], margin)
    offset = Position(top, left)
    obstacles = frozenset(
        Position(p.row - top, p.col - left)
        for p in grid.obstacles
        if top <= p.row <= bottom and left <= p.col <= right
    )
    sub = GridMap(
        width=right - left + 1,
        height=bottom - top + 1,
        obstacles=obstacles,
        start=Position(a.row - top, a.col - left),
        goal=Position(b.row - top, b.col - left),
    )
    return sub, offset


def build_blocks_sub_env(
    initial: BlocksState, target: BlocksState
) -> tuple[BlocksState, BlocksState, dict[int, int]]:
    """Restrict the pair to the stacks that matter: blocks whose support
    differs (plus everything stacked above them), closed over whole stacks
    in both states so the restriction is self-consistent. Returns the two
    restricted states with blocks renumbered 1..k and the map back to the
    original ids."""
    if initial.block_count != target.block_count:
        raise ValueError("states have different block universes")
    relevant = {
        b
        for b in range(1, initial.block_count + 1)
        if initial.support_of(b) != target.support_of(b)
    }
    kept = set(relevant)
    changed = True
    while changed:
        changed = False
        for state in (initial, target):
            for stack in state.stacks:
                blocks = set(stack)
                if blocks & kept and not blocks <= kept:
                    kept |= blocks
                    changed = True

    ordered = sorted(kept)
    to_sub = {orig: i + 1 for i, orig in enumerate(ordered)}
    to_orig = {i + 1: orig for i, orig in enumerate(ordered)}

    def restrict(state: BlocksState) -> BlocksState:
        stacks = tuple(
            tuple(to_sub[b] for b in stack) for stack in state.stacks if set(stack) <= kept and stack
        )
        return BlocksState(stacks)

    return restrict(initial), restrict(target), to_orig


def _grid_subtask(
    grid: GridMap, a: Position, b: Position, margin: int, level: int = 0, span=None
) -> SubTask:
    span = tuple(span or (a, b))
    # Waypoints on obstacles or out of bounds are kept, not snapped: their
    # sub-task is inherently unsolvable, which triggers merging.
    if not grid.is_free(a) or not grid.is_free(b):
        return SubTask(a, b, None, expansion_level=level, span=span)
    return SubTask(a, b, build_sub_env(grid, a, b, margin, span), expansion_level=level, span=span)


def _blocks_subtask(a: BlocksState, b: BlocksState, level: int = 0) -> SubTask:
    try:
        env = build_blocks_sub_env(a, b)
    except ValueError:
        env = None  # mismatched block universe: unsolvable as posed
    return SubTask(a, b, env, expansion_level=level)


def build_subtasks(instance, waypoints: list, margin: int) -> list[SubTask]:
    tasks = []
    for a, b in zip(waypoints, waypoints[1:]):
        if a == b:
            continue
        if isinstance(instance, GridMap):
            tasks.append(_grid_subtask(instance, a, b, margin))
        else:
            tasks.append(_blocks_subtask(a, b))
    return tasks


# --------------------------------------------------------------------------
# Low-level solving


class RemoteLowLevel:
    """Routes one sub-task to a remote policy as a move-string completion;
    samples are replay-validated and retried within a bounded budget."""

    def __init__(self, remote, retries: int = 3):
        self.remote = remote
        self.retries = retries

    def solve_grid(self, sub: GridMap) -> Plan | None:
        from .envs.grid import GridAction

        prompt = f"task=low-level\nenv:\n{serialize_grid(sub)}\nmoves:"
        for _ in range(self.retries):
            payload = {
                "context": prompt,
                "num_samples": 1,
                "temperature": 0.7,
                "max_tokens": 4 * (sub.width + sub.height),
            }
            try:
                samples = self.remote.raw_generate(payload)
            except Exception:
                return None
            for s in samples:
                text = "".join(ch for ch in s.get("text", "").upper() if ch in "UDLR")
                try:
                    plan = Plan(tuple(GridAction.from_char(ch) for ch in text))
                except ValueError:
                    continue
                if replay_plan(sub, sub.start, plan) == sub.goal:
                    return plan
        return None


def solve_subtask(sub: SubTask, low_level="oracle", budget: int = 1_000_000, blocks_depth: int = 24):
    """Solve one sub-task inside its restricted environment. Returns a Plan
    in the full frame, or None when unsolvable there (a value, not an
    error: the caller reacts by merging)."""
    if sub.from_state == sub.to_state:
        return Plan(())
    if sub.sub_env is None:
        return None
    if isinstance(sub.from_state, Position):
        sub_grid, _offset = sub.sub_env
        if isinstance(low_level, RemoteLowLevel):
            return low_level.solve_grid(sub_grid)
        result = astar_grid(sub_grid, sub_grid.start, sub_grid.goal)
        if not result.reachable or result.expanded > budget:
            return None
        return result.plan  # moves are frame-independent
    # Blocks sub-tasks always use the exact solver; the remote low-level
    # protocol only covers move-string grids.
    sub_initial, sub_target, to_orig = sub.sub_env
    result = blocks_optimal(sub_initial, sub_target, max_depth=blocks_depth)
    if not result.reachable:
        return None
    actions = tuple(
        BlocksAction(to_orig[a.block], None if a.dest is None else to_orig[a.dest])
        for a in result.plan.actions
    )
    return Plan(actions)


def expand_and_merge(instance, tasks: list[SubTask], failed_index: int, margin: int) -> list[SubTask]:
    """Merge the failed sub-task with its successor (with its predecessor
    when it is last). Once a single task remains it spans the full
    environment — the fixed point of repeated failures."""
    if not 0 <= failed_index < len(tasks):
        raise IndexError("failed_index out of range")
    if len(tasks) == 1:
        return [_full_scale_task(instance, tasks[0])]
    i = failed_index if failed_index + 1 < len(tasks) else failed_index - 1
    first, second = tasks[i], tasks[i + 1]
    level = max(first.expansion_level, second.expansion_level) + 1
    if len(tasks) == 2:
        merged = _full_scale_task(instance, first, second, level)
    elif isinstance(instance, GridMap):
        merged = _grid_subtask(
            instance, first.from_state, second.to_state, margin, level,
            span=first.span + second.span,
        )
    else:
        merged = _blocks_subtask(first.from_state, second.to_state, level)
    return tasks[:i] + [merged] + tasks[i + 2 :]


def _full_scale_task(instance, first: SubTask, second: SubTask | None = None, level: int | None = None) -> SubTask:
    to_state = (second or first).to_state
    lvl = first.expansion_level + 1 if level is None else level
    if isinstance(instance, GridMap):
        if not instance.is_free(first.from_state) or not instance.is_free(to_state):
            return SubTask(first.from_state, to_state, None, expansion_level=lvl, full_env=True)
        env = (with_endpoints(instance, first.from_state, to_state), Position(0, 0))
    else:
        n = instance.initial.block_count
        identity = {b: b for b in range(1, n + 1)}
        env = (first.from_state, to_state, identity)
    return SubTask(first.from_state, to_state, env, expansion_level=lvl, full_env=True)


# --------------------------------------------------------------------------
# End-to-end decomposition solving


@dataclass
class DecompositionResult:
    success: bool
    stitched: StitchedPlan | None
    end_state: object
    expansions_used: int
    waypoints: list = field(default_factory=list)


def _replay(instance, plan: Plan):
    if isinstance(instance, GridMap):
        return replay_plan(instance, instance.start, plan)
    state = instance.initial
    for act in plan.actions:
        state = apply_blocks_action(state, act)
        if state is None:
            return None
    return state


def solve_decomposition(instance, waypoints: list, cfg: PlannerConfig, low_level=None) -> DecompositionResult:
    """Solve every consecutive waypoint pair, merging on failure, then
    stitch and replay-validate the combined plan."""
    goal = instance_goal(instance)
    full = list(waypoints)
    if full[-1] != goal:
        full.append(goal)
    tasks = build_subtasks(instance, full, cfg.margin)
    solver = low_level if low_level is not None else cfg.low_level
    expansions = 0
    if not tasks:  # start == goal
        return DecompositionResult(True, StitchedPlan(Plan(()), (), 0), goal, 0, full)
    while True:
        plans = []
        failed_at = None
        for i, task in enumerate(tasks):
            plan = solve_subtask(task, solver, cfg.rollout_budget, cfg.blocks_search_depth)
            if plan is None:
                failed_at = i
                break
            plans.append(plan)
        if failed_at is None:
            actions = tuple(a for p in plans for a in p.actions)
            stitched = StitchedPlan(
                Plan(actions), tuple(p.length for p in plans), expansions
            )
            end = _replay(instance, stitched.plan)
            if end != goal:
                return DecompositionResult(False, None, end, expansions, full)
            return DecompositionResult(True, stitched, end, expansions, full)
        if len(tasks) == 1 and tasks[0].full_env:
            end = _replay(instance, Plan(tuple(a for p in plans for a in p.actions)))
            return DecompositionResult(False, None, end, expansions, full)
        tasks = expand_and_merge(instance, tasks, failed_at, cfg.margin)
        expansions += 1


def hsrl_plan(
    instance,
    policy,
    cfg: PlannerConfig | None = None,
    mode: str = "greedy",
    m: int = 1,
    rng=None,
    task_kind: TaskKind | None = None,
    low_level=None,
):
    """Propose waypoints, decompose, solve, merge on failure, stitch.

    Returns a StitchedPlan, or a PlanFailure when even the full-scale
    fallback is unsolvable (impossible for solvable instances with the
    exact low-level solver)."""
    cfg = cfg or PlannerConfig()
    seq = propose_waypoints(
        policy,
        instance,
        m=m,
        mode=mode,
        max_depth=cfg.max_depth,
        temperature=cfg.propose_temperature,
        rng=rng,
        task_kind=task_kind,
    )
    result = solve_decomposition(instance, list(seq.states), cfg, low_level=low_level)
    if result.success:
        return result.stitched
    return PlanFailure(
        reason="full-scale fallback unsolvable",
        partial_plan=Plan(()),
        end_state=result.end_state,
        expansions_used=result.expansions_used,
    )
