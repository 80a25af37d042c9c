"""Exact solvers: A* and BFS on grids, BFS over Blocksworld states.

A* and BFS are deliberately independent implementations; tests cross-check
them against each other. Unreachability is a value (infinite length), not
an exception, because the planner treats it as a normal control signal.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

from .envs.blocks import BlocksState, apply_blocks_action, legal_blocks_actions
from .envs.grid import ACTION_ORDER, GridMap, Plan, Position, apply_grid_action


@dataclass(frozen=True)
class OptimalResult:
    plan: Plan | None
    length: float  # step count, or math.inf when unreachable
    expanded: int
    truncated: bool = False  # blocks search hit its depth bound

    @property
    def reachable(self) -> bool:
        return self.plan is not None

    def positions(self, grid: GridMap, start: Position) -> list[Position]:
        """The cell sequence the plan visits, start included."""
        if self.plan is None:
            raise ValueError("no plan to trace")
        path = [start]
        for act in self.plan.actions:
            nxt = apply_grid_action(grid, path[-1], act)
            if nxt is None:
                raise ValueError("plan does not replay on this map")
            path.append(nxt)
        return path


def _unreachable(expanded: int, truncated: bool = False) -> OptimalResult:
    return OptimalResult(plan=None, length=math.inf, expanded=expanded, truncated=truncated)


def astar_grid(grid: GridMap, start: Position, goal: Position) -> OptimalResult:
    """Shortest 4-connected path, Manhattan heuristic. Equal-f ties expand
    FIFO with neighbors pushed in Up, Down, Left, Right order, so returned
    plans are reproducible."""
    if not grid.is_free(start) or not grid.is_free(goal):
        raise ValueError("start/goal must be free in-bounds cells")
    if start == goal:
        return OptimalResult(plan=Plan(()), length=0, expanded=0)

    counter = 0
    open_heap = [(start.manhattan(goal), counter, start)]
    g_cost = {start: 0}
    came_from: dict[Position, tuple[Position, object]] = {}
    closed: set[Position] = set()
    expanded = 0
    while open_heap:
        _, _, current = heapq.heappop(open_heap)
        if current in closed:
            continue
        closed.add(current)
        expanded += 1
        if current == goal:
            actions = []
            node = current
            while node != start:
                node, act = came_from[node]
                actions.append(act)
            actions.reverse()
            return OptimalResult(plan=Plan(tuple(actions)), length=len(actions), expanded=expanded)
        for act in ACTION_ORDER:
            nxt = apply_grid_action(grid, current, act)
            if nxt is None or nxt in closed:
                continue
            tentative = g_cost[current] + 1
            if tentative < g_cost.get(nxt, math.inf):
                g_cost[nxt] = tentative
                came_from[nxt] = (current, act)
                counter += 1
                heapq.heappush(open_heap, (tentative + nxt.manhattan(goal), counter, nxt))
    return _unreachable(expanded)


def bfs_grid(grid: GridMap, start: Position, goal: Position) -> OptimalResult:
    """Plain breadth-first search; the independent cross-check for A*."""
    if not grid.is_free(start) or not grid.is_free(goal):
        raise ValueError("start/goal must be free in-bounds cells")
    if start == goal:
        return OptimalResult(plan=Plan(()), length=0, expanded=0)
    queue = deque([start])
    came_from: dict[Position, tuple[Position, object]] = {start: (start, None)}
    expanded = 0
    while queue:
        current = queue.popleft()
        expanded += 1
        for act in ACTION_ORDER:
            nxt = apply_grid_action(grid, current, act)
            if nxt is None or nxt in came_from:
                continue
            came_from[nxt] = (current, act)
            if nxt == goal:
                actions = []
                node = nxt
                while node != start:
                    node, act_taken = came_from[node]
                    actions.append(act_taken)
                actions.reverse()
                return OptimalResult(
                    plan=Plan(tuple(actions)), length=len(actions), expanded=expanded
                )
            queue.append(nxt)
    return _unreachable(expanded)


def blocks_optimal(initial: BlocksState, goal: BlocksState, max_depth: int = 12) -> OptimalResult:
    """Minimum-length move sequence by BFS over canonical states, or an
    infinite length when none exists within max_depth (truncated marks the
    depth bound being the reason unreachability is unproven)."""
    if initial.block_count != goal.block_count:
        raise ValueError("states have different block universes")
    if initial == goal:
        return OptimalResult(plan=Plan(()), length=0, expanded=0)
    frontier = deque([(initial, 0)])
    came_from = {initial: (initial, None)}
    expanded = 0
    hit_depth_bound = False
    while frontier:
        state, depth = frontier.popleft()
        expanded += 1
        if depth >= max_depth:
            hit_depth_bound = True
            continue
        for act in legal_blocks_actions(state):
            nxt = apply_blocks_action(state, act)
            if nxt is None or nxt in came_from:
                continue
            came_from[nxt] = (state, act)
            if nxt == goal:
                actions = []
                node = nxt
                while node != initial:
                    node, act_taken = came_from[node]
                    actions.append(act_taken)
                actions.reverse()
                return OptimalResult(
                    plan=Plan(tuple(actions)), length=len(actions), expanded=expanded
                )
            frontier.append((nxt, depth + 1))
    return _unreachable(expanded, truncated=hit_depth_bound)


def manhattan_path_sum(points: list[Position]) -> int:
    """Sum of Manhattan distances over consecutive pairs; 0 for one point."""
    if not points:
        raise ValueError("at least one point required")
    return sum(a.manhattan(b) for a, b in zip(points, points[1:]))
