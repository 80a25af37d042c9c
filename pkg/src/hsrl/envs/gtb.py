"""Multi-objective traversal maps with an error budget.

Objectives are visited in their listed order. Invalid moves never raise:
they leave the agent in place and increment the episode's error counter.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .grid import GridAction, GridMap, Position, UnsolvableGeneration


@dataclass(frozen=True)
class GtbMap:
    width: int
    height: int
    obstacles: frozenset[Position]
    start: Position
    objectives: tuple[Position, ...]
    max_errors: int

    def __post_init__(self):
        object.__setattr__(self, "obstacles", frozenset(Position(*p) for p in self.obstacles))
        object.__setattr__(self, "start", Position(*self.start))
        object.__setattr__(self, "objectives", tuple(Position(*p) for p in self.objectives))
        if not self.objectives:
            raise ValueError("at least one objective required")
        for p in (self.start, *self.objectives):
            if not (0 <= p.row < self.height and 0 <= p.col < self.width):
                raise ValueError(f"{p} out of bounds")
            if p in self.obstacles:
                raise ValueError(f"{p} lies on an obstacle")
        if self.max_errors < 0:
            raise ValueError("max_errors must be >= 0")

    def is_free(self, p: Position) -> bool:
        return 0 <= p.row < self.height and 0 <= p.col < self.width and p not in self.obstacles

    def as_grid(self, start: Position, goal: Position) -> GridMap:
        """A single-goal grid view, for planning one objective leg."""
        return GridMap(
            width=self.width, height=self.height, obstacles=self.obstacles, start=start, goal=goal
        )


def gtb_step(
    gtb: GtbMap,
    pos: Position,
    act: GridAction,
    errors_so_far: int,
    next_objective: int = 0,
) -> tuple[Position, int, bool]:
    """One move: (new position, error count, whether the pending objective
    was just reached). Invalid moves keep the position and cost one error."""
    dr, dc = act.delta
    nxt = Position(pos.row + dr, pos.col + dc)
    if not gtb.is_free(nxt):
        return pos, errors_so_far + 1, False
    hit = next_objective < len(gtb.objectives) and nxt == gtb.objectives[next_objective]
    return nxt, errors_so_far, hit


def generate_gtb(
    width: int,
    height: int,
    obstacle_density: float,
    n_objectives: int,
    max_errors: int,
    seed: int,
    max_attempts: int = 1000,
) -> GtbMap:
    """Random map whose objective legs are all reachable in listed order."""
    from ..oracles import astar_grid  # deferred: oracles imports the grid module

    if n_objectives < 1:
        raise ValueError("need at least one objective")
    rng = random.Random(seed)
    cells = [Position(r, c) for r in range(height) for c in range(width)]
    n_obstacles = round(obstacle_density * width * height)
    if n_obstacles > len(cells) - n_objectives - 1:
        raise ValueError("density leaves no room for start and objectives")
    obstacles = frozenset(rng.sample(cells, n_obstacles))
    free = [p for p in cells if p not in obstacles]
    for _ in range(max_attempts):
        picks = rng.sample(free, n_objectives + 1)
        start, objectives = picks[0], picks[1:]
        gtb = GtbMap(
            width=width,
            height=height,
            obstacles=obstacles,
            start=start,
            objectives=tuple(objectives),
            max_errors=max_errors,
        )
        legs = list(zip((start, *objectives), objectives))
        if all(astar_grid(gtb.as_grid(a, b), a, b).reachable for a, b in legs):
            return gtb
    raise UnsolvableGeneration(
        f"no mutually reachable start/objective draw in {max_attempts} attempts (seed {seed})"
    )


def gtb_to_json(gtb: GtbMap) -> dict:
    return {
        "width": gtb.width,
        "height": gtb.height,
        "obstacles": sorted([p.row, p.col] for p in gtb.obstacles),
        "start": [gtb.start.row, gtb.start.col],
        "objectives": [[p.row, p.col] for p in gtb.objectives],
        "max_errors": gtb.max_errors,
    }


def gtb_from_json(data: dict) -> GtbMap:
    return GtbMap(
        width=data["width"],
        height=data["height"],
        obstacles=frozenset(Position(r, c) for r, c in data["obstacles"]),
        start=Position(*data["start"]),
        objectives=tuple(Position(r, c) for r, c in data["objectives"]),
        max_errors=data["max_errors"],
    )
