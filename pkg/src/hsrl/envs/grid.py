"""Grid environments: 4-connected mazes and floorplan-style maps.

Row 0 is the top row; moving Up decreases the row index. All map values
are immutable and safe to share across workers.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple


class Position(NamedTuple):
    row: int
    col: int

    def manhattan(self, other: "Position") -> int:
        return abs(self.row - other.row) + abs(self.col - other.col)


class GridAction(Enum):
    UP = (-1, 0)
    DOWN = (1, 0)
    LEFT = (0, -1)
    RIGHT = (0, 1)

    @property
    def delta(self) -> tuple[int, int]:
        return self.value

    @property
    def char(self) -> str:
        return {"UP": "U", "DOWN": "D", "LEFT": "L", "RIGHT": "R"}[self.name]

    @classmethod
    def from_char(cls, ch: str) -> "GridAction":
        table = {"U": cls.UP, "D": cls.DOWN, "L": cls.LEFT, "R": cls.RIGHT}
        if ch not in table:
            raise ValueError(f"unknown move character {ch!r}")
        return table[ch]


# Fixed neighbor order; oracles rely on it for deterministic tie-breaking.
ACTION_ORDER = (GridAction.UP, GridAction.DOWN, GridAction.LEFT, GridAction.RIGHT)


class ParseError(ValueError):
    """Malformed text-grid input; carries 1-based line/column."""

    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnsolvableGeneration(RuntimeError):
    """Instance generation exhausted its resampling budget."""


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    obstacles: frozenset[Position]
    start: Position
    goal: Position

    def __post_init__(self):
        object.__setattr__(self, "obstacles", frozenset(Position(*p) for p in self.obstacles))
        object.__setattr__(self, "start", Position(*self.start))
        object.__setattr__(self, "goal", Position(*self.goal))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("map dimensions must be positive")
        for p in self.obstacles:
            if not self.in_bounds(p):
                raise ValueError(f"obstacle {p} out of bounds")
        for name in ("start", "goal"):
            p = getattr(self, name)
            if not self.in_bounds(p):
                raise ValueError(f"{name} {p} out of bounds")
            if p in self.obstacles:
                raise ValueError(f"{name} {p} lies on an obstacle")
        # start == goal is permitted: degenerate sub-environments use it.

    def in_bounds(self, p: Position) -> bool:
        return 0 <= p.row < self.height and 0 <= p.col < self.width

    def is_free(self, p: Position) -> bool:
        return self.in_bounds(p) and p not in self.obstacles

    def free_cells(self) -> list[Position]:
        return [
            Position(r, c)
            for r in range(self.height)
            for c in range(self.width)
            if Position(r, c) not in self.obstacles
        ]


@dataclass(frozen=True)
class Plan:
    """An ordered action sequence; `length` always equals len(actions)."""

    actions: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))

    @property
    def length(self) -> int:
        return len(self.actions)

    def moves_string(self) -> str:
        return "".join(a.char for a in self.actions)


def apply_grid_action(grid: GridMap, pos: Position, act: GridAction) -> Position | None:
    """Return the 4-connected successor, or None on a wall/obstacle hit."""
    dr, dc = act.delta
    nxt = Position(pos.row + dr, pos.col + dc)
    return nxt if grid.is_free(nxt) else None


def replay_plan(grid: GridMap, start: Position, plan: Plan) -> Position | None:
    """Walk a plan from `start`; None if any step is illegal."""
    pos = start
    for act in plan.actions:
        pos = apply_grid_action(grid, pos, act)
        if pos is None:
            return None
    return pos


CHAR_FREE, CHAR_OBSTACLE, CHAR_START, CHAR_GOAL = ".", "#", "S", "G"


def parse_grid_text(text: str) -> GridMap:
    lines = text.rstrip("\n").split("\n")
    if not lines or not lines[0]:
        raise ParseError("empty grid", 1)
    width = len(lines[0])
    obstacles: set[Position] = set()
    start = goal = None
    for r, line in enumerate(lines):
        if len(line) != width:
            raise ParseError(f"ragged row (expected width {width})", r + 1, len(line) + 1)
        for c, ch in enumerate(line):
            if ch == CHAR_OBSTACLE:
                obstacles.add(Position(r, c))
            elif ch == CHAR_START:
                if start is not None:
                    raise ParseError("duplicate start cell", r + 1, c + 1)
                start = Position(r, c)
            elif ch == CHAR_GOAL:
                if goal is not None:
                    raise ParseError("duplicate goal cell", r + 1, c + 1)
                goal = Position(r, c)
            elif ch != CHAR_FREE:
                raise ParseError(f"unknown cell character {ch!r}", r + 1, c + 1)
    if start is None:
        raise ParseError("missing start cell", len(lines))
    if goal is None:
        raise ParseError("missing goal cell", len(lines))
    return GridMap(width=width, height=len(lines), obstacles=frozenset(obstacles), start=start, goal=goal)


def serialize_grid(grid: GridMap) -> str:
    rows = []
    for r in range(grid.height):
        row = []
        for c in range(grid.width):
            p = Position(r, c)
            if p == grid.start:
                row.append(CHAR_START)
            elif p == grid.goal:
                row.append(CHAR_GOAL)
            elif p in grid.obstacles:
                row.append(CHAR_OBSTACLE)
            else:
                row.append(CHAR_FREE)
        rows.append("".join(row))
    return "\n".join(rows)


def grid_to_json(grid: GridMap) -> dict:
    return {
        "width": grid.width,
        "height": grid.height,
        "obstacles": sorted([p.row, p.col] for p in grid.obstacles),
        "start": [grid.start.row, grid.start.col],
        "goal": [grid.goal.row, grid.goal.col],
    }


def grid_from_json(data: dict) -> GridMap:
    return GridMap(
        width=data["width"],
        height=data["height"],
        obstacles=frozenset(Position(r, c) for r, c in data["obstacles"]),
        start=Position(*data["start"]),
        goal=Position(*data["goal"]),
    )


def _draw_pair(
    rng: random.Random, cells: list[Position], min_distance: int
) -> tuple[Position, Position]:
    start = rng.choice(cells)
    far = [p for p in cells if p != start and start.manhattan(p) >= min_distance]
    if not far:
        far = [p for p in cells if p != start]
    return start, rng.choice(far)


def generate_maze(
    width: int,
    height: int,
    obstacle_density: float,
    seed: int,
    min_goal_distance: int = 0,
    max_attempts: int = 1000,
) -> GridMap:
    """Random maze with exactly round(density * cells) obstacles, solvable.

    Obstacles are drawn once, uniformly without replacement; on an
    unsolvable draw only the start/goal pair is resampled so the obstacle
    density stays exact.
    """
    if not 0 <= obstacle_density < 1:
        raise ValueError("obstacle density must lie in [0, 1)")
    from ..oracles import astar_grid  # deferred: oracles imports this module

    rng = random.Random(seed)
    cells = [Position(r, c) for r in range(height) for c in range(width)]
    n_obstacles = round(obstacle_density * width * height)
    if n_obstacles > len(cells) - 2:
        raise ValueError("density leaves no room for start and goal")

    start, goal = _draw_pair(rng, cells, min_goal_distance)
    pool = [p for p in cells if p != start and p != goal]
    obstacles = frozenset(rng.sample(pool, n_obstacles))
    free = [p for p in cells if p not in obstacles]
    for _ in range(max_attempts):
        grid = GridMap(width=width, height=height, obstacles=obstacles, start=start, goal=goal)
        if astar_grid(grid, grid.start, grid.goal).reachable:
            return grid
        start, goal = _draw_pair(rng, free, min_goal_distance)
    raise UnsolvableGeneration(
        f"no solvable start/goal pair found in {max_attempts} attempts (seed {seed})"
    )


def _divide(
    rng: random.Random,
    walls: set[Position],
    top: int,
    left: int,
    bottom: int,
    right: int,
    min_room: int,
) -> None:
    # Walls sit on odd GLOBAL indices and doors on even ones, so a crossing
    # wall from a deeper recursion level can never seal a door.
    wall_rows = [
        r for r in range(top + 1, bottom) if r % 2 == 1 and r - top >= min_room and bottom - r >= min_room
    ]
    wall_cols = [
        c for c in range(left + 1, right) if c % 2 == 1 and c - left >= min_room and right - c >= min_room
    ]
    if not wall_rows and not wall_cols:
        return
    h, w = bottom - top + 1, right - left + 1
    horizontal = bool(wall_rows) and (not wall_cols or h > w or (h == w and rng.random() < 0.5))
    if horizontal:
        wall_r = rng.choice(wall_rows)
        door = rng.choice([c for c in range(left, right + 1) if c % 2 == 0])
        for c in range(left, right + 1):
            if c != door:
                walls.add(Position(wall_r, c))
        _divide(rng, walls, top, left, wall_r - 1, right, min_room)
        _divide(rng, walls, wall_r + 1, left, bottom, right, min_room)
    else:
        wall_c = rng.choice(wall_cols)
        door = rng.choice([r for r in range(top, bottom + 1) if r % 2 == 0])
        for r in range(top, bottom + 1):
            if r != door:
                walls.add(Position(r, wall_c))
        _divide(rng, walls, top, left, bottom, wall_c - 1, min_room)
        _divide(rng, walls, top, wall_c + 1, bottom, right, min_room)


def generate_floorplan(
    width: int = 20,
    height: int = 20,
    seed: int = 0,
    pairs: int = 1,
    min_room: int = 2,
    min_goal_distance: int = 0,
) -> list[GridMap]:
    """Room-and-corridor layouts via recursive division; one layout,
    `pairs` start/goal pairs. Free space stays connected by construction."""
    rng = random.Random(seed)
    walls: set[Position] = set()
    _divide(rng, walls, 0, 0, height - 1, width - 1, min_room)
    obstacles = frozenset(walls)
    free = [Position(r, c) for r in range(height) for c in range(width) if Position(r, c) not in obstacles]
    maps = []
    for _ in range(pairs):
        start, goal = _draw_pair(rng, free, min_goal_distance)
        maps.append(GridMap(width=width, height=height, obstacles=obstacles, start=start, goal=goal))
    return maps


def bounding_window(a: Position, b: Position, margin: int, grid: GridMap) -> tuple[int, int, int, int]:
    """Clipped (top, left, bottom, right) of the box spanned by a and b."""
    top = max(0, min(a.row, b.row) - margin)
    left = max(0, min(a.col, b.col) - margin)
    bottom = min(grid.height - 1, max(a.row, b.row) + margin)
    right = min(grid.width - 1, max(a.col, b.col) + margin)
    return top, left, bottom, right


def with_endpoints(grid: GridMap, start: Position, goal: Position) -> GridMap:
    """The same obstacle field with a different start/goal pair."""
    return replace(grid, start=start, goal=goal)
