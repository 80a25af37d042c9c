import math

import pytest

from hsrl.envs import (
    BlocksState,
    GridMap,
    Position,
    apply_blocks_action,
    apply_grid_action,
    generate_blocksworld,
    generate_maze,
    legal_blocks_actions,
)
from hsrl.oracles import astar_grid, bfs_grid, blocks_optimal, manhattan_path_sum


def empty_map(w, h, start, goal):
    return GridMap(w, h, frozenset(), Position(*start), Position(*goal))


def wall_column_map():
    # vertical wall at col 2 with the single gap at (4, 2)
    obstacles = frozenset(Position(r, 2) for r in range(4))
    return GridMap(5, 5, obstacles, Position(0, 0), Position(0, 4))


class TestAstar:
    def test_empty_grid_manhattan(self):
        m = empty_map(3, 3, (0, 0), (2, 2))
        assert astar_grid(m, m.start, m.goal).length == 4

    def test_identity(self):
        m = empty_map(3, 3, (0, 0), (2, 2))
        result = astar_grid(m, Position(1, 1), Position(1, 1))
        assert result.length == 0 and result.plan.length == 0

    def test_wall_gap_detour(self):
        m = wall_column_map()
        result = astar_grid(m, m.start, m.goal)
        assert result.length == 12
        assert bfs_grid(m, m.start, m.goal).length == 12

    def test_unreachable_is_a_value(self):
        m = GridMap(3, 3, frozenset({Position(0, 1), Position(1, 0), Position(1, 1)}),
                    Position(0, 0), Position(2, 2))
        result = astar_grid(m, m.start, m.goal)
        assert result.plan is None and math.isinf(result.length)

    def test_deterministic_plans(self):
        m = generate_maze(10, 10, 0.4, seed=13)
        a = astar_grid(m, m.start, m.goal)
        b = astar_grid(m, m.start, m.goal)
        assert a.plan.actions == b.plan.actions

    def test_plan_replays_to_goal(self):
        for seed in range(25):
            m = generate_maze(10, 10, 0.4, seed=seed)
            result = astar_grid(m, m.start, m.goal)
            pos = m.start
            for act in result.plan.actions:
                pos = apply_grid_action(m, pos, act)
                assert pos is not None
            assert pos == m.goal


class TestBfsCrossCheck:
    def test_lengths_agree_on_corpus(self):
        for seed in range(60):
            m = generate_maze(10, 10, 0.4, seed=100 + seed)
            assert astar_grid(m, m.start, m.goal).length == bfs_grid(m, m.start, m.goal).length

    def test_unreachable_agrees(self):
        m = GridMap(3, 3, frozenset({Position(0, 1), Position(1, 0), Position(1, 1)}),
                    Position(0, 0), Position(2, 2))
        assert math.isinf(bfs_grid(m, m.start, m.goal).length)


def _iterative_deepening_blocks(initial, goal, limit):
    """Independent tiny-scale oracle: depth-limited DFS with increasing bound."""

    def dfs(state, depth):
        if state == goal:
            return 0
        if depth == 0:
            return None
        best = None
        for act in legal_blocks_actions(state):
            nxt = apply_blocks_action(state, act)
            if nxt is None:
                continue
            sub = dfs(nxt, depth - 1)
            if sub is not None:
                cand = sub + 1
                best = cand if best is None or cand < best else best
        return best

    for bound in range(limit + 1):
        result = dfs(initial, bound)
        if result is not None:
            return result
    return None


class TestBlocksOptimal:
    def test_identity(self):
        s = BlocksState(((1, 2), (3,)))
        assert blocks_optimal(s, s).length == 0

    def test_single_unstack(self):
        assert blocks_optimal(BlocksState(((1, 2),)), BlocksState(((1,), (2,)))).length == 1

    def test_generated_instance_bound(self):
        initial, goal = generate_blocksworld(5, 6, seed=21)
        assert blocks_optimal(initial, goal, max_depth=6).length <= 6

    def test_matches_iterative_deepening_at_tiny_sizes(self):
        for seed in range(8):
            initial, goal = generate_blocksworld(4, 4, seed=seed)
            bfs_len = blocks_optimal(initial, goal, max_depth=6).length
            idfs_len = _iterative_deepening_blocks(initial, goal, 6)
            assert bfs_len == idfs_len

    def test_plan_replays(self):
        initial, goal = generate_blocksworld(6, 7, seed=5)
        result = blocks_optimal(initial, goal, max_depth=10)
        state = initial
        for act in result.plan.actions:
            state = apply_blocks_action(state, act)
            assert state is not None
        assert state == goal

    def test_depth_bound_sets_flag(self):
        initial, goal = generate_blocksworld(5, 6, seed=2)
        result = blocks_optimal(initial, goal, max_depth=1)
        if not result.reachable:
            assert result.truncated and math.isinf(result.length)

    def test_mismatched_universe_rejected(self):
        with pytest.raises(ValueError):
            blocks_optimal(BlocksState(((1,),)), BlocksState(((1, 2),)))


class TestManhattanPathSum:
    def test_pair(self):
        assert manhattan_path_sum([Position(0, 0), Position(2, 3)]) == 5

    def test_single_point(self):
        assert manhattan_path_sum([Position(0, 0)]) == 0

    def test_three_points(self):
        assert manhattan_path_sum([Position(0, 0), Position(1, 1), Position(3, 0)]) == 5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            manhattan_path_sum([])

    def test_astar_path_sum_equals_length(self):
        m = generate_maze(10, 10, 0.4, seed=3)
        result = astar_grid(m, m.start, m.goal)
        cells = result.positions(m, m.start)
        assert manhattan_path_sum(cells) == result.length
