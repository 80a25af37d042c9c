import random

import pytest

from hsrl.envs import (
    BlocksAction,
    BlocksState,
    GridAction,
    GridMap,
    ParseError,
    Position,
    TABLE,
    apply_blocks_action,
    apply_grid_action,
    blocks_from_json,
    blocks_to_json,
    generate_blocksworld,
    generate_floorplan,
    generate_gtb,
    generate_maze,
    grid_from_json,
    grid_to_json,
    gtb_step,
    legal_blocks_actions,
    parse_grid_text,
    serialize_grid,
)
from hsrl.oracles import astar_grid, bfs_grid, blocks_optimal


def empty_map(w=3, h=3, start=(0, 0), goal=(2, 2)):
    return GridMap(width=w, height=h, obstacles=frozenset(), start=Position(*start), goal=Position(*goal))


class TestGridActions:
    def test_free_move(self):
        m = empty_map()
        assert apply_grid_action(m, Position(0, 0), GridAction.RIGHT) == Position(0, 1)

    def test_out_of_bounds(self):
        m = empty_map()
        assert apply_grid_action(m, Position(0, 0), GridAction.UP) is None

    def test_obstacle_collision(self):
        m = GridMap(3, 3, frozenset({Position(1, 1)}), Position(0, 0), Position(2, 2))
        assert apply_grid_action(m, Position(1, 0), GridAction.RIGHT) is None

    def test_never_returns_invalid_cell(self):
        m = GridMap(4, 4, frozenset({Position(2, 2), Position(0, 3)}), Position(0, 0), Position(3, 3))
        for r in range(4):
            for c in range(4):
                p = Position(r, c)
                if not m.is_free(p):
                    continue
                for act in GridAction:
                    nxt = apply_grid_action(m, p, act)
                    if nxt is not None:
                        assert m.is_free(nxt)


class TestGridText:
    def test_parse_small(self):
        m = parse_grid_text("S.#\n..#\n..G")
        assert (m.width, m.height) == (3, 3)
        assert m.obstacles == {Position(0, 2), Position(1, 2)}
        assert m.start == Position(0, 0) and m.goal == Position(2, 2)

    def test_duplicate_start_rejected(self):
        with pytest.raises(ParseError):
            parse_grid_text("SS\n.G")

    def test_parse_error_carries_location(self):
        with pytest.raises(ParseError) as err:
            parse_grid_text("S.\n.X")
        assert err.value.line == 2 and err.value.col == 2

    def test_roundtrip_canonical(self):
        text = "S.#\n..#\n..G"
        assert serialize_grid(parse_grid_text(text)) == text

    def test_roundtrip_generated(self):
        for seed in range(20):
            m = generate_maze(7, 5, 0.3, seed=seed)
            assert parse_grid_text(serialize_grid(m)) == m

    def test_json_roundtrip(self):
        m = generate_maze(6, 6, 0.25, seed=3)
        assert grid_from_json(grid_to_json(m)) == m


class TestMazeGeneration:
    def test_paper_shape(self):
        m = generate_maze(10, 10, 0.4, seed=7)
        assert len(m.obstacles) == 40
        assert astar_grid(m, m.start, m.goal).reachable

    def test_zero_density(self):
        m = generate_maze(3, 3, 0.0, seed=0)
        assert not m.obstacles

    def test_exact_obstacle_count(self):
        m = generate_maze(5, 5, 0.32, seed=1)
        assert len(m.obstacles) == 8  # round(0.32 * 25)

    def test_bitwise_reproducible(self):
        a = generate_maze(9, 9, 0.35, seed=42)
        b = generate_maze(9, 9, 0.35, seed=42)
        assert a == b and serialize_grid(a) == serialize_grid(b)

    def test_all_generated_solvable(self):
        for seed in range(30):
            m = generate_maze(8, 8, 0.4, seed=seed)
            assert bfs_grid(m, m.start, m.goal).reachable

    def test_min_goal_distance(self):
        for seed in range(10):
            m = generate_maze(8, 8, 0.2, seed=seed, min_goal_distance=6)
            assert m.start.manhattan(m.goal) >= 6

    def test_density_out_of_range(self):
        with pytest.raises(ValueError):
            generate_maze(5, 5, 1.0, seed=0)


class TestFloorplan:
    def test_connected_and_solvable(self):
        for seed in range(8):
            (m,) = generate_floorplan(20, 20, seed=seed)
            assert bfs_grid(m, m.start, m.goal).reachable

    def test_pairs_share_layout(self):
        a, b, c = generate_floorplan(20, 20, seed=4, pairs=3)
        assert a.obstacles == b.obstacles == c.obstacles


class TestBlocks:
    def test_move_to_table(self):
        s = BlocksState(((1, 2),))
        out = apply_blocks_action(s, BlocksAction(2, TABLE))
        assert out == BlocksState(((1,), (2,)))

    def test_buried_block_cannot_move(self):
        s = BlocksState(((1, 2),))
        assert apply_blocks_action(s, BlocksAction(1, TABLE)) is None

    def test_stack_onto_top(self):
        s = BlocksState(((1,), (2,)))
        assert apply_blocks_action(s, BlocksAction(2, 1)) == BlocksState(((1, 2),))

    def test_lone_table_block_to_table_is_invalid(self):
        s = BlocksState(((1,), (2,)))
        assert apply_blocks_action(s, BlocksAction(1, TABLE)) is None

    def test_multiset_preserved(self):
        rng = random.Random(0)
        state = BlocksState(((1, 2), (3,), (4, 5)))
        for _ in range(200):
            moves = legal_blocks_actions(state)
            state = apply_blocks_action(state, rng.choice(moves))
            assert sorted(b for s in state.stacks for b in s) == [1, 2, 3, 4, 5]

    def test_canonical_equality(self):
        assert BlocksState(((3,), (1, 2))) == BlocksState(((1, 2), (3,)))

    def test_invalid_ids_rejected(self):
        with pytest.raises(ValueError):
            BlocksState(((1, 3),))

    def test_json_roundtrip(self):
        initial, goal = generate_blocksworld(5, 4, seed=9)
        assert blocks_from_json(blocks_to_json(initial, goal)) == (initial, goal)


class TestBlocksworldGeneration:
    def test_single_move_pair(self):
        initial, goal = generate_blocksworld(3, 1, seed=0)
        assert initial != goal
        assert any(
            apply_blocks_action(initial, a) == goal for a in legal_blocks_actions(initial)
        )

    def test_training_regime_walk_bound(self):
        initial, goal = generate_blocksworld(5, 6, seed=2)
        assert blocks_optimal(initial, goal, max_depth=6).length <= 6

    def test_test_regime_walk_bound(self):
        initial, goal = generate_blocksworld(7, 9, seed=3)
        assert blocks_optimal(initial, goal, max_depth=9).length <= 9

    def test_deterministic(self):
        assert generate_blocksworld(5, 5, seed=11) == generate_blocksworld(5, 5, seed=11)


class TestGtb:
    def make_map(self):
        return generate_gtb(8, 8, 0.2, n_objectives=2, max_errors=3, seed=1)

    def test_free_move_onto_objective(self):
        gtb = self.make_map()
        obj = gtb.objectives[0]
        before = Position(obj.row + 1, obj.col) if obj.row + 1 < gtb.height else Position(obj.row - 1, obj.col)
        if not gtb.is_free(before):
            pytest.skip("fixture cell blocked for this seed")
        act = GridAction.UP if before.row > obj.row else GridAction.DOWN
        pos, errors, hit = gtb_step(gtb, before, act, errors_so_far=0, next_objective=0)
        assert pos == obj and hit and errors == 0

    def test_invalid_move_counts_error(self):
        gtb = self.make_map()
        # walk off the top edge
        pos = Position(0, gtb.start.col) if gtb.is_free(Position(0, gtb.start.col)) else gtb.start
        new_pos, errors, hit = gtb_step(gtb, pos, GridAction.UP, errors_so_far=0)
        if pos.row == 0:
            assert new_pos == pos and errors == 1 and not hit

    def test_error_counter_never_decreases(self):
        gtb = self.make_map()
        rng = random.Random(0)
        pos, errors = gtb.start, 0
        for _ in range(200):
            act = rng.choice(list(GridAction))
            pos, new_errors, _ = gtb_step(gtb, pos, act, errors)
            assert new_errors >= errors
            errors = new_errors

    def test_budget_overflow_is_representable(self):
        gtb = self.make_map()
        blocked = gtb.start
        # find a direction that is invalid from start, if any
        for act in GridAction:
            nxt = Position(blocked.row + act.delta[0], blocked.col + act.delta[1])
            if not gtb.is_free(nxt):
                _, errors, _ = gtb_step(gtb, blocked, act, errors_so_far=gtb.max_errors)
                assert errors == gtb.max_errors + 1
                return
        pytest.skip("start has no invalid neighbor for this seed")
