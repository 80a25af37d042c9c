import logging
import math
import random

import pytest

from hsrl.metrics import (
    DegenerateRange,
    EpisodeOutcome,
    completion_rate,
    gtb_normalize,
    gtb_reward_tier,
    gtb_score,
    metrics_summary,
    optimal_rate,
    top5_accuracy,
)


def outcome(solved=True, plan=10, optimal=10, d=0, errors=0, max_errors=0):
    return EpisodeOutcome(
        solved=solved, plan_length=plan, optimal_length=optimal,
        final_distance=d, errors=errors, max_errors=max_errors,
    )


class TestRates:
    def test_completion_rate(self):
        outs = [outcome(), outcome(), outcome(solved=False, d=3), outcome()]
        assert completion_rate(outs) == 0.75

    def test_all_failed(self):
        assert completion_rate([outcome(solved=False, d=2)] * 3) == 0.0

    def test_optimal_rate_mixed(self):
        outs = [outcome(plan=10, optimal=10), outcome(plan=12, optimal=10),
                outcome(solved=False, d=4)]
        assert optimal_rate(outs) == pytest.approx(1 / 3)

    def test_or_equals_cr_when_all_optimal(self):
        outs = [outcome(plan=7, optimal=7)] * 4
        assert optimal_rate(outs) == completion_rate(outs) == 1.0

    def test_or_bounded_by_cr_on_random_outcomes(self):
        rng = random.Random(0)
        outs = []
        for _ in range(200):
            solved = rng.random() < 0.6
            optimal = rng.randint(2, 20)
            plan = optimal + rng.choice((0, 0, 2, 4))
            outs.append(outcome(solved=solved, plan=plan, optimal=optimal,
                                d=0 if solved else rng.randint(1, 9)))
        assert optimal_rate(outs) <= completion_rate(outs)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            completion_rate([])


class TestRewardTier:
    def test_published_table_under_bracket_convention(self):
        assert gtb_reward_tier(0) == 200
        assert gtb_reward_tier(1) == 100
        assert gtb_reward_tier(2) == 50
        assert gtb_reward_tier(5) == 25
        assert gtb_reward_tier(8) == -50
        assert gtb_reward_tier(12) == -100

    def test_boundary_cells(self):
        assert gtb_reward_tier(3) == 50
        assert gtb_reward_tier(4) == 25
        assert gtb_reward_tier(6) == -50
        assert gtb_reward_tier(9) == -100

    def test_non_increasing(self):
        values = [gtb_reward_tier(d) for d in range(20)]
        assert values == sorted(values, reverse=True)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            gtb_reward_tier(-1)


class TestGtbScore:
    def test_perfect_run_normalizes_to_one(self):
        o = outcome(plan=14, optimal=14, d=0, errors=0, max_errors=25)
        assert gtb_normalize(o).normalized == 1.0

    def test_floor_run_normalizes_to_zero(self):
        o = outcome(solved=False, plan=14, optimal=14, d=9, errors=25, max_errors=25)
        assert gtb_normalize(o).normalized == 0.0

    def test_mean_of_two_maps(self):
        perfect = outcome(plan=10, optimal=10, d=0, max_errors=10)
        # engineered halfway point: numerator = delta/2
        # delta = 300 + 10 = 310; choose plan so numerator = 155
        # R(d=0)=200, numerator = 200 - plan - 0 + 100 + 10 + 10 = 320 - plan
        halfway = outcome(plan=165, optimal=10, d=0, max_errors=10)
        assert gtb_normalize(halfway).normalized == 0.5
        assert gtb_score([perfect, halfway]) == 75.0

    def test_out_of_range_clamps_and_logs(self, caplog):
        with caplog.at_level(logging.WARNING):
            o = outcome(plan=500, optimal=10, d=9, errors=10, max_errors=10)
            assert gtb_normalize(o).normalized == 0.0
        assert any("clamping" in r.message for r in caplog.records)

    def test_degenerate_range(self):
        # absurd inputs that collapse the reward range still fail loudly
        with pytest.raises(DegenerateRange):
            gtb_normalize(outcome(plan=10, optimal=10, d=0, errors=-299, max_errors=-300))


class TestTop5:
    def test_boundary_inclusive(self):
        outs = [outcome(d=0), outcome(solved=False, d=5), outcome(solved=False, d=6)]
        assert top5_accuracy(outs) == pytest.approx(2 / 3)

    def test_all_on_target(self):
        assert top5_accuracy([outcome(d=0)] * 4) == 1.0

    def test_dominates_completion_on_single_goal_grids(self):
        rng = random.Random(4)
        outs = [
            outcome(solved=rng.random() < 0.5, d=0 if rng.random() < 0.5 else rng.randint(1, 12))
            for _ in range(100)
        ]
        outs = [
            o if not o.solved else outcome(d=0)
            for o in outs
        ]
        assert top5_accuracy(outs) >= completion_rate(outs)


class TestSummary:
    def test_shape(self):
        summary = metrics_summary([outcome()], include_gtb=False)
        assert set(summary) == {"cr", "or", "gtb_score", "top5", "n"}
        assert summary["gtb_score"] is None and summary["n"] == 1
