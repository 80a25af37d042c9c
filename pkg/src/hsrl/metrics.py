"""Evaluation metrics: completion rate, optimal rate, the normalized
traversal score, and top-5 accuracy.

The traversal score normalizes a distance-tier reward minus path length
and error counts into [0, 1] per map, so a perfect run (on target, optimal
length, no errors) scores exactly 1 and the worst bounded run exactly 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

log = logging.getLogger(__name__)


class DegenerateRange(ValueError):
    """Per-map reward range is empty; the normalization is undefined."""


@dataclass(frozen=True)
class EpisodeOutcome:
    solved: bool
    plan_length: int
    optimal_length: float
    final_distance: int  # Manhattan tiles from the (last) objective
    errors: int = 0
    max_errors: int = 0

    def __post_init__(self):
        if self.errors > self.max_errors + 1:
            raise ValueError("errors may exceed max_errors by at most one")


@dataclass(frozen=True)
class GtbResult:
    reward: float
    r_max: float
    r_min: float
    delta_r: float
    normalized: float


def completion_rate(outcomes: list[EpisodeOutcome]) -> float:
    if not outcomes:
        raise ValueError("no outcomes")
    return sum(1 for o in outcomes if o.solved) / len(outcomes)


def optimal_rate(outcomes: list[EpisodeOutcome]) -> float:
    """Fraction of all instances solved at exactly the optimal length
    (all-instance denominator, so OR <= CR always)."""
    if not outcomes:
        raise ValueError("no outcomes")
    hits = sum(1 for o in outcomes if o.solved and o.plan_length == o.optimal_length)
    return hits / len(outcomes)


def gtb_reward_tier(d: int) -> float:
    """Distance-tier reward; overlapping published brackets resolved
    half-open low-inclusive: {2,3}, {4,5}, {6,7,8}, then everything above."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    if d == 0:
        return 200.0
    if d == 1:
        return 100.0
    if d <= 3:
        return 50.0
    if d <= 5:
        return 25.0
    if d <= 8:
        return -50.0
    return -100.0


def gtb_normalize(outcome: EpisodeOutcome) -> GtbResult:
    reward = gtb_reward_tier(outcome.final_distance)
    r_max = 200.0 - outcome.optimal_length
    r_min = -100.0 - outcome.optimal_length - outcome.max_errors
    delta = r_max - r_min
    if delta <= 0:
        raise DegenerateRange(f"reward range collapsed: [{r_min}, {r_max}]")
    normalized = (reward - outcome.plan_length - outcome.errors - r_min) / delta
    if not 0.0 <= normalized <= 1.0:
        log.warning("normalized score %.4f outside [0,1]; clamping", normalized)
        normalized = min(1.0, max(0.0, normalized))
    return GtbResult(reward=reward, r_max=r_max, r_min=r_min, delta_r=delta, normalized=normalized)


def gtb_score(outcomes: list[EpisodeOutcome]) -> float:
    """Mean normalized per-map score, reported x100."""
    if not outcomes:
        raise ValueError("no outcomes")
    return 100.0 * sum(gtb_normalize(o).normalized for o in outcomes) / len(outcomes)


def top5_accuracy(outcomes: list[EpisodeOutcome]) -> float:
    if not outcomes:
        raise ValueError("no outcomes")
    return sum(1 for o in outcomes if o.final_distance <= 5) / len(outcomes)


def metrics_summary(outcomes: list[EpisodeOutcome], include_gtb: bool = False) -> dict:
    summary = {
        "cr": completion_rate(outcomes),
        "or": optimal_rate(outcomes),
        "gtb_score": gtb_score(outcomes) if include_gtb else None,
        "top5": top5_accuracy(outcomes),
        "n": len(outcomes),
    }
    return summary
