"""Group-relative policy training driven by tree search.

Rewards: each completion's anchor list is scored against the exact optimal
path length, anchors earn a consensus value averaged over the completions
that share them, and the aggregate is passed through a signed power
transform (parse failures get a flat penalty). Advantages are computed per
node against the mean of its sibling set -- deliberately without dividing
by the standard deviation, so a group of identical completions produces
exactly zero advantage instead of NaN. The policy update is the standard
clipped-ratio surrogate on trajectory advantages with an optional KL
penalty, stepped by Adam.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .envs.grid import GridMap, Position
from .oracles import manhattan_path_sum
from .planner import (
    PlannerConfig,
    StitchedPlan,
    hsrl_plan,
    instance_context,
    instance_optimal_length,
    propose_waypoints,
    solve_decomposition,
)
from .policy import EmptyCandidateSet, PolicyContext, SoftmaxPolicyParams, UpdateUnsupported
from .search import (
    UNPARSEABLE,
    NoVisitedChild,
    SearchConfig,
    SearchNode,
    SearchTree,
    advance_root,
    backpropagate,
    expand_group,
    select_leaf,
)

log = logging.getLogger(__name__)


PARSE_FAIL = object()  # sentinel raw score for unparseable completions


class DegenerateGroup(ValueError):
    """Fewer than two sibling trajectories; no relative signal exists."""


@dataclass
class RewardConfig:
    parse_fail_penalty: float = -10.0
    power: float = 2.0
    anchor_alpha: float = 0.5
    anchors_expected: int | None = None  # None: ceil(optimal_length / 3) per instance
    basic_quality: float = 10.0
    length_penalty_per_step: float = 0.25
    failure_reward: float = -5.0
    length_penalty_basis: str = "plan"  # "plan" | "waypoints"

    def __post_init__(self):
        if self.power <= 1:
            raise ValueError("power must be > 1")
        if self.anchor_alpha < 0 or self.length_penalty_per_step < 0:
            raise ValueError("anchor_alpha and length_penalty_per_step must be >= 0")
        if self.length_penalty_basis not in ("plan", "waypoints"):
            raise ValueError("length_penalty_basis must be 'plan' or 'waypoints'")


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    lr_schedule: str = "cosine"  # "constant" | "cosine"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 1  # surrogate steps per group
    batch_size: int = 1  # groups accumulated per update
    clip_epsilon: float = 0.2
    kl_coefficient: float = 0.0
    generations_m: int = 8
    sample_temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if self.generations_m < 2:
            raise ValueError("generations_m must be >= 2 for group advantages")


# --------------------------------------------------------------------------
# Composite reward


def resolve_anchors_expected(cfg: RewardConfig, optimal_length: float) -> int:
    if cfg.anchors_expected is not None:
        return cfg.anchors_expected
    if not math.isfinite(optimal_length):
        return 1
    return max(1, math.ceil(optimal_length / 3))


def _state_distance(a, b) -> int:
    if isinstance(a, Position):
        return a.manhattan(b)
    return a.support_mismatch(b)


def anchor_base_quality(anchors: list, astar_positions: list[Position], cfg: RewardConfig) -> float:
    """Base quality r of one completion: the configured ceiling minus the
    absolute gap between the anchor path's Manhattan sum (endpoints
    included) and the optimal path's."""
    start, goal = astar_positions[0], astar_positions[-1]
    completion_sum = manhattan_path_sum([start, *anchors, goal])
    reference_sum = manhattan_path_sum(astar_positions)
    return cfg.basic_quality - abs(completion_sum - reference_sum)


def _base_quality(anchors: list, env, optimal_length: float, cfg: RewardConfig) -> float:
    start, goal = _endpoints(env)
    points = [start, *anchors, goal]
    completion_sum = sum(_state_distance(a, b) for a, b in zip(points, points[1:]))
    if not math.isfinite(optimal_length):
        return cfg.basic_quality - completion_sum
    return cfg.basic_quality - abs(completion_sum - optimal_length)


def _endpoints(env):
    if isinstance(env, GridMap):
        return env.start, env.goal
    return env.initial, env.goal


def anchor_consensus(anchor_lists: list[list], base_qualities: list[float]) -> dict:
    """Consensus value of each anchor: the mean base quality of the
    completions whose anchor set contains it."""
    totals: dict = {}
    counts: dict = {}
    for anchors, quality in zip(anchor_lists, base_qualities):
        for a in set(anchors):
            totals[a] = totals.get(a, 0.0) + quality
            counts[a] = counts.get(a, 0) + 1
    return {a: totals[a] / counts[a] for a in totals}


def completion_raw_score(anchors: list, consensus: dict, cfg: RewardConfig, anchors_expected: int) -> float:
    """Sum of consensus values over the anchor list, minus the over-length
    anchor penalty beyond the expected count."""
    total = sum(consensus[a] for a in anchors)
    return total - cfg.anchor_alpha * max(0, len(anchors) - anchors_expected)


def shaped_reward(z, cfg: RewardConfig) -> float:
    """Signed power transform of the raw score; flat penalty on parse failure."""
    if z is PARSE_FAIL:
        return cfg.parse_fail_penalty
    return math.copysign(abs(z) ** cfg.power, z) if z != 0 else 0.0


@dataclass
class TrajectoryEval:
    parsed: bool
    anchors: list
    success: bool
    executed_length: int
    waypoint_count: int
    expansions_used: int
    optimal_length: float


def evaluate_waypoints(states: list, env, planner_cfg: PlannerConfig, low_level=None) -> TrajectoryEval:
    """Stitch-evaluate one generated state sequence (start first)."""
    optimal = instance_optimal_length(env, planner_cfg.blocks_search_depth)
    if any(s is UNPARSEABLE for s in states):
        return TrajectoryEval(False, [], False, 0, len(states) - 1, 0, optimal)
    anchors = list(states[1:])
    result = solve_decomposition(env, list(states), planner_cfg, low_level=low_level)
    executed = result.stitched.plan.length if result.success else 0
    return TrajectoryEval(
        parsed=True,
        anchors=anchors,
        success=result.success,
        executed_length=executed,
        waypoint_count=len(states) - 1,
        expansions_used=result.expansions_used,
        optimal_length=optimal,
    )


def _length_penalty(ev: TrajectoryEval, cfg: RewardConfig, anchors_expected: int) -> float:
    if cfg.length_penalty_basis == "plan":
        if not math.isfinite(ev.optimal_length):
            return 0.0
        excess = max(0, ev.executed_length - ev.optimal_length)
    else:
        excess = max(0, ev.waypoint_count - anchors_expected)
    return cfg.length_penalty_per_step * excess


def rewards_for_group(
    state_lists: list[list],
    env,
    reward_cfg: RewardConfig,
    planner_cfg: PlannerConfig | None = None,
    low_level=None,
) -> tuple[list[float], list[TrajectoryEval]]:
    """Score M sibling completions together: anchor consensus is computed
    across the group, then each completion gets its shaped reward (with the
    plan-length penalty on success, the failure floor otherwise)."""
    planner_cfg = planner_cfg or PlannerConfig()
    evals = [evaluate_waypoints(states, env, planner_cfg, low_level) for states in state_lists]
    parsed = [ev for ev in evals if ev.parsed]
    base = {id(ev): _base_quality(ev.anchors, env, ev.optimal_length, reward_cfg) for ev in parsed}
    consensus = anchor_consensus([ev.anchors for ev in parsed], [base[id(ev)] for ev in parsed])
    rewards = []
    for ev in evals:
        if not ev.parsed:
            rewards.append(shaped_reward(PARSE_FAIL, reward_cfg))
            continue
        expected = resolve_anchors_expected(reward_cfg, ev.optimal_length)
        z = completion_raw_score(ev.anchors, consensus, reward_cfg, expected)
        shaped = shaped_reward(z, reward_cfg)
        if ev.success:
            rewards.append(shaped - _length_penalty(ev, reward_cfg, expected))
        else:
            rewards.append(reward_cfg.failure_reward + shaped)
    return rewards, evals


def composite_reward(
    states: list,
    env,
    reward_cfg: RewardConfig,
    low_level=None,
    planner_cfg: PlannerConfig | None = None,
) -> float:
    """Reward of a single completion; consensus degenerates to itself."""
    rewards, _ = rewards_for_group([states], env, reward_cfg, planner_cfg, low_level)
    return rewards[0]


# --------------------------------------------------------------------------
# Group advantages (Q relative to the sibling mean, no variance scaling)


@dataclass
class GroupSample:
    trajectories: list[list[SearchNode]]  # full root-to-end node paths
    leaf: SearchNode
    group_context: PolicyContext

    def __post_init__(self):
        if len(self.trajectories) < 2:
            raise DegenerateGroup("a group needs at least 2 trajectories")
        for traj in self.trajectories:
            if self.leaf not in traj:
                raise ValueError("every trajectory must pass through the shared leaf")

    def chains(self) -> list[list[SearchNode]]:
        """The newly expanded node chains below the shared leaf."""
        out = []
        for traj in self.trajectories:
            idx = traj.index(self.leaf)
            out.append(traj[idx + 1 :])
        return out


@dataclass
class AdvantageRecord:
    node_advantages: list[list[float]]
    trajectory_advantages: np.ndarray
    node_q: list[list[float]]


def fine_grained_advantages(group: GroupSample) -> AdvantageRecord:
    """Per-depth sibling-mean-subtracted node advantages, averaged into one
    advantage per trajectory. Depths where only some trajectories have a
    node use the mean over those present."""
    chains = group.chains()
    if len(chains) < 2 or any(not c for c in chains):
        raise DegenerateGroup("need >= 2 sibling chains with at least one node each")
    node_q = [[n.q_value for n in chain] for chain in chains]
    max_depth = max(len(c) for c in chains)
    advantages: list[list[float]] = [[] for _ in chains]
    for n in range(max_depth):
        siblings = [q[n] for q in node_q if len(q) > n]
        mean = sum(siblings) / len(siblings)
        for m, q in enumerate(node_q):
            if len(q) > n:
                advantages[m].append(q[n] - mean)
    traj = np.array([sum(a) / len(a) for a in advantages])
    return AdvantageRecord(node_advantages=advantages, trajectory_advantages=traj, node_q=node_q)


# --------------------------------------------------------------------------
# Policy update (clipped-ratio surrogate, Adam)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, params: SoftmaxPolicyParams) -> "AdamState":
        return cls(m=np.zeros_like(params.weights), v=np.zeros_like(params.weights))


def schedule_lr(cfg: TrainConfig, fraction: float) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    fraction = min(max(fraction, 0.0), 1.0)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * fraction))


@dataclass
class Decision:
    context: PolicyContext
    state: object
    old_logprob: float
    advantage: float


def _group_decisions(group: GroupSample, advantages: AdvantageRecord) -> list[Decision]:
    decisions = []
    for chain, adv in zip(group.chains(), advantages.trajectory_advantages):
        for node in chain:
            if node.state is UNPARSEABLE or node.context is None:
                continue
            decisions.append(Decision(node.context, node.state, node.sample_logprob, float(adv)))
    return decisions


def remote_update(policy, decisions: list[Decision], learning_rate: float) -> float:
    """Route one update through a remote policy's /v1/update: each decision
    becomes a (context, completion, advantage) item; the server applies the
    surrogate step, nothing is recomputed client-side."""
    from .policy import state_token

    items = [
        {
            "context": d.context.render(),
            "completion": state_token(d.state),
            "advantage": d.advantage,
        }
        for d in decisions
    ]
    return policy.update(items, learning_rate)


def surrogate_objective(policy, decisions: list[Decision], cfg: TrainConfig) -> float:
    """The scalar objective the update ascends (used by tests as the
    finite-difference reference)."""
    total = 0.0
    for d in decisions:
        lp = policy.logprob_of(d.context, d.state, cfg.sample_temperature)
        ratio = math.exp(min(lp - d.old_logprob, 700.0))
        clipped = min(max(ratio, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon)
        total += min(ratio * d.advantage, clipped * d.advantage)
        if cfg.kl_coefficient:
            inv = math.exp(min(d.old_logprob - lp, 700.0))
            total -= cfg.kl_coefficient * (inv - (d.old_logprob - lp) - 1.0)
    return total / len(decisions)


def surrogate_gradient(policy, decisions: list[Decision], cfg: TrainConfig):
    """(objective, gradient, ratios) of the clipped surrogate at the
    current parameters; the gradient is what one update step ascends."""
    grad = np.zeros_like(policy.params.weights)
    total, ratios = 0.0, []
    with np.errstate(invalid="ignore", over="ignore"):
        for d in decisions:
            lp = policy.logprob_of(d.context, d.state, cfg.sample_temperature)
            glp = policy.grad_log_prob(d.context, d.state, cfg.sample_temperature)
            ratio = math.exp(min(lp - d.old_logprob, 700.0))
            ratios.append(ratio)
            clipped = min(max(ratio, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon)
            unclipped_term = ratio * d.advantage
            clipped_term = clipped * d.advantage
            total += min(unclipped_term, clipped_term)
            if unclipped_term <= clipped_term:
                grad += d.advantage * ratio * glp
            if cfg.kl_coefficient:
                inv = math.exp(min(d.old_logprob - lp, 700.0))
                total -= cfg.kl_coefficient * (inv - (d.old_logprob - lp) - 1.0)
                grad -= cfg.kl_coefficient * (1.0 - inv) * glp
    n = len(decisions)
    return total / n, grad / n, ratios


def grpo_update(
    policy,
    group: GroupSample | list[Decision],
    advantages: AdvantageRecord | None,
    train_cfg: TrainConfig,
    opt_state: AdamState | None = None,
    lr_fraction: float = 0.0,
):
    """One Adam step on the clipped-ratio surrogate; trajectory advantages
    weight every generation decision of their trajectory. A non-finite
    gradient aborts the step and leaves the parameters unchanged.

    Returns (policy, opt_state, stats)."""
    if isinstance(group, GroupSample):
        if advantages is None:
            advantages = fine_grained_advantages(group)
        decisions = _group_decisions(group, advantages)
    else:
        decisions = group
    opt_state = opt_state or AdamState.like(policy.params)
    if not decisions:
        return policy, opt_state, {"loss": 0.0, "mean_ratio": 1.0, "grad_norm": 0.0}

    objective, grad, ratios = surrogate_gradient(policy, decisions, train_cfg)
    loss = -objective

    if not np.all(np.isfinite(grad)) or not math.isfinite(loss):
        log.warning("non-finite surrogate gradient; skipping the update step")
        return policy, opt_state, {
            "loss": float("nan"),
            "mean_ratio": float(np.mean(ratios)),
            "grad_norm": float("nan"),
        }

    opt_state.step += 1
    b1, b2 = train_cfg.adam_beta1, train_cfg.adam_beta2
    opt_state.m = b1 * opt_state.m + (1 - b1) * grad
    opt_state.v = b2 * opt_state.v + (1 - b2) * grad * grad
    m_hat = opt_state.m / (1 - b1 ** opt_state.step)
    v_hat = opt_state.v / (1 - b2 ** opt_state.step)
    lr = schedule_lr(train_cfg, lr_fraction)
    new_w = policy.params.weights + lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    new_params = SoftmaxPolicyParams(weights=new_w, feature_version=policy.params.feature_version)
    stats = {
        "loss": loss,
        "mean_ratio": float(np.mean(ratios)),
        "grad_norm": float(np.linalg.norm(grad)),
    }
    return policy.with_params(new_params), opt_state, stats


# --------------------------------------------------------------------------
# Checkpoints and the training log


def save_checkpoint(params: SoftmaxPolicyParams, path, train_step: int = 0) -> None:
    payload = {
        "feature_version": params.feature_version,
        "weights": [float(w) for w in params.weights],
        "train_step": train_step,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple[SoftmaxPolicyParams, int]:
    with open(path) as fh:
        payload = json.load(fh)
    params = SoftmaxPolicyParams(
        weights=np.array(payload["weights"], dtype=float),
        feature_version=payload["feature_version"],
    )
    return params, payload.get("train_step", 0)


LOG_COLUMNS = (
    "iteration",
    "instance_id",
    "mean_reward",
    "mean_abs_advantage",
    "loss",
    "grad_norm",
    "probe_cr",
    "probe_or",
)


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append({col: row.get(col, "") for col in LOG_COLUMNS})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)


# --------------------------------------------------------------------------
# Outer loop


def probe_policy(policy, instances, planner_cfg: PlannerConfig, reward_cfg: RewardConfig):
    """Greedy evaluation on a probe set: (completion rate, optimal rate,
    mean composite reward of the greedy proposals)."""
    solved = optimal = 0
    rewards = []
    for inst in instances:
        stitched = hsrl_plan(inst, policy, planner_cfg, mode="greedy")
        if isinstance(stitched, StitchedPlan):
            solved += 1
            if stitched.plan.length == instance_optimal_length(inst, planner_cfg.blocks_search_depth):
                optimal += 1
            rewards.append(
                composite_reward(_greedy_states(policy, inst, planner_cfg), inst, reward_cfg,
                                 planner_cfg=planner_cfg)
            )
        else:
            rewards.append(reward_cfg.failure_reward)
    n = len(instances)
    return solved / n, optimal / n, float(np.mean(rewards))


def _greedy_states(policy, instance, planner_cfg: PlannerConfig) -> list:
    """The policy-generated portion of the greedy waypoint sequence."""
    seq = propose_waypoints(
        policy, instance, mode="greedy", max_depth=planner_cfg.max_depth,
        temperature=planner_cfg.propose_temperature,
    )
    end = len(seq.states) if seq.generated_goal else len(seq.states) - 1
    return list(seq.states[:end])


def train(
    instances,
    policy,
    search_cfg: SearchConfig,
    train_cfg: TrainConfig,
    reward_cfg: RewardConfig,
    planner_cfg: PlannerConfig | None = None,
    total_iterations: int | None = None,
    probe_instances=None,
    probe_every: int = 25,
    instance_ids=None,
):
    """The outer search-train loop.

    Per episode (one instance, fresh tree): select a leaf by the refined
    score, expand a group of M continuations, evaluate them together,
    backpropagate, compute sibling advantages, take the policy step, then
    commit the best visited child as the new root. The episode ends when
    the root reaches the goal or after max_iterations cycles; episodes
    round-robin over the instances until the iteration budget is spent.
    """
    planner_cfg = planner_cfg or PlannerConfig()
    # the search config's rollout budget caps low-level solver work during
    # simulations, whichever knob is tighter
    planner_cfg = replace(
        planner_cfg, rollout_budget=min(planner_cfg.rollout_budget, search_cfg.rollout_budget)
    )
    log_out = TrainingLog()
    if not instances:
        raise ValueError("instances must be non-empty")
    if instance_ids is None:
        instance_ids = [f"inst-{i:04d}" for i in range(len(instances))]
    budget = total_iterations if total_iterations is not None else (
        search_cfg.max_iterations * len(instances)
    )
    if budget <= 0 or search_cfg.max_iterations <= 0:
        return (policy.params if _is_local_policy(policy) else None), log_out

    search_cfg = _with_group_size(search_cfg, train_cfg.generations_m)
    master = np.random.default_rng(train_cfg.seed)
    opt_state = AdamState.like(policy.params) if _is_local_policy(policy) else None
    pending: list[Decision] = []
    it = 0
    episode = 0
    while it < budget:
        inst = instances[episode % len(instances)]
        inst_id = instance_ids[episode % len(instances)]
        episode += 1
        try:
            tree = SearchTree(instance_context(inst), seed=int(master.integers(2**31)))
        except Exception as exc:  # malformed instance: skip and log
            log.warning("skipping instance %s: %s", inst_id, exc)
            continue
        for _ in range(search_cfg.max_iterations):
            if it >= budget or tree.root.state == tree.goal or tree.root.terminal_failed:
                break
            leaf = select_leaf(tree, search_cfg)
            if tree.is_terminal(leaf, search_cfg):
                states = tree.trajectory_states(leaf)
                reward = composite_reward(states, inst, reward_cfg, planner_cfg=planner_cfg)
                backpropagate(leaf, reward)
                _advance_if_possible(tree, search_cfg)
                it += 1
                continue
            try:
                trajectories = expand_group(tree, leaf, policy, search_cfg)
            except EmptyCandidateSet:
                break
            state_lists = [tree.trajectory_states(t[-1]) for t in trajectories]
            rewards, _evals = rewards_for_group(
                state_lists, inst, reward_cfg, planner_cfg
            )
            for traj, reward in zip(trajectories, rewards):
                backpropagate(traj[-1], reward)
            group = GroupSample(trajectories, leaf, tree.context_for(leaf))
            advantages = fine_grained_advantages(group)
            pending.extend(_group_decisions(group, advantages))
            stats = {"loss": "", "grad_norm": ""}
            if len(pending) and (it + 1) % train_cfg.batch_size == 0:
                if _is_local_policy(policy):
                    for _epoch in range(train_cfg.epochs):
                        policy, opt_state, stats = grpo_update(
                            policy, pending, None, train_cfg, opt_state,
                            lr_fraction=it / max(1, budget),
                        )
                else:  # remote policies take the step server-side
                    lr = schedule_lr(train_cfg, it / max(1, budget))
                    try:
                        loss = remote_update(policy, pending, lr)
                        stats = {"loss": loss, "grad_norm": ""}
                    except UpdateUnsupported:
                        log.warning("remote endpoint is inference-only; skipping updates")
                pending = []
                if search_cfg.recompute_priors and _is_local_policy(policy):
                    tree.recompute_priors(policy, search_cfg)
            row = {
                "iteration": it,
                "instance_id": inst_id,
                "mean_reward": float(np.mean(rewards)),
                "mean_abs_advantage": float(np.mean(np.abs(advantages.trajectory_advantages))),
                "loss": stats["loss"],
                "grad_norm": stats["grad_norm"],
            }
            if probe_instances and (it % probe_every == 0 or it + 1 == budget):
                cr, opt_rate, _ = probe_policy(policy, probe_instances, planner_cfg, reward_cfg)
                row["probe_cr"] = cr
                row["probe_or"] = opt_rate
            log_out.add(**row)
            it += 1
            _advance_if_possible(tree, search_cfg)
    params = policy.params if _is_local_policy(policy) else None
    return params, log_out


def _is_local_policy(policy) -> bool:
    return hasattr(policy, "grad_log_prob")


def _advance_if_possible(tree: SearchTree, cfg: SearchConfig) -> None:
    if not tree.root.children or tree.root.state == tree.goal:
        return
    try:
        advance_root(tree, cfg)
    except NoVisitedChild:
        pass


def _with_group_size(cfg: SearchConfig, m: int) -> SearchConfig:
    return replace(cfg, group_size=m) if m and m != cfg.group_size else cfg
