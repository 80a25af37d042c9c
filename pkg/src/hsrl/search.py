"""Tree search over intermediate-state sequences.

Selection uses a refined UCT score: the exploitation term is the node's
empirical mean return scaled by the policy's prior confidence, and the
exploration term is amplified for low-likelihood (epistemically uncertain)
candidates. Expansion draws a group of M full continuations at once so
group-relative advantages are available immediately.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .policy import (
    EmptyCandidateSet,
    PolicyContext,
    PriorStats,
    state_token,
)


class Unparseable:
    """Singleton placeholder state for samples whose text did not parse."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<unparseable>"


UNPARSEABLE = Unparseable()


class NoVisitedChild(RuntimeError):
    """advance_root called while every child of the root is unvisited."""


@dataclass
class SearchConfig:
    tau: float = 1.0
    gamma: float = 0.4
    u_max: float = 5.0
    c_uct: float = 1.414
    group_size: int = 8
    max_iterations: int = 16
    max_depth: int = 6
    rollout_budget: int = 1_000_000
    sample_temperature: float = 1.0
    recompute_priors: bool = False

    def __post_init__(self):
        if min(self.u_max, self.c_uct, self.max_depth, self.rollout_budget) <= 0:
            raise ValueError("u_max, c_uct, max_depth and rollout_budget must be positive")
        if self.tau < 0 or self.gamma < 0 or self.max_iterations < 0:
            raise ValueError("tau, gamma and max_iterations must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2 for advantage computation")
        if self.sample_temperature <= 0:
            raise ValueError("sample_temperature must be > 0")


_ROOT_PRIOR = PriorStats(ell=0.0, confidence=1.0, exploration=1.0)


class SearchNode:
    __slots__ = (
        "state",
        "parent",
        "children",
        "visits",
        "total_return",
        "prior",
        "depth",
        "node_id",
        "context",
        "sample_logprob",
        "terminal_failed",
    )

    def __init__(
        self,
        state,
        parent: "SearchNode | None",
        prior: PriorStats,
        depth: int,
        node_id: int,
        context: PolicyContext | None = None,
        sample_logprob: float | None = None,
    ):
        self.state = state
        self.parent = parent
        self.children: list[SearchNode] = []
        self.visits = 0
        self.total_return = 0.0
        self.prior = prior
        self.depth = depth
        self.node_id = node_id
        self.context = context  # creation-time context (None for the root)
        self.sample_logprob = sample_logprob  # under the proposing snapshot
        self.terminal_failed = False

    @property
    def q_value(self) -> float:
        if self.visits == 0:
            raise ValueError("Q is undefined before the first visit")
        return self.total_return / self.visits

    def __repr__(self):
        return f"SearchNode({self.state!r}, N={self.visits}, depth={self.depth})"


class SearchTree:
    """Tree rooted at the current pivot waypoint. `committed` remembers the
    states from the instance start up to (and including) the root, so full
    trajectories always begin at the start state even after rerooting."""

    def __init__(self, ctx: PolicyContext, seed: int = 0):
        self.task_kind = ctx.task_kind
        self.env_summary = ctx.env_summary
        self.goal = ctx.goal
        self.committed: list = list(ctx.prefix)
        self._next_id = 0
        self.root = self._make_node(ctx.prefix_end, None, _ROOT_PRIOR, 0)
        self.node_count = 1
        self.rng = np.random.default_rng(seed)

    def _make_node(self, state, parent, prior, depth, context=None, logprob=None) -> SearchNode:
        node = SearchNode(state, parent, prior, depth, self._next_id, context, logprob)
        self._next_id += 1
        return node

    def is_terminal(self, node: SearchNode, cfg: SearchConfig) -> bool:
        return node.state == self.goal or node.terminal_failed or node.depth >= cfg.max_depth

    def context_for(self, node: SearchNode) -> PolicyContext:
        return PolicyContext(
            task_kind=self.task_kind,
            env_summary=self.env_summary,
            prefix=tuple(self.trajectory_states(node)),
            goal=self.goal,
        )

    def path_nodes(self, node: SearchNode) -> list[SearchNode]:
        path = []
        while node is not None:
            path.append(node)
            node = node.parent
        path.reverse()
        return path

    def trajectory_states(self, node: SearchNode) -> list:
        """States from the instance start to `node`, committed prefix included."""
        return self.committed[:-1] + [n.state for n in self.path_nodes(node)]

    def iter_nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def recompute_priors(self, policy, cfg: SearchConfig) -> None:
        """Refresh every node's prior under the current policy snapshot
        (off by default: priors are frozen at creation)."""
        for node in self.iter_nodes():
            if node.context is None or node.state is UNPARSEABLE:
                continue
            try:
                lp = policy.logprob_of(node.context, node.state, cfg.sample_temperature)
            except (ValueError, EmptyCandidateSet):
                continue
            node.prior = PriorStats(
                ell=lp,
                confidence=math.exp(cfg.tau * lp),
                exploration=1.0 + cfg.gamma * min(max(-lp, 0.0), cfg.u_max),
            )


def refined_uct_score(child: SearchNode, parent: SearchNode, cfg: SearchConfig) -> float:
    """Prior-confidence-scaled exploitation plus uncertainty-amplified
    exploration; unvisited children score +inf (first-play urgency)."""
    if parent.visits < 1:
        raise ValueError("parent must have been visited")
    if child.visits == 0:
        return math.inf
    exploit = child.prior.confidence * child.q_value
    explore = cfg.c_uct * child.prior.exploration * math.sqrt(
        math.log(parent.visits) / child.visits
    )
    return exploit + explore


def _best_child(parent: SearchNode, cfg: SearchConfig, visited_only: bool = False) -> SearchNode:
    best, best_score = None, -math.inf
    for child in parent.children:  # creation order; ties keep the earliest
        if visited_only and child.visits == 0:
            continue
        score = refined_uct_score(child, parent, cfg)
        if score > best_score:
            best, best_score = child, score
    if best is None:
        raise NoVisitedChild("all children are unvisited")
    return best


def select_leaf(tree: SearchTree, cfg: SearchConfig) -> SearchNode:
    """Descend by argmax refined score until an unexpanded or terminal node."""
    node = tree.root
    while node.children and not tree.is_terminal(node, cfg):
        node = _best_child(node, cfg)
    return node


def expand_group(
    tree: SearchTree,
    leaf: SearchNode,
    policy,
    cfg: SearchConfig,
    rng: np.random.Generator | None = None,
) -> list[list[SearchNode]]:
    """Draw M continuations from the leaf down to the goal or the depth cap.

    Each continuation materializes a chain of child nodes; duplicate states
    under the same parent merge into a single node whose prior stays frozen
    from its first creation. Returns M root-to-end node trajectories.
    """
    if tree.is_terminal(leaf, cfg):
        raise ValueError("cannot expand a terminal leaf")
    rng = rng if rng is not None else tree.rng
    trajectories = []
    for _ in range(cfg.group_size):
        node = leaf
        ctx = tree.context_for(leaf)
        while not tree.is_terminal(node, cfg):
            try:
                out = policy.sample(ctx, 1, cfg.sample_temperature, rng)[0]
            except EmptyCandidateSet:
                node.terminal_failed = True
                if node is leaf:
                    raise
                break
            state = out.state if out.state is not None else UNPARSEABLE
            child = next((c for c in node.children if c.state == state), None)
            if child is None:
                child = tree._make_node(
                    state,
                    node,
                    PriorStats.from_output(out, cfg.tau, cfg.gamma, cfg.u_max),
                    node.depth + 1,
                    context=ctx,
                    logprob=out.total_logprob,
                )
                node.children.append(child)
                tree.node_count += 1
            node = child
            if state is UNPARSEABLE:
                node.terminal_failed = True
                break
            ctx = ctx.extended(state)
        trajectories.append(tree.path_nodes(node))
    return trajectories


def backpropagate(end_node: SearchNode, reward: float) -> None:
    """Add one rollout's reward to every node on the path to the root."""
    if not math.isfinite(reward):
        raise ValueError("reward must be finite")
    node = end_node
    while node is not None:
        node.visits += 1
        node.total_return += reward
        node = node.parent


def simulate_to_goal(trajectory: list[SearchNode], env, reward_cfg, low_level=None) -> float:
    """Evaluate one trajectory's waypoints by solving every consecutive
    sub-task exactly, then score it with the composite shaped reward.

    Standalone entry point: consensus degenerates to the single completion.
    Group expansions instead score all M trajectories together (see the
    trainer), which is what makes anchor consensus meaningful.
    """
    from .mgrpo import composite_reward  # deferred: mgrpo imports this module

    states = [n.state for n in trajectory]
    return composite_reward(states, env, reward_cfg, low_level=low_level)


def advance_root(tree: SearchTree, cfg: SearchConfig) -> SearchNode:
    """Commit to the best visited child: reroot there, discard siblings."""
    new_root = _best_child(tree.root, cfg, visited_only=True)
    tree.root.children = [new_root]  # drop sibling subtrees with the old root
    new_root.parent = None
    tree.root = new_root
    tree.committed.append(new_root.state)
    count = 0
    for node in tree.iter_nodes():
        node.depth -= 1
        count += 1
    tree.node_count = count
    return new_root


def dump_tree(tree: SearchTree) -> str:
    """One JSON object per line: {id, parent, state, N, W, ell, c, u, depth}."""
    lines = []
    for node in sorted(tree.iter_nodes(), key=lambda n: n.node_id):
        state = "<unparseable>" if node.state is UNPARSEABLE else state_token(node.state)
        lines.append(
            json.dumps(
                {
                    "id": node.node_id,
                    "parent": node.parent.node_id if node.parent else None,
                    "state": state,
                    "N": node.visits,
                    "W": node.total_return,
                    "ell": node.prior.ell,
                    "c": node.prior.confidence,
                    "u": node.prior.exploration,
                    "depth": node.depth,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines)
