"""Blocksworld states, single-move semantics and instance generation.

States are canonical: stacks are stored bottom-to-top and ordered by
their bottom block id, so equal configurations compare and hash equal.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field


@dataclass(frozen=True)
class BlocksState:
    stacks: tuple[tuple[int, ...], ...]
    block_count: int = field(default=0)

    def __post_init__(self):
        canon = tuple(sorted((tuple(s) for s in self.stacks if s), key=lambda s: s[0]))
        object.__setattr__(self, "stacks", canon)
        blocks = sorted(b for s in canon for b in s)
        n = len(blocks)
        if blocks != list(range(1, n + 1)):
            raise ValueError(f"block ids must be exactly 1..{n}, got {blocks}")
        if self.block_count and self.block_count != n:
            raise ValueError(f"block_count {self.block_count} != {n} blocks present")
        object.__setattr__(self, "block_count", n)

    def support_of(self, block: int) -> int | None:
        """The block directly underneath, or None when on the table."""
        for stack in self.stacks:
            if block in stack:
                i = stack.index(block)
                return stack[i - 1] if i > 0 else None
        raise KeyError(block)

    def tops(self) -> tuple[int, ...]:
        return tuple(s[-1] for s in self.stacks)

    def support_mismatch(self, other: "BlocksState") -> int:
        """Number of blocks whose support differs between the two states."""
        if self.block_count != other.block_count:
            raise ValueError("states have different block universes")
        return sum(
            1 for b in range(1, self.block_count + 1) if self.support_of(b) != other.support_of(b)
        )


TABLE = None  # destination marker for moves onto the table


@dataclass(frozen=True)
class BlocksAction:
    block: int
    dest: int | None  # block id, or TABLE

    def __str__(self) -> str:
        return f"move({self.block},{'table' if self.dest is None else self.dest})"


def apply_blocks_action(state: BlocksState, act: BlocksAction) -> BlocksState | None:
    """New state with the block moved, or None for an illegal move."""
    stacks = [list(s) for s in state.stacks]
    src = next((s for s in stacks if s and s[-1] == act.block), None)
    if src is None:
        return None
    if act.dest is None:
        if len(src) == 1:
            return None  # already a lone table stack; the move changes nothing
        src.pop()
        stacks.append([act.block])
    else:
        dst = next((s for s in stacks if s and s[-1] == act.dest), None)
        if dst is None or dst is src:
            return None
        src.pop()
        dst.append(act.block)
    return BlocksState(tuple(tuple(s) for s in stacks if s))


def legal_blocks_actions(state: BlocksState) -> list[BlocksAction]:
    """All moves valid in `state`, in a deterministic order."""
    actions = []
    tops = state.tops()
    for stack in state.stacks:
        top = stack[-1]
        if len(stack) > 1:
            actions.append(BlocksAction(top, TABLE))
        for other in tops:
            if other != top:
                actions.append(BlocksAction(top, other))
    actions.sort(key=lambda a: (a.block, -1 if a.dest is None else a.dest))
    return actions


def random_blocks_state(block_count: int, rng: random.Random) -> BlocksState:
    order = list(range(1, block_count + 1))
    rng.shuffle(order)
    stacks: list[list[int]] = []
    for b in order:
        if not stacks or rng.random() < 0.4:
            stacks.append([b])
        else:
            rng.choice(stacks).append(b)
    return BlocksState(tuple(tuple(s) for s in stacks))


def generate_blocksworld(
    block_count: int, plan_length: int, seed: int
) -> tuple[BlocksState, BlocksState]:
    """(initial, goal) where goal is `plan_length` random legal moves away,
    never immediately undoing the previous move. Deterministic per seed."""
    if plan_length < 1:
        raise ValueError("plan_length must be >= 1")
    if block_count < 2:
        raise ValueError("need at least 2 blocks for any legal move")
    rng = random.Random(seed)
    initial = random_blocks_state(block_count, rng)
    prev, current = None, initial
    for _ in range(plan_length):
        moves = legal_blocks_actions(current)
        outcomes = [(m, apply_blocks_action(current, m)) for m in moves]
        fresh = [(m, s) for m, s in outcomes if s is not None and s != prev]
        if not fresh:  # only the undo remains (possible with 2 blocks)
            fresh = [(m, s) for m, s in outcomes if s is not None]
        _, nxt = rng.choice(fresh)
        prev, current = current, nxt
    return initial, current


def blocks_to_json(initial: BlocksState, goal: BlocksState) -> dict:
    return {
        "blocks": initial.block_count,
        "initial": [list(s) for s in initial.stacks],
        "goal": [list(s) for s in goal.stacks],
    }


def blocks_from_json(data: dict) -> tuple[BlocksState, BlocksState]:
    initial = BlocksState(tuple(tuple(s) for s in data["initial"]))
    goal = BlocksState(tuple(tuple(s) for s in data["goal"]))
    if initial.block_count != data["blocks"] or goal.block_count != data["blocks"]:
        raise ValueError("block count disagrees with the stack contents")
    return initial, goal
