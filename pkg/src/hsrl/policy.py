"""High-level policies proposing candidate intermediate states.

Two implementations share one interface: a synthetic linear-softmax policy
(trainable, fully deterministic under a seed) and a remote client speaking
the JSON-over-HTTP wire protocol. Every sample carries per-token log
likelihoods; the mean log likelihood drives the prior confidence and the
uncertainty-amplified exploration bonus used during tree search.
"""
from __future__ import annotations

import functools
import json
import math
import os
import re
from dataclasses import dataclass
from enum import Enum

import httpx
import numpy as np

from .envs.blocks import BlocksState, apply_blocks_action, legal_blocks_actions
from .envs.grid import GridMap, Position, bounding_window, parse_grid_text


class TaskKind(Enum):
    MAZE = "maze"
    FLOORPLAN = "floorplan"
    BLOCKSWORLD = "blocksworld"
    GTB = "gtb"

    @property
    def is_grid(self) -> bool:
        return self in (TaskKind.MAZE, TaskKind.FLOORPLAN, TaskKind.GTB)


class EmptyCandidateSet(RuntimeError):
    """No legal candidate state exists for the queried context."""


class GenerationError(RuntimeError):
    """The remote endpoint returned a malformed generation response."""


class UpdateUnsupported(RuntimeError):
    """The remote endpoint is inference-only (HTTP 501 on /v1/update)."""


def state_token(state) -> str:
    """Canonical single-token encoding of an intermediate state."""
    if isinstance(state, Position):
        return f"({state.row},{state.col})"
    if isinstance(state, BlocksState):
        return json.dumps([list(s) for s in state.stacks], separators=(",", ":"))
    raise TypeError(f"unsupported state type {type(state)!r}")


_GRID_STATE_RE = re.compile(r"^\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*$")


def parse_state_text(task_kind: TaskKind, text: str):
    """Parse a generated state string; None when the text is unparseable."""
    if task_kind.is_grid:
        m = _GRID_STATE_RE.match(text)
        return Position(int(m.group(1)), int(m.group(2))) if m else None
    try:
        stacks = json.loads(text)
        return BlocksState(tuple(tuple(int(b) for b in s) for s in stacks))
    except (ValueError, TypeError):
        return None


@dataclass(frozen=True)
class PolicyContext:
    """What the policy sees: the environment, the path so far, the goal.

    The rendered form is injective per task kind, so it doubles as a memo
    key and as the opaque context string sent to remote policies.
    """

    task_kind: TaskKind
    env_summary: str
    prefix: tuple
    goal: object

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(self.prefix))
        if not self.prefix:
            raise ValueError("prefix must contain at least the start state")

    @property
    def prefix_end(self):
        return self.prefix[-1]

    def extended(self, state) -> "PolicyContext":
        return PolicyContext(self.task_kind, self.env_summary, self.prefix + (state,), self.goal)

    def render(self) -> str:
        prefix = " ".join(state_token(s) for s in self.prefix)
        return (
            f"task={self.task_kind.value}\n"
            f"env:\n{self.env_summary}\n"
            f"prefix: {prefix}\n"
            f"goal: {state_token(self.goal)}"
        )


@dataclass(frozen=True)
class PolicyOutput:
    """One sampled candidate. state is None when the text did not parse."""

    state: object
    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    raw_text: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "logprobs", tuple(float(lp) for lp in self.logprobs))
        if len(self.tokens) != len(self.logprobs) or not self.tokens:
            raise ValueError("tokens and logprobs must align and be non-empty")
        if any(lp > 0 or not math.isfinite(lp) for lp in self.logprobs):
            raise ValueError("log probabilities must be finite and <= 0")

    @property
    def total_logprob(self) -> float:
        return sum(self.logprobs)


def avg_log_likelihood(out: PolicyOutput) -> float:
    """Mean per-token log likelihood of a sample."""
    return sum(out.logprobs) / len(out.logprobs)


def confidence(ell: float, tau: float) -> float:
    """Prior confidence weight exp(tau * ell); 1 when modulation is off."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return math.exp(tau * ell)


def exploration_factor(ell: float, gamma: float, u_max: float) -> float:
    """Uncertainty amplifier 1 + gamma * clamp(-ell, 0, u_max)."""
    if gamma < 0 or u_max <= 0:
        raise ValueError("gamma must be >= 0 and u_max > 0")
    return 1.0 + gamma * min(max(-ell, 0.0), u_max)


@dataclass(frozen=True)
class PriorStats:
    ell: float
    confidence: float
    exploration: float

    @classmethod
    def from_output(
        cls, out: PolicyOutput, tau: float, gamma: float, u_max: float
    ) -> "PriorStats":
        ell = avg_log_likelihood(out)
        return cls(
            ell=ell,
            confidence=confidence(ell, tau),
            exploration=exploration_factor(ell, gamma, u_max),
        )


# --------------------------------------------------------------------------
# Synthetic linear-softmax policy


GRID_FEATURE_COUNT = 4


@dataclass(frozen=True)
class SoftmaxPolicyParams:
    weights: np.ndarray
    feature_version: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls) -> "SoftmaxPolicyParams":
        return cls(weights=np.zeros(GRID_FEATURE_COUNT))


@functools.lru_cache(maxsize=512)
def _parse_grid_summary(env_summary: str) -> GridMap:
    return parse_grid_text(env_summary)


def _obstacle_density_3x3(grid: GridMap, p: Position) -> float:
    blocked = 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            q = Position(p.row + dr, p.col + dc)
            if not grid.in_bounds(q) or q in grid.obstacles:
                blocked += 1
    return blocked / 9.0


def _grid_candidates(ctx: PolicyContext, margin: int) -> list[Position]:
    grid = _parse_grid_summary(ctx.env_summary)
    top, left, bottom, right = bounding_window(ctx.prefix_end, ctx.goal, margin, grid)
    return [
        Position(r, c)
        for r in range(top, bottom + 1)
        for c in range(left, right + 1)
        if grid.is_free(Position(r, c)) and Position(r, c) != ctx.prefix_end
    ]


def _grid_features(ctx: PolicyContext, candidates: list[Position]) -> np.ndarray:
    grid = _parse_grid_summary(ctx.env_summary)
    feats = np.empty((len(candidates), GRID_FEATURE_COUNT))
    for i, cand in enumerate(candidates):
        feats[i, 0] = -cand.manhattan(ctx.goal)
        feats[i, 1] = -ctx.prefix_end.manhattan(cand)
        feats[i, 2] = _obstacle_density_3x3(grid, cand)
        feats[i, 3] = 1.0 if cand == ctx.goal else 0.0
    return feats


def _blocks_candidates(ctx: PolicyContext) -> list[BlocksState]:
    current: BlocksState = ctx.prefix_end
    seen, out = set(), []
    for act in legal_blocks_actions(current):
        nxt = apply_blocks_action(current, act)
        if nxt is not None and nxt not in seen:
            seen.add(nxt)
            out.append(nxt)
    return out


def _blocks_features(ctx: PolicyContext, candidates: list[BlocksState]) -> np.ndarray:
    goal: BlocksState = ctx.goal
    n = goal.block_count
    feats = np.empty((len(candidates), GRID_FEATURE_COUNT))
    for i, cand in enumerate(candidates):
        mismatch = cand.support_mismatch(goal)
        feats[i, 0] = -mismatch
        feats[i, 1] = -ctx.prefix_end.support_mismatch(cand)
        feats[i, 2] = (n - mismatch) / n
        feats[i, 3] = 1.0 if cand == goal else 0.0
    return feats


def candidate_states(ctx: PolicyContext, window_margin: int):
    """(states, feature matrix) for a context; deterministic ordering."""
    if ctx.task_kind.is_grid:
        cands = _grid_candidates(ctx, window_margin)
        if not cands:
            raise EmptyCandidateSet(f"no free candidate cell near {ctx.prefix_end}")
        return cands, _grid_features(ctx, cands)
    cands = _blocks_candidates(ctx)
    if not cands:
        raise EmptyCandidateSet("no legal single-move successor")
    return cands, _blocks_features(ctx, cands)


def softmax_policy_distribution(
    params: SoftmaxPolicyParams,
    ctx: PolicyContext,
    temperature: float = 1.0,
    window_margin: int = 2,
):
    """(states, probabilities, features) under a temperature-scaled softmax
    of the linear candidate scores."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    states, feats = candidate_states(ctx, window_margin)
    logits = feats @ params.weights / temperature
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return states, probs, feats


def grad_log_prob(
    params: SoftmaxPolicyParams,
    ctx: PolicyContext,
    chosen_state,
    temperature: float = 1.0,
    window_margin: int = 2,
) -> np.ndarray:
    """Analytic gradient of log pi(chosen | ctx) w.r.t. the weights:
    (features(chosen) - E_pi[features]) / temperature."""
    states, probs, feats = softmax_policy_distribution(params, ctx, temperature, window_margin)
    try:
        idx = states.index(chosen_state)
    except ValueError:
        raise ValueError(f"{chosen_state} is not in the candidate set") from None
    return (feats[idx] - probs @ feats) / temperature


class SoftmaxPolicy:
    """Trainable stand-in policy. Each candidate is one token whose log
    probability is its sampling probability, so the mean log likelihood of
    a sample is exactly its log probability.

    Parameters are a snapshot: sampling never mutates them, and updates
    produce a new SoftmaxPolicy via with_params().
    """

    def __init__(self, params: SoftmaxPolicyParams | None = None, window_margin: int = 2):
        self.params = params or SoftmaxPolicyParams.zeros()
        self.window_margin = window_margin

    def with_params(self, params: SoftmaxPolicyParams) -> "SoftmaxPolicy":
        return SoftmaxPolicy(params=params, window_margin=self.window_margin)

    def distribution(self, ctx: PolicyContext, temperature: float = 1.0):
        return softmax_policy_distribution(self.params, ctx, temperature, self.window_margin)

    def logprob_of(self, ctx: PolicyContext, state, temperature: float = 1.0) -> float:
        states, probs, _ = self.distribution(ctx, temperature)
        try:
            idx = states.index(state)
        except ValueError:
            raise ValueError(f"{state} is not in the candidate set") from None
        return min(0.0, float(np.log(probs[idx])))

    def grad_log_prob(self, ctx: PolicyContext, state, temperature: float = 1.0) -> np.ndarray:
        return grad_log_prob(self.params, ctx, state, temperature, self.window_margin)

    def _output_for(self, state, logprob: float) -> PolicyOutput:
        token = state_token(state)
        return PolicyOutput(
            state=state, tokens=(token,), logprobs=(min(0.0, logprob),), raw_text=token
        )

    def sample(
        self, ctx: PolicyContext, m: int, temperature: float, rng: np.random.Generator
    ) -> list[PolicyOutput]:
        states, probs, _ = self.distribution(ctx, temperature)
        idxs = rng.choice(len(states), size=m, p=probs)
        logs = np.log(probs)
        return [self._output_for(states[i], float(logs[i])) for i in idxs]

    def greedy(self, ctx: PolicyContext, temperature: float = 1.0) -> PolicyOutput:
        """Argmax decoding: the zero-temperature limit of sampling."""
        states, probs, _ = self.distribution(ctx, temperature)
        idx = int(np.argmax(probs))
        return self._output_for(states[idx], float(np.log(probs[idx])))


def sample_candidates(policy, ctx: PolicyContext, m: int, temperature: float, rng_seed):
    """Draw m candidates from any policy; rng_seed may be an int or a
    numpy Generator. Duplicates are expected and preserved."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return policy.sample(ctx, m, temperature, rng)


# --------------------------------------------------------------------------
# Remote policy (JSON over HTTP)


REMOTE_URL_ENV = "HSRL_REMOTE_URL"


def canonical_json(payload: dict) -> str:
    """The exact byte form the client puts on the wire (golden-fixture anchor)."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def generate_request_payload(
    context: str, num_samples: int, temperature: float, max_tokens: int
) -> dict:
    return {
        "context": context,
        "num_samples": num_samples,
        "temperature": temperature,
        "max_tokens": max_tokens,
    }


def update_request_payload(items: list[dict], learning_rate: float) -> dict:
    return {"items": items, "learning_rate": learning_rate}


class RemotePolicy:
    """Client for the /v1 generate/update/health wire protocol."""

    def __init__(
        self,
        base_url: str | None = None,
        task_kind: TaskKind = TaskKind.MAZE,
        max_tokens: int = 64,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        base_url = base_url or os.environ.get(REMOTE_URL_ENV)
        if not base_url:
            raise ValueError(f"no remote URL given and {REMOTE_URL_ENV} is unset")
        self.base_url = base_url.rstrip("/")
        self.task_kind = task_kind
        self.max_tokens = max_tokens
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def raw_generate(self, payload: dict) -> list[dict]:
        """POST an already-built /v1/generate payload; returns the samples."""
        resp = self._client.post(
            "/v1/generate",
            content=canonical_json(payload),
            headers={"content-type": "application/json"},
        )
        if resp.status_code != 200:
            raise GenerationError(f"/v1/generate returned {resp.status_code}: {resp.text}")
        samples = resp.json().get("samples")
        if not isinstance(samples, list):
            raise GenerationError("response lacks a samples array")
        return samples

    def sample(
        self, ctx: PolicyContext, m: int, temperature: float, rng=None
    ) -> list[PolicyOutput]:
        payload = generate_request_payload(ctx.render(), m, temperature, self.max_tokens)
        resp = self._client.post(
            "/v1/generate",
            content=canonical_json(payload),
            headers={"content-type": "application/json"},
        )
        if resp.status_code != 200:
            raise GenerationError(f"/v1/generate returned {resp.status_code}: {resp.text}")
        body = resp.json()
        samples = body.get("samples")
        if not isinstance(samples, list) or len(samples) != m:
            raise GenerationError(f"expected {m} samples, got {samples!r}")
        outputs = []
        for s in samples:
            tokens, logprobs = s.get("tokens"), s.get("logprobs")
            if (
                not isinstance(tokens, list)
                or not isinstance(logprobs, list)
                or len(tokens) != len(logprobs)
                or not tokens
            ):
                raise GenerationError("tokens/logprobs arrays missing or misaligned")
            # Unparseable texts are retained with state=None so the
            # parse-failure penalty path stays reachable.
            state = parse_state_text(ctx.task_kind, s.get("text", ""))
            try:
                out = PolicyOutput(
                    state=state, tokens=tuple(tokens), logprobs=tuple(logprobs),
                    raw_text=s.get("text", ""),
                )
            except ValueError as exc:
                raise GenerationError(f"invalid sample from server: {exc}") from exc
            outputs.append(out)
        return outputs

    def greedy(self, ctx: PolicyContext, temperature: float = 1.0) -> PolicyOutput:
        # Remote protocol has no argmax mode; a low temperature approximates it.
        return self.sample(ctx, 1, min(temperature, 0.05))[0]

    def update(self, items: list[dict], learning_rate: float) -> float:
        payload = update_request_payload(items, learning_rate)
        resp = self._client.post(
            "/v1/update",
            content=canonical_json(payload),
            headers={"content-type": "application/json"},
        )
        if resp.status_code == 501:
            raise UpdateUnsupported("server is inference-only")
        if resp.status_code != 200:
            raise GenerationError(f"/v1/update returned {resp.status_code}: {resp.text}")
        return float(resp.json()["loss"])

    def health(self) -> dict:
        resp = self._client.get("/v1/health")
        resp.raise_for_status()
        return resp.json()
