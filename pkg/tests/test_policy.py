import json
import math
from pathlib import Path

import httpx
import numpy as np
import pytest

from hsrl.envs import BlocksState, GridMap, Position, serialize_grid
from hsrl.policy import (
    EmptyCandidateSet,
    GenerationError,
    PolicyContext,
    PolicyOutput,
    PriorStats,
    RemotePolicy,
    SoftmaxPolicy,
    SoftmaxPolicyParams,
    TaskKind,
    UpdateUnsupported,
    avg_log_likelihood,
    canonical_json,
    confidence,
    exploration_factor,
    generate_request_payload,
    grad_log_prob,
    parse_state_text,
    sample_candidates,
    softmax_policy_distribution,
    state_token,
)

GOLDEN = Path(__file__).parent / "golden" / "wire"


def grid_ctx(width=5, height=5, obstacles=(), start=(0, 0), goal=(4, 4), prefix=None):
    m = GridMap(width, height, frozenset(Position(*p) for p in obstacles),
                Position(*start), Position(*goal))
    prefix = tuple(Position(*p) for p in (prefix or [start]))
    return PolicyContext(TaskKind.MAZE, serialize_grid(m), prefix, m.goal)


def blocks_ctx():
    initial = BlocksState(((1, 2), (3,)))
    goal = BlocksState(((1,), (2,), (3,)))
    return PolicyContext(TaskKind.BLOCKSWORLD, "blocks:3", (initial,), goal)


class TestLikelihoodQuantities:
    def test_avg_log_likelihood_mean(self):
        out = PolicyOutput(Position(0, 1), ("a", "b"), (-0.5, -1.5), "ab")
        assert avg_log_likelihood(out) == -1.0

    def test_single_zero_token(self):
        out = PolicyOutput(Position(0, 1), ("a",), (0.0,), "a")
        assert avg_log_likelihood(out) == 0.0

    def test_uniform_four_candidates(self):
        # 3x3 board, window limited to exactly 4 free candidates
        ctx = grid_ctx(width=2, height=3, start=(0, 0), goal=(2, 1), prefix=[(0, 0)])
        policy = SoftmaxPolicy()  # zero weights: uniform
        states, probs, _ = policy.distribution(ctx)
        assert len(states) == 5  # all free cells except the prefix end
        ctx4 = grid_ctx(width=2, height=2, start=(0, 0), goal=(1, 1))
        states, probs, _ = SoftmaxPolicy().distribution(ctx4)
        assert len(states) == 3
        sample = SoftmaxPolicy().sample(ctx4, 1, 1.0, np.random.default_rng(0))[0]
        assert math.isclose(avg_log_likelihood(sample), math.log(1 / 3), rel_tol=1e-12)

    def test_confidence_values(self):
        assert confidence(0.0, 1.0) == 1.0
        assert math.isclose(confidence(-1.0, 1.0), 0.36787944117144233, rel_tol=1e-12)
        assert confidence(-7.3, 0.0) == 1.0

    def test_confidence_monotone_in_ell(self):
        values = [confidence(ell, 1.0) for ell in (-3.0, -2.0, -1.0, -0.5, 0.0)]
        assert values == sorted(values)

    def test_exploration_factor(self):
        assert exploration_factor(0.0, 0.4, 5.0) == 1.0
        assert math.isclose(exploration_factor(-2.0, 0.4, 5.0), 1.8, rel_tol=1e-12)
        assert math.isclose(exploration_factor(-10.0, 0.4, 5.0), 3.0, rel_tol=1e-12)

    def test_exploration_non_increasing_in_ell(self):
        values = [exploration_factor(ell, 0.4, 5.0) for ell in (-8.0, -4.0, -1.0, 0.0)]
        assert values == sorted(values, reverse=True)

    def test_prior_stats_from_output(self):
        out = PolicyOutput(Position(0, 1), ("t",), (-2.0,), "t")
        stats = PriorStats.from_output(out, tau=1.0, gamma=0.4, u_max=5.0)
        assert stats.ell == -2.0
        assert math.isclose(stats.confidence, math.exp(-2.0))
        assert math.isclose(stats.exploration, 1.8)

    def test_logprob_positive_rejected(self):
        with pytest.raises(ValueError):
            PolicyOutput(Position(0, 0), ("t",), (0.1,), "t")


class TestSoftmaxPolicy:
    def test_zero_weights_uniform(self):
        ctx = grid_ctx()
        states, probs, _ = softmax_policy_distribution(SoftmaxPolicyParams.zeros(), ctx)
        assert np.allclose(probs, probs[0])

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            w = rng.normal(size=4)
            start = (int(rng.integers(5)), int(rng.integers(5)))
            goal = (int(rng.integers(5)), int(rng.integers(5)))
            if start == goal:
                continue
            ctx = grid_ctx(start=start, goal=goal, prefix=[start])
            _, probs, _ = softmax_policy_distribution(SoftmaxPolicyParams(w), ctx)
            assert abs(probs.sum() - 1.0) <= 1e-12

    def test_nearer_cells_more_probable(self):
        ctx = grid_ctx()
        params = SoftmaxPolicyParams(np.array([1.0, 0.0, 0.0, 0.0]))  # weight on -dist(goal)
        states, probs, _ = softmax_policy_distribution(params, ctx)
        dists = np.array([s.manhattan(ctx.goal) for s in states])
        order = np.argsort(dists)
        sorted_probs = probs[order]
        assert all(a >= b - 1e-15 for a, b in zip(sorted_probs, sorted_probs[1:]))

    def test_sample_logprob_matches_distribution(self):
        ctx = grid_ctx()
        policy = SoftmaxPolicy(SoftmaxPolicyParams(np.array([0.7, -0.2, 0.1, 1.3])))
        states, probs, _ = policy.distribution(ctx)
        for out in policy.sample(ctx, 16, 1.0, np.random.default_rng(3)):
            idx = states.index(out.state)
            assert math.isclose(avg_log_likelihood(out), math.log(probs[idx]), rel_tol=1e-12)

    def test_sampling_reproducible(self):
        ctx = grid_ctx()
        policy = SoftmaxPolicy(SoftmaxPolicyParams(np.array([0.5, 0.1, -0.3, 0.9])))
        a = sample_candidates(policy, ctx, 8, 1.0, 42)
        b = sample_candidates(policy, ctx, 8, 1.0, 42)
        assert [o.state for o in a] == [o.state for o in b]
        assert [o.logprobs for o in a] == [o.logprobs for o in b]

    def test_greedy_is_modal(self):
        ctx = grid_ctx()
        policy = SoftmaxPolicy(SoftmaxPolicyParams(np.array([2.0, 0.0, 0.0, 0.0])))
        states, probs, _ = policy.distribution(ctx)
        assert policy.greedy(ctx).state == states[int(np.argmax(probs))]

    def test_blocks_candidates_are_one_move_away(self):
        ctx = blocks_ctx()
        states, _, _ = SoftmaxPolicy().distribution(ctx)
        from hsrl.envs import apply_blocks_action, legal_blocks_actions

        reachable = {
            apply_blocks_action(ctx.prefix_end, a) for a in legal_blocks_actions(ctx.prefix_end)
        }
        assert set(states) <= reachable

    def test_empty_candidate_set_raises(self):
        lonely = BlocksState(((1,),))
        ctx = PolicyContext(TaskKind.BLOCKSWORLD, "blocks:1", (lonely,), lonely)
        with pytest.raises(EmptyCandidateSet):
            SoftmaxPolicy().distribution(ctx)

    def test_render_injective_on_prefix(self):
        a = grid_ctx(prefix=[(0, 0)])
        b = grid_ctx(prefix=[(0, 0), (1, 1)])
        assert a.render() != b.render()


class TestGradLogProb:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-6
        checked = 0
        while checked < 100:
            w = rng.normal(scale=1.5, size=4)
            start = (int(rng.integers(6)), int(rng.integers(6)))
            goal = (int(rng.integers(6)), int(rng.integers(6)))
            if start == goal:
                continue
            ctx = grid_ctx(width=6, height=6, start=start, goal=goal, prefix=[start])
            params = SoftmaxPolicyParams(w)
            states, probs, _ = softmax_policy_distribution(params, ctx)
            chosen = states[int(rng.integers(len(states)))]
            grad = grad_log_prob(params, ctx, chosen)
            direction = rng.normal(size=4)
            direction /= np.linalg.norm(direction)

            def logp(weights):
                s, p, _ = softmax_policy_distribution(SoftmaxPolicyParams(weights), ctx)
                return math.log(p[s.index(chosen)])

            fd = (logp(w + h * direction) - logp(w - h * direction)) / (2 * h)
            analytic = float(grad @ direction)
            assert math.isclose(analytic, fd, rel_tol=1e-5, abs_tol=1e-7)
            checked += 1

    def test_gradient_zero_for_certain_candidate(self):
        # an overwhelming goal indicator makes the goal all but certain
        ctx = grid_ctx(width=3, height=3, goal=(2, 2))
        params = SoftmaxPolicyParams(np.array([0.0, 0.0, 0.0, 500.0]))
        grad = grad_log_prob(params, ctx, Position(2, 2))
        assert np.allclose(grad, 0.0, atol=1e-8)

    def test_chosen_outside_candidates_rejected(self):
        ctx = grid_ctx()
        with pytest.raises(ValueError):
            grad_log_prob(SoftmaxPolicyParams.zeros(), ctx, Position(0, 0))  # prefix end


class TestStateParsing:
    def test_grid_roundtrip(self):
        assert parse_state_text(TaskKind.MAZE, state_token(Position(3, 4))) == Position(3, 4)

    def test_blocks_roundtrip(self):
        s = BlocksState(((1, 3), (2,)))
        assert parse_state_text(TaskKind.BLOCKSWORLD, state_token(s)) == s

    def test_garbage_is_none(self):
        assert parse_state_text(TaskKind.MAZE, "(a,b)") is None
        assert parse_state_text(TaskKind.BLOCKSWORLD, "[[1,[") is None


def _mock_remote(handler) -> RemotePolicy:
    return RemotePolicy(
        base_url="http://policy.test", transport=httpx.MockTransport(handler)
    )


class TestRemotePolicy:
    def test_generate_request_bytes_match_golden(self):
        m = GridMap(3, 3, frozenset({Position(1, 1)}), Position(0, 0), Position(2, 2))
        ctx = PolicyContext(TaskKind.MAZE, serialize_grid(m), (m.start,), m.goal)
        payload = canonical_json(generate_request_payload(ctx.render(), 8, 1.0, 64))
        golden = (GOLDEN / "generate_request.json").read_text().rstrip("\n")
        assert payload == golden

    def test_sample_parses_and_retains_unparseable(self):
        response = json.loads((GOLDEN / "generate_response.json").read_text())

        def handler(request):
            assert request.url.path == "/v1/generate"
            return httpx.Response(200, json=response)

        client = _mock_remote(handler)
        ctx = grid_ctx()
        outs = client.sample(ctx, 2, 1.0)
        assert outs[0].state == Position(1, 2)
        assert outs[1].state is None  # "(a,b)" kept for the penalty path
        assert len(outs[1].tokens) == len(outs[1].logprobs) == 5

    def test_sample_count_mismatch_rejected(self):
        def handler(request):
            return httpx.Response(
                200, json={"samples": [{"text": "(1,1)", "tokens": ["x"], "logprobs": [-0.5]}]}
            )

        with pytest.raises(GenerationError):
            _mock_remote(handler).sample(grid_ctx(), 3, 1.0)

    def test_misaligned_arrays_rejected(self):
        def handler(request):
            return httpx.Response(
                200,
                json={"samples": [{"text": "(1,1)", "tokens": ["x"], "logprobs": [-0.5, -0.5]}]},
            )

        with pytest.raises(GenerationError):
            _mock_remote(handler).sample(grid_ctx(), 1, 1.0)

    def test_positive_logprob_rejected(self):
        def handler(request):
            return httpx.Response(
                200, json={"samples": [{"text": "(1,1)", "tokens": ["x"], "logprobs": [0.5]}]}
            )

        with pytest.raises(GenerationError):
            _mock_remote(handler).sample(grid_ctx(), 1, 1.0)

    def test_update_unsupported_maps_501(self):
        def handler(request):
            return httpx.Response(501, json={"detail": "inference-only"})

        with pytest.raises(UpdateUnsupported):
            _mock_remote(handler).update([{"context": "c", "completion": "x", "advantage": 1.0}], 0.001)

    def test_update_returns_loss(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["learning_rate"] == 0.001
            return httpx.Response(200, json={"loss": 0.25})

        loss = _mock_remote(handler).update(
            [{"context": "c", "completion": "x", "advantage": 1.0}], 0.001
        )
        assert loss == 0.25

    def test_health(self):
        def handler(request):
            return httpx.Response(200, json={"status": "ok", "model": "tiny"})

        assert _mock_remote(handler).health()["status"] == "ok"
