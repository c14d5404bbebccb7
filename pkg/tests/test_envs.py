"""Level generation, MDP solvers, stepping, and evaluation metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvelab.envs import (
    MdpSpec,
    generate_level,
    observation,
    occupancy,
    solve_q,
    solve_value,
    step,
)
from dvelab.envs.levels import (
    ARCHETYPE_DENSE,
    ARCHETYPE_SPARSE,
    GAPWORLD_LENGTH,
    export_level,
    import_level,
    optimal_path_length,
)
from dvelab.envs.metrics import EpisodeOutcome, spl


def chain_spec(gamma=0.5):
    """0 -> 1 -> 2 -> 3(terminal); rewards [0, 0, 10] along the hops."""
    t = np.zeros((4, 1, 4))
    r = np.zeros_like(t)
    t[0, 0, 1] = 1.0
    t[1, 0, 2] = 1.0
    t[2, 0, 3] = 1.0
    r[2, 0, 3] = 10.0
    t[3, 0, 3] = 1.0
    return MdpSpec(4, 1, t, r, gamma, terminal=frozenset({3}))


class TestGenerateLevel:
    def test_gapworld_deterministic(self):
        a = generate_level("gapworld", 42)
        b = generate_level("gapworld", 42)
        np.testing.assert_array_equal(a.spec.transition, b.spec.transition)
        np.testing.assert_array_equal(a.spec.reward, b.spec.reward)
        np.testing.assert_array_equal(a.gaps, b.gaps)

    @given(st.integers(0, 2**63 - 1))
    @settings(max_examples=30, deadline=None)
    def test_generation_referentially_transparent(self, seed):
        a = generate_level("gapworld", seed)
        b = generate_level("gapworld", seed)
        assert a.spec.transition.tobytes() == b.spec.transition.tobytes()
        assert a.spec.reward.tobytes() == b.spec.reward.tobytes()

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_tabular_rows_sum_to_one(self, seed):
        level = generate_level("tabular", seed)
        np.testing.assert_allclose(level.spec.transition.sum(axis=2), 1.0,
                                   atol=1e-12)

    def test_archetype_by_seed_parity(self):
        assert generate_level("gapworld", 8).archetype == ARCHETYPE_SPARSE
        assert generate_level("gapworld", 9).archetype == ARCHETYPE_DENSE

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            generate_level("procgen", 0)

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_no_two_adjacent_gaps(self, seed):
        level = generate_level("gapworld", seed)
        assert not np.any(level.gaps[:-1] & level.gaps[1:])

    @given(st.integers(0, 10**4))
    @settings(max_examples=20, deadline=None)
    def test_observation_dim_constant_across_seeds(self, seed):
        level = generate_level("gapworld", seed)
        assert observation(level, 0).shape == (8,)
        assert level.obs_dim == 8

    @given(st.integers(0, 500))
    @settings(max_examples=20, deadline=None)
    def test_solver_converges_fast_on_generated_levels(self, seed):
        for family in ("gapworld", "tabular"):
            level = generate_level(family, seed)
            policy = np.full((level.spec.n_states, level.spec.n_actions),
                             1.0 / level.spec.n_actions)
            v = solve_value(level.spec, policy, max_iter=10_000)
            assert np.all(np.isfinite(v))


class TestStep:
    def test_deterministic_spec_ignores_rng(self):
        level = generate_level("gapworld", 4)
        outs = {step(level, 0, 0, np.random.default_rng(s)).next_state
                for s in range(10)}
        assert len(outs) == 1

    def test_terminal_state_rejected(self):
        level = generate_level("gapworld", 4)
        with pytest.raises(ValueError):
            step(level, GAPWORLD_LENGTH - 1, 0, np.random.default_rng(0))

    def test_empirical_frequencies_match_transition_row(self):
        level = generate_level("tabular", 1)
        rng = np.random.default_rng(123)
        n = 100_000
        counts = np.zeros(level.spec.n_states)
        for _ in range(n):
            counts[step(level, 0, 0, rng).next_state] += 1
        p = level.spec.transition[0, 0]
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(counts / n - p) <= 3 * sigma + 1e-9)


class TestSolveValue:
    def test_self_loop_geometric_series(self):
        t = np.zeros((2, 1, 2))
        r = np.zeros_like(t)
        t[0, 0, 0] = 1.0
        r[0, 0, 0] = 1.0
        t[1, 0, 1] = 1.0
        spec = MdpSpec(2, 1, t, r, 0.9, terminal=frozenset({1}),
                       start_dist=np.array([1.0, 0.0]))
        v = solve_value(spec, np.ones((2, 1)))
        assert abs(v[0] - 10.0) <= 1e-9

    def test_three_state_chain_backward_induction(self):
        v = solve_value(chain_spec(gamma=0.5), np.ones((4, 1)))
        np.testing.assert_allclose(v, [2.5, 5.0, 10.0, 0.0], atol=1e-9)

    @given(st.integers(0, 10**4))
    @settings(max_examples=30, deadline=None)
    def test_iterative_matches_linear_solve(self, seed):
        rng = np.random.default_rng(seed)
        S, A = 6, 2
        t = rng.dirichlet(np.ones(S), size=(S, A))
        r = rng.uniform(-1, 1, size=(S, A, S))
        spec = MdpSpec(S, A, t, r, 0.9, start_dist=np.full(S, 1 / S))
        policy = rng.dirichlet(np.ones(A), size=S)
        a = solve_value(spec, policy, method="iterative")
        b = solve_value(spec, policy, method="linear")
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_invalid_policy_rejected(self):
        spec = chain_spec()
        with pytest.raises(ValueError):
            solve_value(spec, np.full((4, 1), 0.5))


class TestSolveQ:
    def test_terminal_adjacent_deterministic_reward(self):
        q = solve_q(chain_spec(), np.ones((4, 1)))
        assert abs(q[2, 0] - 10.0) <= 1e-9

    @given(st.integers(0, 10**4))
    @settings(max_examples=30, deadline=None)
    def test_consistency_with_value(self, seed):
        level = generate_level("tabular", seed)
        rng = np.random.default_rng(seed + 1)
        policy = rng.dirichlet(np.ones(level.spec.n_actions),
                               size=level.spec.n_states)
        q = solve_q(level.spec, policy)
        v = solve_value(level.spec, policy)
        np.testing.assert_allclose((policy * q).sum(axis=1), v, atol=1e-8)

    def test_gamma_zero_gives_immediate_reward(self):
        rng = np.random.default_rng(2)
        S, A = 4, 2
        t = rng.dirichlet(np.ones(S), size=(S, A))
        r = rng.uniform(-1, 1, size=(S, A, S))
        spec = MdpSpec(S, A, t, r, 0.0, start_dist=np.full(S, 1 / S))
        q = solve_q(spec, np.full((S, A), 0.5))
        np.testing.assert_allclose(q, (t * r).sum(axis=2), atol=1e-12)


class TestOccupancy:
    def test_normalized_and_nonnegative(self):
        level = generate_level("tabular", 3)
        d = occupancy(level.spec, np.full((8, 3), 1 / 3))
        assert abs(d.sum() - 1.0) <= 1e-9
        assert np.all(d >= 0)


class TestSpl:
    def test_all_failures_zero(self):
        out = spl([EpisodeOutcome(False, 5, 3) for _ in range(4)])
        assert out.spl == 0.0 and out.success_rate == 0.0

    def test_optimal_path_scores_one(self):
        out = spl([EpisodeOutcome(True, 7, 7)])
        assert out.spl == 1.0

    def test_mixed_episodes(self):
        out = spl([EpisodeOutcome(True, 10, 5), EpisodeOutcome(False, 3, 5)])
        assert abs(out.spl - 0.25) <= 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            spl([])

    def test_invalid_optimal_len_rejected(self):
        with pytest.raises(ValueError):
            EpisodeOutcome(True, 5, 0)


class TestOptimalPathLength:
    @given(st.integers(0, 10**4))
    @settings(max_examples=30, deadline=None)
    def test_matches_bfs_shortest_path(self, seed):
        level = generate_level("gapworld", seed)
        # independent oracle: breadth-first search on the transition graph
        goal = GAPWORLD_LENGTH - 1
        dist = {0: 0}
        frontier = [0]
        while frontier:
            nxt = []
            for s in frontier:
                for a in range(level.spec.n_actions):
                    s2 = int(np.argmax(level.spec.transition[s, a]))
                    if s2 <= goal and s2 not in dist:
                        dist[s2] = dist[s] + 1
                        nxt.append(s2)
            frontier = nxt
        assert optimal_path_length(level) == dist[goal]


class TestExportImport:
    @pytest.mark.parametrize("family", ["gapworld", "tabular"])
    def test_round_trip(self, family):
        level = generate_level(family, 17)
        again = import_level(export_level(level))
        assert again.seed == level.seed and again.archetype == level.archetype
        np.testing.assert_array_equal(again.spec.transition, level.spec.transition)

    def test_tampered_archetype_rejected(self):
        text = export_level(generate_level("gapworld", 6))
        with pytest.raises(ValueError):
            import_level(text.replace('"archetype": 0', '"archetype": 1'))
