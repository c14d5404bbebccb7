"""Policy evaluation over a level set: reward, success, SPL, prediction error."""

from __future__ import annotations

import numpy as np

from ..envs import levels as lv
from ..envs import solve_value
from ..envs.metrics import EpisodeOutcome, EvalMetrics, spl
from ..models import ActorCritic


def run_episode(net: ActorCritic, level: lv.LevelHandle,
                rng: np.random.Generator, greedy: bool = False,
                horizon: int = lv.GAPWORLD_HORIZON):
    """One episode under the recurrent policy.

    Returns (trace, success, steps) where steps holds per-step tuples
    (state, h, c, probs, value, alpha); alpha is None for non-dynamic heads.
    """
    H = net.config.lstm_hidden
    h = np.zeros((1, H))
    c = np.zeros((1, H))
    state = int(np.searchsorted(np.cumsum(level.spec.start_dist), rng.random()))
    transitions = []
    steps = []
    for _ in range(horizon):
        obs = lv.observation(level, state)
        log_probs, value, alpha, new_h, new_c = net.forward_np(obs[None], h, c)
        probs = np.exp(log_probs[0])
        if greedy:
            action = int(np.argmax(probs))
        else:
            action = min(int(np.searchsorted(np.cumsum(probs), rng.random())),
                         net.config.n_actions - 1)
        tr = lv.step(level, state, action, rng)
        steps.append((state, h[0].copy(), c[0].copy(), probs, float(value[0]),
                      alpha[0].copy() if alpha is not None else None))
        transitions.append(tr)
        h, c = new_h, new_c
        state = tr.next_state
        if tr.done:
            break
    trace = lv.EpisodeTrace.from_transitions(level, transitions)
    return trace, lv.is_success(level, trace), steps


def evaluate(net: ActorCritic, level_set: list[lv.LevelHandle],
             n_episodes: int, seed: int, greedy: bool = False) -> EvalMetrics:
    """Fixed-seed evaluation; SPL is reported for gapworld levels only."""
    if n_episodes < 1:
        raise ValueError("evaluate: need >= 1 episode")
    rng = np.random.default_rng(seed)
    outcomes = []
    for i in range(n_episodes):
        level = level_set[rng.integers(len(level_set))]
        trace, success, _ = run_episode(net, level, rng, greedy=greedy)
        opt_len = (lv.optimal_path_length(level)
                   if level.family == "gapworld" else 1)
        outcomes.append(EpisodeOutcome(
            success=success,
            path_len=max(trace.length, 1),
            optimal_len=opt_len,
            total_reward=trace.undiscounted_reward,
        ))
    return spl(outcomes)


def prediction_error(net: ActorCritic, level_set: list[lv.LevelHandle],
                     n_episodes: int, seed: int) -> float:
    """Mean squared gap between the critic and oracle per-level values.

    The recurrent policy is tabularized per level by averaging its action
    probabilities over visits to each state, then evaluated exactly by the
    Bellman solver; the error averages (V_oracle(s, M) - V_hat)^2 over all
    visited steps.
    """
    rng = np.random.default_rng(seed)
    per_level: dict[int, dict] = {}
    for i in range(n_episodes):
        level = level_set[rng.integers(len(level_set))]
        _, _, steps = run_episode(net, level, rng)
        rec = per_level.setdefault(level.seed, {
            "level": level,
            "probs_sum": np.zeros((level.spec.n_states, level.spec.n_actions)),
            "visits": np.zeros(level.spec.n_states),
            "samples": [],  # (state, predicted value)
        })
        for state, _, _, probs, value, _ in steps:
            rec["probs_sum"][state] += probs
            rec["visits"][state] += 1
            rec["samples"].append((state, value))

    errors = []
    for rec in per_level.values():
        spec = rec["level"].spec
        policy = np.full((spec.n_states, spec.n_actions), 1.0 / spec.n_actions)
        visited = rec["visits"] > 0
        policy[visited] = rec["probs_sum"][visited] / rec["visits"][visited, None]
        v = solve_value(spec, policy, method="linear")
        errors.extend((v[s] - pred) ** 2 for s, pred in rec["samples"])
    return float(np.mean(errors)) if errors else float("nan")
