"""Seeded level families: dense random tabular MDPs and the gapworld grid.

Generation is a pure function of (family, seed); identical inputs yield
bit-identical specs.  Both families materialize a full MdpSpec, so the exact
Bellman solvers double as value oracles for every level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import MdpSpec

GAPWORLD_LENGTH = 24
GAPWORLD_GAMMA = 0.99
GAPWORLD_WINDOW_RADIUS = 3
GAPWORLD_STEP_REWARD = -0.1
GAPWORLD_GOAL_REWARD = 10.0
GAPWORLD_HORIZON = 100
GAPWORLD_ACTIONS = 2  # walk (+1), jump (+2)
GAP_DENSITY = {"sparse": 0.1, "dense": 0.3}

TABULAR_STATES = 8
TABULAR_ACTIONS = 3
TABULAR_GAMMA = 0.9

ARCHETYPE_SPARSE = 0
ARCHETYPE_DENSE = 1


@dataclass(frozen=True)
class LevelHandle:
    family: str
    seed: int
    archetype: int
    spec: MdpSpec
    gaps: np.ndarray | None = None  # gapworld cell hazards, None for tabular

    @property
    def obs_dim(self) -> int:
        if self.family == "gapworld":
            return 2 * GAPWORLD_WINDOW_RADIUS + 2
        return self.spec.n_states


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    next_state: int = -1

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("Transition: non-finite reward")


@dataclass
class EpisodeTrace:
    level: LevelHandle
    transitions: list[Transition]
    total_reward: float = 0.0        # discounted at the level's gamma
    undiscounted_reward: float = 0.0
    length: int = 0

    @classmethod
    def from_transitions(cls, level: LevelHandle, transitions: list[Transition]):
        rewards = np.array([t.reward for t in transitions])
        discounts = level.spec.gamma ** np.arange(len(rewards))
        return cls(level, transitions,
                   total_reward=float((rewards * discounts).sum()),
                   undiscounted_reward=float(rewards.sum()),
                   length=len(transitions))


def generate_level(family: str, seed: int) -> LevelHandle:
    if family == "gapworld":
        return _generate_gapworld(seed)
    if family == "tabular":
        return _generate_tabular(seed)
    raise ValueError(f"unknown level family {family!r}")


def _generate_gapworld(seed: int) -> LevelHandle:
    archetype = ARCHETYPE_SPARSE if seed % 2 == 0 else ARCHETYPE_DENSE
    density = GAP_DENSITY["sparse" if archetype == ARCHETYPE_SPARSE else "dense"]
    rng = np.random.default_rng(seed)
    L = GAPWORLD_LENGTH
    gaps = np.zeros(L, dtype=bool)
    for c in range(2, L - 1):
        # no two adjacent gaps, so walk/jump always suffices
        if not gaps[c - 1] and rng.random() < density:
            gaps[c] = True

    goal = L - 1
    dead = L
    n_states = L + 1
    t = np.zeros((n_states, GAPWORLD_ACTIONS, n_states))
    r = np.zeros_like(t)
    for s in range(L):
        if s == goal:
            t[s, :, s] = 1.0
            continue
        for a in range(GAPWORLD_ACTIONS):
            target = min(s + a + 1, goal)
            if gaps[target]:
                t[s, a, dead] = 1.0
                # falling terminates the episode with zero reward
            else:
                t[s, a, target] = 1.0
                r[s, a, target] = (
                    GAPWORLD_GOAL_REWARD if target == goal else GAPWORLD_STEP_REWARD
                )
    t[dead, :, dead] = 1.0
    start = np.zeros(n_states)
    start[0] = 1.0
    spec = MdpSpec(n_states, GAPWORLD_ACTIONS, t, r, GAPWORLD_GAMMA,
                   terminal=frozenset({goal, dead}), start_dist=start)
    gaps.setflags(write=False)
    return LevelHandle("gapworld", seed, archetype, spec, gaps=gaps)


def _generate_tabular(seed: int) -> LevelHandle:
    rng = np.random.default_rng(seed)
    S, A = TABULAR_STATES, TABULAR_ACTIONS
    t = rng.dirichlet(np.ones(S), size=(S, A))
    r = rng.uniform(-1.0, 1.0, size=(S, A, S))
    start = np.full(S, 1.0 / S)
    spec = MdpSpec(S, A, t, r, TABULAR_GAMMA, start_dist=start)
    return LevelHandle("tabular", seed, 0, spec)


def observation(level: LevelHandle, state: int) -> np.ndarray:
    """Fixed-width observation, identical dimensionality across level seeds."""
    if level.family == "tabular":
        obs = np.zeros(level.spec.n_states)
        obs[state] = 1.0
        return obs
    L = GAPWORLD_LENGTH
    cell = min(state, L - 1)  # the dead state reuses the last cell's window
    rad = GAPWORLD_WINDOW_RADIUS
    window = np.ones(2 * rad + 1)  # out-of-range reads as hazard
    for off in range(-rad, rad + 1):
        c = cell + off
        if 0 <= c < L:
            window[off + rad] = 1.0 if level.gaps[c] else 0.0
    return np.concatenate([window, [cell / (L - 1)]])


def step(level: LevelHandle, state: int, action: int,
         rng: np.random.Generator) -> Transition:
    spec = level.spec
    if not (0 <= state < spec.n_states and 0 <= action < spec.n_actions):
        raise ValueError(f"invalid state/action ({state}, {action})")
    if state in spec.terminal:
        raise ValueError(f"cannot step terminal state {state}")
    row = spec.transition[state, action]
    next_state = int(np.searchsorted(np.cumsum(row), rng.random()))
    next_state = min(next_state, spec.n_states - 1)
    reward = float(spec.reward[state, action, next_state])
    done = next_state in spec.terminal
    return Transition(observation(level, state), action, reward,
                      observation(level, next_state), done, next_state=next_state)


def is_success(level: LevelHandle, trace: EpisodeTrace) -> bool:
    """Gapworld success means reaching the goal cell."""
    if level.family != "gapworld" or not trace.transitions:
        return False
    return trace.transitions[-1].next_state == GAPWORLD_LENGTH - 1


def optimal_path_length(level: LevelHandle) -> int:
    """Fewest steps to the gapworld goal (greedy jump over each gap)."""
    if level.family != "gapworld":
        raise ValueError("optimal_path_length is defined for gapworld only")
    goal = GAPWORLD_LENGTH - 1
    pos, steps = 0, 0
    while pos < goal:
        target = min(pos + 2, goal)
        if level.gaps[target]:
            target = pos + 1  # no two gaps are adjacent, so pos+1 is safe
        pos, steps = target, steps + 1
    return steps


def export_level(level: LevelHandle) -> str:
    """Structured-text round trip; tabular arrays are stored in full."""
    doc: dict = {"family": level.family, "seed": level.seed,
                 "archetype": level.archetype}
    if level.family == "tabular":
        doc["transition"] = level.spec.transition.tolist()
        doc["reward"] = level.spec.reward.tolist()
        doc["gamma"] = level.spec.gamma
    return json.dumps(doc, indent=2)


def import_level(text: str) -> LevelHandle:
    doc = json.loads(text)
    level = generate_level(doc["family"], doc["seed"])
    if level.archetype != doc["archetype"]:
        raise ValueError("archetype mismatch in imported level")
    if level.family == "tabular":
        if not (np.array_equal(level.spec.transition, np.array(doc["transition"]))
                and np.array_equal(level.spec.reward, np.array(doc["reward"]))):
            raise ValueError("stored arrays disagree with regenerated level")
    return level
