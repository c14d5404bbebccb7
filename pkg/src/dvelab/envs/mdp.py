"""Tabular MDP data model and exact Bellman solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


@dataclass(frozen=True)
class MdpSpec:
    """A single scene's MDP: dense transition/reward tensors plus discount.

    transition[s, a, s'] is a probability; terminal states self-loop with
    zero reward.  Immutable after construction.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray  # [S, A, S]
    reward: np.ndarray      # [S, A, S]
    gamma: float
    terminal: frozenset[int] = field(default_factory=frozenset)
    start_dist: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        r = np.asarray(self.reward, dtype=np.float64)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "reward", r)
        if t.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition shape {t.shape} != (S, A, S)")
        if r.shape != t.shape:
            raise ValueError(f"reward shape {r.shape} != transition shape {t.shape}")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma {self.gamma} outside [0, 1)")
        rowsums = t.sum(axis=2)
        if np.max(np.abs(rowsums - 1.0)) > PROB_TOL:
            raise ValueError("transition rows must sum to 1")
        for s in self.terminal:
            if abs(t[s, :, s].min() - 1.0) > PROB_TOL or np.max(np.abs(r[s])) > 0:
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        if self.start_dist is None:
            d = np.zeros(self.n_states)
            d[0] = 1.0
            object.__setattr__(self, "start_dist", d)
        else:
            d = np.asarray(self.start_dist, dtype=np.float64)
            if abs(d.sum() - 1.0) > PROB_TOL:
                raise ValueError("start_dist must sum to 1")
            object.__setattr__(self, "start_dist", d)
        t.setflags(write=False)
        r.setflags(write=False)
        self.start_dist.setflags(write=False)


def _check_policy(spec: MdpSpec, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (spec.n_states, spec.n_actions):
        raise ValueError(f"policy shape {policy.shape} != (S, A)")
    if np.min(policy) < -PROB_TOL or np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("policy rows must be probability vectors")
    return policy


def _nonterminal_mask(spec: MdpSpec) -> np.ndarray:
    mask = np.ones(spec.n_states, dtype=bool)
    for s in spec.terminal:
        mask[s] = False
    return mask


def solve_value(
    spec: MdpSpec,
    policy: np.ndarray,
    method: str = "iterative",
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Exact policy evaluation V^pi with V(terminal) = 0.

    method 'iterative' runs Bellman backups to the residual tolerance;
    'linear' solves (I - gamma P_pi) V = r_pi directly.
    """
    policy = _check_policy(spec, policy)
    p_pi = np.einsum("sa,sat->st", policy, spec.transition)
    r_pi = np.einsum("sa,sat,sat->s", policy, spec.transition, spec.reward)
    live = _nonterminal_mask(spec)
    p_pi = p_pi * live[:, None]  # terminal rows pinned at V = 0
    r_pi = r_pi * live
    if method == "linear":
        v = np.linalg.solve(np.eye(spec.n_states) - spec.gamma * p_pi, r_pi)
        return v * live
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    v = np.zeros(spec.n_states)
    for _ in range(max_iter):
        v_new = r_pi + spec.gamma * (p_pi @ v)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new * live
        v = v_new
    raise RuntimeError(f"solve_value: no convergence in {max_iter} iterations")


def solve_q(spec: MdpSpec, policy: np.ndarray, **kwargs) -> np.ndarray:
    """Q(s, a) = sum_s' P [r + gamma V^pi(s')], zero at terminal states."""
    v = solve_value(spec, policy, **kwargs)
    q = np.einsum("sat,sat->sa", spec.transition, spec.reward) + \
        spec.gamma * np.einsum("sat,t->sa", spec.transition, v)
    return q * _nonterminal_mask(spec)[:, None]


def occupancy(spec: MdpSpec, policy: np.ndarray, tol: float = 1e-10,
              max_iter: int = 100_000) -> np.ndarray:
    """Normalized discounted state-visitation frequencies under the policy.

    d = (1 - gamma) * sum_t gamma^t P(s_t = s), by power iteration on the
    policy-induced chain; terminal states absorb no weight past entry.
    """
    policy = _check_policy(spec, policy)
    p_pi = np.einsum("sa,sat->st", policy, spec.transition)
    d = spec.start_dist.copy()
    total = spec.start_dist.copy()
    factor = spec.gamma
    for _ in range(max_iter):
        d = d @ p_pi
        total = total + factor * d
        if factor * np.max(d) < tol:
            break
        factor *= spec.gamma
    return total * (1.0 - spec.gamma) / ((1.0 - spec.gamma) * total.sum())
