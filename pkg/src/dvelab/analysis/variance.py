"""Exact-enumeration machinery: variance decomposition and baseline lemmas.

All quantities are computed on tabular level sets by enumerating every
(level, state, action) triple, weighting states by discounted visitation
occupancy and levels uniformly.  The policy is an explicit softmax table
so score-function gradients are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs import LevelHandle, occupancy, solve_q, solve_value


@dataclass
class VarianceDecomposition:
    total: float
    minimal: float
    prediction_error: float
    cross_term: float

    @property
    def identity_residual(self) -> float:
        return abs(self.total - (self.minimal + self.prediction_error
                                 + self.cross_term))


def softmax_policy(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _enumeration_weights(level_set: list[LevelHandle],
                         policy: np.ndarray) -> np.ndarray:
    """w[m, s]: uniform over levels times discounted occupancy within each."""
    w = np.stack([occupancy(level.spec, policy) for level in level_set])
    return w / len(level_set)


def _require_tabular(level_set: list[LevelHandle]) -> None:
    if any(level.family != "tabular" for level in level_set):
        raise ValueError("exact enumeration requires tabular levels")


def exact_policy_gradient(level_set: list[LevelHandle], theta: np.ndarray,
                          psi: np.ndarray) -> np.ndarray:
    """Enumerated gradient of the expected objective for a softmax table policy.

    psi[m, s, a] is the per-triple weight (e.g. Q or Q minus a baseline);
    returns d/d theta[s', a'] of E[(grad log pi) psi], shape like theta.
    """
    policy = softmax_policy(theta)
    w = _enumeration_weights(level_set, policy)
    # sum_a pi(a|s) psi(m,s,a), the per-(m,s) mean weight
    mean_psi = np.einsum("sa,msa->ms", policy, psi)
    # grad wrt theta[s,a'] of log pi(a|s) = 1[a=a'] - pi(a'|s)
    grad = np.einsum("ms,sa,msa->sa", w, policy, psi) \
        - np.einsum("ms,ms,sa->sa", w, mean_psi, policy)
    return grad


def variance_decomposition(level_set: list[LevelHandle], theta: np.ndarray,
                           critic: np.ndarray) -> VarianceDecomposition:
    """Split E[(Q - V_hat)^2] into floor, prediction error and cross term.

    critic[m, s] is the predicted value for state s on level m; the floor
    uses the exact per-level V, and the cross term vanishes analytically
    whenever the predictor is a function of (s, level) only.
    """
    _require_tabular(level_set)
    policy = softmax_policy(theta)
    w = _enumeration_weights(level_set, policy)
    q = np.stack([solve_q(level.spec, policy, method="linear") for level in level_set])
    v = np.stack([solve_value(level.spec, policy, method="linear")
                  for level in level_set])
    critic = np.asarray(critic, dtype=np.float64)
    wpa = w[:, :, None] * policy[None]          # joint weight over (m, s, a)
    total = float(np.sum(wpa * (q - critic[:, :, None]) ** 2))
    minimal = float(np.sum(wpa * (q - v[:, :, None]) ** 2))
    prediction = float(np.sum(w * (v - critic) ** 2))
    cross = float(2.0 * np.sum(wpa * (q - v[:, :, None])
                               * (v - critic)[:, :, None]))
    return VarianceDecomposition(total, minimal, prediction, cross)


def lemma1_check(level_set: list[LevelHandle], theta: np.ndarray,
                 baseline: np.ndarray, tol: float = 1e-9) -> dict:
    """Gradient invariance to any per-(state, level) baseline.

    Computes the exact policy gradient once with psi = Q and once with
    psi = Q - baseline; passes iff the max absolute difference is <= tol.
    """
    _require_tabular(level_set)
    policy = softmax_policy(theta)
    q = np.stack([solve_q(level.spec, policy, method="linear") for level in level_set])
    baseline = np.asarray(baseline, dtype=np.float64)
    grad_q = exact_policy_gradient(level_set, theta, q)
    grad_psi = exact_policy_gradient(level_set, theta,
                                     q - baseline[:, :, None])
    max_diff = float(np.max(np.abs(grad_q - grad_psi)))
    return {"max_gradient_diff": max_diff, "tol": tol, "passed": max_diff <= tol}


def expected_psi_squared(level_set: list[LevelHandle], theta: np.ndarray,
                         baseline: np.ndarray) -> float:
    """Exact E_{s,a,M}[(Q - f)^2] for a per-(state, level) baseline f."""
    _require_tabular(level_set)
    policy = softmax_policy(theta)
    w = _enumeration_weights(level_set, policy)
    q = np.stack([solve_q(level.spec, policy, method="linear") for level in level_set])
    wpa = w[:, :, None] * policy[None]
    return float(np.sum(wpa * (q - np.asarray(baseline)[:, :, None]) ** 2))


LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25)


def lemma2_sweep(level_set: list[LevelHandle], theta: np.ndarray,
                 lambdas: tuple[float, ...] = LAMBDA_GRID) -> dict:
    """E[psi^2] over baselines interpolating level-mean and per-level values.

    f_lambda = lambda * V(s, M) + (1 - lambda) * Vbar(s); the objective is
    an exact quadratic in lambda with its vertex at the per-level values.
    """
    _require_tabular(level_set)
    policy = softmax_policy(theta)
    v = np.stack([solve_value(level.spec, policy, method="linear")
                  for level in level_set])
    v_bar = v.mean(axis=0)
    values = []
    for lam in lambdas:
        baseline = lam * v + (1.0 - lam) * v_bar[None]
        values.append(expected_psi_squared(level_set, theta, baseline))
    values = np.array(values)
    second_diff = np.diff(values, 2)
    return {
        "lambdas": list(lambdas),
        "psi_squared": values.tolist(),
        "minimizer": float(lambdas[int(np.argmin(values))]),
        "second_differences": second_diff.tolist(),
        "max_second_diff_spread": float(np.max(np.abs(second_diff - second_diff[0])))
        if len(second_diff) else 0.0,
    }
