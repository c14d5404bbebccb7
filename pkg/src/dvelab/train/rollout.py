"""Rollout collection across levels and advantage estimation.

Workers are logical: they run in lockstep through one batched forward pass
per step, but every worker owns its rng, level draw, and recurrent state, so
the result is bit-identical to running them one at a time and merging in
worker order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs import levels as lv
from ..models import ActorCritic


@dataclass
class RolloutBatch:
    """Flat per-step arrays, worker-major; shape [n_workers * steps_per_worker]."""

    n_workers: int
    steps_per_worker: int
    obs: np.ndarray            # [T, D]
    action: np.ndarray         # [T] int
    log_probs_old: np.ndarray  # [T, A] full distribution at collection time
    reward: np.ndarray         # [T]
    value_pred: np.ndarray     # [T]
    done: np.ndarray           # [T] bool, terminal absorption
    truncated: np.ndarray      # [T] bool, horizon cap or segment end
    bootstrap_value: np.ndarray  # [T], critic estimate past a truncation, else 0
    level_id: np.ndarray       # [T] int, seed of the level in play
    h0: np.ndarray             # [T, H] pre-step recurrent state
    c0: np.ndarray             # [T, H]
    alpha: np.ndarray | None = None   # [T, N_b] for the dynamic head
    episode_rewards: list[float] = field(default_factory=list)  # undiscounted
    episode_successes: list[bool] = field(default_factory=list)
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None       # pre-normalization
    advantages_norm: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def log_prob_old(self) -> np.ndarray:
        return np.take_along_axis(
            self.log_probs_old, self.action[:, None], axis=1)[:, 0]


def collect_rollouts(
    net: ActorCritic,
    level_set: list[lv.LevelHandle],
    n_workers: int,
    steps_per_worker: int,
    rng_seeds: list[int],
    horizon: int = lv.GAPWORLD_HORIZON,
) -> RolloutBatch:
    """Run the recurrent policy for a fixed step budget per worker."""
    if not level_set:
        raise ValueError("collect_rollouts: empty level set")
    if n_workers < 1 or steps_per_worker < 1:
        raise ValueError("collect_rollouts: need >= 1 worker and >= 1 step")
    if len(rng_seeds) != n_workers:
        raise ValueError("collect_rollouts: one rng seed per worker")

    H = net.config.lstm_hidden
    rngs = [np.random.default_rng(s) for s in rng_seeds]
    cur_level = [None] * n_workers
    cur_state = np.zeros(n_workers, dtype=int)
    ep_steps = np.zeros(n_workers, dtype=int)
    ep_reward = np.zeros(n_workers)
    h = np.zeros((n_workers, H))
    c = np.zeros((n_workers, H))

    def reset(w: int) -> None:
        level = level_set[rngs[w].integers(len(level_set))]
        cur_level[w] = level
        start = level.spec.start_dist
        cur_state[w] = int(np.searchsorted(np.cumsum(start), rngs[w].random()))
        ep_steps[w] = 0
        ep_reward[w] = 0.0
        h[w] = 0.0
        c[w] = 0.0

    for w in range(n_workers):
        reset(w)

    T = n_workers * steps_per_worker
    D = level_set[0].obs_dim
    A = net.config.n_actions
    out = {
        "obs": np.zeros((n_workers, steps_per_worker, D)),
        "action": np.zeros((n_workers, steps_per_worker), dtype=int),
        "log_probs_old": np.zeros((n_workers, steps_per_worker, A)),
        "reward": np.zeros((n_workers, steps_per_worker)),
        "value_pred": np.zeros((n_workers, steps_per_worker)),
        "done": np.zeros((n_workers, steps_per_worker), dtype=bool),
        "truncated": np.zeros((n_workers, steps_per_worker), dtype=bool),
        "bootstrap_value": np.zeros((n_workers, steps_per_worker)),
        "level_id": np.zeros((n_workers, steps_per_worker), dtype=np.int64),
        "h0": np.zeros((n_workers, steps_per_worker, H)),
        "c0": np.zeros((n_workers, steps_per_worker, H)),
    }
    dynamic = net.config.head == "dynamic"
    alphas = (np.zeros((n_workers, steps_per_worker, net.config.n_basis))
              if dynamic else None)
    episode_rewards: list[float] = []
    episode_successes: list[bool] = []

    for t in range(steps_per_worker):
        obs = np.stack([lv.observation(cur_level[w], cur_state[w])
                        for w in range(n_workers)])
        log_probs, value, alpha, new_h, new_c = net.forward_np(obs, h, c)
        out["obs"][:, t] = obs
        out["h0"][:, t] = h
        out["c0"][:, t] = c
        out["value_pred"][:, t] = value
        out["log_probs_old"][:, t] = log_probs
        if dynamic:
            alphas[:, t] = alpha
        h, c = new_h, new_c
        for w in range(n_workers):
            probs = np.exp(log_probs[w])
            action = int(np.searchsorted(np.cumsum(probs), rngs[w].random()))
            action = min(action, A - 1)
            tr = lv.step(cur_level[w], cur_state[w], action, rngs[w])
            out["action"][w, t] = action
            out["reward"][w, t] = tr.reward
            out["level_id"][w, t] = cur_level[w].seed
            ep_reward[w] += tr.reward
            ep_steps[w] += 1
            if tr.done:
                out["done"][w, t] = True
                episode_rewards.append(ep_reward[w])
                episode_successes.append(
                    tr.next_state == lv.GAPWORLD_LENGTH - 1
                    if cur_level[w].family == "gapworld" else False)
                reset(w)
            elif ep_steps[w] >= horizon or t == steps_per_worker - 1:
                # horizon cap or segment end: bootstrap from the critic
                out["truncated"][w, t] = True
                next_obs = lv.observation(cur_level[w], tr.next_state)
                _, boot, _, _, _ = net.forward_np(
                    next_obs[None], h[w][None], c[w][None])
                out["bootstrap_value"][w, t] = boot[0]
                if ep_steps[w] >= horizon:
                    episode_rewards.append(ep_reward[w])
                    episode_successes.append(False)
                    reset(w)
            else:
                cur_state[w] = tr.next_state

    batch = RolloutBatch(
        n_workers=n_workers,
        steps_per_worker=steps_per_worker,
        obs=out["obs"].reshape(T, D),
        action=out["action"].reshape(T),
        log_probs_old=out["log_probs_old"].reshape(T, A),
        reward=out["reward"].reshape(T),
        value_pred=out["value_pred"].reshape(T),
        done=out["done"].reshape(T),
        truncated=out["truncated"].reshape(T),
        bootstrap_value=out["bootstrap_value"].reshape(T),
        level_id=out["level_id"].reshape(T),
        h0=out["h0"].reshape(T, H),
        c0=out["c0"].reshape(T, H),
        alpha=alphas.reshape(T, net.config.n_basis) if dynamic else None,
        episode_rewards=episode_rewards,
        episode_successes=episode_successes,
    )
    return batch


def compute_returns_advantages(batch: RolloutBatch, gamma: float,
                               lam: float) -> RolloutBatch:
    """GAE(lambda) per worker stream; lambda=1 is Monte Carlo minus baseline."""
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1]")
    W, S = batch.n_workers, batch.steps_per_worker
    reward = batch.reward.reshape(W, S)
    value = batch.value_pred.reshape(W, S)
    done = batch.done.reshape(W, S)
    trunc = batch.truncated.reshape(W, S)
    boot = batch.bootstrap_value.reshape(W, S)
    adv = np.zeros((W, S))
    carry = np.zeros(W)
    for t in range(S - 1, -1, -1):
        if t == S - 1:
            v_next = np.where(done[:, t], 0.0, boot[:, t])
        else:
            v_next = np.where(done[:, t], 0.0,
                              np.where(trunc[:, t], boot[:, t], value[:, t + 1]))
        delta = reward[:, t] + gamma * v_next - value[:, t]
        boundary = done[:, t] | trunc[:, t]
        carry = delta + gamma * lam * np.where(boundary, 0.0, carry)
        adv[:, t] = carry
    batch.advantages = adv.reshape(-1)
    batch.returns = batch.advantages + batch.value_pred
    std = batch.advantages.std()
    batch.advantages_norm = (batch.advantages - batch.advantages.mean()) / (std + 1e-8)
    return batch
