"""PPO and A2C updates plus the per-update diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..diffcore import Node
from ..models import ActorCritic
from .rollout import RolloutBatch

POLICY_PARAM_PREFIXES = ("enc.", "lstm.", "actor.")


class NonFiniteLossError(RuntimeError):
    """An update produced a non-finite loss; the update is aborted."""


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    kl_old_new: float
    sample_variance_psi2: float
    kappa_estimate: float
    clip_fraction: float

    def __post_init__(self):
        if self.kl_old_new < -1e-9:
            raise ValueError("kl_old_new must be nonnegative")
        if self.sample_variance_psi2 < 0 or self.kappa_estimate < 0:
            raise ValueError("variance diagnostics must be nonnegative")


def _forward_minibatch(net: ActorCritic, batch: RolloutBatch, idx: np.ndarray):
    obs = Node(batch.obs[idx])
    state = dc.LstmState(Node(batch.h0[idx]), Node(batch.c0[idx]))
    policy, critic, _ = net.forward(obs, state)
    return policy, critic


def _losses(net, batch, idx, advantages, clip_eps):
    """Clipped-ratio surrogate (A2C when clip_eps is None), value MSE, entropy."""
    policy, critic = _forward_minibatch(net, batch, idx)
    logp_taken = dc.take_last(policy.log_probs, batch.action[idx])
    adv = Node(advantages)
    if clip_eps is None:
        policy_loss = dc.mul_const(dc.mean_all(dc.mul(logp_taken, adv)), -1.0)
        clip_frac = 0.0
    else:
        ratio = dc.exp(dc.sub(logp_taken, Node(batch.log_prob_old[idx])))
        unclipped = dc.mul(ratio, adv)
        clipped = dc.mul(dc.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
        policy_loss = dc.mul_const(dc.mean_all(dc.minimum(unclipped, clipped)), -1.0)
        clip_frac = float(np.mean(np.abs(ratio.value - 1.0) > clip_eps))
    value_loss = dc.mean_all(dc.square(dc.sub(critic.value, Node(batch.returns[idx]))))
    probs = dc.exp(policy.log_probs)
    entropy = dc.mul_const(
        dc.mean_all(dc.sum_last(dc.mul(probs, policy.log_probs))), -1.0)
    return policy_loss, value_loss, entropy, clip_frac


def _apply(net, opt, policy_loss, value_loss, entropy, value_coef, entropy_coef):
    loss = dc.add(
        dc.add(policy_loss, dc.mul_const(value_loss, value_coef)),
        dc.mul_const(entropy, -entropy_coef))
    if not np.isfinite(loss.value):
        raise NonFiniteLossError(f"non-finite loss {loss.value}")
    opt.zero_grad()
    dc.backward(loss)
    opt.step()


def ppo_update(
    net: ActorCritic,
    opt: dc.Adam,
    batch: RolloutBatch,
    clip_eps: float = 0.2,
    epochs: int = 3,
    n_minibatches: int = 8,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
    normalize_advantages: bool = True,
    rng: np.random.Generator | None = None,
    kappa_samples: int = 64,
) -> UpdateStats:
    """Clipped-surrogate PPO over shuffled minibatches; stats from the last epoch."""
    if clip_eps <= 0:
        raise ValueError("clip_eps must be positive")
    if batch.advantages is None:
        raise ValueError("batch has no advantages; run compute_returns_advantages")
    rng = rng or np.random.default_rng(0)
    T = batch.size
    mb_size = T // n_minibatches
    psi2 = sample_variance_psi2(batch)
    last_epoch_stats = []
    for epoch in range(epochs):
        perm = rng.permutation(T)
        for m in range(n_minibatches):
            idx = perm[m * mb_size:(m + 1) * mb_size]
            adv = batch.advantages[idx]
            if normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            pl, vl, ent, cf = _losses(net, batch, idx, adv, clip_eps)
            _apply(net, opt, pl, vl, ent, value_coef, entropy_coef)
            if epoch == epochs - 1:
                last_epoch_stats.append(
                    (float(pl.value), float(vl.value), float(ent.value), cf))
    stats = np.mean(last_epoch_stats, axis=0)
    return UpdateStats(
        policy_loss=stats[0],
        value_loss=stats[1],
        entropy=stats[2],
        kl_old_new=kl_old_new(batch, net),
        sample_variance_psi2=psi2,
        kappa_estimate=kappa_estimate(batch, net, n_samples=kappa_samples),
        clip_fraction=stats[3],
    )


def a2c_update(
    net: ActorCritic,
    opt: dc.Adam,
    batch: RolloutBatch,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
    normalize_advantages: bool = True,
    kappa_samples: int = 64,
) -> UpdateStats:
    """Single-pass vanilla policy gradient with value and entropy terms."""
    if batch.advantages is None:
        raise ValueError("batch has no advantages; run compute_returns_advantages")
    psi2 = sample_variance_psi2(batch)
    idx = np.arange(batch.size)
    adv = batch.advantages
    if normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    pl, vl, ent, _ = _losses(net, batch, idx, adv, clip_eps=None)
    _apply(net, opt, pl, vl, ent, value_coef, entropy_coef)
    return UpdateStats(
        policy_loss=float(pl.value),
        value_loss=float(vl.value),
        entropy=float(ent.value),
        kl_old_new=kl_old_new(batch, net),
        sample_variance_psi2=psi2,
        kappa_estimate=kappa_estimate(batch, net, n_samples=kappa_samples),
        clip_fraction=0.0,
    )


def kl_old_new(batch: RolloutBatch, net: ActorCritic) -> float:
    """Mean KL(pi_old || pi_new) over batch states, from stored old distributions."""
    lp_new, _, _, _, _ = net.forward_np(batch.obs, batch.h0, batch.c0)
    p_old = np.exp(batch.log_probs_old)
    kl = float(np.mean((p_old * (batch.log_probs_old - lp_new)).sum(axis=-1)))
    return max(kl, 0.0)


def sample_variance_psi2(batch: RolloutBatch) -> float:
    """Mean squared unnormalized advantage, the empirical E[psi^2]."""
    if batch.advantages is None:
        raise ValueError("batch has no advantages")
    return float(np.mean(batch.advantages ** 2))


def kappa_estimate(batch: RolloutBatch, net: ActorCritic,
                   n_samples: int = 64) -> float:
    """Mean squared norm of per-sample score gradients w.r.t. policy params."""
    T = batch.size
    idx = np.unique(np.linspace(0, T - 1, min(n_samples, T)).astype(int))
    policy_params = {k: p for k, p in net.params.items()
                     if k.startswith(POLICY_PARAM_PREFIXES)}
    total = 0.0
    for i in idx:
        for p in policy_params.values():
            p.zero_grad()
        obs = Node(batch.obs[i])
        state = dc.LstmState(Node(batch.h0[i]), Node(batch.c0[i]))
        policy, _, _ = net.forward(obs, state)
        logp = dc.take_last(policy.log_probs, np.asarray(batch.action[i]))
        dc.backward(logp)
        total += sum(float(np.sum(p.grad ** 2)) for p in policy_params.values())
    for p in policy_params.values():
        p.zero_grad()
    return total / len(idx)
