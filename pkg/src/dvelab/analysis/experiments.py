"""Multi-seed training experiments over varying level counts."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..config import RunConfig, seed_for
from ..envs import generate_level
from ..models import ActorCritic, NetConfig
from .. import diffcore as dc
from ..train.rollout import collect_rollouts, compute_returns_advantages
from ..train.update import a2c_update, ppo_update


@dataclass
class CurvePoint:
    x: float
    mean: float
    stderr: float
    n_seeds: int


def _short_run_variance(cfg: RunConfig, n_levels: int, master_seed: int) -> float:
    """Mean per-update sample variance of a short baseline training run."""
    levels = [generate_level(cfg.family, s) for s in range(n_levels)]
    net = ActorCritic(
        NetConfig(obs_dim=levels[0].obs_dim,
                  n_actions=levels[0].spec.n_actions,
                  encoder_hidden=cfg.encoder_hidden,
                  lstm_hidden=cfg.lstm_hidden,
                  head="baseline"),
        seed=seed_for(master_seed, "init"))
    opt = dc.Adam(net.params, lr=cfg.lr)
    batch_size = cfg.n_workers * cfg.steps_per_worker
    n_updates = max(1, -(-cfg.total_steps // batch_size))
    variances = []
    for u in range(n_updates):
        seeds = [seed_for(master_seed, f"rollout:{u}:{w}")
                 for w in range(cfg.n_workers)]
        batch = collect_rollouts(net, levels, cfg.n_workers,
                                 cfg.steps_per_worker, seeds,
                                 horizon=cfg.horizon)
        compute_returns_advantages(batch, cfg.resolved_gamma(), cfg.gae_lambda)
        if cfg.algorithm == "ppo":
            stats = ppo_update(
                net, opt, batch, clip_eps=cfg.clip_eps, epochs=cfg.epochs,
                n_minibatches=cfg.minibatches, value_coef=cfg.value_coef,
                entropy_coef=cfg.entropy_coef,
                normalize_advantages=cfg.normalize_advantages,
                rng=np.random.default_rng(seed_for(master_seed, f"ppo:{u}")),
                kappa_samples=8)
        else:
            stats = a2c_update(net, opt, batch, value_coef=cfg.value_coef,
                               entropy_coef=cfg.entropy_coef,
                               normalize_advantages=cfg.normalize_advantages,
                               kappa_samples=8)
        variances.append(stats.sample_variance_psi2)
    return float(np.mean(variances))


def variance_vs_levels(level_counts: list[int], cfg: RunConfig,
                       n_seeds: int = 3) -> list[CurvePoint]:
    """Sample-variance saturation curve over the number of training levels."""
    curve = []
    for count in level_counts:
        vals = [
            _short_run_variance(cfg, count,
                                seed_for(cfg.master_seed, f"varcurve:{count}:{s}"))
            for s in range(n_seeds)
        ]
        vals = np.array(vals)
        stderr = float(vals.std(ddof=1) / np.sqrt(n_seeds)) if n_seeds > 1 else 0.0
        curve.append(CurvePoint(x=float(count), mean=float(vals.mean()),
                                stderr=stderr, n_seeds=n_seeds))
    return curve
