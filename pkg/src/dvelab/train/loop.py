"""The training run loop: rollouts, updates, metrics, checkpoints, resume."""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ..config import RunConfig, emit_config, seed_for
from ..envs import generate_level
from ..models import ActorCritic, NetConfig, load_checkpoint, save_checkpoint
from .evaluate import evaluate
from .rollout import collect_rollouts, compute_returns_advantages
from .update import a2c_update, ppo_update

METRIC_COLUMNS = [
    "step", "mean_episode_reward", "policy_loss", "value_loss", "entropy",
    "kl_old_new", "sample_variance_psi2", "kappa_estimate", "clip_fraction",
    "mean_confusion",
]
EVAL_COLUMNS = ["step", "mean_total_reward", "success_rate", "spl"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class Trainer:
    def __init__(self, cfg: RunConfig, outdir: str | Path):
        cfg.validate()
        self.cfg = cfg
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        (self.outdir / "checkpoints").mkdir(exist_ok=True)
        self.levels = [generate_level(cfg.family, s)
                       for s in cfg.resolved_level_seeds()]
        net_config = NetConfig(
            obs_dim=self.levels[0].obs_dim,
            n_actions=self.levels[0].spec.n_actions,
            encoder_hidden=cfg.encoder_hidden,
            lstm_hidden=cfg.lstm_hidden,
            head=cfg.head,
            n_basis=cfg.n_basis,
        )
        self.net = ActorCritic(net_config, seed=seed_for(cfg.master_seed, "init"))
        self.opt = dc.Adam(self.net.params, lr=cfg.lr)
        batch_size = cfg.n_workers * cfg.steps_per_worker
        self.n_updates = max(1, -(-cfg.total_steps // batch_size))
        self.batch_size = batch_size
        self.start_update = 0

    @property
    def metrics_path(self) -> Path:
        return self.outdir / "metrics.csv"

    @property
    def eval_path(self) -> Path:
        return self.outdir / "eval.csv"

    def _ckpt_path(self, update: int) -> Path:
        return self.outdir / "checkpoints" / f"ckpt_{update:06d}.json"

    def _save_ckpt(self, update: int) -> None:
        adam = self.opt.state_dict()
        extra = {
            "update": update,
            "adam": {
                "t": adam["t"],
                "m": {k: v.tolist() for k, v in adam["m"].items()},
                "v": {k: v.tolist() for k, v in adam["v"].items()},
            },
            "run_config": emit_config(self.cfg),
        }
        path = self._ckpt_path(update)
        save_checkpoint(path, self.net, step=update * self.batch_size, extra=extra)
        latest = self.outdir / "checkpoints" / "latest.json"
        latest.write_text(path.read_text())

    def resume(self) -> None:
        latest = self.outdir / "checkpoints" / "latest.json"
        if not latest.exists():
            raise FileNotFoundError(f"no checkpoint to resume from in {self.outdir}")
        net, step, extra = load_checkpoint(latest)
        if net.config != self.net.config:
            raise ValueError("checkpoint config does not match run config")
        self.net.load_param_values(net.param_values())
        adam = extra["adam"]
        self.opt.load_state_dict({"t": adam["t"], "m": adam["m"], "v": adam["v"]})
        self.start_update = extra["update"]
        self._truncate_csv(self.metrics_path, step)
        self._truncate_csv(self.eval_path, step)

    def _truncate_csv(self, path: Path, max_step: int) -> None:
        if not path.exists():
            return
        lines = path.read_text().splitlines(keepends=True)
        kept = [lines[0]]
        for line in lines[1:]:
            if int(line.split(",", 1)[0]) <= max_step:
                kept.append(line)
        path.write_text("".join(kept))

    def run(self, resume: bool = False, on_update=None) -> dict:
        """Execute the run; on_update(trainer, update_index) is called after
        each optimizer update, e.g. to probe the net during training."""
        cfg = self.cfg
        if resume:
            self.resume()
        else:
            for path, cols in ((self.metrics_path, METRIC_COLUMNS),
                               (self.eval_path, EVAL_COLUMNS)):
                with open(path, "w", newline="") as fh:
                    fh.write(",".join(cols) + "\n")
        t0 = time.monotonic()
        last_ep_reward = float("nan")
        gamma = cfg.resolved_gamma()
        for u in range(self.start_update, self.n_updates):
            seeds = [seed_for(cfg.master_seed, f"rollout:{u}:{w}")
                     for w in range(cfg.n_workers)]
            batch = collect_rollouts(self.net, self.levels, cfg.n_workers,
                                     cfg.steps_per_worker, seeds,
                                     horizon=cfg.horizon)
            compute_returns_advantages(batch, gamma, cfg.gae_lambda)
            if cfg.algorithm == "ppo":
                stats = ppo_update(
                    self.net, self.opt, batch,
                    clip_eps=cfg.clip_eps, epochs=cfg.epochs,
                    n_minibatches=cfg.minibatches, value_coef=cfg.value_coef,
                    entropy_coef=cfg.entropy_coef,
                    normalize_advantages=cfg.normalize_advantages,
                    rng=np.random.default_rng(seed_for(cfg.master_seed, f"ppo:{u}")))
            else:
                stats = a2c_update(
                    self.net, self.opt, batch,
                    value_coef=cfg.value_coef, entropy_coef=cfg.entropy_coef,
                    normalize_advantages=cfg.normalize_advantages)
            if batch.episode_rewards:
                last_ep_reward = float(np.mean(batch.episode_rewards))
            mean_confusion = None
            if batch.alpha is not None:
                nb = batch.alpha.shape[1]
                mean_confusion = float(np.mean(
                    1.0 / (nb * np.sum(batch.alpha ** 2, axis=1))))
            step = (u + 1) * self.batch_size
            with open(self.metrics_path, "a", newline="") as fh:
                fh.write(",".join([
                    str(step), _fmt(last_ep_reward), _fmt(stats.policy_loss),
                    _fmt(stats.value_loss), _fmt(stats.entropy),
                    _fmt(stats.kl_old_new), _fmt(stats.sample_variance_psi2),
                    _fmt(stats.kappa_estimate), _fmt(stats.clip_fraction),
                    _fmt(mean_confusion)]) + "\n")
            if cfg.eval_every and (u + 1) % cfg.eval_every == 0:
                self._eval_row(step, u)
            if cfg.checkpoint_every and (u + 1) % cfg.checkpoint_every == 0:
                self._save_ckpt(u + 1)
            if on_update is not None:
                on_update(self, u)
        self._save_ckpt(self.n_updates)
        summary = self._summarize(time.monotonic() - t0)
        with open(self.outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
        return summary

    def _eval_row(self, step: int, update: int) -> None:
        metrics = evaluate(self.net, self.levels, self.cfg.eval_episodes,
                           seed=seed_for(self.cfg.master_seed, f"eval:{update}"))
        with open(self.eval_path, "a", newline="") as fh:
            fh.write(",".join([str(step), _fmt(metrics.mean_total_reward),
                               _fmt(metrics.success_rate),
                               _fmt(metrics.spl)]) + "\n")

    def _summarize(self, wall_clock: float) -> dict:
        rewards = []
        if self.eval_path.exists():
            lines = self.eval_path.read_text().splitlines()[1:]
            rewards = [float(line.split(",")[1]) for line in lines]
        return {
            "experiment": self.cfg.experiment,
            "updates": self.n_updates,
            "total_steps": self.n_updates * self.batch_size,
            "final_mean_reward": float(np.mean(rewards[-10:])) if rewards else None,
            "best_eval_reward": max(rewards) if rewards else None,
            "wall_clock_sec": wall_clock,
        }
