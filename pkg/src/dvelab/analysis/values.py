"""Per-level value-function estimation under one frozen policy.

The freeze-and-fine-tune strategy: keep the shared trunk and actor fixed,
retrain only the critic head on each level's value-regression loss, then
read all heads out on one shared probe set.  Tabular-capable levels also
admit an exact variant through the Bellman solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json

import numpy as np

from .. import diffcore as dc
from ..config import seed_for
from ..diffcore import Node
from ..envs import LevelHandle, observation, solve_value
from ..models import ActorCritic
from ..train.evaluate import run_episode

CRITIC_PREFIX = "critic."


@dataclass
class FineTuneConfig:
    lr: float = 1e-2
    max_steps: int = 500
    plateau_window: int = 50
    plateau_rtol: float = 1e-5
    episodes_per_level: int = 16
    n_probe_states: int = 64
    seed: int = 0


@dataclass
class ValueMatrix:
    values: np.ndarray          # [N_levels, K_probes]
    level_ids: list[int]
    state_ids: list[int]        # probe state indices (exact variant) or probe ranks
    policy_tag: str
    excluded_levels: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("ValueMatrix: non-finite entries")

    def to_text(self) -> str:
        return json.dumps({
            "values": self.values.tolist(),
            "level_ids": self.level_ids,
            "state_ids": self.state_ids,
            "policy_tag": self.policy_tag,
            "excluded_levels": self.excluded_levels,
        }, indent=2)

    @classmethod
    def from_text(cls, text: str) -> "ValueMatrix":
        doc = json.loads(text)
        return cls(np.array(doc["values"]), doc["level_ids"], doc["state_ids"],
                   doc["policy_tag"], doc["excluded_levels"])


def tabular_policy(net: ActorCritic, level: LevelHandle) -> np.ndarray:
    """Project the recurrent policy to a state-only table (zero carry)."""
    S = level.spec.n_states
    obs = np.stack([observation(level, s) for s in range(S)])
    h = np.zeros((S, net.config.lstm_hidden))
    log_probs, _, _, _, _ = net.forward_np(obs, h, h)
    return np.exp(log_probs)


def oracle_value_matrix(level_set: list[LevelHandle],
                        policy: np.ndarray | None,
                        probe_states: list[int],
                        policy_tag: str = "oracle") -> ValueMatrix:
    """Exact Bellman values at shared probe states; uniform policy when None."""
    rows = []
    for level in level_set:
        spec = level.spec
        pol = policy
        if pol is None:
            pol = np.full((spec.n_states, spec.n_actions), 1.0 / spec.n_actions)
        v = solve_value(spec, pol, method="linear")
        rows.append(v[probe_states])
    return ValueMatrix(np.array(rows), [lv.seed for lv in level_set],
                       list(probe_states), policy_tag)


def _trunk_features(net: ActorCritic, obs: np.ndarray, h: np.ndarray,
                    c: np.ndarray) -> np.ndarray:
    p = {k: n.value for k, n in net.params.items()}
    hid = np.tanh(obs @ p["enc.W"] + p["enc.b"])
    gates = hid @ p["lstm.W_ih"] + h @ p["lstm.W_hh"] + p["lstm.b"]
    H = net.config.lstm_hidden
    sig = lambda z: 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    i, f = sig(gates[..., :H]), sig(gates[..., H:2 * H])
    g, o = np.tanh(gates[..., 2 * H:3 * H]), sig(gates[..., 3 * H:])
    return o * np.tanh(f * c + i * g)


def _mc_targets(trace, steps, gamma: float, horizon: int) -> np.ndarray:
    """Discounted Monte Carlo returns, critic-bootstrapped at horizon cuts."""
    rewards = [t.reward for t in trace.transitions]
    g = 0.0
    if not trace.transitions[-1].done and len(rewards) >= horizon:
        g = steps[-1][4]  # critic value at the cut point
    targets = np.zeros(len(rewards))
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        targets[t] = g
    return targets


def estimate_true_values(
    level_set: list[LevelHandle],
    net: ActorCritic,
    cfg: FineTuneConfig | None = None,
    exact: bool = False,
) -> ValueMatrix:
    """Per-level values under the frozen policy of `net`, on one probe set.

    exact=True bypasses fine-tuning: it tabularizes the frozen policy per
    level and reads probe-state values off the Bellman solver.
    """
    cfg = cfg or FineTuneConfig()
    rng = np.random.default_rng(cfg.seed)
    policy_tag = f"net-seed-{net.seed}"

    if exact:
        n_states = level_set[0].spec.n_states
        probe_states = sorted(
            rng.choice(n_states, size=min(cfg.n_probe_states, n_states),
                       replace=False).tolist())
        rows = [
            solve_value(level.spec, tabular_policy(net, level), method="linear")[
                probe_states]
            for level in level_set
        ]
        return ValueMatrix(np.array(rows), [lv.seed for lv in level_set],
                           probe_states, policy_tag)

    # Shared probe set: trunk features of states visited under the frozen policy.
    probe_feats = []
    for k, level in enumerate(level_set):
        _, _, steps = run_episode(net, level, rng)
        for state, h, c, _, _, _ in steps:
            obs = observation(level, state)
            probe_feats.append(_trunk_features(net, obs[None], h[None], c[None])[0])
    probe_feats = np.array(probe_feats)
    pick = rng.choice(len(probe_feats),
                      size=min(cfg.n_probe_states, len(probe_feats)),
                      replace=False)
    probe_feats = probe_feats[sorted(pick)]

    base_values = net.param_values()
    critic_keys = {k for k in base_values if k.startswith(CRITIC_PREFIX)}
    rows, level_ids, excluded = [], [], []
    for level in level_set:
        clone = ActorCritic(net.config, seed=net.seed)
        clone.load_param_values(base_values)
        # per-level stream keyed on level identity: duplicated levels see
        # identical episodes, and the estimate is order-independent
        level_rng = np.random.default_rng(
            seed_for(cfg.seed, f"finetune-level-{level.seed}"))
        feats, targets = [], []
        for _ in range(cfg.episodes_per_level):
            trace, _, steps = run_episode(clone, level, level_rng)
            if not trace.transitions:
                continue
            obs = np.stack([observation(level, s[0]) for s in steps])
            h = np.stack([s[1] for s in steps])
            c = np.stack([s[2] for s in steps])
            feats.append(_trunk_features(clone, obs, h, c))
            targets.append(_mc_targets(trace, steps, level.spec.gamma, horizon=100))
        feats = np.concatenate(feats)
        targets = np.concatenate(targets)

        opt = dc.Adam(clone.params, lr=cfg.lr)
        losses: list[float] = []
        diverged = False
        feat_node_value = feats
        for step_i in range(cfg.max_steps):
            out = clone.critic_forward(Node(feat_node_value))
            loss = dc.mean_all(dc.square(dc.sub(out.value, Node(targets))))
            if not np.isfinite(loss.value):
                diverged = True
                break
            losses.append(float(loss.value))
            opt.zero_grad()
            dc.backward(loss)
            opt.step(only=critic_keys)
            w = cfg.plateau_window
            if len(losses) > w:
                prev, cur = losses[-w - 1], losses[-1]
                if prev - cur < cfg.plateau_rtol * max(abs(prev), 1e-12):
                    break
        if diverged:
            excluded.append(level.seed)
            continue
        # freeze contract: everything outside the critic head is untouched
        for k, v in clone.param_values().items():
            if k not in critic_keys and not np.array_equal(v, base_values[k]):
                raise RuntimeError(f"frozen parameter {k} changed during fine-tune")
        out = clone.critic_forward(Node(probe_feats))
        rows.append(np.asarray(out.value.value))
        level_ids.append(level.seed)
    return ValueMatrix(np.array(rows), level_ids,
                       list(range(probe_feats.shape[0])), policy_tag,
                       excluded_levels=excluded)
