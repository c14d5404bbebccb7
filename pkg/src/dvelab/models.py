"""Actor-critic network with a shared MLP+LSTM trunk and pluggable critic heads.

Three head variants share the trunk: a plain affine value head, a mixture
head that outputs cluster posteriors alpha and basis means mu with
value = sum_i alpha_i * mu_i, and a parameter-matched two-layer control head.

Forward passes come in two flavors: graph mode (tape Nodes, used for
updates) and a pure-numpy fast path (used for rollouts and evaluation);
a test pins both to agree exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Node

HEADS = ("baseline", "dynamic", "control")


@dataclass(frozen=True)
class NetConfig:
    obs_dim: int
    n_actions: int
    encoder_hidden: int = 64
    lstm_hidden: int = 64
    head: str = "baseline"
    n_basis: int = 4
    n_control_hidden: int | None = None  # defaults to 2 * n_basis

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "dynamic" and self.n_basis < 2:
            raise ValueError("dynamic head needs n_basis >= 2")
        if min(self.obs_dim, self.n_actions, self.encoder_hidden,
               self.lstm_hidden) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.n_control_hidden is None:
            object.__setattr__(self, "n_control_hidden", 2 * self.n_basis)

    def to_dict(self) -> dict:
        return {
            "obs_dim": self.obs_dim, "n_actions": self.n_actions,
            "encoder_hidden": self.encoder_hidden,
            "lstm_hidden": self.lstm_hidden, "head": self.head,
            "n_basis": self.n_basis, "n_control_hidden": self.n_control_hidden,
        }


@dataclass
class PolicyOutput:
    logits: Node
    log_probs: Node


@dataclass
class CriticOutput:
    value: Node
    alpha: Node | None = None
    mu: Node | None = None


def head_param_count(config: NetConfig, head: str) -> int:
    h = config.lstm_hidden
    if head == "baseline":
        return h + 1
    if head == "dynamic":
        return 2 * (h * config.n_basis + config.n_basis)
    nc = config.n_control_hidden
    return h * nc + nc + nc + 1


class ActorCritic:
    """Owns the named parameter tensors and both forward paths."""

    def __init__(self, config: NetConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        h = config.lstm_hidden
        params: dict[str, Node] = {}
        enc = dc.init_affine(rng, config.obs_dim, config.encoder_hidden)
        params["enc.W"], params["enc.b"] = enc["W"], enc["b"]
        lstm = dc.init_lstm(rng, config.encoder_hidden, h)
        params["lstm.W_ih"], params["lstm.W_hh"], params["lstm.b"] = (
            lstm["W_ih"], lstm["W_hh"], lstm["b"])
        act = dc.init_affine(rng, h, config.n_actions)
        params["actor.W"], params["actor.b"] = act["W"], act["b"]
        if config.head == "baseline":
            head = dc.init_affine(rng, h, 1)
            params["critic.W"], params["critic.b"] = head["W"], head["b"]
        elif config.head == "dynamic":
            a = dc.init_affine(rng, h, config.n_basis)
            m = dc.init_affine(rng, h, config.n_basis)
            params["critic.alpha.W"], params["critic.alpha.b"] = a["W"], a["b"]
            params["critic.mu.W"], params["critic.mu.b"] = m["W"], m["b"]
        else:
            c1 = dc.init_affine(rng, h, config.n_control_hidden)
            c2 = dc.init_affine(rng, config.n_control_hidden, 1)
            params["critic.h.W"], params["critic.h.b"] = c1["W"], c1["b"]
            params["critic.out.W"], params["critic.out.b"] = c2["W"], c2["b"]
            n_control = head_param_count(config, "control")
            n_dynamic = head_param_count(config, "dynamic")
            if abs(n_control - n_dynamic) / n_dynamic > 0.02:
                raise ValueError(
                    f"control head ({n_control} params) not parameter-matched "
                    f"to dynamic head ({n_dynamic} params)")
        self.params = params

    # -- graph mode ---------------------------------------------------------

    def encode(self, obs: Node, state: dc.LstmState) -> tuple[Node, dc.LstmState]:
        hid = dc.tanh(dc.affine(obs, self.params["enc.W"], self.params["enc.b"]))
        return dc.lstm_step(hid, state, {
            "W_ih": self.params["lstm.W_ih"],
            "W_hh": self.params["lstm.W_hh"],
            "b": self.params["lstm.b"],
        })

    def actor_forward(self, features: Node) -> PolicyOutput:
        logits = dc.affine(features, self.params["actor.W"], self.params["actor.b"])
        return PolicyOutput(logits=logits, log_probs=dc.log_softmax(logits))

    def critic_forward(self, features: Node) -> CriticOutput:
        head = self.config.head
        if head == "baseline":
            out = dc.affine(features, self.params["critic.W"], self.params["critic.b"])
            return CriticOutput(value=dc.sum_last(out))
        if head == "dynamic":
            alpha = dc.softmax(dc.affine(
                features, self.params["critic.alpha.W"], self.params["critic.alpha.b"]))
            mu = dc.affine(
                features, self.params["critic.mu.W"], self.params["critic.mu.b"])
            return CriticOutput(value=dc.sum_last(dc.mul(alpha, mu)),
                                alpha=alpha, mu=mu)
        hid = dc.relu(dc.affine(
            features, self.params["critic.h.W"], self.params["critic.h.b"]))
        out = dc.affine(hid, self.params["critic.out.W"], self.params["critic.out.b"])
        return CriticOutput(value=dc.sum_last(out))

    def forward(self, obs: Node, state: dc.LstmState):
        features, new_state = self.encode(obs, state)
        return self.actor_forward(features), self.critic_forward(features), new_state

    # -- fast numpy path ----------------------------------------------------

    def forward_np(self, obs: np.ndarray, h: np.ndarray, c: np.ndarray):
        """Tape-free batched forward; obs [B, D], h/c [B, H].

        Returns (log_probs [B, A], value [B], alpha [B, Nb] or None,
        new_h, new_c).
        """
        p = {k: node.value for k, node in self.params.items()}
        hid = np.tanh(obs @ p["enc.W"] + p["enc.b"])
        gates = hid @ p["lstm.W_ih"] + h @ p["lstm.W_hh"] + p["lstm.b"]
        H = self.config.lstm_hidden
        sig = lambda z: 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        i, f = sig(gates[..., :H]), sig(gates[..., H:2 * H])
        g, o = np.tanh(gates[..., 2 * H:3 * H]), sig(gates[..., 3 * H:])
        new_c = f * c + i * g
        new_h = o * np.tanh(new_c)

        logits = new_h @ p["actor.W"] + p["actor.b"]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

        head = self.config.head
        alpha = None
        if head == "baseline":
            value = (new_h @ p["critic.W"] + p["critic.b"])[..., 0]
        elif head == "dynamic":
            al = new_h @ p["critic.alpha.W"] + p["critic.alpha.b"]
            al = np.exp(al - al.max(axis=-1, keepdims=True))
            alpha = al / al.sum(axis=-1, keepdims=True)
            mu = new_h @ p["critic.mu.W"] + p["critic.mu.b"]
            value = (alpha * mu).sum(axis=-1)
        else:
            mid = np.maximum(new_h @ p["critic.h.W"] + p["critic.h.b"], 0.0)
            value = (mid @ p["critic.out.W"] + p["critic.out.b"])[..., 0]
        return log_probs, value, alpha, new_h, new_c

    # -- parameter plumbing -------------------------------------------------

    def param_values(self) -> dict[str, np.ndarray]:
        return {k: n.value.copy() for k, n in self.params.items()}

    def load_param_values(self, values: dict[str, np.ndarray]) -> None:
        for k, n in self.params.items():
            arr = np.asarray(values[k], dtype=np.float64).reshape(n.shape)
            n.value = arr
            n.grad = np.zeros_like(arr)

    def n_params(self) -> int:
        return sum(n.value.size for n in self.params.values())


def confusion(alpha: np.ndarray) -> float:
    """Inverse participation ratio 1 / (N_b * sum alpha_i^2).

    1 at the uniform posterior, 1/N_b at a one-hot posterior.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or np.min(alpha) < -1e-9 or abs(alpha.sum() - 1.0) > 1e-6:
        raise ValueError("confusion: alpha must be a probability vector")
    return float(1.0 / (alpha.size * np.sum(alpha ** 2)))


def contribution(alphas: np.ndarray) -> np.ndarray:
    """Confusion-weighted episode average of the cluster posterior.

    rho_i = (1/T) sum_t delta(t) * alpha_i(t) over a [T, N_b] posterior trace.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 2 or alphas.shape[0] < 1:
        raise ValueError("contribution: need a nonempty [T, N_b] trace")
    deltas = np.array([confusion(a) for a in alphas])
    return (deltas[:, None] * alphas).mean(axis=0)


CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: ActorCritic, step: int,
                    extra: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": net.config.to_dict(),
        "seed": net.seed,
        "step": step,
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in net.param_values().items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[ActorCritic, int, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    config = NetConfig(**doc["config"])
    net = ActorCritic(config, seed=doc["seed"])
    net.load_param_values({
        k: np.array(v["data"]).reshape(v["shape"])
        for k, v in doc["params"].items()
    })
    return net, doc["step"], doc.get("extra", {})
