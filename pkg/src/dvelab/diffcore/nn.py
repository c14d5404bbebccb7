"""Layers, initialization and the Adam optimizer on top of the tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .tape import Node, ShapeError


@dataclass
class LstmState:
    """Recurrent carry: hidden and cell activations of length H."""

    hidden: Node
    cell: Node

    def __post_init__(self):
        h, c = self.hidden.value, self.cell.value
        if h.shape != c.shape:
            raise ShapeError(f"LstmState: hidden {h.shape} != cell {c.shape}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
            raise ValueError("LstmState: non-finite state")


def zero_state(hidden_size: int, batch: int | None = None) -> LstmState:
    shape = (hidden_size,) if batch is None else (batch, hidden_size)
    return LstmState(Node(np.zeros(shape)), Node(np.zeros(shape)))


def init_affine(rng: np.random.Generator, n_in: int, n_out: int) -> dict[str, Node]:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights and bias."""
    bound = 1.0 / np.sqrt(n_in)
    return {
        "W": Node(rng.uniform(-bound, bound, size=(n_in, n_out))),
        "b": Node(rng.uniform(-bound, bound, size=(n_out,))),
    }


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int) -> dict[str, Node]:
    """Fused-gate LSTM parameters, gate order (input, forget, cell, output)."""
    bi = 1.0 / np.sqrt(n_in)
    bh = 1.0 / np.sqrt(hidden)
    return {
        "W_ih": Node(rng.uniform(-bi, bi, size=(n_in, 4 * hidden))),
        "W_hh": Node(rng.uniform(-bh, bh, size=(hidden, 4 * hidden))),
        "b": Node(rng.uniform(-bh, bh, size=(4 * hidden,))),
    }


def lstm_step(x: Node, state: LstmState, params: dict[str, Node]) -> tuple[Node, LstmState]:
    """One LSTM cell update; returns the new hidden and the new carry."""
    hidden = state.hidden.shape[-1]
    if params["W_ih"].shape[0] != x.shape[-1]:
        raise ShapeError(
            f"lstm_step: input dim {x.shape[-1]} != W_ih rows {params['W_ih'].shape[0]}"
        )
    if params["W_hh"].shape[0] != hidden:
        raise ShapeError(
            f"lstm_step: hidden dim {hidden} != W_hh rows {params['W_hh'].shape[0]}"
        )
    gates = tape.add(
        tape.affine(x, params["W_ih"], params["b"]),
        _matvec(state.hidden, params["W_hh"]),
    )
    i = tape.sigmoid(tape.slice_last(gates, 0, hidden))
    f = tape.sigmoid(tape.slice_last(gates, hidden, 2 * hidden))
    g = tape.tanh(tape.slice_last(gates, 2 * hidden, 3 * hidden))
    o = tape.sigmoid(tape.slice_last(gates, 3 * hidden, 4 * hidden))
    cell = tape.add(tape.mul(f, state.cell), tape.mul(i, g))
    new_hidden = tape.mul(o, tape.tanh(cell))
    return new_hidden, LstmState(new_hidden, cell)


def _matvec(x: Node, w: Node) -> Node:
    if x.value.ndim == 1:
        zero = Node(np.zeros(w.shape[1]))
        return tape.affine(x, w, zero)
    return tape.matmul(x, w)


def mlp_tanh(x: Node, layer: dict[str, Node]) -> Node:
    return tape.tanh(tape.affine(x, layer["W"], layer["b"]))


class Adam:
    """Adam on a named parameter dict; state keyed by parameter name."""

    def __init__(self, params: dict[str, Node], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, only: set[str] | None = None) -> None:
        """Apply one update; `only` restricts to a subset of tensors (fine-tuning)."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if only is not None and k not in only:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * p.grad
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * p.grad ** 2
            p.value = p.value - self.lr * (self.m[k] / b1t) / (
                np.sqrt(self.v[k] / b2t) + self.eps
            )

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = state["t"]
        self.m = {k: np.asarray(v, dtype=np.float64).reshape(self.m[k].shape)
                  for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64).reshape(self.v[k].shape)
                  for k, v in state["v"].items()}
