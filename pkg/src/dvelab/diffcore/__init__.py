from .tape import (
    Node,
    ShapeError,
    add,
    affine,
    backward,
    clip,
    concat,
    exp,
    forward_op,
    log,
    log_softmax,
    matmul,
    mean_all,
    minimum,
    mul,
    mul_const,
    relu,
    sigmoid,
    slice_last,
    softmax,
    square,
    sub,
    sum_all,
    sum_last,
    take_last,
    tanh,
    topo_order,
)
from .nn import Adam, LstmState, init_affine, init_lstm, lstm_step, mlp_tanh, zero_state
from .check import GradCheckReport, grad_check

__all__ = [
    "Node", "ShapeError", "add", "affine", "backward", "clip", "concat", "exp",
    "forward_op", "log", "log_softmax", "matmul", "mean_all", "minimum", "mul",
    "mul_const", "relu", "sigmoid", "slice_last", "softmax", "square", "sub",
    "sum_all", "sum_last", "take_last", "tanh", "topo_order",
    "Adam", "LstmState", "init_affine", "init_lstm", "lstm_step", "mlp_tanh",
    "zero_state", "GradCheckReport", "grad_check",
]
