"""Plain SGD and bias-corrected Adam over lists of parameter arrays."""

import numpy as np

from ..errors import ShapeMismatchError

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def optimizer_step(kind, params, grads, state, lr):
    """Update ``params`` (numpy arrays) in place from ``grads``; returns (params, state).

    ``state`` is a dict owned by the caller; pass ``{}`` on the first step.
    """
    if len(params) != len(grads):
        raise ShapeMismatchError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"param {p.shape} vs grad {g.shape}")
    if kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return params, state
    if kind != "adam":
        raise ValueError(f"unknown optimizer {kind!r}")
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["t"] += 1
    t = state["t"]
    c1, c2 = 1.0 - BETA1**t, 1.0 - BETA2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params, state


class Optimizer:
    """Binds an update rule to a fixed list of Tensors."""

    def __init__(self, params, kind="adam", lr=1e-3):
        self.params = list(params)
        self.kind = kind
        self.lr = lr
        self.state: dict = {}

    def step(self):
        arrays, grads = [], []
        for p in self.params:
            arrays.append(p.data)
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        optimizer_step(self.kind, arrays, grads, self.state, self.lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
