from .gradcheck import grad_check
from .optim import Optimizer, optimizer_step
from .tensor import (
    Tape,
    active_tape,
    Tensor,
    add,
    as_tensor,
    bce_with_logits,
    concat,
    conv2d_maxpool,
    div,
    dropout,
    elementwise,
    exp,
    getitem,
    glorot,
    hinge_sq,
    l2_normalize,
    layer_norm,
    log,
    lstm,
    matmul,
    mean,
    mul,
    ones,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    square,
    sub,
    take,
    tanh,
    transpose,
    tsum,
    zeros,
)

__all__ = [name for name in dir() if not name.startswith("_")]
