import numpy as np

from .tensor import Tape, Tensor


def grad_check(f, x, eps: float = 1e-5) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``x`` is a Tensor or a list of Tensors; ``f(x)`` must return a scalar
    Tensor and be deterministic. Per coordinate the error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
    with Tape() as tape:
        out = f(x)
    tape.backward(out)
    worst = 0.0
    for t in xs:
        analytic = t.grad.reshape(-1) if t.grad is not None else np.zeros(t.data.size)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(x).item()
            flat[i] = orig - eps
            fm = f(x).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            a = analytic[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst
