from __future__ import annotations

from typing import Callable

import numpy as np

from .core import GradTape, NonFiniteError, Tensor


def grad_check(op_closure: Callable[[Tensor], Tensor], point, epsilon: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    The point is promoted to float64; closures should build any captured
    parameters in float64 as well. Relative error per element is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy(), requires_grad=True)
    with GradTape() as tape:
        loss = op_closure(x)
    if loss.data.size != 1:
        raise ValueError("grad_check closure must return a scalar")
    tape.backward(loss)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = float(op_closure(Tensor(base.copy())).data)
        flat[i] = orig - epsilon
        down = float(op_closure(Tensor(base.copy())).data)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteError(f"non-finite closure value at element {i}")
        num_flat[i] = (up - down) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
