"""Central finite-difference gradient checking for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, inputs: list[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the scalar ``fn(*inputs)`` w.r.t. each input."""
    grads = []
    for x in inputs:
        g = np.zeros_like(x.data)
        flat, gflat = x.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(fn(*inputs).data)
            flat[i] = old - h
            fm = float(fn(*inputs).data)
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def gradcheck(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between analytic and numerical gradients.

    ``fn`` must map the inputs to a scalar tensor.  Inputs are switched to
    ``requires_grad`` and their gradients are reset.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = fn(*inputs)
    backward(out)
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]
    numeric = numerical_grad(fn, inputs, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
