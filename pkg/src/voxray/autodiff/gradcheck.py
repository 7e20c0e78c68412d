"""Finite-difference verification of analytical gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor

DEFAULT_STEP = 1e-4


def grad_check(f, inputs, step=DEFAULT_STEP):
    """Compare analytical gradients of a scalar function against central differences.

    f takes the tensors in `inputs` (all float64, requires_grad) and returns a
    scalar Tensor. Every coordinate of every input is perturbed by +/- step.
    Returns the max over coordinates of |g_a - g_fd| / max(1, |g_a|, |g_fd|).
    Raises on NaN in either gradient.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.grad = None

    with Tape() as tape:
        out = f(*inputs)
        if out.size != 1:
            raise ValueError("grad_check target must be scalar")
        tape.backward(out)

    analytic = []
    for t in inputs:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite analytical gradient")
        analytic.append(g.copy())

    max_err = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f(*inputs).data)
            flat[i] = orig - step
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            if not np.isfinite(g_fd):
                raise FloatingPointError("non-finite finite-difference gradient")
            err = abs(ga_flat[i] - g_fd) / max(1.0, abs(ga_flat[i]), abs(g_fd))
            if err > max_err:
                max_err = err
    return max_err
