"""Finite-difference oracle for backward rules.

Central differences at 64-bit with h = 1e-5; the relative error denominator
is clamped at 1.0 so near-zero gradients compare absolutely. Functions under
test must be pure: they are re-evaluated twice per input element.
"""

import numpy as np

from polyseq.grad.tensor import Tensor


def numeric_grad(fn, tensors, which, h=1e-5):
    t = tensors[which]
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(fn(*tensors).data)
        flat[i] = orig - h
        lo = float(fn(*tensors).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return out


def gradcheck(fn, tensors, h=1e-5):
    """Returns the worst relative error between analytic and numeric grads."""
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck needs float64 inputs")
        t.grad = None
    loss = fn(*tensors)
    loss.backward()
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
    worst = 0.0
    for k, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        num = numeric_grad(fn, tensors, k, h)
        denom = np.maximum(np.maximum(np.abs(num), np.abs(analytic[k])), 1.0)
        worst = max(worst, float(np.max(np.abs(num - analytic[k]) / denom)))
    return worst
