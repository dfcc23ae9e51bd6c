"""Per-parameter adaptive optimizer (RMS-style second moment, bias-corrected).

The update keeps a running mean of squared gradients and divides the raw
gradient by its corrected root:

    v <- decay * v + (1 - decay) * g^2
    p <- p - lr * g / (sqrt(v / (1 - decay^t)) + eps)

No first-moment momentum. The inner loop runs through the fused backend
kernel, so stepping is cheap even for many small parameters.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .autodiff import Tensor


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        s = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(s)
    return norm


class AdaptiveOptimizer:
    """Holds second-moment state per parameter; caller zeroes grads."""

    def __init__(self, params, lr: float, decay: float = 0.999,
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.decay = float(decay)
        self.eps = float(eps)
        self.clip_norm = clip_norm
        self.t = 0
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        if self.clip_norm is not None:
            clip_global_norm(self.params, self.clip_norm)
        bias_fix = 1.0 - self.decay ** self.t
        for p, v in zip(self.params, self._v):
            if p.grad is None:
                continue
            backend.adaptive_update(p.data, p.grad, v, self.lr, self.decay,
                                    self.eps, bias_fix)

    def state_arrays(self):
        """Optimizer state for checkpointing, keyed by parameter position."""
        return [("opt.v." + str(i), v) for i, v in enumerate(self._v)]
