"""Adam with bias correction, plus global-norm gradient clipping.

Parameters whose gradient is None are skipped entirely: their moments do not
decay and their values do not move, so a loss term with zero weight can never
perturb weights it does not touch.
"""

import numpy as np


def global_grad_norm(params) -> float:
    """L2 norm over all gradients present; params is an iterable of Tensors."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.reshape(-1)
            total += float(np.dot(g, g))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most max_norm.

    Returns the pre-clip norm.
    """
    params = list(params)
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 lr_scales: dict | None = None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.lr_scales = dict(lr_scales or {})
        unknown = set(self.lr_scales) - set(self.params)
        if unknown:
            raise ValueError(f"lr_scales for unknown parameters: {sorted(unknown)}")
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0
        self._scratch: dict = {}  # per-param work buffer, not part of the state

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            s = self._scratch.get(name)
            if s is None or s.shape != g.shape:
                s = self._scratch[name] = np.empty_like(p.data)
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=s)
            m += s
            v *= self.beta2
            np.multiply(g, g, out=s)
            s *= 1.0 - self.beta2
            v += s
            lr = self.lr * self.lr_scales.get(name, 1.0)
            np.divide(v, bc2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            np.divide(m, s, out=s)
            s *= lr / bc1
            p.data -= s

    def state_dict(self):
        tensors = {}
        for name in self.params:
            tensors[f"m.{name}"] = self.m[name]
            tensors[f"v.{name}"] = self.v[name]
        return tensors, {"t": self.t}

    def load_state_dict(self, tensors: dict, meta: dict) -> None:
        for name, p in self.params.items():
            for prefix, store in (("m", self.m), ("v", self.v)):
                key = f"{prefix}.{name}"
                if key not in tensors:
                    raise ValueError(f"optimizer state missing section {key}")
                arr = np.asarray(tensors[key], dtype=p.data.dtype)
                if arr.shape != p.data.shape:
                    raise ValueError(f"optimizer moment {key} has shape "
                                     f"{arr.shape}, parameter has {p.data.shape}")
                store[name] = arr.copy()
        self.t = int(meta["t"])
