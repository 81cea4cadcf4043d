"""Gradient-descent optimizers used by the training phases.

Saliency pretraining uses SGD with momentum and a per-epoch exponential
learning-rate decay; end-to-end training uses Adam. Optimizer state is
exposed as named arrays so checkpoints can carry it for exact resume.
"""

from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, named_params, lr: float):
        self.named_params = [(name, p) for name, p in named_params]
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class SGD(Optimizer):
    def __init__(self, named_params, lr: float, momentum: float = 0.0):
        super().__init__(named_params, lr)
        self.momentum = float(momentum)
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self) -> None:
        for name, p in self.named_params:
            if p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * p.grad
            p.data = p.data + v

    def state_arrays(self):
        return {f"sgd.v.{name}": v for name, v in self.velocity.items()}

    def load_state_arrays(self, arrays):
        for name in self.velocity:
            key = f"sgd.v.{name}"
            if key in arrays:
                self.velocity[name] = arrays[key].astype(self.velocity[name].dtype, copy=True)


class Adam(Optimizer):
    def __init__(self, named_params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(named_params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        out = {"adam.t": np.array([self.t], dtype=np.float32)}
        out.update({f"adam.m.{name}": m for name, m in self.m.items()})
        out.update({f"adam.v.{name}": v for name, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays):
        if "adam.t" in arrays:
            self.t = int(arrays["adam.t"][0])
        for name in self.m:
            mk, vk = f"adam.m.{name}", f"adam.v.{name}"
            if mk in arrays:
                self.m[name] = arrays[mk].astype(self.m[name].dtype, copy=True)
            if vk in arrays:
                self.v[name] = arrays[vk].astype(self.v[name].dtype, copy=True)


def exponential_lr(initial: float, decay: float, epoch: int) -> float:
    """Learning rate after `epoch` whole epochs of exponential decay."""
    return initial * decay**epoch
