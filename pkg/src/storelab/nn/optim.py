"""SGD and Adam parameter updates over named tensors."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class MissingGrad(Exception):
    pass


class Optimizer:
    """In-place updates; gradients are cleared after each step."""

    def __init__(
        self,
        kind: str = "adam",
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        self.step_count += 1
        for name, p in params.items():
            if p.grad is None:
                raise MissingGrad(name)
            g = p.grad
            if self.kind == "sgd":
                p.data -= self.lr * g
            else:
                if name not in self.moments:
                    self.moments[name] = (
                        np.zeros_like(p.data),
                        np.zeros_like(p.data),
                    )
                m, v = self.moments[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1 ** self.step_count)
                v_hat = v / (1.0 - self.beta2 ** self.step_count)
                p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None

    def zero_grad(self, params: dict[str, Tensor]) -> None:
        for p in params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, (m, v) in self.moments.items():
            out[f"m.{name}"] = m
            out[f"v.{name}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        names = {k[2:] for k in arrays if k.startswith("m.")}
        self.moments = {
            n: (arrays[f"m.{n}"].copy(), arrays[f"v.{n}"].copy()) for n in names
        }
