"""First-order optimizers over name -> array parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METHODS = ("sgd", "momentum", "adam")


@dataclass
class Optimizer:
    """Deterministic SGD / momentum / Adam.

    Parameters keep their storage dtype; optimizer state is float64.
    """

    method: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer {self.method!r}; choose from {METHODS}")
        self.state: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        """Update ``params`` in place and return it."""
        if set(params) != set(grads):
            missing = sorted(set(params) ^ set(grads))
            raise KeyError(f"parameter/gradient names differ: {missing}")
        self.t += 1
        for name in sorted(params):
            p = params[name]
            g = np.asarray(grads[name], np.float64)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            params[name] = (np.asarray(p, np.float64) - self._delta(name, g)).astype(p.dtype)
        return params

    def _delta(self, name, g):
        if self.method == "sgd":
            return self.lr * g
        if self.method == "momentum":
            v = self.momentum * self.state.get(name, 0.0) + g
            self.state[name] = v
            return self.lr * v
        m = self.beta1 * self.state.get(f"{name}#m", 0.0) + (1 - self.beta1) * g
        v = self.beta2 * self.state.get(f"{name}#v", 0.0) + (1 - self.beta2) * g * g
        self.state[f"{name}#m"], self.state[f"{name}#v"] = m, v
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    # checkpoint support
    def state_tensors(self) -> dict:
        out = {f"opt/{k}": np.asarray(v, np.float64) for k, v in self.state.items()}
        out["opt/#t"] = np.array([self.t], np.int64)
        return out

    def load_state_tensors(self, tensors: dict):
        self.state = {k[4:]: v.copy() for k, v in tensors.items() if k.startswith("opt/") and k != "opt/#t"}
        self.t = int(tensors["opt/#t"][0]) if "opt/#t" in tensors else 0


def optimizer_step(weights: dict, gradients: dict, config: dict, optimizer: Optimizer | None = None) -> dict:
    """Functional single step: returns updated copies, ``weights`` is untouched."""
    opt = optimizer or Optimizer(method=config.get("method", "sgd"), lr=config.get("lr", 1e-3))
    updated = {k: v.copy() for k, v in weights.items()}
    return opt.step(updated, gradients)
