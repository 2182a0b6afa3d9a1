"""Parameter initialisation and first-order optimizers (SGD, Adam)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def kaiming_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-sqrt(6 / fan_in), the ReLU-gain Kaiming bound."""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_parameter(shape, init: str, rng: np.random.Generator, value: float = 0.0) -> Tensor:
    if init == "kaiming-uniform":
        data = kaiming_uniform(shape, rng)
    elif init == "zeros":
        data = np.zeros(shape)
    elif init == "constant":
        data = np.full(shape, value)
    else:
        raise ValueError(f"unknown init spec {init!r}")
    return Tensor(data, requires_grad=True)


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


def optimizer_step(state: OptimizerState, params: dict) -> None:
    """Apply one update to every parameter holding a gradient.

    Parameter arrays are replaced, not mutated, so tensors captured by an
    earlier tape keep their values.
    """
    state.step_count += 1
    lr = state.learning_rate
    t = state.step_count
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if state.kind == "sgd":
            p.data = (p.data - lr * g).astype(p.dtype)
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - BETA1 ** t)
        v_hat = v / (1 - BETA2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.dtype)
