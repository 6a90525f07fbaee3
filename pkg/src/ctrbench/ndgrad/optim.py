"""Parameters and the Adam optimizer.

L2 regularization is applied as a gradient addition (l2_weight * value)
before the moment update: classic Adam-with-L2, not decoupled decay.
"""

from __future__ import annotations

import numpy as np

from ctrbench.errors import ContractError
from ctrbench.ndgrad.tensor import DEFAULT_DTYPE, Tensor


class Parameter:
    """A named, trainable tensor with an attached L2 weight.

    ``frozen_rows`` lists row indices (of a 2-D table) that stay exactly
    zero: their gradient is cleared before each update and the rows are
    re-zeroed after it. Used for the padding row of sequence-field
    embedding tables.
    """

    def __init__(self, name: str, values: np.ndarray, l2_weight: float = 0.0,
                 frozen_rows: tuple[int, ...] = ()):
        if l2_weight < 0:
            raise ContractError(f"l2_weight must be >= 0, got {l2_weight}")
        self.name = name
        self.tensor = Tensor(values, requires_grad=True)
        self.l2_weight = float(l2_weight)
        self.frozen_rows = tuple(frozen_rows)
        for row in self.frozen_rows:
            self.tensor.data[row] = 0.0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def count(self) -> int:
        """Learnable scalars, excluding frozen rows."""
        n = self.data.size
        if self.frozen_rows:
            n -= len(self.frozen_rows) * int(np.prod(self.data.shape[1:]))
        return n

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class AdamState:
    """Per-parameter Adam moment buffers."""

    def __init__(self, param: Parameter, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.first_moment = np.zeros_like(param.data)
        self.second_moment = np.zeros_like(param.data)
        self.step_count = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(param: Parameter, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place; zeroes the gradient."""
    if param.tensor.grad is None:
        raise ContractError(f"adam_step: parameter {param.name!r} has no gradient")
    if lr <= 0:
        raise ContractError(f"adam_step: lr must be positive, got {lr}")
    g = param.tensor.grad
    if param.l2_weight:
        g = g + param.l2_weight * param.data
    if param.frozen_rows:
        g = g.copy() if g is param.tensor.grad else g
        g[list(param.frozen_rows)] = 0.0
    state.step_count += 1
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * (g * g)
    m_hat = state.first_moment / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.second_moment / (1.0 - state.beta2 ** state.step_count)
    param.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    for row in param.frozen_rows:
        param.tensor.data[row] = 0.0
    param.tensor.grad = None


class Adam:
    """Adam over a set of parameters, one moment state each."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.states = {p.name: AdamState(p, beta1, beta2, epsilon) for p in self.params}

    def step(self) -> None:
        for p in self.params:
            adam_step(p, self.states[p.name], self.lr)


def normal_init(rng: np.random.Generator, shape: tuple[int, ...],
                scale: float = 0.01) -> np.ndarray:
    """Default initializer: Normal(0, scale^2). Biases use zeros_init."""
    return rng.normal(0.0, scale, size=shape).astype(DEFAULT_DTYPE)


def zeros_init(shape: tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape, dtype=DEFAULT_DTYPE)
