"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float64 by default; float32 is available as a
fast storage mode, but gradient checking is only meaningful in 64-bit).
Operations record their backward closure on the innermost active Tape;
``backward(loss)`` sweeps the tape in reverse execution order, which is a
valid topological order by construction, and consumes the tape.

A tape plus the tensors created under it belong to a single training run
and must not be shared across threads.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ctrbench.errors import ConfigError, ContractError, DimensionError, StateError

DEFAULT_DTYPE = np.float64

# Floor used by sqrt_safe so the derivative stays bounded near zero.
_SQRT_FLOOR = 1e-12

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Records the nodes of one forward pass for a single reverse sweep."""

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def _record(self, out: "Tensor", backward_fn) -> None:
        self._nodes.append((out, backward_fn))
        out._tape = self

    def __len__(self) -> int:
        return len(self._nodes)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(values, dtype=dtype or DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Small amount of operator sugar; the functional ops below are canonical.
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return elementwise_mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make_out(values: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; record on the active tape if gradients can flow.
    The computed dtype is preserved, so float32 data stays float32."""
    out = Tensor(values, dtype=values.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; populates .grad on every reachable
    tensor with requires_grad, then consumes the tape."""
    if loss.data.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            # A bare leaf: gradient of itself is one.
            loss.grad = np.ones_like(loss.data)
            return
        raise ContractError("loss was not recorded on an active tape")
    if tape._consumed:
        raise StateError("tape already consumed by a previous backward()")
    loss.grad = np.ones_like(loss.data)
    for out, backward_fn in reversed(tape._nodes):
        if out.grad is None:
            continue
        backward_fn(out.grad)
        out.grad = None  # intermediates do not retain gradients
    tape._consumed = True
    tape._nodes.clear()


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make_out(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make_out(out, (a, b), bwd)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("elementwise_mul", a, b)
    out = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make_out(out, (a, b), bwd)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def bwd(g):
        _accumulate(a, g * c)

    return _make_out(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make_out(out, (a, b), bwd)


def sum_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make_out(out, (a,), bwd)


def mean_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / count, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy())

    return _make_out(out, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat: needs at least one input")
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref):
            raise DimensionError(f"concat: ranks differ, {ref} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, offsets, axis=axis)):
            _accumulate(p, piece)

    return _make_out(out, tuple(parts), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accumulate(a, g * out * (1.0 - out))

    return _make_out(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0))

    return _make_out(out, (a,), bwd)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def bwd(g):
        _accumulate(a, g * 2.0 * a.data)

    return _make_out(out, (a,), bwd)


def sqrt_safe(a: Tensor) -> Tensor:
    clipped = np.maximum(a.data, _SQRT_FLOOR)
    out = np.sqrt(clipped)

    def bwd(g):
        _accumulate(a, g * (a.data > _SQRT_FLOOR) * 0.5 / out)

    return _make_out(out, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) in the overflow-safe form; gradient is sigmoid(x)."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        _accumulate(a, g * sig)

    return _make_out(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _make_out(out, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, g.transpose(inverse))

    return _make_out(out, (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")

    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    return _make_out(out, (a,), bwd)


def slice_tensor(a: Tensor, key) -> Tensor:
    """Basic slicing (ints, slices, tuples thereof); gradient scatters back."""
    out = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full)

    return _make_out(np.ascontiguousarray(out), (a,), bwd)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table``; backward is an exact scatter-add, so
    duplicate indices accumulate."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError("embedding_lookup: indices must be integers")
    if table.data.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding_lookup: index out of range for table with {table.shape[0]} rows"
        )
    out = table.data[idx]

    def bwd(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, table.shape[1]))

    return _make_out(out, (table,), bwd)


class BatchNormState:
    """Running statistics for one batch_norm call site (not learned)."""

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        self.running_mean = np.zeros(num_features, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(num_features, dtype=DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               train_mode: bool) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"batch_norm: input must be 2-D, got {x.shape}")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm: gamma/beta shapes {gamma.shape}/{beta.shape} "
            f"do not match feature dim {x.shape[1]}"
        )
    if train_mode:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mu
        state.running_var = state.momentum * state.running_var + (1 - state.momentum) * var
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def bwd(g):
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if train_mode:
            n = x.shape[0]
            gx = (gamma.data * inv_std / n) * (
                n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0)
            )
        else:
            gx = g * gamma.data * inv_std
        _accumulate(x, gx)

    return _make_out(out, (x, gamma, beta), bwd)


def dropout(x: Tensor, rate: float, train_mode: bool,
            rng: np.random.Generator | None = None,
            seed: int | None = None) -> Tensor:
    """Inverted dropout. Identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng(seed)
    mask = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.data.dtype)
    out = x.data * mask

    def bwd(g):
        _accumulate(x, g * mask)

    return _make_out(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Dispatch by operation kind (the string-keyed surface used by configs/tests)
# ---------------------------------------------------------------------------

_OP_TABLE = {
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "elementwise_mul": lambda inputs, attrs: elementwise_mul(*inputs),
    "scalar_mul": lambda inputs, attrs: scalar_mul(inputs[0], attrs["scalar"]),
    "sum_reduce": lambda inputs, attrs: sum_reduce(inputs[0], attrs.get("axis")),
    "mean_reduce": lambda inputs, attrs: mean_reduce(inputs[0], attrs.get("axis")),
    "concat": lambda inputs, attrs: concat(inputs, attrs.get("axis", 0)),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "relu": lambda inputs, attrs: relu(*inputs),
    "square": lambda inputs, attrs: square(*inputs),
    "sqrt_safe": lambda inputs, attrs: sqrt_safe(*inputs),
    "softplus": lambda inputs, attrs: softplus(*inputs),
    "softmax": lambda inputs, attrs: softmax(inputs[0], attrs.get("axis", -1)),
    "transpose": lambda inputs, attrs: transpose(inputs[0], attrs["axes"]),
    "embedding_lookup": lambda inputs, attrs: embedding_lookup(inputs[0], attrs["indices"]),
    "slice": lambda inputs, attrs: slice_tensor(inputs[0], attrs["key"]),
    "reshape": lambda inputs, attrs: reshape(inputs[0], attrs["shape"]),
    "batch_norm": lambda inputs, attrs: batch_norm(
        inputs[0], inputs[1], inputs[2], attrs["state"], attrs["train_mode"]),
    "dropout": lambda inputs, attrs: dropout(
        inputs[0], attrs["rate"], attrs["train_mode"],
        rng=attrs.get("rng"), seed=attrs.get("seed")),
}

OP_KINDS = tuple(sorted(_OP_TABLE))


def op_forward(kind: str, inputs: Iterable[Tensor], **attrs) -> Tensor:
    """Apply an operation by kind name. Unknown kinds are configuration
    errors; shape mismatches raise DimensionError naming the operation."""
    try:
        fn = _OP_TABLE[kind]
    except KeyError:
        raise ConfigError(f"unknown operation kind {kind!r}; known: {OP_KINDS}")
    return fn(list(inputs), attrs)
