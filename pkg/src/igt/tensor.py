"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every value flowing through the model is a 2-D matrix.  Operations build an
implicit tape: each result records its op kind, its parent tensors, and a
closure implementing the backward rule.  ``backward(loss)`` walks the tape
once in reverse topological order, accumulating gradient contributions
additively into every tensor that requires them, then consumes the tape.

Design constraints enforced here:

- only 2-D shapes (vectors are 1xN or Nx1 matrices);
- no implicit broadcasting: binary ops demand equal shapes, the only
  broadcast-like primitives are the scalar ops and ``add_bias`` (explicit
  row-vector addition, needed for affine layers);
- element precision is float32 or float64, chosen per run; mixed-precision
  arithmetic is rejected;
- ReLU uses the 0-at-0 subgradient.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DTYPES = {"f32": np.float32, "f64": np.float64}
DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

_default_dtype = np.dtype(np.float64)
_grad_enabled = True


def set_default_dtype(precision: str) -> None:
    """Set the element type used by tensor constructors ("f32" or "f64")."""
    global _default_dtype
    if precision not in DTYPES:
        raise ContractError(f"unknown precision {precision!r}, expected one of {sorted(DTYPES)}")
    _default_dtype = np.dtype(DTYPES[precision])


def default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def using_dtype(precision: str):
    """Temporarily switch the default element type."""
    global _default_dtype
    previous = _default_dtype
    set_default_dtype(precision)
    try:
        yield
    finally:
        _default_dtype = previous


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (pure inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A rows x cols matrix, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        if data.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {data.shape}")
        self.data = data
        self.grad: np.ndarray | None = np.zeros_like(data) if (requires_grad and not parents) else None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward = backward

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """The backing array (do not mutate in place)."""
        return self.data

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={DTYPE_NAMES[self.data.dtype]}, op={self.op!r})"


def tensor(values, dtype: np.dtype | None = None, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor; 1-D input becomes a row vector, a scalar becomes 1x1."""
    arr = np.asarray(values, dtype=dtype if dtype is not None else _default_dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
    return Tensor(np.ascontiguousarray(arr), requires_grad=requires_grad)


def zeros(rows: int, cols: int, dtype: np.dtype | None = None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros((rows, cols), dtype=dtype if dtype is not None else _default_dtype),
                  requires_grad=requires_grad)


def op_result(data: np.ndarray, op: str, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    """Register an operation result on the tape.

    Fused ops elsewhere in the package (neighbor aggregation, the tiled
    attention kernel) use this entry point to supply their own backward
    rules; the tape treats them exactly like the primitives below.
    """
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=tuple(parents), backward=backward)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"matmul: mixed dtypes {a.data.dtype} and {b.data.dtype}")
    out = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return op_result(out, "matmul", (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g)

    return op_result(out, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    return op_result(out, "sub", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return op_result(out, "mul", (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * s)

    return op_result(out, "scale", (a,), backward)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + float(s)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g)

    return op_result(out, "add_scalar", (a,), backward)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a 1 x n row vector to every row of an m x n matrix.

    The one sanctioned non-scalar broadcast, as an explicit op so the
    backward rule (column sums for the bias) is unambiguous.
    """
    if b.rows != 1 or b.cols != a.cols:
        raise DimensionError(f"add_bias: need bias 1x{a.cols}, got {b.shape} for input {a.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"add_bias: mixed dtypes {a.data.dtype} and {b.data.dtype}")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0, keepdims=True))

    return op_result(out, "add_bias", (a, b), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0))

    return op_result(out, "relu", (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * (1.0 - out * out))

    return op_result(out, "tanh", (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * out)

    return op_result(out, "exp", (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            _accumulate(a, out * (g - dot))

    return op_result(out, "softmax_rows", (a,), backward)


def transpose(a: Tensor) -> Tensor:
    out = np.ascontiguousarray(a.data.T)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g.T)

    return op_result(out, "transpose", (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
    out = np.ascontiguousarray(a.data[:, start:stop])

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _accumulate(a, full)

    return op_result(out, "slice_cols", (a,), backward)


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ContractError("concat_cols: need at least one tensor")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise DimensionError(f"concat_cols: row counts differ, {rows} vs {p.rows}")
        if p.data.dtype != parts[0].data.dtype:
            raise ContractError("concat_cols: mixed dtypes")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.cols for p in parts]

    def backward(g: np.ndarray) -> None:
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accumulate(p, g[:, offset:offset + w])
            offset += w

    return op_result(out, "concat_cols", parts, backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.array([[a.data.sum()]], dtype=a.data.dtype)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, g[0, 0]))

    return op_result(out, "sum_all", (a,), backward)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log softmax probability of ``label`` for a 1 x C logit row."""
    if logits.rows != 1:
        raise DimensionError(f"cross_entropy: logits must be 1xC, got {logits.shape}")
    n_classes = logits.cols
    if not 0 <= label < n_classes:
        raise ContractError(f"cross_entropy: label {label} out of range for {n_classes} classes")
    z = logits.data[0]
    m = z.max()
    e = np.exp(z - m)
    total = e.sum()
    probs = e / total
    loss = np.log(total) + m - z[label]
    out = np.array([[loss]], dtype=logits.data.dtype)

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            d = probs.copy()
            d[label] -= 1.0
            _accumulate(logits, g[0, 0] * d.reshape(1, -1))

    return op_result(out, "cross_entropy", (logits,), backward)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(x) to every tensor reachable on the tape.

    The loss must be 1x1.  Visits each tape node exactly once in reverse
    topological order; gradients of shared inputs accumulate.  The tape is
    consumed: node links are cleared so a second backward needs a fresh
    forward pass.
    """
    if loss.data.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not require grad (empty tape)")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node.parents:
            node.parents = ()
            node._backward = None
