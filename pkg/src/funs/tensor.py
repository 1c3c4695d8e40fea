"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Every value is a float64 matrix. Operations record their parents and a
closure that maps the output adjoint to input adjoints; :func:`backward`
walks the recorded graph in reverse topological order and accumulates
adjoints additively, so shared subexpressions are handled correctly.

Only the primitives needed by the graph recurrent model and the LSTM
baseline are provided. There is no general broadcasting: row-vector
bias addition and column-vector row scaling are separate primitives.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    def __radd__(self, other):
        return add(_lift(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.shape))

    def __rsub__(self, other):
        return sub(_lift(other, self.shape), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.full(shape, float(x)))
    return Tensor(x)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def bw(g):
        return g * b.data, g * a.data

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def one_minus(a: Tensor) -> Tensor:
    return _make(1.0 - a.data, (a,), lambda g: (-g,), "one_minus")


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """a + row, with a 1 x c row vector added to every row of a."""
    if row.rows != 1 or row.cols != a.cols:
        raise ShapeError(f"add_row: row {row.shape} does not fit {a.shape}")
    return _make(a.data + row.data, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_row")


def mul_col(a: Tensor, col: Tensor) -> Tensor:
    """Scale row i of a by col[i, 0]."""
    if col.cols != 1 or col.rows != a.rows:
        raise ShapeError(f"mul_col: column {col.shape} does not fit {a.shape}")

    def bw(g):
        return g * col.data, (g * a.data).sum(axis=1, keepdims=True)

    return _make(a.data * col.data, (a, col), bw, "mul_col")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data
    out = np.maximum(x, slope * x) if 0.0 <= slope <= 1.0 else np.where(x > 0, x, slope * x)

    def bw(g):
        return (np.where(x > 0, g, slope * g),)

    return _make(out, (a,), bw, "leaky_relu")


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator] = None, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when not training or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation a || b."""
    if a.rows != b.rows:
        raise ShapeError(f"concat: row mismatch {a.shape} vs {b.shape}")
    k = a.cols
    return _make(np.hstack([a.data, b.data]), (a, b), lambda g: (g[:, :k], g[:, k:]), "concat")


def concat_many(parts: Sequence[Tensor]) -> Tensor:
    out = parts[0]
    for p in parts[1:]:
        out = concat(out, p)
    return out


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Vertical concatenation of equally wide tensors."""
    widths = {p.cols for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"stack_rows: inconsistent widths {sorted(widths)}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.vstack([p.data for p in parts]), tuple(parts), bw, "stack_rows")


def gather_rows(a: Tensor, idx: np.ndarray, plan: Optional[tuple] = None) -> Tensor:
    """Rows ``a[idx]``.

    ``plan = (order, starts)`` speeds up the backward scatter when every
    row of ``a`` occurs in ``idx``: ``idx[order]`` is sorted and ``starts``
    marks where each row's run begins.
    """
    idx = np.asarray(idx, dtype=np.int64)
    n = a.rows

    if plan is None:
        def bw(g):
            out = np.zeros((n, g.shape[1]))
            np.add.at(out, idx, g)
            return (out,)
    else:
        order, starts = plan

        def bw(g):
            return (_segment_reduce(np.add, g[order], starts, 0.0),)

    return _make(a.data[idx], (a,), bw, "gather_rows")


def _segment_reduce(ufunc, x: np.ndarray, starts: np.ndarray, pad: float) -> np.ndarray:
    """``ufunc.reduceat`` over contiguous segments beginning at ``starts``;
    empty segments (including trailing ones) yield ``pad``."""
    starts = np.asarray(starts, dtype=np.int64)
    ext = np.concatenate([x, np.full((1,) + x.shape[1:], pad)], axis=0)
    out = ufunc.reduceat(ext, starts, axis=0)
    ends = np.append(starts[1:], x.shape[0])
    out[ends <= starts] = pad
    return out


def segment_sum(a: Tensor, starts: np.ndarray, seg: np.ndarray) -> Tensor:
    """Sum rows within contiguous segments (rows sorted by ``seg``);
    empty segments sum to zero."""
    out = _segment_reduce(np.add, a.data, starts, 0.0)
    return _make(out, (a,), lambda g: (g[seg],), "segment_sum")


def segment_softmax(scores: Tensor, starts: np.ndarray, seg: np.ndarray) -> Tensor:
    """Softmax of an E x 1 score column within contiguous segments.

    ``seg`` gives the segment id of each row (sorted ascending) and
    ``starts`` the first row of each segment; every segment is nonempty.
    """
    if scores.cols != 1:
        raise ShapeError(f"segment_softmax expects a column, got {scores.shape}")
    s = scores.data[:, 0]
    shifted = s - _segment_reduce(np.maximum, s, starts, -np.inf)[seg]
    ex = np.exp(shifted)
    c = ex / _segment_reduce(np.add, ex, starts, 0.0)[seg]

    def bw(g):
        gc = g[:, 0] * c
        return ((gc - c * _segment_reduce(np.add, gc, starts, 0.0)[seg])[:, None],)

    return _make(c[:, None], (scores,), bw, "segment_softmax")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


_UNARY = {"sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(tag: str, a: Tensor, b: Optional[Tensor] = None, **kw) -> Tensor:
    """Dispatch an elementwise primitive by name.

    Binary tags: add, mul, sub. Unary tags: sigmoid, tanh,
    leaky_relu (``slope``), dropout (``p``, ``rng``, ``training``).
    """
    if tag in _BINARY:
        if b is None:
            raise ValueError(f"{tag} needs two operands")
        return _BINARY[tag](as_tensor(a), as_tensor(b))
    if tag in _UNARY:
        return _UNARY[tag](as_tensor(a))
    if tag == "leaky_relu":
        return leaky_relu(as_tensor(a), kw.get("slope", 0.2))
    if tag == "dropout":
        return dropout(as_tensor(a), kw["p"], kw.get("rng"), kw.get("training", True))
    raise ValueError(f"unknown elementwise tag {tag!r}")


# ----------------------------------------------------------------------------
# reverse pass
# ----------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    Returns a map from each reachable leaf tensor to its gradient.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topo_order(loss)
    grads = {id(loss): np.ones((1, 1))}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Worst relative error between the tape gradient of ``f`` at ``x``
    and central finite differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8)
    as the denominator.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("f is not finite at x")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    with no_grad():
        for idx in np.ndindex(*x0.shape):
            xp = x0.copy()
            xp[idx] += eps
            xm = x0.copy()
            xm[idx] -= eps
            fp, fm = f(Tensor(xp)).item(), f(Tensor(xm)).item()
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"f is not finite near coordinate {idx}")
            numeric[idx] = (fp - fm) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
