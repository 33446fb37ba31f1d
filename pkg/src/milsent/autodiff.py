"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a local-gradient closure on the
produced tensor; ``backward`` replays the recorded graph (the tape) in
reverse topological order. Gradients accumulate additively across
backward passes, so callers must reset them between optimizer steps.
A graph and its tensors belong to a single thread; independent model
instances may run concurrently.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import DegenerateMaskError, ShapeError, ValidationError

_node_ids = itertools.count()


class Tensor:
    """One node of the computation graph: float64 data plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor whose gradient is retained across backward passes."""
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward_fn
    return out


class Tape:
    """The operations reachable from a root, parents strictly before children."""

    def __init__(self, root: Tensor):
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if ready:
                nodes.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.node_id not in seen:
                    stack.append((p, False))
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every node below ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}

    def accumulate(parent: Tensor, g: np.ndarray) -> None:
        pid = parent.node_id
        held = grads.get(pid)
        grads[pid] = g if held is None else held + g

    for node in reversed(tape.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.requires_grad or node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            node._backward(g, accumulate)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)

        def bk_const(g, acc):
            acc(a, g)

        return _op(a.data + c, (a,), bk_const)
    b = _as_tensor(b)
    if a.shape == b.shape:

        def bk_same(g, acc):
            acc(a, g)
            acc(b, g)

        return _op(a.data + b.data, (a, b), bk_same)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        # matrix plus row vector (bias broadcast)
        def bk_row(g, acc):
            acc(a, g)
            acc(b, g.sum(axis=0))

        return _op(a.data + b.data, (a, b), bk_row)
    if a.data.ndim == 1 and b.data.ndim == 2:
        return add(b, a)
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a, b) -> Tensor:
    return add(a, mul(_as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)

        def bk_const(g, acc):
            acc(a, g * c)

        return _op(a.data * c, (a,), bk_const)
    b = _as_tensor(b)
    if a.shape == b.shape:

        def bk_same(g, acc):
            acc(a, g * b.data)
            acc(b, g * a.data)

        return _op(a.data * b.data, (a, b), bk_same)
    if (
        a.data.ndim == 2
        and b.data.ndim == 2
        and b.shape == (a.shape[0], 1)
    ):
        # matrix scaled per row by a column vector (masks, attention weights)
        def bk_col(g, acc):
            acc(a, g * b.data)
            acc(b, (g * a.data).sum(axis=1, keepdims=True))

        return _op(a.data * b.data, (a, b), bk_col)
    if a.data.ndim == 2 and b.data.ndim == 2 and a.shape == (b.shape[0], 1):
        return mul(b, a)
    raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")

    def bk(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)

    return _op(a.data @ b.data, (a, b), bk)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")

    def bk(g, acc):
        acc(x, g.T)

    return _op(x.data.T, (x,), bk)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape

    def bk(g, acc):
        acc(x, g.reshape(old))

    return _op(x.data.reshape(shape), (x,), bk)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bk(g, acc):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            acc(p, piece)

    return _op(np.concatenate([p.data for p in parts], axis=axis), parts, bk)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x) -> Tensor:
    x = _as_tensor(x)
    keep = x.data > 0.0  # subgradient at 0 is 0

    def bk(g, acc):
        acc(x, g * keep)

    return _op(np.where(keep, x.data, 0.0), (x,), bk)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def bk(g, acc):
        acc(x, g * (1.0 - out_data * out_data))

    return _op(out_data, (x,), bk)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def bk(g, acc):
        acc(x, g * out_data * (1.0 - out_data))

    return _op(out_data, (x,), bk)


def log(x) -> Tensor:
    x = _as_tensor(x)

    def bk(g, acc):
        acc(x, g / x.data)

    return _op(np.log(x.data), (x,), bk)


def clip_min(x, lo: float) -> Tensor:
    x = _as_tensor(x)
    keep = x.data > lo

    def bk(g, acc):
        acc(x, g * keep)

    return _op(np.maximum(x.data, lo), (x,), bk)


def softmax(x, valid=None) -> Tensor:
    """Row-wise softmax over the last axis of a vector or matrix.

    ``valid`` is an optional boolean mask of the same shape; masked
    positions get probability exactly 0 (their logits are treated as
    -inf). A row with no valid position raises DegenerateMaskError.
    Logits are shifted by the row max for stability.
    """
    x = _as_tensor(x)
    one_d = x.data.ndim == 1
    z = x.data[None, :] if one_d else x.data
    if z.ndim != 2:
        raise ShapeError(f"softmax needs a vector or matrix, got shape {x.shape}")
    if valid is not None:
        v = np.asarray(valid, dtype=bool).reshape(z.shape)
        if not v.any(axis=1).all():
            raise DegenerateMaskError("softmax mask disables an entire row")
        z = np.where(v, z, -np.inf)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    out_data = e / e.sum(axis=1, keepdims=True)

    def bk(g, acc):
        g2 = g[None, :] if one_d else g
        inner = (g2 * out_data).sum(axis=1, keepdims=True)
        dx = out_data * (g2 - inner)
        acc(x, dx[0] if one_d else dx)

    return _op(out_data[0] if one_d else out_data, (x,), bk)


# ---------------------------------------------------------------------------
# reductions, gathering, pooling


def sum_all(x) -> Tensor:
    x = _as_tensor(x)

    def bk(g, acc):
        acc(x, np.broadcast_to(g, x.shape))

    return _op(np.asarray(x.data.sum()), (x,), bk)


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    return mul(sum_all(x), 1.0 / x.size)


def _scatter_add_rows(template: np.ndarray, index: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(template)
    cols = template.shape[1]
    if cols <= 64:  # bincount per column beats add.at for narrow matrices
        n = template.shape[0]
        for c in range(cols):
            out[:, c] = np.bincount(index, weights=g[:, c], minlength=n)
    else:
        np.add.at(out, index, g)
    return out


def gather_rows(x, index) -> Tensor:
    """Select rows of a matrix by integer index; duplicates allowed.

    The backward pass scatter-adds gradient rows back, so repeated
    indices accumulate (this is what makes embedding lookups work).
    """
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got shape {x.shape}")
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValidationError("gather_rows index out of range")

    def bk(g, acc):
        acc(x, _scatter_add_rows(x.data, idx, g))

    return _op(x.data[idx], (x,), bk)


def pick(x, columns) -> Tensor:
    """Take one entry per row: out[i] = x[i, columns[i]]."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"pick needs a matrix, got shape {x.shape}")
    cols = np.asarray(columns, dtype=np.intp).reshape(-1)
    n, c = x.shape
    if cols.size != n:
        raise ShapeError("pick needs one column index per row")
    if cols.size and (cols.min() < 0 or cols.max() >= c):
        raise ValidationError("pick column index out of range")
    rows = np.arange(n)

    def bk(g, acc):
        dx = np.zeros_like(x.data)
        dx[rows, cols] = g
        acc(x, dx)

    return _op(x.data[rows, cols], (x,), bk)


def sum_groups(x, group_size: int) -> Tensor:
    """Sum consecutive row blocks: (G*group_size, f) -> (G, f)."""
    x = _as_tensor(x)
    n, f = x.shape
    if group_size < 1 or n % group_size:
        raise ShapeError(f"{n} rows do not split into groups of {group_size}")
    groups = n // group_size

    def bk(g, acc):
        acc(x, np.repeat(g, group_size, axis=0))

    return _op(x.data.reshape(groups, group_size, f).sum(axis=1), (x,), bk)


def max_pool_groups(x, group_size: int, valid_counts=None) -> Tensor:
    """Column-wise max over consecutive row blocks: (G*group_size, f) -> (G, f).

    ``valid_counts[i]`` limits block i to its first entries; a block
    with zero valid rows yields zeros and routes no gradient. Gradient
    goes to the first maximal row per column.
    """
    x = _as_tensor(x)
    n, f = x.shape
    if group_size < 1 or n % group_size:
        raise ShapeError(f"{n} rows do not split into groups of {group_size}")
    groups = n // group_size
    xr = x.data.reshape(groups, group_size, f)
    if valid_counts is None:
        valid = np.ones((groups, group_size), dtype=bool)
    else:
        counts = np.asarray(valid_counts, dtype=np.intp).reshape(-1)
        if counts.size != groups:
            raise ShapeError("one valid count per group required")
        if counts.max(initial=0) > group_size or counts.min(initial=0) < 0:
            raise ValidationError("valid count outside [0, group_size]")
        valid = np.arange(group_size)[None, :] < counts[:, None]
    masked = np.where(valid[:, :, None], xr, -np.inf)
    idx = masked.argmax(axis=1)  # first index on ties
    out_data = np.take_along_axis(masked, idx[:, None, :], axis=1)[:, 0, :]
    empty = ~valid.any(axis=1)
    if empty.any():
        out_data[empty] = 0.0

    def bk(g, acc):
        dx = np.zeros_like(xr)
        np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
        if empty.any():
            dx[empty] = 0.0
        acc(x, dx.reshape(n, f))

    return _op(out_data, (x,), bk)


def max_over_time(x, valid_count=None) -> Tensor:
    """Column-wise maximum of an (n, f) matrix over its time axis."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"max_over_time needs a matrix, got shape {x.shape}")
    n, f = x.shape
    vc = n if valid_count is None else int(valid_count)
    if not 1 <= vc <= n:
        raise ValidationError(f"valid_count {vc} outside [1, {n}]")
    window = x.data[:vc]
    idx = window.argmax(axis=0)  # first index on ties
    cols = np.arange(f)

    def bk(g, acc):
        dx = np.zeros_like(x.data)
        dx[idx, cols] = g
        acc(x, dx)

    return _op(window[idx, cols], (x,), bk)


def dropout(x, rate: float, rng=None, train: bool = False) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-rate) at train time.

    Evaluation mode (or rate 0) is the identity.
    """
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate {rate} outside [0, 1)")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValidationError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bk(g, acc):
        acc(x, g * mask)

    return _op(x.data * mask, (x,), bk)


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference(f, tensors, step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradients of the scalar ``f()`` w.r.t. each tensor.

    ``f`` must recompute its value from the tensors' current data; the
    data is perturbed in place and restored.
    """
    grads = []
    for t in tensors:
        flat = t.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g.reshape(t.shape))
    return grads


def gradient_error(analytic, numeric, floor: float = 1e-3) -> float:
    """Worst relative disagreement between two gradients.

    The ``floor`` keeps near-zero entries from dominating: an error of
    1e-4 under the default floor tolerates absolute differences up to
    1e-7 where both gradients vanish.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
