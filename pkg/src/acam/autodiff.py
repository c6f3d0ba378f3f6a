"""Dense float64 tensors with a reverse-mode gradient tape.

The model's forward pass is assembled from a fixed, small set of
primitives. Each primitive records one node on a tape together with a
closure that pushes the output gradient back to its inputs. The tape is
append-only during the forward pass and ``Tape.backward`` walks it once
in strict reverse creation order, so two identical forward passes yield
bit-identical gradients.

Shapes are deliberately strict: tensors are scalars, vectors or matrices,
and the only implicit broadcasts are the bias-vector and scalar expansions
the model actually uses. Anything else raises immediately, which catches
wiring bugs long before a gradient check would.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray
VjpFn = Callable[[Array], tuple]


class Tensor:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("data", "tape", "nid")

    def __init__(self, data: Array, tape: "Tape", nid: int):
        self.data = data
        self.tape = tape
        self.nid = nid

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.shape != ():
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.tape.op_of(self)!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class TapeNode:
    """One recorded operation: op tag, inputs, output value, backward closure."""

    __slots__ = ("op", "input_ids", "data", "vjp")

    def __init__(self, op: str, input_ids: tuple[int, ...], data: Array,
                 vjp: VjpFn | None):
        self.op = op
        self.input_ids = input_ids
        self.data = data
        self.vjp = vjp


class Tape:
    """Records one forward pass; consumed by a single ``backward`` call.

    A tape is confined to one thread. Leaves registered through
    :meth:`leaf` are memoized by array identity, so every use of a
    parameter array on the same tape shares one node and its gradient
    accumulates additively across all uses.
    """

    def __init__(self):
        self._nodes: list[TapeNode] = []
        self._leaves: list[Tensor] = []
        self._leaf_memo: dict[int, Tensor] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def op_of(self, t: Tensor) -> str:
        return self._nodes[t.nid].op

    def leaf(self, array: Array) -> Tensor:
        """Register a trainable array; repeated calls return the same node."""
        if not isinstance(array, np.ndarray) or array.dtype != np.float64:
            raise TypeError("leaf arrays must be float64 ndarrays")
        found = self._leaf_memo.get(id(array))
        if found is not None:
            return found
        t = self._record("leaf", array, (), None)
        self._leaves.append(t)
        self._leaf_memo[id(array)] = t
        return t

    def constant(self, array) -> Tensor:
        """Record a non-trainable value; receives no gradient."""
        data = np.asarray(array, dtype=np.float64)
        return self._record("const", data, (), None)

    def _record(self, op: str, data: Array, inputs: tuple[Tensor, ...],
                vjp: VjpFn | None) -> Tensor:
        for t in inputs:
            if t.tape is not self:
                raise ValueError(f"input of {op!r} was recorded on a different tape")
        node = TapeNode(op, tuple(t.nid for t in inputs), data, vjp)
        out = Tensor(data, self, len(self._nodes))
        self._nodes.append(node)
        return out

    def relu_input_margin(self) -> float:
        """Smallest |x| ever fed to relu on this tape (inf if relu unused).

        Finite-difference checks are only valid when no perturbation can
        cross the kink at 0; callers reject draws with a small margin.
        """
        margin = np.inf
        for node in self._nodes:
            if node.op == "relu":
                x = self._nodes[node.input_ids[0]].data
                margin = min(margin, float(np.abs(x).min()))
        return margin

    def backward(self, loss: Tensor) -> dict[Tensor, Array]:
        """Gradient of a scalar loss for every leaf; resets the tape.

        Leaves that do not reach the loss get an all-zero gradient. The
        returned dict is keyed by the leaf tensors themselves, so callers
        should keep references to them (or to ``tape.leaf(arr)`` results)
        from before this call.
        """
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[Array | None] = [None] * len(self._nodes)
        grads[loss.nid] = np.ones(())
        for nid in range(loss.nid, -1, -1):
            gout = grads[nid]
            node = self._nodes[nid]
            if gout is None or node.vjp is None:
                continue
            for in_id, gin in zip(node.input_ids, node.vjp(gout)):
                if gin is None or self._nodes[in_id].op == "const":
                    continue
                cur = grads[in_id]
                # never mutate a stored array in place; vjp outputs may alias
                grads[in_id] = gin if cur is None else cur + gin
        result: dict[Tensor, Array] = {}
        for leaf_t in self._leaves:
            g = grads[leaf_t.nid]
            result[leaf_t] = np.zeros_like(leaf_t.data) if g is None else np.asarray(g)
        self.reset()
        return result

    def reset(self) -> None:
        self._nodes.clear()
        self._leaves.clear()
        self._leaf_memo.clear()


def _as_operands(a, b, op: str) -> tuple:
    """Normalize a (Tensor|number, Tensor|number) pair for a binary op."""
    at, bt = isinstance(a, Tensor), isinstance(b, Tensor)
    if not at and not bt:
        raise TypeError(f"{op} needs at least one Tensor operand")
    if at and bt and a.tape is not b.tape:
        raise ValueError(f"{op} operands live on different tapes")
    return a, b


def add(a, b) -> Tensor:
    a, b = _as_operands(a, b, "add")
    if not isinstance(a, Tensor):          # number + tensor
        c = float(a)
        out = c + b.data
        return b.tape._record("add", out, (b,), lambda g: (g,))
    if not isinstance(b, Tensor):          # tensor + number
        c = float(b)
        out = a.data + c
        return a.tape._record("add", out, (a,), lambda g: (g,))
    if a.shape == b.shape:
        out = a.data + b.data
        return a.tape._record("add", out, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        # matrix + bias row vector
        out = a.data + b.data
        return a.tape._record("add", out, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.ndim == 0:
        out = a.data + b.data
        return a.tape._record("add", out, (a, b), lambda g: (g, np.asarray(g.sum())))
    if a.ndim == 0:
        out = a.data + b.data
        return a.tape._record("add", out, (a, b), lambda g: (np.asarray(g.sum()), g))
    raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a, b) -> Tensor:
    a, b = _as_operands(a, b, "sub")
    if not isinstance(a, Tensor):          # number - tensor
        c = float(a)
        out = c - b.data
        return b.tape._record("sub", out, (b,), lambda g: (-g,))
    if not isinstance(b, Tensor):
        c = float(b)
        out = a.data - c
        return a.tape._record("sub", out, (a,), lambda g: (g,))
    if a.shape == b.shape:
        out = a.data - b.data
        return a.tape._record("sub", out, (a, b), lambda g: (g, -g))
    if b.ndim == 0:
        out = a.data - b.data
        return a.tape._record("sub", out, (a, b), lambda g: (g, np.asarray(-g.sum())))
    raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")


def mul(a, b) -> Tensor:
    a, b = _as_operands(a, b, "mul")
    if not isinstance(a, Tensor):
        a, b = b, a                        # commutative; put the Tensor first
    if not isinstance(b, Tensor):
        c = float(b)
        out = a.data * c
        return a.tape._record("mul", out, (a,), lambda g: (g * c,))
    ad, bd = a.data, b.data
    if a.shape == b.shape:
        out = ad * bd
        return a.tape._record("mul", out, (a, b), lambda g: (g * bd, g * ad))
    if b.ndim == 0:
        out = ad * bd
        return a.tape._record(
            "mul", out, (a, b), lambda g: (g * bd, np.asarray((g * ad).sum())))
    if a.ndim == 0:
        out = ad * bd
        return a.tape._record(
            "mul", out, (a, b), lambda g: (np.asarray((g * bd).sum()), g * ad))
    raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")


def neg(a: Tensor) -> Tensor:
    return a.tape._record("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also covers vector-matrix and matrix-vector forms."""
    ad, bd = a.data, b.data
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = ad @ bd
        return a.tape._record("matmul", out, (a, b),
                              lambda g: (g @ bd.T, ad.T @ g))
    if a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = ad @ bd
        return a.tape._record("matmul", out, (a, b),
                              lambda g: (bd @ g, np.outer(ad, g)))
    if a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = ad @ bd
        return a.tape._record("matmul", out, (a, b),
                              lambda g: (np.outer(g, bd), ad.T @ g))
    raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose needs a matrix, got shape {a.shape}")
    return a.tape._record("transpose", a.data.T, (a,), lambda g: (g.T,))


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot shape mismatch: {a.shape} . {b.shape}")
    ad, bd = a.data, b.data
    out = np.asarray(ad @ bd)
    return a.tape._record("dot", out, (a, b), lambda g: (g * bd, g * ad))


def tanh_map(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return a.tape._record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def relu_map(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    mask = a.data > 0.0
    return a.tape._record("relu", y, (a,), lambda g: (g * mask,))


def sigmoid_map(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    y = y.reshape(x.shape)
    return a.tape._record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def log_map(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0.0):
        raise ValueError("log_map needs strictly positive input")
    return a.tape._record("log", np.log(x), (a,), lambda g: (g / x,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only through the interior."""
    x = a.data
    y = np.clip(x, lo, hi)
    mask = (x > lo) & (x < hi)
    return a.tape._record("clamp", y, (a,), lambda g: (g * mask,))


def _softmax(x: Array, axis: int) -> Array:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-stochastic softmax of a matrix (each row sums to 1)."""
    if a.ndim != 2:
        raise ValueError(f"softmax_rows needs a matrix, got shape {a.shape}")
    y = _softmax(a.data, axis=1)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return a.tape._record("softmax_rows", y, (a,), vjp)


def softmax_cols(a: Tensor) -> Tensor:
    """Column-stochastic softmax of a matrix (each column sums to 1)."""
    if a.ndim != 2:
        raise ValueError(f"softmax_cols needs a matrix, got shape {a.shape}")
    y = _softmax(a.data, axis=0)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=0, keepdims=True)),)

    return a.tape._record("softmax_cols", y, (a,), vjp)


def softmax_vec(a: Tensor) -> Tensor:
    if a.ndim != 1:
        raise ValueError(f"softmax_vec needs a vector, got shape {a.shape}")
    y = _softmax(a.data, axis=0)

    def vjp(g):
        return (y * (g - (g * y).sum()),)

    return a.tape._record("softmax_vec", y, (a,), vjp)


def sum_cols(a: Tensor) -> Tensor:
    """Column totals of a matrix: (m, n) -> (n,)."""
    if a.ndim != 2:
        raise ValueError(f"sum_cols needs a matrix, got shape {a.shape}")
    m = a.shape[0]
    out = a.data.sum(axis=0)
    return a.tape._record("sum_cols", out, (a,),
                          lambda g: (np.broadcast_to(g, (m, g.shape[0])),))


def avg_over_attributes(a: Tensor) -> Tensor:
    """Column means of a matrix: (m, n) -> (n,)."""
    if a.ndim != 2:
        raise ValueError(f"avg_over_attributes needs a matrix, got shape {a.shape}")
    m = a.shape[0]
    out = a.data.mean(axis=0)
    return a.tape._record("avg_over_attributes", out, (a,),
                          lambda g: (np.broadcast_to(g / m, (m, g.shape[0])),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    out = np.asarray(a.data.sum())
    return a.tape._record("sum_all", out, (a,),
                          lambda g: (np.full(shape, float(g)),))


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate vectors into one longer vector."""
    if len(parts) == 0:
        raise ValueError("concat needs at least one tensor")
    for p in parts:
        if p.ndim != 1:
            raise ValueError(f"concat needs vectors, got shape {p.shape}")
    lengths = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + lengths)
    out = np.concatenate([p.data for p in parts])

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return parts[0].tape._record("concat", out, tuple(parts), vjp)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack scalars into a vector, or equal-length vectors into a matrix."""
    if len(parts) == 0:
        raise ValueError("stack needs at least one tensor")
    first = parts[0].shape
    for p in parts:
        if p.shape != first or p.ndim > 1:
            raise ValueError(f"stack needs homogeneous scalars or vectors, "
                             f"got shapes {[q.shape for q in parts]}")
    out = np.stack([p.data for p in parts])

    def vjp(g):
        return tuple(np.asarray(g[i]) for i in range(len(parts)))

    return parts[0].tape._record("stack", out, tuple(parts), vjp)


def weighted_sum(weights: Tensor, vectors: Tensor) -> Tensor:
    """Sum of matrix rows scaled by per-row weights: (L,), (L, d) -> (d,)."""
    if weights.ndim != 1 or vectors.ndim != 2 or weights.shape[0] != vectors.shape[0]:
        raise ValueError(
            f"weighted_sum shape mismatch: {weights.shape} with {vectors.shape}")
    wd, vd = weights.data, vectors.data
    out = vd.T @ wd
    return weights.tape._record("weighted_sum", out, (weights, vectors),
                                lambda g: (vd @ g, np.outer(wd, g)))


def row(a: Tensor, i: int) -> Tensor:
    """Select row i of a matrix as a vector."""
    if a.ndim != 2:
        raise ValueError(f"row needs a matrix, got shape {a.shape}")
    if not 0 <= i < a.shape[0]:
        raise IndexError(f"row {i} out of range for shape {a.shape}")
    out = a.data[i].copy()

    def vjp(g):
        full = np.zeros(a.shape)
        full[i] = g
        return (full,)

    return a.tape._record("row", out, (a,), vjp)


def embedding_mean(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Mean of selected table rows; the usual multi-valued attribute lookup."""
    if table.ndim != 2:
        raise ValueError(f"embedding_mean needs a matrix, got shape {table.shape}")
    idx = [int(i) for i in ids]
    if len(idx) == 0:
        raise ValueError("embedding_mean needs at least one id")
    for i in idx:
        if not 0 <= i < table.shape[0]:
            raise IndexError(f"id {i} out of range for table shape {table.shape}")
    out = table.data[idx].mean(axis=0)
    shape = table.shape
    k = len(idx)

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g / k)
        return (full,)

    return table.tape._record("embedding_mean", out, (table,), vjp)
