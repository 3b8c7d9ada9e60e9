"""Dense float32 tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded in execution
order whenever one of their inputs is tracked (a leaf with
``requires_grad=True`` or the output of an earlier node on the same tape).
:func:`backward` walks the tape in reverse and returns a :class:`Gradients`
mapping for the differentiable leaves.

All reductions accumulate sequentially in a fixed order, so identical inputs
give bit-identical outputs.
"""
from __future__ import annotations

from collections.abc import Mapping
from math import prod
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float32)
        # ascontiguousarray would turn 0-d scalars into shape (1,)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis: Optional[int] = None):
        return reduce_sum(self, axis)

    def relu(self):
        return relu(self)


class Node:
    __slots__ = ("op", "parents", "out", "vjp", "fwd", "tape")

    def __init__(self, op, parents, out, vjp, fwd, tape):
        self.op = op
        self.parents = parents
        self.out = out
        self.vjp = vjp
        self.fwd = fwd
        self.tape = tape


class Tape:
    """Records primitive operations while active (use as a context manager)."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def tracks(self, t: Tensor) -> bool:
        if t._node is not None:
            return t._node.tape is self
        return t.requires_grad

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded node from the current leaf values."""
        values: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [values.get(id(p), p.data) for p in node.parents]
            v = node.fwd(*args)
            values[id(node.out)] = v
            out.append(v)
        return out

    def __len__(self):
        return len(self.nodes)


def _active() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, parents: tuple, fwd: Callable, vjp: Callable) -> Tensor:
    out = Tensor(fwd(*(p.data for p in parents)))
    tape = _active()
    if tape is not None and any(tape.tracks(p) for p in parents):
        node = Node(op, parents, out, vjp, fwd, tape)
        tape.nodes.append(node)
        out._node = node
    return out


class Gradients(Mapping):
    """Gradient lookup keyed by tensor identity; absent tensors map to zeros."""

    def __init__(self, pairs: Iterable[tuple[Tensor, np.ndarray]] = ()):
        self._tensors: dict[int, Tensor] = {}
        self._values: dict[int, np.ndarray] = {}
        for t, g in pairs:
            self._tensors[id(t)] = t
            self._values[id(t)] = g

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._values.get(id(t))
        if g is None:
            return np.zeros(t.shape, dtype=np.float32)
        return g

    def __contains__(self, t) -> bool:
        return id(t) in self._values

    def __iter__(self):
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._values)


def backward(tape: Tape, root: Tensor, sources: Optional[Sequence[Tensor]] = None) -> Gradients:
    """Differentiate a scalar ``root`` recorded on ``tape``.

    Returns gradients for every differentiable leaf that ``root`` depends on,
    or only for ``sources`` when given (unneeded branches are skipped).
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    seed = np.ones(root.shape, dtype=np.float32)
    if root._node is None or root._node.tape is not tape:
        if root.requires_grad and (sources is None or any(s is root for s in sources)):
            return Gradients([(root, seed)])
        return Gradients()

    if sources is None:
        def needed(t):
            return tape.tracks(t)
    else:
        live = {id(s) for s in sources}
        for node in tape.nodes:
            if any(id(p) in live for p in node.parents):
                live.add(id(node.out))

        def needed(t):
            return id(t) in live

    grads: dict[int, np.ndarray] = {id(root): seed}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        needs = tuple(needed(p) for p in node.parents)
        if not any(needs):
            continue
        pgrads = node.vjp(g, needs)
        for p, gp, nd in zip(node.parents, pgrads, needs):
            if not nd or gp is None:
                continue
            gp = np.asarray(gp, dtype=np.float32)
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + gp
            else:
                grads[k] = gp
            if p._node is None:
                leaves[k] = p
    wanted = None if sources is None else {id(s) for s in sources}
    return Gradients(
        (t, grads[k]) for k, t in leaves.items()
        if k in grads and (wanted is None or k in wanted)
    )


# -- primitives -------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    padded = (1,) * (g.ndim - len(shape)) + tuple(shape)
    summed = [i for i in range(g.ndim) if padded[i] == 1 and g.shape[i] != 1]
    kept = [i for i in range(g.ndim) if i not in summed]
    moved = np.transpose(g, summed + kept).reshape(-1, prod(g.shape[i] for i in kept))
    return _kernels.sum_rows(moved).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return _emit("add", (a, b), np.add, vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return _emit("sub", (a, b), np.subtract, vjp)


def mul(a, b) -> Tensor:
    """Elementwise product (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return _emit("mul", (a, b), np.multiply, vjp)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s32 = np.float32(s)
    return _emit("scale", (a,), lambda x: x * s32, lambda g, needs: (g * s32,))


def relu(a) -> Tensor:
    # gradient at exactly 0 is 0
    a = as_tensor(a)
    zero = np.float32(0)
    return _emit("relu", (a,), lambda x: np.maximum(x, zero),
                 lambda g, needs: (g * (a.data > 0),))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _emit("abs", (a,), np.abs, lambda g, needs: (g * np.sign(a.data),))


def square(a) -> Tensor:
    a = as_tensor(a)
    two = np.float32(2)
    return _emit("square", (a,), np.square, lambda g, needs: (g * (two * a.data),))


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _emit("reshape", (a,), lambda x: x.reshape(shape),
                 lambda g, needs: (g.reshape(src),))


def _sum_axis(x: np.ndarray, axis: Optional[int]) -> np.ndarray:
    if axis is None:
        return np.asarray(_kernels.sum_all(x), dtype=np.float32)
    axis = axis % x.ndim
    moved = np.moveaxis(x, axis, 0)
    rest = moved.shape[1:]
    return _kernels.sum_rows(moved.reshape(moved.shape[0], -1)).reshape(rest)


def reduce_sum(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g, needs):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("reduce_sum", (a,), lambda x: _sum_axis(x, axis), vjp)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(reduce_sum(a), 1.0 / a.size)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape} "
                         "(inner dimensions must agree)")

    def vjp(g, needs):
        da = _kernels.matmul(g, b.data.T) if needs[0] else None
        db = _kernels.matmul(a.data.T, g) if needs[1] else None
        return da, db

    return _emit("matmul", (a, b), _kernels.matmul, vjp)


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if k > size + 2 * pad:
        raise ValueError(f"conv2d: kernel {k} larger than padded input {size + 2 * pad}")
    if span % stride:
        raise ValueError(f"conv2d: ({size} + 2*{pad} - {k}) is not divisible by stride {stride}")
    return span // stride + 1


def _im2col(x, k, stride, pad, ho, wo):
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, ho, wo, c, k, k), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * ho * wo, c * k * k)


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an N x C x H x W batch with F x C x k x k filters."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d: incompatible input {x.shape} and kernel {w.shape}")
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(wd, k, stride, pad)
    cache = {}

    def fwd(xv, wv):
        cols = _im2col(xv, k, stride, pad, ho, wo)
        cache["cols"] = cols
        out = _kernels.matmul(cols, wv.reshape(f, -1).T)
        return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def vjp(g, needs):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        dw = dx = None
        if needs[1]:
            dw = _kernels.matmul(gm.T, cache["cols"]).reshape(w.shape)
        if needs[0]:
            dcols = _kernels.matmul(gm, w.data.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
            dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float32)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, dw

    return _emit("conv2d", (x, w), fwd, vjp)


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n, k):
            raise ValueError(f"soft labels must have shape {(n, k)}, got {labels.shape}")
        return labels.astype(np.float32), True
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("class labels must be integers")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}); got range "
                         f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64), False


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(_kernels.sum_rows(np.exp(shifted).T))
    return shifted - lse[:, None]


def softmax_cross_entropy(logits, labels, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(logits) against class indices or label rows.

    ``reduction`` is ``"mean"`` (default), ``"sum"`` or ``"none"`` (per-example).
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be N x K, got {logits.shape}")
    n, k = logits.shape
    target, soft = _check_labels(labels, n, k)
    if reduction not in ("mean", "sum", "none"):
        raise ValueError(f"unknown reduction {reduction!r}")
    rows = np.arange(n)

    def per_example(z):
        logp = _log_softmax(z)
        if soft:
            return -_kernels.sum_rows((target * logp).T)
        return -logp[rows, target]

    def fwd(z):
        losses = per_example(z)
        if reduction == "none":
            return losses
        total = _kernels.sum_all(losses)
        return np.asarray(total / np.float32(n) if reduction == "mean" else total,
                          dtype=np.float32)

    def vjp(g, needs):
        p = np.exp(_log_softmax(logits.data))
        if soft:
            d = p * _kernels.sum_rows(target.T)[:, None] - target
        else:
            d = p.copy()
            d[rows, target] -= 1
        if reduction == "none":
            return (d * g[:, None],)
        if reduction == "mean":
            g = g / np.float32(n)
        return (d * g,)

    return _emit("softmax_cross_entropy", (logits,), fwd, vjp)
