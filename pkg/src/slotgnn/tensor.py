"""Dense 2-D/3-D tensors with a reverse-mode autodiff tape.

Only the operations the model actually needs are provided. Tensors wrap
numpy arrays and are treated as immutable after creation; recording happens
on an explicit :class:`Tape` that is active for one forward pass. Reverse
accumulation walks the tape in reverse creation order, which is a valid
topological order because the tape is append-only.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class TapeError(TensorError):
    pass


_DEFAULT_DTYPE = np.float32
_ACTIVE_TAPE: "Tape | None" = None


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype, e.g. ``precision('float64')``."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


def _check_finite(arr: np.ndarray) -> None:
    # cheap screen first: any nan/inf makes the sum non-finite, and a finite
    # sum that merely overflowed is cleared by the precise pass
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(arr.sum()):
            return
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value produced")


class Tensor:
    """A dense real tensor, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # Small amount of operator sugar; everything routes through the module ops.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Append-only record of one forward pass.

    ``backward`` may be called once; the tape is consumed afterwards. Leaves
    (requires_grad tensors that feed recorded operations) accumulate into
    ``.grad`` additively; the optimizer is responsible for zeroing them.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._watched: dict[int, Tensor] = {}
        self._prev_tape: Tape | None = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev_tape = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev_tape

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        out._tape = self
        out._node = len(self.nodes)
        self.nodes.append(_Node(out, parents, backward))
        for p in parents:
            if p.requires_grad and p._node is None:
                self._watched[id(p)] = p

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Reverse accumulation from a scalar loss recorded on this tape.

        Returns a table mapping every watched leaf to its gradient; leaves not
        on any path to the loss get zero gradients.
        """
        if self.consumed:
            raise TapeError("backward called twice on a consumed tape")
        if loss.data.shape != ():
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            partials = node.backward(g)
            for parent, pg in zip(node.parents, partials):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

        table: dict[Tensor, np.ndarray] = {}
        for leaf in self._watched.values():
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            table[leaf] = g
        return table


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    if loss._tape is None:
        raise TapeError("loss is not on any tape")
    return loss._tape.backward(loss)


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    if requires and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, parents, backward_fn)
    return out


def zeros(shape: Sequence[int], dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype if dtype is not None else _DEFAULT_DTYPE))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, name=None) -> Tensor:
    """Trainable tensor initialized Xavier-uniform for the given fan."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, size=shape if shape is not None else (fan_in, fan_out))
    return Tensor(data, requires_grad=True, name=name)


def zero_param(shape: Sequence[int], name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also allows adding a length-d row vector to each row."""
    if a.shape == b.shape:
        def back(g):
            return g, g
        return _make(a.data + b.data, (a, b), back)
    if b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]

        def back(g):
            return g, g.reshape(-1, n).sum(axis=0)

        return _make(a.data + b.data, (a, b), back)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        return g, -g

    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        return g * b.data, g * a.data

    return _make(a.data * b.data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        return (g * c,)

    return _make(a.data * np.asarray(c, dtype=a.dtype), (a,), back)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def back(g):
        return (g * out_data,)

    return _make(out_data, (a,), back)


def log(a: Tensor) -> Tensor:
    def back(g):
        return (g / a.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)
    return _make(out_data, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b with b 2-D; a may be 2-D or a stack (3-D)."""
    if b.ndim != 2 or a.ndim not in (2, 3):
        raise ShapeError(f"matmul: unsupported ranks {a.ndim} @ {b.ndim}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    k, n = b.shape

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _make(a.data @ b.data, (a, b), back)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product: (B, m, k) @ (B, k, n) -> (B, m, n)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, 1, 2)
        gb = np.swapaxes(a.data, 1, 2) @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape

    def back(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; slices stay recoverable at their offsets."""
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].ndim
    if axis < 0 or axis >= ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError("concat: rank mismatch")
        other = list(t.shape)
        if base[:axis] + base[axis + 1:] != other[:axis] + other[axis + 1:]:
            raise ShapeError(f"concat: dimension mismatch {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            g[(slice(None),) * axis + (slice(offsets[i], offsets[i + 1]),)]
            for i in range(len(sizes))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def slice_axis(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    if axis < 0 or axis >= a.ndim or start < 0 or start + size > a.shape[axis]:
        raise ShapeError(f"slice_axis: [{start}:{start + size}] along {axis} of {a.shape}")
    index = (slice(None),) * axis + (slice(start, start + size),)

    def back(g):
        gz = np.zeros_like(a.data)
        gz[index] = g
        return (gz,)

    return _make(a.data[index].copy(), (a,), back)


# ---------------------------------------------------------------------------
# reductions and normalization


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        def back(g):
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

        return _make(a.data.sum(), (a,), back)
    if a.shape[axis] == 0:
        raise ShapeError("reduce_sum: empty axis")

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def reduce_mean(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Arithmetic mean along one axis; the gradient distributes 1/n."""
    if a.shape[axis] == 0:
        raise ShapeError("reduce_mean: empty axis")
    n = a.shape[axis]

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=True),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), back)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Exp-normalization along ``axis`` with max-subtraction for stability."""
    if axis < -a.ndim or axis >= a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {a.ndim}")
    if a.shape[axis] == 0:
        raise ShapeError("softmax: empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), back)


# ---------------------------------------------------------------------------
# indexed ops used by message passing


def gather(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0; the gradient scatter-adds back."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        gz = np.zeros_like(a.data)
        np.add.at(gz, idx, g)
        return (gz,)

    return _make(a.data[idx], (a,), back)


def segment_sum(a: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``seg``.

    Rows are accumulated in storage order, so callers that need bit-stable
    results across input permutations must present rows in a canonical order.
    """
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError("segment_sum: one segment id per row required")
    out_data = np.zeros((num_segments,) + a.shape[1:], dtype=a.dtype)
    np.add.at(out_data, seg, a.data)

    def back(g):
        return (g[seg],)

    return _make(out_data, (a,), back)


def edge_softmax(logits: Tensor, dst: np.ndarray, num_targets: int, mode: str = "joint") -> Tensor:
    """Normalize per-edge score blocks over each target's neighborhood.

    ``logits`` has shape (E, F_s, F_t) and ``dst[e]`` names the target of
    edge e. In ``joint`` mode the softmax runs over all (edge, source-slot)
    pairs of one target, independently per target slot, so each target slot
    receives a convex combination over its whole neighborhood. In ``literal``
    mode it runs over edges only, independently per (source slot, target
    slot) pair.
    """
    if logits.ndim != 3:
        raise ShapeError(f"edge_softmax: want (E, F_s, F_t), got {logits.shape}")
    dst = np.asarray(dst, dtype=np.int64)
    e_cnt, f_s, f_t = logits.shape
    if dst.shape[0] != e_cnt:
        raise ShapeError("edge_softmax: one target id per edge required")
    if e_cnt == 0:
        return _make(logits.data.copy(), (logits,), lambda g: (g,))

    x = logits.data
    if mode == "joint":
        m = np.full((num_targets, f_t), -np.inf, dtype=x.dtype)
        np.maximum.at(m, dst, x.max(axis=1))
        z = np.exp(x - m[dst][:, None, :])
        denom = np.zeros((num_targets, f_t), dtype=x.dtype)
        np.add.at(denom, dst, z.sum(axis=1))
        y = z / denom[dst][:, None, :]

        def back(g):
            w = g * y
            s = np.zeros((num_targets, f_t), dtype=x.dtype)
            np.add.at(s, dst, w.sum(axis=1))
            return (y * (g - s[dst][:, None, :]),)

    elif mode == "literal":
        m = np.full((num_targets, f_s, f_t), -np.inf, dtype=x.dtype)
        np.maximum.at(m, dst, x)
        z = np.exp(x - m[dst])
        denom = np.zeros((num_targets, f_s, f_t), dtype=x.dtype)
        np.add.at(denom, dst, z)
        y = z / denom[dst]

        def back(g):
            w = g * y
            s = np.zeros((num_targets, f_s, f_t), dtype=x.dtype)
            np.add.at(s, dst, w)
            return (y * (g - s[dst]),)

    else:
        raise ValueError(f"edge_softmax: unknown mode {mode!r}")

    return _make(y, (logits,), back)


# ---------------------------------------------------------------------------
# fused losses (numerically stable forward, hand-derived backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer class labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError("softmax_cross_entropy: one label per row required")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError("label index out of range")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    losses = lse - x[np.arange(n), labels]
    out_data = np.asarray(losses.mean(), dtype=x.dtype)

    def back(g):
        p = np.exp(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _make(out_data, (logits,), back)


def logistic_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean elementwise logistic loss against 0/1 targets (multi-label)."""
    targets = np.asarray(targets, dtype=logits.dtype)
    if targets.shape != logits.shape:
        raise ShapeError("logistic_loss: targets must match logits shape")
    x = logits.data
    losses = np.maximum(x, 0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    out_data = np.asarray(losses.mean(), dtype=x.dtype)
    count = x.size

    def back(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return (g * (sig - targets) / count,)

    return _make(out_data, (logits,), back)


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must be a deterministic scalar function of ``params`` evaluated in
    64-bit mode; determinism is verified by evaluating twice.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("finite_diff_check requires float64 parameters")

    v1 = f().item()
    v2 = f().item()
    if v1 != v2:
        raise ValueError("finite_diff_check: f is not deterministic")

    with Tape() as tape:
        loss = f()
        # a loss that never touched the tape is constant in the params
        table = tape.backward(loss) if loss._tape is tape else {}

    worst = 0.0
    for p in params:
        g_ad = table.get(p)
        if g_ad is None:
            g_ad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            g_fd = (up - down) / (2.0 * h)
            g = g_ad.reshape(-1)[i]
            err = abs(g - g_fd) / max(1e-8, abs(g) + abs(g_fd))
            worst = max(worst, err)
    return worst
