"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy array plus an optional gradient
buffer. Every differentiable primitive records an entry on a global
``Tape``; ``backward(loss)`` replays the tape in reverse and accumulates
adjoints into every reachable tensor that requires grad. The tape is
consumed by ``backward`` (one backward per recorded graph); gradients on
leaves accumulate across rounds until the caller zeroes them.

Precision is module-global: float32 by default (training speed), with a
``precision("float64")`` context for the finite-difference checking that
float32 cannot support. ``grad_check`` is the oracle used throughout the
test suite: central differences against the recorded adjoints.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import backend

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "no_grad",
    "precision",
    "default_dtype",
    "clear_tape",
    "tape_size",
    "backward",
    "grad_check",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "sqrt",
    "scale",
    "add_const",
    "neg",
    "exp",
    "log",
    "tanh",
    "relu",
    "sigmoid",
    "tsum",
    "tmean",
    "max_over",
    "concat",
    "slice_axis",
    "reshape",
    "transpose",
    "gather_rows",
    "softmax",
    "layer_norm",
    "cross_entropy",
]


class ShapeError(ValueError):
    """Raised when operand shapes or axes violate an operation's contract."""


class _State:
    def __init__(self):
        self.default_dtype = np.dtype(np.float32)
        self.grad_enabled = True
        self.tape: list[tuple] = []  # (output, inputs, backward_fn)


_state = _State()


def default_dtype() -> np.dtype:
    return _state.default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype!r}")
    old = _state.default_dtype
    _state.default_dtype = dt
    try:
        yield
    finally:
        _state.default_dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / decoding / finite differences)."""
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def clear_tape() -> None:
    _state.tape.clear()


def tape_size() -> int:
    return len(_state.tape)


class Tensor:
    """Dense n-d array with optional gradient buffer.

    ``data`` is always row-major float32/float64; ``grad`` is lazily
    allocated with identical shape on first adjoint accumulation.
    Tensors recorded on the tape must not be mutated in place.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        dt = np.dtype(dtype) if dtype is not None else _state.default_dtype
        arr = np.asarray(data, dtype=dt)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d scalars 0-d
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; the free functions do the real work
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, float(other))

    def __radd__(self, other):
        return add_const(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _record(output: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        _state.tape.append((output, tuple(inputs), backward_fn))
    return output


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from ``loss``.

    ``loss`` must be a scalar recorded on the active tape; the tape is
    consumed. Leaf gradients accumulate across calls until zeroed.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad (nothing on the tape)")
    loss.grad = np.ones_like(loss.data)
    entries = _state.tape
    for output, inputs, backward_fn in reversed(entries):
        if output.grad is None:
            continue
        grads = backward_fn(output.grad)
        for inp, g in zip(inputs, grads):
            if g is not None and inp.requires_grad:
                _accumulate(inp, g)
    entries.clear()


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(f"mixed tensor dtypes: {dt} vs {t.data.dtype}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, dtype=a.dtype)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def _broadcast_pair(a: Tensor, b: Tensor):
    """Validate the allowed broadcast forms: equal shapes, trailing vector, scalar."""
    if a.shape == b.shape:
        return None
    if b.data.ndim == 0:
        return "scalar"
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "trailing"
    raise ShapeError(f"unsupported broadcast: {a.shape} with {b.shape}")


def _reduce_to(g: np.ndarray, mode, shape) -> np.ndarray:
    if mode is None:
        return g
    if mode == "scalar":
        return np.asarray(g.sum(), dtype=g.dtype)
    # trailing vector: sum over all leading axes
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    mode = _broadcast_pair(a, b)
    out = Tensor(a.data + b.data, dtype=a.dtype)

    def bwd(g):
        return g, _reduce_to(g, mode, b.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    mode = _broadcast_pair(a, b)
    out = Tensor(a.data - b.data, dtype=a.dtype)

    def bwd(g):
        return g, -_reduce_to(g, mode, b.shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    mode = _broadcast_pair(a, b)
    out = Tensor(a.data * b.data, dtype=a.dtype)

    def bwd(g):
        return g * b.data, _reduce_to(g * a.data, mode, b.shape)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    mode = _broadcast_pair(a, b)
    out = Tensor(a.data / b.data, dtype=a.dtype)

    def bwd(g):
        ga = g / b.data
        gb = _reduce_to(-g * a.data / (b.data * b.data), mode, b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y, dtype=a.dtype)
    return _record(out, (a,), lambda g: (g / (2.0 * y),))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    out = Tensor(a.data * c, dtype=a.dtype)
    return _record(out, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + a.data.dtype.type(c), dtype=a.dtype)
    return _record(out, (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, dtype=a.dtype)
    return _record(out, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, dtype=a.dtype)
    return _record(out, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), dtype=a.dtype)
    return _record(out, (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, dtype=a.dtype)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), dtype=a.dtype)
    m = (a.data > 0).astype(a.data.dtype)
    return _record(out, (a,), lambda g: (g * m,))


def sigmoid(a: Tensor) -> Tensor:
    # stable logistic in both tails
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, dtype=a.dtype)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"sum axis {axis} out of range for shape {a.shape}")
    out = Tensor(a.data.sum(axis=axis), dtype=a.dtype)

    def bwd(g):
        if axis is None:
            return (np.full_like(a.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(out, (a,), bwd)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def max_over(a: Tensor, axis: int) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"max axis {axis} out of range for shape {a.shape}")
    idx = np.argmax(a.data, axis=axis)  # first max wins on ties
    out = Tensor(np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis),
                 dtype=a.dtype)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (ga,)

    return _record(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    _check_same_dtype(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 dtype=tensors[0].dtype)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(out, tuple(tensors), bwd)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"slice axis {axis} out of range for shape {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(a.data[sl].copy(), dtype=a.dtype)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = Tensor(a.data.reshape(shape), dtype=a.dtype)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-d, got shape {a.shape}")
    out = Tensor(a.data.T.copy(), dtype=a.dtype)
    return _record(out, (a,), lambda g: (g.T.copy(),))


def gather_rows(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise ShapeError(f"gather_rows expects 2-d table and 1-d ids, got {table.shape} / {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"gather_rows id out of range 0..{table.shape[0] - 1}")
    out = Tensor(table.data[ids].copy(), dtype=table.dtype)

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), bwd)


def _rows_view(x: np.ndarray, axis: int):
    """Move ``axis`` last and flatten to 2-d; returns (rows, restore)."""
    moved = np.moveaxis(x, axis, -1)
    shape = moved.shape
    rows = np.ascontiguousarray(moved.reshape(-1, shape[-1]))

    def restore(r):
        return np.moveaxis(r.reshape(shape), -1, axis)

    return rows, restore


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    ``mask`` is an optional boolean keep-mask of ``x``'s shape; masked
    positions get probability exactly 0. A slice with nothing kept is a
    contract violation.
    """
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    rows, restore = _rows_view(x.data, axis)
    if mask is None:
        y_rows = backend.softmax_rows(rows)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"mask shape {mask.shape} != input shape {x.shape}")
        mrows, _ = _rows_view(mask, axis)
        y_rows = backend.softmax_rows_masked(rows, mrows)
    out = Tensor(restore(y_rows), dtype=x.dtype)

    def bwd(g):
        grows, rest = _rows_view(np.ascontiguousarray(g), axis)
        return (rest(backend.softmax_rows_grad(y_rows, grows)),)

    return _record(out, (x,), bwd)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"layer_norm needs a non-empty last axis, got {x.shape}")
    rows = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    y_rows, inv = backend.layernorm_rows(rows, float(eps))
    out = Tensor(y_rows.reshape(x.shape), dtype=x.dtype)

    def bwd(g):
        grows = np.ascontiguousarray(g.reshape(-1, x.shape[-1]))
        return (backend.layernorm_rows_grad(y_rows, inv, grows).reshape(x.shape),)

    return _record(out, (x,), bwd)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean of -log softmax(logits)[target] over unmasked positions.

    ``targets`` is an int sequence of length n for logits [n, vocab];
    ``mask`` an optional boolean keep-sequence (True = contributes).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy expects logits [n,v] and n targets, got {logits.shape} / {targets.shape}")
    if targets.size == 0:
        raise ShapeError("cross_entropy on zero positions")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise IndexError("cross_entropy target id out of vocabulary range")
    if mask is None:
        keep = np.ones(targets.shape[0], dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != targets.shape:
            raise ShapeError(f"mask shape {keep.shape} != targets shape {targets.shape}")
    n_kept = int(keep.sum())
    if n_kept == 0:
        raise ValueError("cross_entropy: every position is masked out")
    losses, probs = backend.cross_entropy_rows(np.ascontiguousarray(logits.data), targets)
    out = Tensor(losses[keep].mean(), dtype=logits.dtype)

    def bwd(g):
        gl = np.where(keep, g / n_kept, 0.0).astype(logits.data.dtype)
        return (backend.cross_entropy_rows_grad(probs, targets, gl),)

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
               max_per_param: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between recorded adjoints and central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor; run it under float64 (``precision``) or the tolerance targets are
    unreachable. Error metric per entry:
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    By default every coordinate is probed. For large models pass
    ``max_per_param`` to probe that many coordinates per tensor, drawn
    without replacement from ``rng`` (every tensor still gets coverage).
    """
    params = list(params)
    clear_tape()
    for p in params:
        p.zero_grad()
    loss = f()
    if loss.data.ndim != 0:
        raise ShapeError(f"grad_check expects scalar output, got shape {loss.shape}")
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    if max_per_param is not None and rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        if max_per_param is None or flat.size <= max_per_param:
            coords = range(flat.size)
        else:
            coords = sorted(rng.choice(flat.size, size=max_per_param, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = f().item()
            flat[i] = orig - eps
            with no_grad():
                down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("grad_check: non-finite objective evaluation")
            num = (up - down) / (2.0 * eps)
            a = float(aflat[i])
            rel = abs(a - num) / max(1.0, abs(a), abs(num))
            if rel > worst:
                worst = rel
    return worst
