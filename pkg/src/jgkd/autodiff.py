"""Tape-based reverse-mode automatic differentiation over numpy float64.

The primitive registry is closed; every differentiable operation the
teachers, student, and losses need lives in this module:

    add, sub, mul, scale, matmul, transpose, concat, slice_rows,
    slice_cols, take_rows (embedding lookup / row gather), softmax_rows,
    cross_entropy_rows, relu (hinge/max), layer_norm, l2_norm_rows,
    cosine_rows, tsum, tmean, and the composite attention().

Any new primitive must ship with a grad_check entry (see selfcheck).

Design rules:
  * double precision everywhere; values are validated as finite after
    every forward step and computation fails fast naming the operation;
  * a Tape records operations in execution order (hence topologically);
    backward replays it once, in reverse;
  * the active tape is thread-local, so independent training runs may
    proceed on separate threads, but one tape must never be shared.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DeterminismError, NumericError, ShapeError, ValidationError

_uid_counter = itertools.count(1)
_tls = threading.local()


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """A dense float64 array plus gradient metadata.

    Leaves created with requires_grad=True are trainable parameters;
    tensors returned by taped operations carry requires_grad implied by
    their inputs and remember the tape that produced them.
    """

    __slots__ = ("data", "requires_grad", "grad", "uid", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.uid: int = next(_uid_counter)
        self.name = name
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape}{tag} requires_grad={self.requires_grad}>"


@dataclass
class _Entry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of operations; execution order is topological order."""

    def __init__(self):
        self.entries: list[_Entry] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tls.stack.pop()

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate gradients of a taped scalar into every requires_grad leaf.

        Returns a map from leaf uid to its gradient array; also adds into
        each leaf's .grad. Data and the tape itself are left untouched, so
        several backward passes may run over one tape and their gradients
        are additive.
        """
        if loss.data.ndim != 0:
            raise ShapeError(f"backward requires a scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValidationError("loss was not produced through this tape")
        produced = {e.output.uid for e in self.entries}
        grads: dict[int, np.ndarray] = {loss.uid: np.ones((), dtype=np.float64)}
        leaves: dict[int, Tensor] = {}
        for entry in reversed(self.entries):
            out_grad = grads.pop(entry.output.uid, None)
            if out_grad is None:
                continue
            in_grads = entry.backward(out_grad)
            for t, g in zip(entry.inputs, in_grads):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t.uid in grads:
                    grads[t.uid] = grads[t.uid] + g
                else:
                    grads[t.uid] = np.array(g, dtype=np.float64, copy=True)
                if t.uid not in produced:
                    leaves[t.uid] = t
        leaf_grads: dict[int, np.ndarray] = {}
        for uid, t in leaves.items():
            g = grads[uid]
            leaf_grads[uid] = g
            t.grad = g.copy() if t.grad is None else t.grad + g
        return leaf_grads


def active_tape() -> Optional[Tape]:
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Run backward on the tape that recorded `loss`."""
    if loss._tape is None:
        raise ValidationError("loss is not attached to a tape")
    return loss._tape.backward(loss)


def _wrap(data: np.ndarray, op: str, inputs: tuple, bwd) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    req = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and req:
        out.requires_grad = True
        out._tape = tape
        tape.entries.append(_Entry(op, inputs, out, bwd))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return _wrap(data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None
    return _wrap(data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    return _wrap(data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _wrap(a.data * c, "scale", (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return _wrap(a.data @ b.data, "matmul", (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _wrap(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValidationError("concat of zero tensors")
    if axis not in (0, 1):
        raise ValidationError(f"concat axis must be 0 or 1, got {axis}")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        if axis == 0:
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _wrap(data, "concat", tuple(parts), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] invalid for shape {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _wrap(a.data[start:stop].copy(), "slice_rows", (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] invalid for shape {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _wrap(a.data[:, start:stop].copy(), "slice_cols", (a,), bwd)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row gather; with a parameter table this is an embedding lookup."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_rows expects matrix and index vector, got {table.shape}, {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"take_rows index out of range for {table.shape[0]} rows")

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _wrap(table.data[idx].copy(), "take_rows", (table,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _wrap(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows expects a [m x C] matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _wrap(s, "softmax_rows", (x,), bwd)


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean over rows of -log softmax(logits)[row, target]."""
    y = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or y.ndim != 1 or y.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy_rows: logits {logits.shape} vs targets {y.shape}")
    m, c = logits.shape
    if y.size and (y.min() < 0 or y.max() >= c):
        raise IndexError(f"target index out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(m), y]))

    def bwd(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(m), y] -= 1.0
        return (p * (float(g) / m),)

    return _wrap(np.float64(loss), "cross_entropy_rows", (logits,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bwd(g):
        d = x.shape[1]
        gxhat = g * gain.data
        gx = inv * (gxhat
                    - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return (gx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _wrap(xhat * gain.data + bias.data, "layer_norm", (x, gain, bias), bwd)


def l2_norm_rows(x: Tensor) -> Tensor:
    """Euclidean norm of each row, returned as a vector."""
    if x.ndim != 2:
        raise ShapeError(f"l2_norm_rows expects a matrix, got {x.shape}")
    n = np.sqrt((x.data ** 2).sum(axis=1))

    def bwd(g):
        safe = np.maximum(n, 1e-12)
        return (x.data * (g / safe)[:, None],)

    return _wrap(n, "l2_norm_rows", (x,), bwd)


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise cosine similarity with an epsilon-guarded denominator."""
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"cosine_rows: shapes {a.shape} vs {b.shape}")
    na = np.sqrt((a.data ** 2).sum(axis=1))
    nb = np.sqrt((b.data ** 2).sum(axis=1))
    dot = (a.data * b.data).sum(axis=1)
    denom = np.maximum(na * nb, eps)
    cos = dot / denom

    def bwd(g):
        na_s = np.maximum(na, eps)
        nb_s = np.maximum(nb, eps)
        ga = (b.data / denom[:, None] - a.data * (cos / na_s ** 2)[:, None]) * g[:, None]
        gb = (a.data / denom[:, None] - b.data * (cos / nb_s ** 2)[:, None]) * g[:, None]
        return (ga, gb)

    return _wrap(cos, "cosine_rows", (a, b), bwd)


def tsum(x: Tensor) -> Tensor:
    return _wrap(np.float64(x.data.sum()), "sum", (x,),
                 lambda g: (np.full_like(x.data, float(g)),))


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return _wrap(np.float64(x.data.mean()), "mean", (x,),
                 lambda g: (np.full_like(x.data, float(g) / n),))


# ---------------------------------------------------------------------------
# composite


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    """Scaled dot-product attention; mask is additive (0 or a large negative)."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2 or q.shape[1] != k.shape[1] \
            or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(q.shape[1]))
    if mask is not None:
        scores = add(scores, mask)
    return matmul(softmax_rows(scores), v)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_param: str
    tol: float


def grad_check(f: Callable[[dict], Tensor], params: dict[str, Tensor],
               h: float = 1e-5, tol: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients of f(params) against central differences.

    f must be a deterministic scalar-valued function of the named
    parameters; it is evaluated twice to verify determinism, once under a
    tape for analytic gradients, and 2x(element count) more times for the
    numeric side. Relative error per element uses the denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0 or tol <= 0:
        raise ValidationError("grad_check requires h > 0 and tol > 0")

    def value() -> float:
        out = f(params)
        if out.data.ndim != 0:
            raise ShapeError("grad_check target must be scalar")
        return float(out.data)

    v1, v2 = value(), value()
    if v1 != v2 or np.isnan(v1):
        raise DeterminismError(f"f not deterministic: {v1!r} vs {v2!r}")

    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        out = f(params)
        tape.backward(out)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    worst = ("", 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * h)
        ana = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        rel = float(np.max(np.abs(ana - num) / denom)) if flat.size else 0.0
        if rel > worst[1]:
            worst = (name, rel)
    name, err = worst
    return GradCheckReport(max_rel_error=err, passed=err <= tol,
                           worst_param=name, tol=tol)
