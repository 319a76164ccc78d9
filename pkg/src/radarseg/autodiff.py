"""A small reverse-mode differentiation engine on numpy arrays, plus Adam.

Only the operations the point-set networks need are provided: ``matmul``,
``add_bias``, ``relu``, ``concat``, ``gather``, ``max_reduce`` (plus its
ragged form ``segment_max`` and a ``reshape``) and a class-weighted softmax
cross-entropy. Graphs are built eagerly; calling
:meth:`Tensor.backward` on a scalar accumulates ``.grad`` on every leaf that
requires it.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

CHECKPOINT_FORMAT = "radarseg-params/1"

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; intermediates are freed as soon as possible."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Back-propagate from this tensor. Without ``grad`` the tensor must be a scalar."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not _needs_grad(parent):
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if not _grad_enabled:
        return out
    live = tuple(p for p in parents if _needs_grad(p))
    if live:
        out._parents = live
        out._backward = backward
    return out


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes with numpy broadcasting of leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, w = a.data, b.data
    if w.ndim == 2:
        # shared weight: fold leading axes into rows, one GEMM each way
        out = (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ w.T).reshape(x.shape) if _needs_grad(a) else None
            gb = x.reshape(-1, x.shape[-1]).T @ g2 if _needs_grad(b) else None
            return ((a, ga), (b, gb))
    else:
        try:
            out = np.matmul(x, w)
        except ValueError:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from None

        def backward(g):
            ga = _sum_to(np.matmul(g, np.swapaxes(w, -1, -2)), x.shape) if _needs_grad(a) else None
            gb = _sum_to(np.matmul(np.swapaxes(x, -1, -2), g), w.shape) if _needs_grad(b) else None
            return ((a, ga), (b, gb))

    return _result(out, (a, b), backward)


def add_bias(x, bias) -> Tensor:
    """Add a 1-D bias along the last axis."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias shape mismatch: {x.shape} + {bias.shape}")

    def backward(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if _needs_grad(bias) else None
        return ((x, g), (bias, gb))

    return _result(x.data + bias.data, (x, bias), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return ((x, g * mask),)

    return _result(np.maximum(x.data, 0, dtype=x.dtype), (x,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat shape mismatch: " + ", ".join(str(t.shape) for t in ts)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(zip(ts, np.split(g, bounds, axis=ax)))

    return _result(out, ts, backward)


def gather(x, indices, batch_dims: int = 0) -> Tensor:
    """Select rows of ``x`` by integer ``indices``.

    With ``batch_dims=0`` this is ``x[indices]``. With ``batch_dims=1``, ``x``
    is ``(B, N, ...)`` and ``indices`` is ``(B, ...)``; each batch element
    indexes its own rows. The backward pass scatter-adds.
    """
    x = as_tensor(x)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"gather indices must be integers, got {idx.dtype}")
    if batch_dims not in (0, 1):
        raise ValueError("batch_dims must be 0 or 1")
    if batch_dims == 1:
        if x.data.ndim < 2 or idx.ndim < 1 or idx.shape[0] != x.shape[0]:
            raise ShapeError(f"gather batch mismatch: data {x.shape}, indices {idx.shape}")
        n = x.shape[1]
        offs = (np.arange(x.shape[0]) * n).reshape((-1,) + (1,) * (idx.ndim - 1))
        flat_idx = idx + offs
        flat_x = x.data.reshape((-1,) + x.shape[2:])
    else:
        n = x.shape[0]
        flat_idx = idx
        flat_x = x.data
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range for axis of size {n}")
    out = flat_x[flat_idx]

    def backward(g):
        return ((x, _scatter_add(flat_idx.reshape(-1), g.reshape((-1,) + flat_x.shape[1:]),
                                 flat_x.shape).reshape(x.shape)),)

    return _result(out, (x,), backward)


def _scatter_add(idx: np.ndarray, values: np.ndarray, shape) -> np.ndarray:
    """``out[idx[i]] += values[i]`` as a sparse product (``np.add.at`` is far slower)."""
    if idx.size == 0:
        return np.zeros(shape, dtype=values.dtype)
    sel = sparse.csr_matrix((np.ones(idx.size, dtype=values.dtype), (idx, np.arange(idx.size))),
                            shape=(shape[0], idx.size))
    flat = values.reshape(idx.size, -1)
    return np.asarray(sel @ flat, dtype=values.dtype).reshape(shape)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None

    def backward(g):
        return ((x, g.reshape(x.shape)),)

    return _result(out, (x,), backward)


def segment_max(x, starts) -> Tensor:
    """Max over consecutive row segments of a 2-D tensor.

    ``starts`` are the first rows of each (non-empty) segment, ascending from
    0. Like :func:`max_reduce`, the gradient goes to the first maximal row of
    each segment, per column.
    """
    x = as_tensor(x)
    starts = np.asarray(starts, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"segment_max expects a 2-D tensor, got {x.shape}")
    R = x.shape[0]
    if starts.size == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] >= R:
        raise ValueError("segment starts must begin at 0, increase strictly and stay below the row count")
    lengths = np.diff(np.r_[starts, R])
    # slot-major sweep: sort segments by length so those still active at
    # slot j form a prefix, then keep a running max and first argmax
    order = np.argsort(-lengths, kind="stable")
    first_rows = starts[order]
    active = np.searchsorted(-lengths[order], -np.arange(1, lengths.max() + 1), side="right")
    cur = x.data[first_rows].copy()
    arg = np.broadcast_to(first_rows[:, None], cur.shape).copy()
    for j in range(1, len(active)):
        n = active[j]
        rows = first_rows[:n] + j
        v = x.data[rows]
        better = v > cur[:n]
        np.copyto(cur[:n], v, where=better)
        np.copyto(arg[:n], np.broadcast_to(rows[:, None], v.shape), where=better)
    out = np.empty_like(cur)
    out[order] = cur
    cols = np.arange(x.shape[1])[None, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[arg, cols] = g[order]
        return ((x, gx),)

    return _result(out, (x,), backward)


def max_reduce(x, axis: int = -1) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal element."""
    x = as_tensor(x)
    ax = axis % x.data.ndim
    arg = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, arg, axis=ax).squeeze(ax)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg, np.expand_dims(g, ax), axis=ax)
        return ((x, gx),)

    return _result(out, (x,), backward)


def weighted_softmax_cross_entropy(logits, labels, class_weights=(1.0, 1.0)) -> Tensor:
    """Mean over points of ``w[label] * -log softmax(logits)[label]``.

    ``logits`` has shape ``(..., C)``; ``labels`` matches the leading shape.
    """
    logits = as_tensor(logits)
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    lab = np.asarray(labels).astype(np.int64)
    c = z.shape[-1]
    if lab.shape != z.shape[:-1]:
        raise ShapeError(f"labels {lab.shape} do not match logits {z.shape}")
    w = np.asarray(class_weights, dtype=z.dtype)
    if w.shape != (c,) or np.any(w <= 0):
        raise ValueError(f"need {c} positive class weights, got {class_weights}")
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        raise ValueError("labels out of range")
    z2 = z.reshape(-1, c)
    l2 = lab.reshape(-1)
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    nll = logsum - shifted[np.arange(len(l2)), l2]
    pw = w[l2]
    count = len(l2)
    loss = np.asarray((pw * nll).sum() / count, dtype=z.dtype)

    def backward(g):
        p = np.exp(shifted - logsum[:, None])
        p[np.arange(len(l2)), l2] -= 1.0
        gz = p * (pw / count)[:, None] * g
        return ((logits, gz.reshape(z.shape).astype(z.dtype, copy=False)),)

    return _result(loss, (logits,), backward)


# ----------------------------------------------------------------------------- optimisation


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor | np.ndarray], grads: Mapping[str, np.ndarray | None],
              state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``.

    Parameters without a gradient are treated as having a zero gradient.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else p
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        if g.shape != arr.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {arr.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= (lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)).astype(arr.dtype, copy=False)
    return state


def lr_schedule(epoch: int, base: float = 2e-4, halve_every: int = 10) -> float:
    """Step decay: the base rate halves after every ``halve_every`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base * 0.5 ** (epoch // halve_every)


# ----------------------------------------------------------------------------- checkpoints


def save_params(path: str | Path, params: Mapping[str, np.ndarray], meta: dict | None = None):
    """Write ``name -> array`` plus JSON metadata to an ``.npz`` file with a format tag."""
    payload = {f"p:{k}": np.asarray(v) for k, v in params.items()}
    payload["__format__"] = np.array(CHECKPOINT_FORMAT)
    payload["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as npz:
        if "__format__" not in npz.files or str(npz["__format__"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        params = {k[2:]: npz[k] for k in npz.files if k.startswith("p:")}
        meta = json.loads(str(npz["__meta__"]))
    return params, meta


# ----------------------------------------------------------------------------- testing aid


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
