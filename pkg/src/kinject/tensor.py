"""A small reverse-mode autodiff engine over 2-D numpy arrays, plus Adam.

Tensors hold float64 data by default. Every op records a backward closure
when gradient tracing is enabled and at least one input requires grad;
``backward`` walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
import json
import math
from pathlib import Path

import numpy as np

from kinject import kernels
from kinject.errors import FormatError, ShapeError
from kinject.kift import read_kift, write_kift

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.array(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


# ---- elementwise / linear ------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        mode = "same"
    elif b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]:
        mode = "row"
    elif b.data.ndim == 0:
        mode = "scalar"
    else:
        raise _shape_error("add", a.shape, b.shape)

    def bw(g):
        if mode == "same":
            return g, g
        if mode == "row":
            return g, g.sum(axis=0)
        return g, np.asarray(g.sum())

    return _make(a.data + b.data, (a, b), bw, "add")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c: float):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def total(a):
    """Sum of all entries, as a 0-d tensor."""
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean(a):
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


# ---- nonlinearities ------------------------------------------------------

def softmax(a):
    """Softmax over the last axis of a matrix (rows sum to 1)."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax: expected a matrix, got shape {a.shape}")
    y = kernels.softmax_rows(a.data)
    return _make(y, (a,), lambda g: (kernels.softmax_rows_backward(y, g),), "softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise _shape_error("layer_norm", x.shape, gain.shape)
    xhat, inv = kernels.layer_norm_rows(x.data, eps)

    def bw(g):
        gx = kernels.layer_norm_rows_backward(xhat, inv, g * gain.data)
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), bw, "layer_norm")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(y, (a,), bw, "gelu")


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# ---- indexing / structure ------------------------------------------------

def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise _shape_error("embedding_lookup", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table {table.shape}")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(table.data[ids], (table,), bw, "embedding")


def concat(tensors, axis=0):
    """Stack matrices along rows (axis=0) or columns (axis=1)."""
    tensors = [_as_tensor(t) for t in tensors]
    other = 1 - axis
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != 2 or t.shape[other] != ref[other]:
            raise _shape_error("concat", ref, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def columns(a, start, stop):
    """Column slice ``a[:, start:stop]``."""
    def bw(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _make(a.data[:, start:stop].copy(), (a,), bw, "columns")


def mask_fill(a, mask, value):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise _shape_error("mask_fill", a.shape, mask.shape)
    return _make(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),), "mask_fill")


# ---- loss ----------------------------------------------------------------

def cross_entropy(logits, targets, pad_index=0):
    """Mean negative log-likelihood of ``targets`` over non-pad positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise _shape_error("cross_entropy", logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ShapeError("cross_entropy: target index out of vocabulary range")
    valid = targets != pad_index
    n = int(valid.sum())
    if n == 0:
        raise ValueError("cross_entropy: every target is padding")
    x = logits.data
    mx = x.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(x - mx).sum(axis=1))
    rows = np.arange(len(targets))
    nll = lse - x[rows, targets]
    loss = float(nll[valid].sum() / n)

    def bw(g):
        p = kernels.softmax_rows(x)
        p[rows, targets] -= 1.0
        p *= valid[:, None] * (float(g) / n)
        return (p,)

    return _make(np.asarray(loss), (logits,), bw, "cross_entropy")


# ---- backprop ------------------------------------------------------------

def _topo(root):
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


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every traced leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not connected to any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---- optimizer -----------------------------------------------------------

class Adam:
    """Adam with decoupled weight decay by default (``decoupled=False`` adds
    ``weight_decay * p`` to the gradient instead)."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=5e-5,
                 decoupled=True):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValueError(f"Adam.step: parameters {missing} have no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decoupled:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * update


# ---- checkpoints ---------------------------------------------------------

def save_params(params: dict, directory) -> None:
    """One KIFT file per parameter plus ``manifest.json`` (name, shape, dtype)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for name, t in params.items():
        write_kift(directory / f"{name}.kift", t.data.reshape(-1, t.shape[-1]) if t.data.ndim else
                   t.data.reshape(1, 1))
        manifest.append({"name": name, "shape": list(t.shape), "dtype": "float32"})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_params(directory) -> dict:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise FormatError(f"no parameter manifest in {directory}")
    out = {}
    for entry in json.loads(mpath.read_text()):
        data = read_kift(directory / f"{entry['name']}.kift")
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise FormatError(f"parameter {entry['name']}: manifest shape {shape} "
                              f"does not match stored {data.shape}")
        out[entry["name"]] = Tensor(data.reshape(shape), requires_grad=True)
    return out
