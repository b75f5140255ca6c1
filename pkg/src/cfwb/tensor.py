"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op appends a record (operands, saved forward values, and
the name of its backward rule) to the graph hanging off its output.  A
:class:`Tape` is the topologically ordered list of those records reachable
from a loss; :func:`backward` replays it in reverse, looking each rule up in
``BACKWARD_RULES`` by name at replay time.

Broadcasting is deliberately absent: binary ops need equal shapes, except
tensor-with-Python-scalar.  Bias addition over leading axes is its own op.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError, UsageError

DTYPE = np.float64
# Stand-in for -inf in masked scores: (-inf) - (-inf) would give NaN.
MASK_VALUE = float(np.finfo(np.float64).min)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    saved: tuple = ()
    attrs: dict = field(default_factory=dict)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor / tensor is not supported; use mul with an explicit reciprocal")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, op: str, inputs: tuple, saved: tuple = (), **attrs) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = False
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, inputs, saved, attrs)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


BACKWARD_RULES: dict[str, Callable] = {}


def backward_rule(name: str):
    def deco(fn):
        BACKWARD_RULES[name] = fn
        return fn

    return deco


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, b)
    if not isinstance(a, Tensor):
        return add_scalar(b, a)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b))


@backward_rule("add")
def _add_back(g, node):
    return g, g


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(a, -b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b))


@backward_rule("sub")
def _sub_back(g, node):
    return g, -g


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, "mul", (a, b))


@backward_rule("mul")
def _mul_back(g, node):
    a, b = node.inputs
    return g * b.data, g * a.data


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, "neg", (x,))


@backward_rule("neg")
def _neg_back(g, node):
    return (-g,)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, "scale", (x,), c=c)


@backward_rule("scale")
def _scale_back(g, node):
    return (g * node.attrs["c"],)


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + float(c), "add_scalar", (x,))


@backward_rule("add_scalar")
def _add_scalar_back(g, node):
    return (g,)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, "relu", (x,), (mask,))


@backward_rule("relu")
def _relu_back(g, node):
    return (g * node.saved[0],)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x2 = x.data * x.data
    u = _GELU_C * x.data * (1.0 + 0.044715 * x2)
    t = np.tanh(u)
    return _make(0.5 * x.data * (1.0 + t), "gelu", (x,), (t,))


@backward_rule("gelu")
def _gelu_back(g, node):
    (x,) = node.inputs
    (t,) = node.saved
    du = _GELU_C * (1.0 + 3 * 0.044715 * (x.data * x.data))
    return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), (y,))


@backward_rule("tanh")
def _tanh_back(g, node):
    y = node.saved[0]
    return (g * (1.0 - y * y),)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, "sigmoid", (x,), (y,))


@backward_rule("sigmoid")
def _sigmoid_back(g, node):
    y = node.saved[0]
    return (g * y * (1.0 - y),)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, "exp", (x,), (y,))


@backward_rule("exp")
def _exp_back(g, node):
    return (g * node.saved[0],)


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), "log", (x,))


@backward_rule("log")
def _log_back(g, node):
    return (g / node.inputs[0].data,)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


def straight_through(z: Tensor, q: Tensor) -> Tensor:
    """Forward value of ``q``; backward hands the incoming gradient to ``z`` unchanged."""
    _same_shape(z, q, "straight_through")
    return _make(q.data.copy(), "straight_through", (z, q))


@backward_rule("straight_through")
def _st_back(g, node):
    return g, None


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), "sum", (x,), axis=axis, keepdims=keepdims)


@backward_rule("sum")
def _sum_back(g, node):
    (x,) = node.inputs
    axis, keepdims = node.attrs["axis"], node.attrs["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return _make(y, "reshape", (x,))


@backward_rule("reshape")
def _reshape_back(g, node):
    return (g.reshape(node.inputs[0].shape),)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    return _make(np.transpose(x.data, axes), "transpose", (x,), axes=tuple(axes))


@backward_rule("transpose")
def _transpose_back(g, node):
    return (np.transpose(g, np.argsort(node.attrs["axes"])),)


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: Tensor, key) -> Tensor:
    return _make(np.array(x.data[key]), "getitem", (x,), key=key)


@backward_rule("getitem")
def _getitem_back(g, node):
    (x,) = node.inputs
    out = np.zeros_like(x.data)
    key = node.attrs["key"]
    if _is_basic_index(key):
        out[key] += g
    else:
        np.add.at(out, key, g)
    return (out,)


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis or k is None for k in parts)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    ref = list(xs[0].shape)
    ax = axis % len(ref)
    for t in xs[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in xs]
    return _make(np.concatenate([t.data for t in xs], axis=ax), "concat", tuple(xs), axis=ax, sizes=sizes)


@backward_rule("concat")
def _concat_back(g, node):
    cuts = np.cumsum(node.attrs["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=node.attrs["axis"]))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors, or batched over equal leading dims."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(np.matmul(a.data, b.data), "matmul", (a, b))


@backward_rule("matmul")
def _matmul_back(g, node):
    a, b = node.inputs
    return np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply ``w`` (in x out) to the last axis of ``x``, plus an optional bias."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    y = x.data @ w.data
    if b is None:
        return _make(y, "linear", (x, w))
    return _make(y + b.data, "linear", (x, w, b))


@backward_rule("linear")
def _linear_back(g, node):
    x, w = node.inputs[:2]
    k, n = w.shape
    gx = g @ w.data.T
    gw = x.data.reshape(-1, k).T @ g.reshape(-1, n)
    if len(node.inputs) == 2:
        return gx, gw
    return gx, gw, g.reshape(-1, n).sum(axis=0)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    return _make(x.data + b.data, "add_bias", (x, b))


@backward_rule("add_bias")
def _add_bias_back(g, node):
    return g, g.reshape(-1, g.shape[-1]).sum(axis=0)


def causal_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Causal convolution over the time axis (second-to-last) of ``x``.

    ``kernel`` is (k, D_in, D_out); output[t] = sum_j x[t-k+1+j] @ kernel[j],
    with x[<0] = 0.  For k=1 this is exactly ``x @ kernel[0]``.
    """
    if kernel.ndim != 3:
        raise ShapeError(f"causal_conv1d: kernel must be (k, D_in, D_out), got {kernel.shape}")
    k, d_in, d_out = kernel.shape
    if k < 1:
        raise ConfigError(f"causal_conv1d: kernel width must be >= 1, got {k}")
    if x.shape[-1] != d_in:
        raise ShapeError(f"causal_conv1d: input {x.shape} does not match kernel {kernel.shape}")
    unf = _unfold_causal(x.data, k)
    y = unf @ kernel.data.reshape(k * d_in, d_out)
    return _make(y, "causal_conv1d", (x, kernel), (unf,))


def _unfold_causal(x: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return x
    T = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(k - 1, 0), (0, 0)]
    xp = np.pad(x, pad)
    return np.concatenate([xp[..., j : j + T, :] for j in range(k)], axis=-1)


@backward_rule("causal_conv1d")
def _causal_conv1d_back(g, node):
    x, kernel = node.inputs
    (unf,) = node.saved
    k, d_in, d_out = kernel.shape
    T = x.shape[-2]
    gk = unf.reshape(-1, k * d_in).T @ g.reshape(-1, d_out)
    gunf = g @ kernel.data.reshape(k * d_in, d_out).T
    gx = np.zeros_like(x.data)
    for j in range(k):
        shift = k - 1 - j
        piece = gunf[..., shift:, j * d_in : (j + 1) * d_in] if shift else gunf[..., j * d_in : (j + 1) * d_in]
        gx[..., : T - shift, :] += piece
    return gx, gk.reshape(k, d_in, d_out)


def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    V = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        bad = int(idx[(idx < 0) | (idx >= V)].reshape(-1)[0])
        raise DataError(f"embedding: index {bad} outside [0, {V})")
    return _make(table.data[idx], "embedding", (table,), (idx,))


@backward_rule("embedding")
def _embedding_back(g, node):
    (table,) = node.inputs
    (idx,) = node.saved
    out = np.zeros_like(table.data)
    np.add.at(out, idx.reshape(-1), g.reshape(-1, table.shape[1]))
    return (out,)


# ---------------------------------------------------------------------------
# normalisation, softmax, masking


def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis, "softmax")
    p = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=axis, keepdims=True)
    return _make(p, "softmax", (x,), (p,), axis=axis)


@backward_rule("softmax")
def _softmax_back(g, node):
    p = node.saved[0]
    axis = node.attrs["axis"]
    gp = g * p
    gp -= p * gp.sum(axis=axis, keepdims=True)
    return (gp,)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    return _make(y, "log_softmax", (x,), (y,), axis=axis)


@backward_rule("log_softmax")
def _log_softmax_back(g, node):
    y = node.saved[0]
    axis = node.attrs["axis"]
    return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)


def masked_fill(x: Tensor, allowed: np.ndarray, value: float = MASK_VALUE) -> Tensor:
    """Keep entries where ``allowed`` is true, replace the rest with ``value``.

    ``allowed`` must match the trailing dims of ``x``; it is a constant mask,
    so this is not tensor broadcasting.
    """
    allowed = np.asarray(allowed, dtype=bool)
    if x.shape[x.ndim - allowed.ndim :] != allowed.shape:
        raise ShapeError(f"masked_fill: mask {allowed.shape} does not match {x.shape}")
    return _make(np.where(allowed, x.data, value), "masked_fill", (x,), (allowed,))


@backward_rule("masked_fill")
def _masked_fill_back(g, node):
    return (g * node.saved[0],)


LN_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape}/bias {bias.shape} do not match last axis of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return _make(xhat * gain.data + bias.data, "layer_norm", (x, gain, bias), (xhat, rstd))


@backward_rule("layer_norm")
def _layer_norm_back(g, node):
    x, gain, _ = node.inputs
    xhat, rstd = node.saved
    d = x.shape[-1]
    dxhat = g * gain.data
    gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return gx, (g * xhat).reshape(-1, d).sum(axis=0), g.reshape(-1, d).sum(axis=0)


# ---------------------------------------------------------------------------
# recurrent cell


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  Gate blocks are ordered (input, forget, cell, output).

    ``w_ih`` is (4H, D), ``w_hh`` is (4H, H), ``b`` is (4H,).  Leading batch
    axes on x/h/c are allowed.  Returns (h', c').
    """
    H = h.shape[-1]
    if w_ih.shape[0] != 4 * H or w_hh.shape != (4 * H, H) or b.shape != (4 * H,) or x.shape[-1] != w_ih.shape[1]:
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b.shape}")
    if c.shape != h.shape or x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape} disagree")
    pre = x.data @ w_ih.data.T + h.data @ w_hh.data.T + b.data
    i = _sigmoid(pre[..., :H])
    f = _sigmoid(pre[..., H : 2 * H])
    gg = np.tanh(pre[..., 2 * H : 3 * H])
    o = _sigmoid(pre[..., 3 * H :])
    c2 = f * c.data + i * gg
    tc = np.tanh(c2)
    h2 = o * tc
    packed = _make(np.concatenate([h2, c2], axis=-1), "lstm_cell", (x, h, c, w_ih, w_hh, b), (i, f, gg, o, tc))
    return getitem(packed, (Ellipsis, slice(0, H))), getitem(packed, (Ellipsis, slice(H, 2 * H)))


@backward_rule("lstm_cell")
def _lstm_cell_back(g, node):
    x, h, c, w_ih, w_hh, _ = node.inputs
    i, f, gg, o, tc = node.saved
    H = h.shape[-1]
    gh, gc2 = g[..., :H], g[..., H:]
    gc_total = gc2 + gh * o * (1.0 - tc * tc)
    dpre = np.concatenate(
        [
            gc_total * gg * i * (1.0 - i),
            gc_total * c.data * f * (1.0 - f),
            gc_total * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ],
        axis=-1,
    )
    flat = dpre.reshape(-1, 4 * H)
    return (
        dpre @ w_ih.data,
        dpre @ w_hh.data,
        gc_total * f,
        flat.T @ x.data.reshape(-1, x.shape[-1]),
        flat.T @ h.data.reshape(-1, H),
        flat.sum(axis=0),
    )


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    return _make(np.asarray((diff * diff).mean()), "mse_loss", (pred, target), (diff,))


@backward_rule("mse_loss")
def _mse_back(g, node):
    (diff,) = node.saved
    gp = g * 2.0 * diff / diff.size
    return gp, -gp


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean (optionally weighted) negative log-likelihood of integer targets.

    ``logits`` is (..., V); ``targets`` matches the leading shape.
    """
    t = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {t.shape} do not match logits {logits.shape}")
    if t.size and (t.min() < 0 or t.max() >= V):
        bad = int(t[(t < 0) | (t >= V)].reshape(-1)[0])
        raise DataError(f"cross_entropy: class index {bad} outside [0, {V})")
    w = np.ones(t.shape) if weights is None else np.asarray(weights, dtype=DTYPE)
    w = w / w.sum()
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    return _make(np.asarray((nll * w).sum()), "cross_entropy", (logits,), (logp, t, w))


@backward_rule("cross_entropy")
def _ce_back(g, node):
    logp, t, w = node.saved
    grad = np.exp(logp)
    np.put_along_axis(grad, t[..., None], np.take_along_axis(grad, t[..., None], axis=-1) - 1.0, axis=-1)
    return (g * grad * w[..., None],)


# ---------------------------------------------------------------------------
# the tape


class Tape:
    """Topologically ordered op records reachable from a root tensor.

    Each entry is the output tensor of one op; its ``_node`` holds operand
    references, saved forward values and the backward rule name.
    """

    def __init__(self, records: list[Tensor]):
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        if loss._node is None:
            return cls(order)
        stack = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t._node.inputs:
                if inp._node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)


def backward(loss: Tensor, tape: Tape | None = None, leaves: Iterable[Tensor] | None = None) -> Tape:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls.  Any tensor in ``leaves`` that the
    loss does not reach gets a zero gradient.
    """
    if loss.size != 1:
        raise UsageError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if tape is None:
        tape = Tape.from_loss(loss)
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        node = out._node
        in_grads = BACKWARD_RULES[node.op](g, node)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    return tape


# ---------------------------------------------------------------------------
# verification and optimisation


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must return a scalar tensor.  ``x`` is perturbed in place and
    restored.  A NaN anywhere is reported as +inf.
    """
    x.requires_grad = True
    x.grad = None
    backward(f(x), leaves=[x])
    analytic = x.grad.copy()
    x.grad = None
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(x).item()
            flat[i] = orig - eps
            fm = f(x).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    if not np.all(np.isfinite(err)):
        return math.inf
    return float(err.max()) if err.size else 0.0


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape if shape is not None else (fan_in, fan_out))


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update.  Rebinds each ``param.data``; missing grads count as zero."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError(f"adam_step: param {p.shape}, grad {g.shape}, moment {state.m[k].shape}")
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + eps)
    return state


# ---------------------------------------------------------------------------
# grad-check registry

GradCase = Callable[[np.random.Generator], list]
GRADCHECK_CASES: dict[str, GradCase] = {}


def register_check(name: str):
    """Register a case builder: rng -> list of (label, f, x) for :func:`grad_check`."""

    def deco(fn):
        GRADCHECK_CASES[name] = fn
        return fn

    return deco


def _rand(rng, *shape):
    return parameter(rng.normal(size=shape))


def _away_from_zero(rng, *shape):
    return parameter(rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape))


def _weighted_sum(y: Tensor, w: np.ndarray) -> Tensor:
    return tsum(mul(y, Tensor(w)))


def _unary_case(op, sampler=_rand):
    def build(rng):
        x = sampler(rng, 3, 4)
        with no_grad():
            w = rng.normal(size=op(x).shape)
        return [("x", lambda t: _weighted_sum(op(t), w), x)]

    return build


for _name, _op, _sampler in [
    ("neg", neg, _rand),
    ("scale", lambda t: scale(t, -1.7), _rand),
    ("add_scalar", lambda t: add_scalar(t, 0.3), _rand),
    ("relu", relu, _away_from_zero),
    ("gelu", gelu, _rand),
    ("tanh", tanh, _rand),
    ("sigmoid", sigmoid, _rand),
    ("exp", exp, _rand),
    ("log", log, lambda rng, *s: parameter(rng.uniform(0.5, 2.0, size=s))),
    ("sum", lambda t: mul(t, t).sum(axis=1, keepdims=True).sum(axis=0), _rand),
    ("reshape", lambda t: reshape(t, (4, 3)), _rand),
    ("transpose", lambda t: transpose(t, (1, 0)), _rand),
    ("getitem", lambda t: getitem(t, (slice(1, 3), slice(None, None, 2))), _rand),
    ("softmax", lambda t: softmax(t, axis=-1), _rand),
    ("log_softmax", lambda t: log_softmax(t, axis=0), _rand),
    ("masked_fill", lambda t: softmax(masked_fill(t, np.tril(np.ones((3, 4), bool))), -1), _rand),
]:
    GRADCHECK_CASES[_name] = _unary_case(_op, _sampler)


def _binary_case(op, shape_a, shape_b, out_shape):
    def build(rng):
        a, b = _rand(rng, *shape_a), _rand(rng, *shape_b)
        w = rng.normal(size=out_shape)
        return [
            ("a", lambda t: _weighted_sum(op(t, b), w), a),
            ("b", lambda t: _weighted_sum(op(a, t), w), b),
        ]

    return build


GRADCHECK_CASES["add"] = _binary_case(add, (3, 4), (3, 4), (3, 4))
GRADCHECK_CASES["sub"] = _binary_case(sub, (3, 4), (3, 4), (3, 4))
GRADCHECK_CASES["mul"] = _binary_case(mul, (3, 4), (3, 4), (3, 4))
GRADCHECK_CASES["matmul"] = _binary_case(matmul, (2, 3, 4), (2, 4, 5), (2, 3, 5))
GRADCHECK_CASES["add_bias"] = _binary_case(add_bias, (2, 3, 4), (4,), (2, 3, 4))
GRADCHECK_CASES["causal_conv1d"] = _binary_case(causal_conv1d, (2, 5, 3), (3, 3, 2), (2, 5, 2))
GRADCHECK_CASES["concat"] = _binary_case(lambda a, b: concat([a, b], axis=1), (3, 2), (3, 4), (3, 6))


@register_check("linear")
def _linear_case(rng):
    x, w, b = _rand(rng, 2, 3, 4), _rand(rng, 4, 5), _rand(rng, 5)
    m = rng.normal(size=(2, 3, 5))
    return [
        ("x", lambda t: _weighted_sum(linear(t, w, b), m), x),
        ("w", lambda t: _weighted_sum(linear(x, t, b), m), w),
        ("b", lambda t: _weighted_sum(linear(x, w, t), m), b),
    ]


@register_check("layer_norm")
def _layer_norm_case(rng):
    x, g, b = _rand(rng, 3, 5), _rand(rng, 5), _rand(rng, 5)
    m = rng.normal(size=(3, 5))
    return [
        ("x", lambda t: _weighted_sum(layer_norm(t, g, b), m), x),
        ("gain", lambda t: _weighted_sum(layer_norm(x, t, b), m), g),
        ("bias", lambda t: _weighted_sum(layer_norm(x, g, t), m), b),
    ]


@register_check("embedding")
def _embedding_case(rng):
    table = _rand(rng, 5, 3)
    idx = np.array([[0, 2, 2], [4, 1, 0]])
    m = rng.normal(size=(2, 3, 3))
    return [("table", lambda t: _weighted_sum(embedding(t, idx), m), table)]


@register_check("lstm_cell")
def _lstm_case(rng):
    D, H = 3, 4
    x, h, c = _rand(rng, 2, D), _rand(rng, 2, H), _rand(rng, 2, H)
    # moderate weights: saturated gates leave gradients at rounding-noise level
    w_ih, w_hh = parameter(0.5 * rng.normal(size=(4 * H, D))), parameter(0.5 * rng.normal(size=(4 * H, H)))
    b = _rand(rng, 4 * H)
    mh, mc = rng.normal(size=(2, H)), rng.normal(size=(2, H))
    args = [x, h, c, w_ih, w_hh, b]

    def f_at(k):
        def f(t):
            a = list(args)
            a[k] = t
            h2, c2 = lstm_cell(*a)
            return add(_weighted_sum(h2, mh), _weighted_sum(c2, mc))

        return f

    return [(lbl, f_at(k), args[k]) for k, lbl in enumerate(["x", "h", "c", "w_ih", "w_hh", "b"])]


@register_check("mse_loss")
def _mse_case(rng):
    p, t = _rand(rng, 3, 2), _rand(rng, 3, 2)
    return [("pred", lambda z: mse_loss(z, t), p), ("target", lambda z: mse_loss(p, z), t)]


@register_check("cross_entropy")
def _ce_case(rng):
    logits = _rand(rng, 4, 6)
    targets = rng.integers(0, 6, size=4)
    return [("logits", lambda z: cross_entropy(z, targets), logits)]
