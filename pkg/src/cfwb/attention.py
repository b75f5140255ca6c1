"""Attention kernels and causal sparsity patterns.

Patterns are stored CSR-style (``indptr``/``indices``) so the n=4096 full
pattern (8.4M pairs) stays cheap.  Masking is done by filling disallowed
scores with the most negative finite float before the softmax.
"""

from __future__ import annotations

import functools
import math
import operator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, ShapeError
from .tensor import Tensor

MASK_KINDS = ("full", "strided", "logsparse")


class SparsityPattern:
    """Per-query sorted sets of attendable key indices (causal, self included)."""

    __slots__ = ("n", "indptr", "indices", "_mask")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray, validate: bool = True):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self._mask = None
        if validate:
            self.validate()

    @classmethod
    def from_rows(cls, rows) -> "SparsityPattern":
        rows = [np.asarray(r, dtype=np.int64) for r in rows]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        return cls(len(rows), indptr, indices)

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("pattern: n must be >= 1")
        if self.indptr.shape != (self.n + 1,) or self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise ConfigError("pattern: malformed row pointer array")
        counts = np.diff(self.indptr)
        if np.any(counts < 1):
            raise ConfigError("pattern: every row must contain at least its own position")
        row_of = np.repeat(np.arange(self.n), counts)
        if np.any(self.indices < 0) or np.any(self.indices > row_of):
            raise ConfigError("pattern: indices must lie in [0, t] for row t")
        last = self.indptr[1:] - 1
        if np.any(self.indices[last] != np.arange(self.n)):
            raise ConfigError("pattern: row t must contain t")
        step = np.diff(self.indices)
        same_row = row_of[1:] == row_of[:-1]
        if np.any(step[same_row] <= 0):
            raise ConfigError("pattern: rows must be strictly increasing")

    def row(self, t: int) -> np.ndarray:
        return self.indices[self.indptr[t] : self.indptr[t + 1]]

    @property
    def rows(self) -> list[np.ndarray]:
        return [self.row(t) for t in range(self.n)]

    @property
    def total_pairs(self) -> int:
        return int(self.indices.size)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def dense_mask(self) -> np.ndarray:
        """Boolean (n, n) matrix, True where query t may attend key j."""
        if self._mask is None:
            m = np.zeros((self.n, self.n), dtype=bool)
            m[np.repeat(np.arange(self.n), self.row_counts()), self.indices] = True
            self._mask = m
        return self._mask

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SparsityPattern)
            and self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self) -> str:
        return f"SparsityPattern(n={self.n}, pairs={self.total_pairs})"

    def to_text(self) -> str:
        return "".join(" ".join(map(str, r.tolist())) + "\n" for r in self.rows)

    @classmethod
    def from_text(cls, text: str) -> "SparsityPattern":
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError as exc:
                raise FormatError(f"pattern file line {lineno}: {exc}") from exc
        return cls.from_rows(rows)


def save_pattern(p: SparsityPattern, path) -> None:
    Path(path).write_text(p.to_text())


def load_pattern(path) -> SparsityPattern:
    return SparsityPattern.from_text(Path(path).read_text())


def _check_n(n: int) -> None:
    if n < 1:
        raise ConfigError(f"pattern length must be >= 1, got {n}")


def full_causal_pattern(n: int) -> SparsityPattern:
    _check_n(n)
    counts = np.arange(1, n + 1)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    # position within row = global offset - row start
    indices = np.arange(indptr[-1]) - np.repeat(indptr[:-1], counts)
    return SparsityPattern(n, indptr, indices, validate=False)


def self_only_pattern(n: int) -> SparsityPattern:
    _check_n(n)
    return SparsityPattern(n, np.arange(n + 1), np.arange(n), validate=False)


def default_stride(n: int) -> int:
    return max(1, math.isqrt(n - 1) + 1) if n > 1 else 1


def strided_sparse_pattern(n: int, stride: int | None = None) -> SparsityPattern:
    """Local window of ``stride`` plus every column j with j mod stride = stride - 1."""
    _check_n(n)
    s = default_stride(n) if stride is None else int(stride)
    if s < 1:
        raise ConfigError(f"stride must be >= 1, got {s}")
    rows = []
    for t in range(n):
        local = np.arange(max(0, t - s + 1), t + 1)
        summary = np.arange(s - 1, max(0, t - s + 1), s)  # only those left of the window
        rows.append(np.concatenate([summary, local]))
    return SparsityPattern.from_rows(rows)


def logsparse_pattern(n: int) -> SparsityPattern:
    """Row t = {t} and t - 2^j for every 2^j <= t."""
    _check_n(n)
    rows = []
    for t in range(n):
        back = [t - (1 << j) for j in range(t.bit_length()) if (1 << j) <= t]
        rows.append(np.array(sorted(back) + [t], dtype=np.int64))
    return SparsityPattern.from_rows(rows)


def make_pattern(kind: str, n: int) -> SparsityPattern:
    if kind == "full":
        return full_causal_pattern(n)
    if kind == "strided":
        return strided_sparse_pattern(n)
    if kind == "logsparse":
        return logsparse_pattern(n)
    if kind == "self":
        return self_only_pattern(n)
    raise ConfigError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS + ('self',)}")


@dataclass(frozen=True)
class PatternStats:
    total_pairs: int
    max_row_cardinality: int
    bytes_estimate: int


def pattern_stats(p: SparsityPattern) -> PatternStats:
    """Exact pair counts; one float64 score per attended pair."""
    return PatternStats(p.total_pairs, int(p.row_counts().max()), p.total_pairs * 8)


def _row_bitsets(p: SparsityPattern) -> list[int]:
    packed = np.packbits(p.dense_mask(), axis=1, bitorder="little")
    return [int.from_bytes(r.tobytes(), "little") for r in packed]


def row_eccentricities(p: SparsityPattern) -> np.ndarray:
    """For each query j, the fewest stacked layers that let j see every i <= j.

    Breadth-first over layers: reach_{L+1}(j) is the union of reach_L(k) over
    k in row j, with reachable sets held as Python-int bitsets.
    """
    reach = _row_bitsets(p)
    full = [(1 << (j + 1)) - 1 for j in range(p.n)]
    ecc = np.zeros(p.n, dtype=np.int64)
    pending = [j for j in range(p.n) if reach[j] != full[j]]
    ecc[[j for j in range(p.n) if reach[j] == full[j]]] = 1
    level = 1
    while pending:
        level += 1
        if level > p.n:
            raise ConfigError("pattern does not reach every earlier position")
        nxt = {j: functools.reduce(operator.or_, (reach[k] for k in p.row(j).tolist())) for j in pending}
        still = []
        for j, bits in nxt.items():
            reach[j] = bits
            if bits == full[j]:
                ecc[j] = level
            else:
                still.append(j)
        pending = still
    return ecc


def reachability_depth(p: SparsityPattern) -> int:
    return int(row_eccentricities(p).max())


# ---------------------------------------------------------------------------
# kernels


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, pattern: SparsityPattern | None = None,
                         return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over the trailing two axes, optionally masked."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query dim {q.shape} does not match key dim {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: {k.shape[-2]} keys but {v.shape[-2]} values")
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if pattern is not None:
        if not (pattern.n == q.shape[-2] == k.shape[-2]):
            raise ShapeError(f"attention: pattern n={pattern.n} but T_q={q.shape[-2]}, T_k={k.shape[-2]}")
        scores = T.masked_fill(scores, pattern.dense_mask())
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


@dataclass
class AttentionWeights:
    """Projections for ``h`` heads; column block i of wq/wk/wv belongs to head i.

    wq, wk: (d_model, h*d_k); wv: (d_model, h*d_v); wo: (h*d_v, d_model).
    conv_q/conv_k, when present, are causal kernels (k, d_model, h*d_k) that
    replace wq/wk (convolutional self-attention).
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    h: int
    d_k: int
    d_v: int
    conv_q: Tensor | None = None
    conv_k: Tensor | None = None

    def __post_init__(self):
        if self.h < 1 or self.d_k < 1 or self.d_v < 1:
            raise ConfigError(f"attention: need h, d_k, d_v >= 1, got {self.h}, {self.d_k}, {self.d_v}")
        if (self.conv_q is None) != (self.conv_k is None):
            raise ConfigError("attention: conv kernels for Q and K must be given together")
        d = self.wv.shape[0]
        expect = {
            "wq": (d, self.h * self.d_k),
            "wk": (d, self.h * self.d_k),
            "wv": (d, self.h * self.d_v),
            "wo": (self.h * self.d_v, d),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"attention: {name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.conv_q is not None:
            for name in ("conv_q", "conv_k"):
                s = getattr(self, name).shape
                if len(s) != 3 or s[1:] != (d, self.h * self.d_k):
                    raise ShapeError(f"attention: {name} has shape {s}, expected (k, {d}, {self.h * self.d_k})")

    @property
    def d_model(self) -> int:
        return self.wv.shape[0]

    @property
    def conv_width(self) -> int | None:
        return None if self.conv_q is None else self.conv_q.shape[0]

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + n: getattr(self, n) for n in ("wq", "wk", "wv", "wo")}
        if self.conv_q is not None:
            out[prefix + "conv_q"] = self.conv_q
            out[prefix + "conv_k"] = self.conv_k
        return out

    def head(self, i: int) -> "AttentionWeights":
        """Single-head view (h=1) of head i, with W_O restricted to its rows."""
        qs, vs = slice(i * self.d_k, (i + 1) * self.d_k), slice(i * self.d_v, (i + 1) * self.d_v)
        conv = {}
        if self.conv_q is not None:
            conv = {"conv_q": Tensor(self.conv_q.data[:, :, qs]), "conv_k": Tensor(self.conv_k.data[:, :, qs])}
        return AttentionWeights(
            Tensor(self.wq.data[:, qs]), Tensor(self.wk.data[:, qs]), Tensor(self.wv.data[:, vs]),
            Tensor(self.wo.data[vs, :]), 1, self.d_k, self.d_v, **conv,
        )


def init_attention_weights(rng: np.random.Generator, d_model: int, h: int, d_k: int | None = None,
                           d_v: int | None = None, conv_k: int | None = None) -> AttentionWeights:
    d_k = d_k or d_model // h
    d_v = d_v or d_model // h
    g = T.glorot_uniform
    wq = T.parameter(g(rng, d_model, d_k, (d_model, h * d_k)))
    wk = T.parameter(g(rng, d_model, d_k, (d_model, h * d_k)))
    wv = T.parameter(g(rng, d_model, d_v, (d_model, h * d_v)))
    wo = T.parameter(g(rng, h * d_v, d_model))
    conv = {}
    if conv_k is not None:
        if conv_k < 1:
            raise ConfigError(f"conv width must be >= 1, got {conv_k}")
        conv = {
            "conv_q": T.parameter(g(rng, conv_k * d_model, d_k, (conv_k, d_model, h * d_k))),
            "conv_k": T.parameter(g(rng, conv_k * d_model, d_k, (conv_k, d_model, h * d_k))),
        }
    return AttentionWeights(wq, wk, wv, wo, h, d_k, d_v, **conv)


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, t, hd = x.shape
    x = T.reshape(x, (*lead, t, h, hd // h))
    n = len(lead)
    return T.transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, d = x.shape
    n = len(lead)
    x = T.transpose(x, (*range(n), n + 1, n, n + 2))
    return T.reshape(x, (*lead, t, h * d))


def _attend(q: Tensor, k: Tensor, v: Tensor, w: AttentionWeights, pattern) -> Tensor:
    heads = scaled_dot_attention(_split_heads(q, w.h), _split_heads(k, w.h), _split_heads(v, w.h), pattern)
    return T.linear(_merge_heads(heads), w.wo)


def multi_head_attention(x_q: Tensor, x_kv: Tensor, w: AttentionWeights,
                         pattern: SparsityPattern | None = None) -> Tensor:
    """Project ``h`` times, attend per head, concatenate, project by W_O.

    ``x_q is x_kv`` gives self-attention; otherwise cross-attention.
    Leading batch axes are allowed on both inputs.
    """
    if x_q.shape[-1] != w.d_model or x_kv.shape[-1] != w.d_model:
        raise ShapeError(f"attention: inputs {x_q.shape}, {x_kv.shape} do not match d_model={w.d_model}")
    return _attend(T.linear(x_q, w.wq), T.linear(x_kv, w.wk), T.linear(x_kv, w.wv), w, pattern)


def conv_self_attention(x: Tensor, w: AttentionWeights, pattern: SparsityPattern | None = None) -> Tensor:
    """Self-attention whose queries and keys come from causal convolutions of width k."""
    if w.conv_q is None:
        raise ConfigError("conv_self_attention needs conv kernels in the attention weights")
    if x.shape[-1] != w.d_model:
        raise ShapeError(f"attention: input {x.shape} does not match d_model={w.d_model}")
    k = w.conv_width
    if k > x.shape[-2]:
        raise ConfigError(f"conv width {k} exceeds sequence length {x.shape[-2]}")
    q = T.causal_conv1d(x, w.conv_q)
    kk = T.causal_conv1d(x, w.conv_k)
    return _attend(q, kk, T.linear(x, w.wv), w, pattern)


def self_attention(x: Tensor, w: AttentionWeights, pattern: SparsityPattern | None = None) -> Tensor:
    if w.conv_q is not None:
        return conv_self_attention(x, w, pattern)
    return multi_head_attention(x, x, w, pattern)


def axial_attention(x: Tensor, w_row: AttentionWeights, w_col: AttentionWeights, order: str = "row") -> Tensor:
    """Attention within each row of an (..., H, W, d) grid, then within each column.

    ``order="col"`` runs the column pass first.
    """
    if x.ndim < 3:
        raise ShapeError(f"axial_attention: expected (..., H, W, d), got {x.shape}")
    if order not in ("row", "col"):
        raise ConfigError(f"axial order must be 'row' or 'col', got {order!r}")
    n = x.ndim

    def rows(t):
        return multi_head_attention(t, t, w_row)

    def cols(t):
        swap = (*range(n - 3), n - 2, n - 3, n - 1)
        t = T.transpose(t, swap)
        t = multi_head_attention(t, t, w_col)
        return T.transpose(t, swap)

    return cols(rows(x)) if order == "row" else rows(cols(x))


def axial_attended_positions(H: int, W: int) -> tuple[int, int]:
    """(positions one element attends across both axial passes, positions under full 2-D attention)."""
    return H + W, H * W


@T.register_check("attention_block")
def _attention_case(rng):
    T_, d = 4, 8
    w = init_attention_weights(rng, d, 2)
    x = T.parameter(rng.normal(size=(T_, d)))
    pat = full_causal_pattern(T_)
    m = rng.normal(size=(T_, d))

    def f(t):
        return T.tsum(T.mul(multi_head_attention(t, t, w, pat), Tensor(m)))

    def f_wq(t):
        w2 = AttentionWeights(t, w.wk, w.wv, w.wo, w.h, w.d_k, w.d_v)
        return T.tsum(T.mul(multi_head_attention(x, x, w2, pat), Tensor(m)))

    return [("x", f, x), ("wq", f_wq, w.wq)]


@T.register_check("conv_self_attention")
def _conv_attention_case(rng):
    T_, d = 5, 4
    w = init_attention_weights(rng, d, 2, conv_k=3)
    x = T.parameter(rng.normal(size=(T_, d)))
    pat = logsparse_pattern(T_)
    m = rng.normal(size=(T_, d))

    def f(t):
        return T.tsum(T.mul(conv_self_attention(t, w, pat), Tensor(m)))

    def f_conv(t):
        w2 = AttentionWeights(w.wq, w.wk, w.wv, w.wo, w.h, w.d_k, w.d_v, conv_q=t, conv_k=w.conv_k)
        return T.tsum(T.mul(conv_self_attention(x, w2, pat), Tensor(m)))

    return [("x", f, x), ("conv_q", f_conv, w.conv_q)]


@T.register_check("axial_attention")
def _axial_case(rng):
    H, W, d = 3, 2, 4
    wr, wc = init_attention_weights(rng, d, 2), init_attention_weights(rng, d, 1)
    x = T.parameter(rng.normal(size=(H, W, d)))
    m = rng.normal(size=(H, W, d))
    return [("x", lambda t: T.tsum(T.mul(axial_attention(t, wr, wc), Tensor(m))), x)]
