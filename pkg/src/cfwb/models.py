"""Trainable sequence models built from the attention kernels.

Blocks are pre-norm residual (x + MHA(LN(x)), then + FFN(LN(.))) with no
dropout.  Models expose ``named_params()`` and ``loss(batch)``; ``train``
drives any of them with Adam.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import attention as A
from . import tensor as T
from .errors import ConfigError, DataError, FormatError, NumericalError, ShapeError, UsageError
from .tensor import Tensor

log = logging.getLogger(__name__)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose ("data", "init", "sampling", ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class TransformerConfig:
    d_model: int = 32
    h: int = 4
    d_k: int | None = None
    d_v: int | None = None
    d_ff: int = 64
    n_layers: int = 2
    mask_kind: str = "full"
    conv_k: int = 1
    vocab_size: int | None = None
    input_dim: int | None = None
    max_len: int = 128
    seed: int = 0
    activation: str = "gelu"
    n_enc_layers: int = 0
    input_scale: float = 1.0
    learned_pe: bool = False  # GPT only: add a trainable position table to the sinusoids
    min_context: int = 0  # forecaster only: the first min_context positions are left out of the loss

    def __post_init__(self):
        if self.d_k is None:
            self.d_k = self.d_model // self.h
        if self.d_v is None:
            self.d_v = self.d_model // self.h
        if self.h < 1 or self.d_k < 1 or self.d_v < 1:
            raise ConfigError(f"need h, d_k, d_v >= 1 (got {self.h}, {self.d_k}, {self.d_v})")
        if self.d_model != self.h * self.d_v:
            raise ConfigError(f"d_model ({self.d_model}) must equal h*d_v ({self.h}*{self.d_v})")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal encodings, got {self.d_model}")
        if self.mask_kind not in A.MASK_KINDS:
            raise ConfigError(f"unknown mask_kind {self.mask_kind!r}")
        if self.conv_k < 1:
            raise ConfigError(f"conv_k must be >= 1, got {self.conv_k}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.max_len < 1 or self.n_layers < 0:
            raise ConfigError("max_len must be >= 1 and n_layers >= 0")
        if not 0 <= self.min_context < self.max_len:
            raise ConfigError(f"min_context must lie in [0, max_len), got {self.min_context}")


ACTIVATIONS = {"relu": T.relu, "gelu": T.gelu, "tanh": T.tanh}


def sinusoidal_pe(n: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise ConfigError(f"sinusoidal encoding needs an even d_model, got {d_model}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((n, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def pointwise_ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, activation: str = "gelu") -> Tensor:
    return T.linear(ACTIVATIONS[activation](T.linear(x, w1, b1)), w2, b2)


# ---------------------------------------------------------------------------
# blocks


@dataclass
class BlockWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: A.AttentionWeights
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    cross: A.AttentionWeights | None = None
    lnx_g: Tensor | None = None
    lnx_b: Tensor | None = None

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {prefix + "ln1_g": self.ln1_g, prefix + "ln1_b": self.ln1_b}
        out.update(self.attn.named_params(prefix + "attn."))
        if self.cross is not None:
            out[prefix + "lnx_g"] = self.lnx_g
            out[prefix + "lnx_b"] = self.lnx_b
            out.update(self.cross.named_params(prefix + "cross."))
        out.update({prefix + n: getattr(self, n) for n in ("ln2_g", "ln2_b", "w1", "b1", "w2", "b2")})
        return out


def init_block(rng: np.random.Generator, cfg: TransformerConfig, cross: bool = False, conv: bool = True) -> BlockWeights:
    d = cfg.d_model
    conv_k = cfg.conv_k if (conv and cfg.conv_k > 1) else None

    def attn():
        return A.init_attention_weights(rng, d, cfg.h, cfg.d_k, cfg.d_v, conv_k=conv_k)

    def ones():
        return T.parameter(np.ones(d))

    def zeros(n=d):
        return T.parameter(np.zeros(n))

    blk = BlockWeights(
        ones(), zeros(), attn(), ones(), zeros(),
        T.parameter(T.glorot_uniform(rng, d, cfg.d_ff)), zeros(cfg.d_ff),
        T.parameter(T.glorot_uniform(rng, cfg.d_ff, d)), zeros(),
    )
    if cross:
        blk.cross = A.init_attention_weights(rng, d, cfg.h, cfg.d_k, cfg.d_v)
        blk.lnx_g, blk.lnx_b = ones(), zeros()
    return blk


def decoder_block(x: Tensor, w: BlockWeights, pattern: A.SparsityPattern | None, activation: str = "gelu",
                  memory: Tensor | None = None) -> Tensor:
    """Pre-norm residual block; with ``memory`` it also cross-attends over it (unmasked)."""
    hdn = T.layer_norm(x, w.ln1_g, w.ln1_b)
    x = T.add(x, A.self_attention(hdn, w.attn, pattern))
    if w.cross is not None:
        if memory is None:
            raise UsageError("block has cross-attention weights but no encoder memory was given")
        hdn = T.layer_norm(x, w.lnx_g, w.lnx_b)
        x = T.add(x, A.multi_head_attention(hdn, memory, w.cross))
    hdn = T.layer_norm(x, w.ln2_g, w.ln2_b)
    return T.add(x, pointwise_ffn(hdn, w.w1, w.b1, w.w2, w.b2, activation))


# ---------------------------------------------------------------------------
# model base


class Model:
    kind = "model"

    def named_params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_params().values())

    def config_dict(self) -> dict:
        return dataclasses.asdict(self.cfg)

    def loss(self, batch) -> Tensor:
        raise NotImplementedError


class _Causal:
    """Pattern cache; strided stride follows max_len so rows never change with T."""

    cfg: TransformerConfig

    def pattern(self, n: int) -> A.SparsityPattern:
        cache = self.__dict__.setdefault("_patterns", {})
        if n not in cache:
            kind = self.cfg.mask_kind
            if kind == "strided":
                cache[n] = A.strided_sparse_pattern(n, A.default_stride(self.cfg.max_len))
            else:
                cache[n] = A.make_pattern(kind, n)
        return cache[n]

    def _check_len(self, n: int) -> None:
        if n > self.cfg.max_len:
            raise UsageError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        if n < 1:
            raise UsageError("sequence must contain at least one position")


class GPT(Model, _Causal):
    """Decoder-only token model: embedding + sinusoidal PE + causal blocks + projection."""

    kind = "gpt"

    def __init__(self, cfg: TransformerConfig):
        if not cfg.vocab_size:
            raise ConfigError("GPT needs vocab_size")
        self.cfg = cfg
        rng = substream(cfg.seed, "init")
        d = cfg.d_model
        self.embed = T.parameter(T.glorot_uniform(rng, cfg.vocab_size, d))
        self.blocks = [init_block(rng, cfg) for _ in range(cfg.n_layers)]
        self.lnf_g, self.lnf_b = T.parameter(np.ones(d)), T.parameter(np.zeros(d))
        self.head_w = T.parameter(T.glorot_uniform(rng, d, cfg.vocab_size))
        self.head_b = T.parameter(np.zeros(cfg.vocab_size))
        self._pe = sinusoidal_pe(cfg.max_len, d)
        self.pos = T.parameter(np.zeros((cfg.max_len, d))) if cfg.learned_pe else None

    def named_params(self):
        out = {"embed": self.embed}
        if self.pos is not None:
            out["pos"] = self.pos
        for i, b in enumerate(self.blocks):
            out.update(b.named_params(f"blocks.{i}."))
        out.update({"lnf_g": self.lnf_g, "lnf_b": self.lnf_b, "head_w": self.head_w, "head_b": self.head_b})
        return out

    def embed_tokens(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[-1]
        self._check_len(n)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise DataError(f"token outside [0, {self.cfg.vocab_size})")
        x = T.embedding(self.embed, tokens)
        pe = np.broadcast_to(self._pe[:n], x.shape)
        x = T.add(x, Tensor(pe))
        if self.pos is not None:
            x = T.add(x, T.embedding(self.pos, np.broadcast_to(np.arange(n), tokens.shape)))
        return x

    def forward_hidden(self, x: Tensor) -> Tensor:
        pat = self.pattern(x.shape[-2])
        for b in self.blocks:
            x = decoder_block(x, b, pat, self.cfg.activation)
        return T.layer_norm(x, self.lnf_g, self.lnf_b)

    def __call__(self, tokens) -> Tensor:
        return T.linear(self.forward_hidden(self.embed_tokens(tokens)), self.head_w, self.head_b)

    def loss(self, batch) -> Tensor:
        """Teacher-forced next-token cross-entropy; ``batch`` = (tokens, optional weights)."""
        tokens, weights = batch if isinstance(batch, tuple) else (batch, None)
        tokens = np.asarray(tokens)
        logits = self(tokens[..., :-1])
        w = None if weights is None else np.asarray(weights)[..., 1:]
        return T.cross_entropy(logits, tokens[..., 1:], w)


def gpt_forward(tokens, model: GPT) -> Tensor:
    return model(tokens)


class EncoderDecoder(Model, _Causal):
    """Real-valued source encoder (unmasked) + causal token decoder with cross-attention."""

    kind = "encdec"

    def __init__(self, cfg: TransformerConfig):
        if not cfg.vocab_size or not cfg.input_dim:
            raise ConfigError("EncoderDecoder needs vocab_size and input_dim")
        self.cfg = cfg
        rng = substream(cfg.seed, "init")
        d = cfg.d_model
        n_enc = cfg.n_enc_layers or cfg.n_layers
        self.src_w = T.parameter(T.glorot_uniform(rng, cfg.input_dim, d))
        self.src_b = T.parameter(np.zeros(d))
        self.enc = [init_block(rng, cfg, conv=False) for _ in range(n_enc)]
        self.enc_g, self.enc_b = T.parameter(np.ones(d)), T.parameter(np.zeros(d))
        self.embed = T.parameter(T.glorot_uniform(rng, cfg.vocab_size, d))
        self.dec = [init_block(rng, cfg, cross=True) for _ in range(cfg.n_layers)]
        self.lnf_g, self.lnf_b = T.parameter(np.ones(d)), T.parameter(np.zeros(d))
        self.head_w = T.parameter(T.glorot_uniform(rng, d, cfg.vocab_size))
        self.head_b = T.parameter(np.zeros(cfg.vocab_size))
        self._pe = sinusoidal_pe(cfg.max_len, d)

    def named_params(self):
        out = {"src_w": self.src_w, "src_b": self.src_b}
        for i, b in enumerate(self.enc):
            out.update(b.named_params(f"enc.{i}."))
        out.update({"enc_g": self.enc_g, "enc_b": self.enc_b, "embed": self.embed})
        for i, b in enumerate(self.dec):
            out.update(b.named_params(f"dec.{i}."))
        out.update({"lnf_g": self.lnf_g, "lnf_b": self.lnf_b, "head_w": self.head_w, "head_b": self.head_b})
        return out

    def encode(self, src: Tensor) -> Tensor:
        self._check_len(src.shape[-2])
        x = T.add(T.linear(src, self.src_w, self.src_b), Tensor(np.broadcast_to(self._pe[: src.shape[-2]], src.shape[:-1] + (self.cfg.d_model,))))
        for b in self.enc:
            x = decoder_block(x, b, None, self.cfg.activation)
        return T.layer_norm(x, self.enc_g, self.enc_b)

    def __call__(self, src: Tensor, tgt) -> Tensor:
        tgt = np.asarray(tgt, dtype=np.int64)
        if tgt.shape[-1] == 0:
            raise UsageError("target sequence must not be empty")
        self._check_len(tgt.shape[-1])
        if tgt.min() < 0 or tgt.max() >= self.cfg.vocab_size:
            raise DataError(f"token outside [0, {self.cfg.vocab_size})")
        memory = self.encode(src)
        n = tgt.shape[-1]
        x = T.add(T.embedding(self.embed, tgt), Tensor(np.broadcast_to(self._pe[:n], tgt.shape + (self.cfg.d_model,))))
        pat = self.pattern(n)
        for b in self.dec:
            x = decoder_block(x, b, pat, self.cfg.activation, memory=memory)
        return T.linear(T.layer_norm(x, self.lnf_g, self.lnf_b), self.head_w, self.head_b)

    def loss(self, batch) -> Tensor:
        src, tgt = batch
        tgt = np.asarray(tgt)
        return T.cross_entropy(self(as_src(src), tgt[..., :-1]), tgt[..., 1:])


def as_src(src) -> Tensor:
    return src if isinstance(src, Tensor) else Tensor(src)


def encoder_decoder_forward(src, tgt, model: EncoderDecoder) -> Tensor:
    return model(as_src(src), tgt)


# ---------------------------------------------------------------------------
# forecasters (real-valued, next-value regression)


def _center(x: np.ndarray | Tensor, scale: float):
    """Split a (B, L) window into level-free inputs and the raw values.

    Inputs are taken relative to the first value of the window, which every
    causal prefix contains, so the model never sees absolute levels; they are
    then multiplied by ``scale`` (fitted on training windows) to unit spread.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return (data - data[..., :1]) * scale, data


def relative_scale(windows: np.ndarray) -> float:
    """1 / std of training windows taken relative to their first value."""
    rel = np.asarray(windows) - np.asarray(windows)[..., :1]
    return 1.0 / max(float(rel.std()), 1e-8)


class TransformerForecaster(Model, _Causal):
    """Decoder-only regressor: predicts x[t+1] at every position t from x[0..t].

    Output at t is x[t] plus a learned increment computed from the window
    taken relative to its first value.
    """

    kind = "transformer_forecaster"

    def __init__(self, cfg: TransformerConfig):
        self.cfg = cfg
        rng = substream(cfg.seed, "init")
        d = cfg.d_model
        self.in_w = T.parameter(T.glorot_uniform(rng, 1, d))
        self.in_b = T.parameter(np.zeros(d))
        self.blocks = [init_block(rng, cfg) for _ in range(cfg.n_layers)]
        self.lnf_g, self.lnf_b = T.parameter(np.ones(d)), T.parameter(np.zeros(d))
        self.head_w = T.parameter(T.glorot_uniform(rng, d, 1))
        self.head_b = T.parameter(np.zeros(1))
        self._pe = sinusoidal_pe(cfg.max_len, d)

    def named_params(self):
        out = {"in_w": self.in_w, "in_b": self.in_b}
        for i, b in enumerate(self.blocks):
            out.update(b.named_params(f"blocks.{i}."))
        out.update({"lnf_g": self.lnf_g, "lnf_b": self.lnf_b, "head_w": self.head_w, "head_b": self.head_b})
        return out

    @property
    def window(self) -> int:
        return self.cfg.max_len

    def __call__(self, x) -> Tensor:
        """(B, L) normalized values -> (B, L) next-value predictions."""
        rel, raw = _center(x, self.cfg.input_scale)
        n = rel.shape[-1]
        self._check_len(n)
        h = T.linear(Tensor(rel[..., None]), self.in_w, self.in_b)
        h = T.add(h, Tensor(np.broadcast_to(self._pe[:n], h.shape)))
        pat = self.pattern(n)
        for b in self.blocks:
            h = decoder_block(h, b, pat, self.cfg.activation)
        h = T.layer_norm(h, self.lnf_g, self.lnf_b)
        inc = T.reshape(T.linear(h, self.head_w, self.head_b), rel.shape)
        return T.add(T.scale(inc, 1.0 / self.cfg.input_scale), Tensor(raw))

    def predict_next(self, x: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self(x).data[..., -1]

    def loss(self, batch) -> Tensor:
        x, y = batch
        x, y = np.asarray(x), np.asarray(y)
        targets = np.concatenate([x[..., 1:], y[..., None]], axis=-1)
        k = self.cfg.min_context
        pred = self(x)
        if k:
            pred, targets = T.getitem(pred, (Ellipsis, slice(k, None))), targets[..., k:]
        return T.mse_loss(pred, targets)


@dataclass
class LstmWeights:
    """Gate blocks ordered (input, forget, cell, output); forget bias starts at 1."""

    w_ih: Tensor
    w_hh: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmWeights:
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmWeights(
        T.parameter(T.glorot_uniform(rng, input_dim, 4 * hidden, (4 * hidden, input_dim))),
        T.parameter(T.glorot_uniform(rng, hidden, 4 * hidden, (4 * hidden, hidden))),
        T.parameter(b),
    )


def lstm_cell(x_t: Tensor, h: Tensor, c: Tensor, w: LstmWeights) -> tuple[Tensor, Tensor]:
    return T.lstm_cell(x_t, h, c, w.w_ih, w.w_hh, w.b)


def lstm_forecaster(window: Tensor, w: LstmWeights, head_w: Tensor, head_b: Tensor) -> Tensor:
    """Unroll over a (..., L, D) window; the head maps the final hidden state to the forecast."""
    L = window.shape[-2]
    if L < 1:
        raise UsageError("lstm_forecaster: empty window")
    lead = window.shape[:-2]
    h = Tensor(np.zeros(lead + (w.hidden,)))
    c = Tensor(np.zeros(lead + (w.hidden,)))
    for t in range(L):
        h, c = lstm_cell(T.getitem(window, (Ellipsis, t, slice(None))), h, c, w)
    return T.linear(h, head_w, head_b)


@dataclass
class LstmConfig:
    hidden: int = 32
    input_dim: int = 1
    out_dim: int = 1
    seed: int = 0
    input_scale: float = 1.0


class LSTMForecaster(Model):
    kind = "lstm_forecaster"

    def __init__(self, cfg: LstmConfig):
        if cfg.hidden < 1:
            raise ConfigError("LSTM hidden size must be >= 1")
        self.cfg = cfg
        rng = substream(cfg.seed, "init")
        self.w = init_lstm(rng, cfg.input_dim, cfg.hidden)
        self.head_w = T.parameter(T.glorot_uniform(rng, cfg.hidden, cfg.out_dim))
        self.head_b = T.parameter(np.zeros(cfg.out_dim))

    def named_params(self):
        return {"w_ih": self.w.w_ih, "w_hh": self.w.w_hh, "b": self.w.b, "head_w": self.head_w, "head_b": self.head_b}

    def __call__(self, x) -> Tensor:
        """(B, L) normalized values -> (B,) prediction of the value after the window."""
        rel, raw = _center(x, self.cfg.input_scale)
        inc = lstm_forecaster(Tensor(rel[..., None]), self.w, self.head_w, self.head_b)
        return T.add(T.scale(T.reshape(inc, rel.shape[:-1]), 1.0 / self.cfg.input_scale), Tensor(raw[..., -1]))

    def predict_next(self, x: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self(x).data

    def loss(self, batch) -> Tensor:
        x, y = batch
        return T.mse_loss(self(np.asarray(x)), np.asarray(y, dtype=np.float64))


# ---------------------------------------------------------------------------
# training


class Dataset(Protocol):
    def sample(self, rng: np.random.Generator, batch_size: int): ...


@dataclass
class ArrayDataset:
    """Uniformly sampled minibatches from aligned arrays."""

    arrays: tuple

    def __post_init__(self):
        n = {len(a) for a in self.arrays}
        if len(n) != 1 or 0 in n:
            raise UsageError("dataset arrays must be non-empty and equally long")

    def __len__(self):
        return len(self.arrays[0])

    def sample(self, rng, batch_size):
        idx = rng.integers(0, len(self), size=min(batch_size, len(self)))
        parts = tuple(np.asarray(a)[idx] for a in self.arrays)
        return parts if len(parts) > 1 else parts[0]


@dataclass
class TrainResult:
    model: Model
    losses: list[float] = field(default_factory=list)


def train(model: Model, dataset: Dataset, steps: int, lr: float = 1e-3, seed: int = 0,
          batch_size: int = 32, log_every: int = 0) -> TrainResult:
    """Adam on ``model.loss`` over minibatches drawn from the seeded "data" stream."""
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")
    rng = substream(seed, "data")
    params = model.parameters()
    state = T.AdamState()
    trace = []
    for step in range(steps):
        batch = dataset.sample(rng, batch_size)
        for p in params:
            p.grad = None
        loss = model.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"training diverged at step {step}: loss={value}")
        T.backward(loss, leaves=params)
        T.adam_step(params, [p.grad for p in params], state, lr)
        trace.append(value)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.6g", step + 1, value)
    return TrainResult(model, trace)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"CFWB1"
MODEL_KINDS = {
    GPT.kind: (GPT, TransformerConfig),
    EncoderDecoder.kind: (EncoderDecoder, TransformerConfig),
    TransformerForecaster.kind: (TransformerForecaster, TransformerConfig),
    LSTMForecaster.kind: (LSTMForecaster, LstmConfig),
}


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    """Binary checkpoint: magic, length-prefixed key=value header, then named float64 tensors."""
    lines = [f"model={json.dumps(model.kind)}"]
    lines += [f"{k}={json.dumps(v)}" for k, v in model.config_dict().items()]
    lines += [f"extra.{k}={json.dumps(v)}" for k, v in (extra or {}).items()]
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, t in model.named_params().items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        header = {}
        for line in raw[pos : pos + hlen].decode("utf-8").splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                header[key] = json.loads(value)
        pos += hlen
        tensors = {}
        while pos < len(raw):
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return header, tensors


def load_checkpoint(path) -> tuple[Model, dict]:
    header, tensors = read_checkpoint(path)
    kind = header.pop("model", None)
    if kind not in MODEL_KINDS:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    cls, cfg_cls = MODEL_KINDS[kind]
    extra = {k[6:]: header.pop(k) for k in list(header) if k.startswith("extra.")}
    model = cls(cfg_cls(**header))
    params = model.named_params()
    if set(params) != set(tensors):
        raise FormatError(f"{path}: tensor names do not match a {kind} model")
    for name, p in params.items():
        if p.shape != tensors[name].shape:
            raise FormatError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {p.shape}")
        p.data = tensors[name]
    return model, extra


# ---------------------------------------------------------------------------
# grad-check cases


@T.register_check("decoder_block")
def _block_case(rng):
    cfg = TransformerConfig(d_model=8, h=2, d_ff=16, n_layers=1, max_len=4)
    blk = init_block(rng, cfg)
    x = T.parameter(rng.normal(size=(4, 8)))
    pat = A.full_causal_pattern(4)
    m = rng.normal(size=(4, 8))
    return [("x", lambda t: T.tsum(T.mul(decoder_block(t, blk, pat), Tensor(m))), x),
            ("w1", lambda t: _block_loss(blk, "w1", t, x, pat, m), blk.w1)]


def _block_loss(blk, name, t, x, pat, m):
    saved = getattr(blk, name)
    setattr(blk, name, t)
    try:
        return T.tsum(T.mul(decoder_block(x, blk, pat), Tensor(m)))
    finally:
        setattr(blk, name, saved)


@T.register_check("transformer_2layer_2head")
def _gpt_case(rng):
    cfg = TransformerConfig(d_model=8, h=2, d_ff=16, n_layers=2, vocab_size=5, max_len=6,
                            seed=int(rng.integers(1 << 30)))
    model = GPT(cfg)
    tokens = rng.integers(0, 5, size=6)
    params = model.named_params()

    def loss_of(name):
        def f(t):
            assert t is params[name]
            return model.loss(tokens)

        return f

    names = ["embed", "blocks.0.attn.wq", "blocks.1.attn.wo", "blocks.0.w1", "blocks.1.ln2_g", "head_w"]
    return [(n, loss_of(n), params[n]) for n in names]


@T.register_check("lstm_forecaster")
def _lstm_forecaster_case(rng):
    model = LSTMForecaster(LstmConfig(hidden=4, seed=int(rng.integers(1 << 30))))
    x = rng.normal(size=(2, 4))
    y = rng.normal(size=2)
    params = model.named_params()
    return [(n, lambda t, n=n: model.loss((x, y)), params[n]) for n in ("w_ih", "w_hh", "b", "head_w")]
