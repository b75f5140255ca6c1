import math

import numpy as np
import pytest

from cfwb import attention as A
from cfwb import models as M
from cfwb import tensor as T
from cfwb.errors import ConfigError, DataError, FormatError, NumericalError, UsageError


def _gpt(**kw):
    cfg = dict(d_model=8, h=2, d_ff=16, n_layers=2, vocab_size=7, max_len=12, seed=0)
    cfg.update(kw)
    return M.GPT(M.TransformerConfig(**cfg))


def test_config_validation():
    with pytest.raises(ConfigError):
        M.TransformerConfig(d_model=10, h=3)
    with pytest.raises(ConfigError):
        M.TransformerConfig(d_model=8, h=2, d_v=3)
    with pytest.raises(ConfigError):
        M.TransformerConfig(mask_kind="banded")
    with pytest.raises(ConfigError):
        M.TransformerConfig(d_model=9, h=3)


def test_config_conv_k_positive():
    with pytest.raises(ConfigError):
        M.TransformerConfig(conv_k=0)


def test_pe_values():
    pe = M.sinusoidal_pe(512, 32)
    assert np.array_equal(pe[0], np.tile([0.0, 1.0], 16))
    assert abs(pe[1, 0] - 0.8414709848078965) < 1e-15
    sq = (pe * pe).sum(1)
    d2 = sq[:, None] + sq[None, :] - 2 * pe @ pe.T
    np.fill_diagonal(d2, np.inf)
    assert d2.min() > 0
    with pytest.raises(ConfigError):
        M.sinusoidal_pe(4, 7)


def test_ffn_positionwise_and_null():
    rng = np.random.default_rng(0)
    w1, w2 = T.Tensor(rng.normal(size=(4, 6))), T.Tensor(rng.normal(size=(6, 4)))
    b1, b2 = T.Tensor(rng.normal(size=6)), T.Tensor(rng.normal(size=4))
    x = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a = M.pointwise_ffn(T.Tensor(x), w1, b1, w2, b2).data
    b = M.pointwise_ffn(T.Tensor(x[perm]), w1, b1, w2, b2).data
    assert np.array_equal(a[perm], b)
    z = M.pointwise_ffn(T.Tensor(x), T.Tensor(np.zeros((4, 6))), T.Tensor(np.zeros(6)),
                        T.Tensor(np.zeros((6, 4))), T.Tensor(np.zeros(4)))
    assert np.array_equal(z.data, np.zeros((5, 4)))


def test_ffn_hand_relu():
    eye = T.Tensor(np.eye(2))
    zero = T.Tensor(np.zeros(2))
    out = M.pointwise_ffn(T.Tensor([[-1.0, 2.0]]), eye, zero, eye, zero, "relu")
    assert np.array_equal(out.data, [[0.0, 2.0]])


def _zero_projections(blocks):
    for b in blocks:
        b.attn.wo.data = np.zeros_like(b.attn.wo.data)
        b.w2.data = np.zeros_like(b.w2.data)
        b.b2.data = np.zeros_like(b.b2.data)
        if b.cross is not None:
            b.cross.wo.data = np.zeros_like(b.cross.wo.data)


def test_block_identity_when_projections_zero():
    rng = np.random.default_rng(1)
    cfg = M.TransformerConfig(d_model=8, h=2, d_ff=16, conv_k=2)
    blk = M.init_block(rng, cfg)
    _zero_projections([blk])
    x = rng.normal(size=(5, 8))
    assert np.array_equal(M.decoder_block(T.Tensor(x), blk, A.full_causal_pattern(5)).data, x)


@pytest.mark.parametrize("kind", ["full", "strided", "logsparse"])
def test_gpt_causality(kind):
    m = _gpt(mask_kind=kind, conv_k=2)
    rng = np.random.default_rng(2)
    tok = rng.integers(0, 7, size=10)
    base = m(tok).data
    for u in range(1, 10):
        t2 = tok.copy()
        t2[u:] = (t2[u:] + 1 + rng.integers(0, 5, size=10 - u)) % 7
        assert np.array_equal(m(t2).data[:u], base[:u])


def test_gpt_shapes_and_errors():
    m = _gpt()
    out = m(np.array([3]))
    assert out.shape == (1, 7) and np.all(np.isfinite(out.data))
    with pytest.raises(DataError):
        m(np.array([1, 7]))
    with pytest.raises(UsageError):
        m(np.zeros(13, dtype=int))


def test_gpt_zero_layers_hand_composition():
    m = _gpt(n_layers=0)
    tok = np.array([4, 0, 6])
    h = m.embed.data[tok] + M.sinusoidal_pe(3, 8)
    mu = h.mean(-1, keepdims=True)
    var = h.var(-1, keepdims=True)
    ln = (h - mu) / np.sqrt(var + T.LN_EPS)
    want = ln @ m.head_w.data + m.head_b.data
    assert np.allclose(M.gpt_forward(tok, m).data, want, atol=1e-13)


def test_gpt_batched_matches_single():
    m = _gpt()
    tok = np.random.default_rng(3).integers(0, 7, size=(3, 9))
    batched = m(tok).data
    for i in range(3):
        assert np.allclose(batched[i], m(tok[i]).data, atol=1e-13)


def _encdec():
    return M.EncoderDecoder(M.TransformerConfig(d_model=8, h=2, d_ff=16, n_layers=1, vocab_size=5, input_dim=3,
                                                max_len=10, seed=4))


def test_encdec_rejects_empty_target():
    m = _encdec()
    with pytest.raises(UsageError):
        m(T.Tensor(np.zeros((4, 3))), np.zeros(0, dtype=int))


def test_encdec_cross_attention_is_global_and_decoder_causal():
    m = _encdec()
    rng = np.random.default_rng(5)
    src = rng.normal(size=(6, 3))
    tgt = rng.integers(0, 5, size=5)
    base = M.encoder_decoder_forward(src, tgt, m).data
    for u in range(6):
        s2 = src.copy()
        s2[u] += 1.0
        diff = np.abs(M.encoder_decoder_forward(s2, tgt, m).data - base)
        assert np.all(diff.max(axis=1) > 0)
    t2 = tgt.copy()
    t2[3] = (t2[3] + 1) % 5
    assert np.array_equal(M.encoder_decoder_forward(src, t2, m).data[:3], base[:3])


def test_encdec_trains():
    m = _encdec()
    rng = np.random.default_rng(6)
    src = rng.normal(size=(16, 6, 3))
    tgt = (src[:, :, 0] > 0).astype(int)
    res = M.train(m, M.ArrayDataset((src, tgt)), 60, lr=1e-2, batch_size=8)
    assert np.mean(res.losses[-10:]) < np.mean(res.losses[:10])


def test_lstm_cell_null_cases():
    H, D = 3, 2
    w = M.LstmWeights(T.Tensor(np.zeros((4 * H, D))), T.Tensor(np.zeros((4 * H, H))), T.Tensor(np.zeros(4 * H)))
    x, h = T.Tensor(np.ones(D)), T.Tensor(np.zeros(H))
    h1, c1 = M.lstm_cell(x, h, T.Tensor(np.zeros(H)), w)
    assert np.array_equal(h1.data, np.zeros(H)) and np.array_equal(c1.data, np.zeros(H))
    c0 = np.array([1.0, -2.0, 0.5])
    h1, c1 = M.lstm_cell(x, h, T.Tensor(c0), w)
    assert np.allclose(c1.data, 0.5 * c0, atol=1e-15)
    assert np.allclose(h1.data, 0.5 * np.tanh(0.5 * c0), atol=1e-15)


def test_lstm_init_forget_bias():
    w = M.init_lstm(np.random.default_rng(0), 1, 4)
    assert np.array_equal(w.b.data, np.r_[np.zeros(4), np.ones(4), np.zeros(8)])


def test_lstm_bounded_for_large_inputs():
    rng = np.random.default_rng(7)
    w = M.init_lstm(rng, 2, 5)
    h, c = T.Tensor(np.zeros(5)), T.Tensor(np.zeros(5))
    for _ in range(20):
        h, c = M.lstm_cell(T.Tensor(rng.uniform(-1e3, 1e3, size=2)), h, c, w)
        assert np.all(np.isfinite(c.data)) and np.all(np.abs(h.data) <= 1)


def test_lstm_forecaster_unroll_base_case():
    rng = np.random.default_rng(8)
    w = M.init_lstm(rng, 1, 4)
    hw, hb = T.Tensor(rng.normal(size=(4, 1))), T.Tensor(rng.normal(size=1))
    x = T.Tensor([[0.7]])
    h, _ = M.lstm_cell(T.Tensor([0.7]), T.Tensor(np.zeros(4)), T.Tensor(np.zeros(4)), w)
    assert np.allclose(M.lstm_forecaster(x, w, hw, hb).data, h.data @ hw.data + hb.data, atol=1e-15)
    with pytest.raises(UsageError):
        M.lstm_forecaster(T.Tensor(np.zeros((0, 1))), w, hw, hb)


def test_train_minimal_and_deterministic():
    data = M.ArrayDataset((np.arange(10.0).reshape(5, 2), np.arange(5.0)))
    m = M.LSTMForecaster(M.LstmConfig(hidden=3, seed=1))
    assert len(M.train(m, data, 1).losses) == 1

    def run():
        mm = M.LSTMForecaster(M.LstmConfig(hidden=3, seed=1))
        res = M.train(mm, data, 20, lr=1e-2, seed=5, batch_size=3)
        return res.losses, [p.data.copy() for p in mm.parameters()]

    (la, pa), (lb, pb) = run(), run()
    assert la == lb
    assert all(np.array_equal(a, b) for a, b in zip(pa, pb))


class _Quadratic(M.Model):
    def __init__(self):
        self.w = T.parameter([2.0, -3.0])

    def named_params(self):
        return {"w": self.w}

    def loss(self, batch):
        return (self.w * self.w).sum()


class _Nothing:
    def sample(self, rng, batch_size):
        return None


def test_train_quadratic_strictly_decreases():
    losses = M.train(_Quadratic(), _Nothing(), 100, lr=1e-2).losses
    assert all(b < a for a, b in zip(losses, losses[1:]))


class _Diverging(_Quadratic):
    def loss(self, batch):
        return T.scale((self.w * self.w).sum(), math.nan)


def test_train_nan_names_step():
    with pytest.raises(NumericalError, match="step 0"):
        M.train(_Diverging(), _Nothing(), 5)
    with pytest.raises(UsageError):
        M.train(_Quadratic(), _Nothing(), 0)


@pytest.mark.parametrize("make", [
    lambda: _gpt(conv_k=3, mask_kind="logsparse"),
    _encdec,
    lambda: M.TransformerForecaster(M.TransformerConfig(d_model=8, h=2, d_ff=8, n_layers=1, input_dim=1,
                                                        max_len=16, input_scale=2.5)),
    lambda: M.LSTMForecaster(M.LstmConfig(hidden=5, seed=3)),
    lambda: M.GPT(M.TransformerConfig(d_model=8, h=2, d_ff=8, n_layers=1, vocab_size=5, max_len=6, learned_pe=True)),
])
def test_checkpoint_roundtrip_bit_exact(tmp_path, make):
    m = make()
    for p in m.parameters():
        p.data = p.data + np.random.default_rng(0).normal(size=p.shape) * 1e-3
    M.save_checkpoint(m, tmp_path / "m.ckpt", {"note": "x", "vals": [1.5, 2]})
    m2, extra = M.load_checkpoint(tmp_path / "m.ckpt")
    assert type(m2) is type(m) and m2.cfg == m.cfg
    assert extra == {"note": "x", "vals": [1.5, 2]}
    for (n1, a), (n2, b) in zip(m.named_params().items(), m2.named_params().items()):
        assert n1 == n2 and np.array_equal(a.data, b.data)
    M.save_checkpoint(m2, tmp_path / "m2.ckpt", {"note": "x", "vals": [1.5, 2]})
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_checkpoint_layout_and_corruption(tmp_path):
    m = M.LSTMForecaster(M.LstmConfig(hidden=2))
    M.save_checkpoint(m, tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw[:5] == b"CFWB1"
    hlen = int.from_bytes(raw[5:9], "little")
    assert b"hidden=2" in raw[9 : 9 + hlen]
    (tmp_path / "b.ckpt").write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        M.load_checkpoint(tmp_path / "b.ckpt")
    (tmp_path / "c.ckpt").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(FormatError):
        M.load_checkpoint(tmp_path / "c.ckpt")


def test_forecaster_is_causal_and_level_free():
    m = M.TransformerForecaster(M.TransformerConfig(d_model=8, h=2, d_ff=8, n_layers=1, input_dim=1, max_len=10,
                                                    conv_k=3))
    x = np.random.default_rng(9).normal(size=(2, 10))
    base = m(x).data
    x2 = x.copy()
    x2[:, 6:] += 1.0
    assert np.array_equal(m(x2).data[:, :6], base[:, :6])
    shifted = m(x + 5.0).data
    assert np.allclose(shifted, base + 5.0, atol=1e-12)


@pytest.mark.parametrize("name", ["decoder_block", "transformer_2layer_2head", "lstm_forecaster"])
def test_model_gradchecks(name):
    for seed in range(2):
        for label, f, x in T.GRADCHECK_CASES[name](np.random.default_rng(seed)):
            assert T.grad_check(f, x) < 1e-4, label


def test_learned_positions_start_neutral_and_train():
    base = M.GPT(M.TransformerConfig(d_model=8, h=2, d_ff=8, n_layers=1, vocab_size=5, max_len=6))
    m = M.GPT(M.TransformerConfig(d_model=8, h=2, d_ff=8, n_layers=1, vocab_size=5, max_len=6, learned_pe=True))
    tokens = np.array([[1, 4, 0, 2, 3, 3]])
    assert np.array_equal(m(tokens).data, base(tokens).data)
    m.pos.data = np.random.default_rng(0).normal(size=m.pos.shape) * 0.1
    assert T.grad_check(lambda t: m.loss(tokens), m.pos) < 1e-4


def test_forecaster_min_context_drops_early_positions():
    cfg = dict(d_model=8, h=2, d_ff=8, n_layers=1, input_dim=1, max_len=10)
    m = M.TransformerForecaster(M.TransformerConfig(**cfg, min_context=4))
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(3, 10)), rng.normal(size=3)
    targets = np.concatenate([x[:, 1:], y[:, None]], axis=1)
    expected = np.mean((m(x).data[:, 4:] - targets[:, 4:]) ** 2)
    assert abs(m.loss((x, y)).item() - expected) < 1e-15
    with pytest.raises(ConfigError):
        M.TransformerConfig(**cfg, min_context=10)
