import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfwb import attention as A
from cfwb import tensor as T
from cfwb.errors import ConfigError, ShapeError


def _ident_weights(d, h=1):
    eye = T.Tensor(np.eye(d))
    return A.AttentionWeights(eye, eye, eye, eye, h, d // h, d // h)


def _with_conv_from_linear(w):
    return A.AttentionWeights(w.wq, w.wk, w.wv, w.wo, w.h, w.d_k, w.d_v,
                              conv_q=T.Tensor(w.wq.data[None]), conv_k=T.Tensor(w.wk.data[None]))


def test_self_only_pattern_returns_v():
    rng = np.random.default_rng(0)
    q, k, v = (T.Tensor(rng.normal(size=(5, 3))) for _ in range(3))
    assert np.array_equal(A.scaled_dot_attention(q, k, v, A.self_only_pattern(5)).data, v.data)


def test_length_one():
    x = T.Tensor([[0.3, -2.0]])
    assert np.array_equal(A.scaled_dot_attention(x, x, x).data, x.data)


def test_two_step_hand_oracle():
    q = np.array([[1.0, 0.0], [0.5, 1.0]])
    k = np.array([[1.0, 1.0], [0.0, 2.0]])
    v = np.array([[1.0, 2.0], [3.0, -1.0]])
    out = A.scaled_dot_attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), A.full_causal_pattern(2)).data
    assert np.allclose(out[0], v[0], atol=0, rtol=0)
    s0, s1 = (0.5 + 1.0) / math.sqrt(2), 2.0 / math.sqrt(2)
    p0 = math.exp(s0) / (math.exp(s0) + math.exp(s1))
    assert np.allclose(out[1], p0 * v[0] + (1 - p0) * v[1], atol=1e-14)


def test_mha_identity_self_only():
    x = T.Tensor(np.random.default_rng(1).normal(size=(4, 6)))
    out = A.multi_head_attention(x, x, _ident_weights(6), A.self_only_pattern(4))
    assert np.allclose(out.data, x.data, atol=1e-14)


def test_two_heads_equal_concat_of_singles():
    rng = np.random.default_rng(2)
    w = A.init_attention_weights(rng, 8, 2)
    x = T.Tensor(rng.normal(size=(5, 8)))
    pat = A.full_causal_pattern(5)
    both = A.multi_head_attention(x, x, w, pat).data
    parts = []
    for i in range(2):
        hw = w.head(i)
        q, k, v = (x.data @ m.data for m in (hw.wq, hw.wk, hw.wv))
        parts.append(A.scaled_dot_attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), pat).data)
    assert np.allclose(both, np.concatenate(parts, axis=1) @ w.wo.data, atol=1e-12)


def test_mha_shape_mismatch():
    w = A.init_attention_weights(np.random.default_rng(0), 8, 2)
    with pytest.raises(ShapeError):
        A.multi_head_attention(T.Tensor(np.ones((3, 6))), T.Tensor(np.ones((3, 8))), w)


@pytest.mark.parametrize("kind", ["full", "strided", "logsparse", "self"])
def test_rows_stochastic(kind):
    rng = np.random.default_rng(3)
    n = 37
    q, k, v = (T.Tensor(rng.normal(size=(n, 4)) * 30) for _ in range(3))
    _, wts = A.scaled_dot_attention(q, k, v, A.make_pattern(kind, n), return_weights=True)
    assert np.max(np.abs(wts.data.sum(-1) - 1)) <= 1e-9
    assert np.all(wts.data[~A.make_pattern(kind, n).dense_mask()] == 0)


@pytest.mark.parametrize("kind", ["full", "strided", "logsparse"])
@pytest.mark.parametrize("conv", [None, 3])
def test_causality_exact(kind, conv):
    rng = np.random.default_rng(4)
    n, d = 12, 8
    w = A.init_attention_weights(rng, d, 2, conv_k=conv)
    pat = A.make_pattern(kind, n)
    x = rng.normal(size=(n, d))
    base = A.self_attention(T.Tensor(x), w, pat).data
    for u in range(1, n):
        x2 = x.copy()
        x2[u] += rng.normal(size=d)
        out = A.self_attention(T.Tensor(x2), w, pat).data
        assert np.array_equal(out[:u], base[:u])


def test_conv_k1_matches_canonical_over_seeds():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w = A.init_attention_weights(rng, 8, 2)
        x = T.Tensor(rng.normal(size=(7, 8)))
        a = A.multi_head_attention(x, x, w, A.full_causal_pattern(7)).data
        b = A.conv_self_attention(x, _with_conv_from_linear(w), A.full_causal_pattern(7)).data
        assert np.max(np.abs(a - b)) <= 1e-10


def test_conv_first_output_sees_only_first_input():
    rng = np.random.default_rng(5)
    w = A.init_attention_weights(rng, 4, 1, conv_k=3)
    x = rng.normal(size=(8, 4))
    base = A.conv_self_attention(T.Tensor(x), w, A.full_causal_pattern(8)).data
    x[1:] = rng.normal(size=(7, 4))
    assert np.array_equal(A.conv_self_attention(T.Tensor(x), w, A.full_causal_pattern(8)).data[0], base[0])


def test_conv_width_longer_than_sequence():
    w = A.init_attention_weights(np.random.default_rng(0), 4, 1, conv_k=5)
    with pytest.raises(ConfigError):
        A.conv_self_attention(T.Tensor(np.ones((3, 4))), w)


def test_full_pattern_examples():
    assert [r.tolist() for r in A.full_causal_pattern(1).rows] == [[0]]
    assert A.full_causal_pattern(4).total_pairs == 10
    assert A.full_causal_pattern(1024).total_pairs == 524800
    with pytest.raises(ConfigError):
        A.full_causal_pattern(0)


def test_strided_examples():
    p = A.strided_sparse_pattern(16, 4)
    assert p.row(10).tolist() == [3, 7, 8, 9, 10]
    assert p.row(0).tolist() == [0]
    big = A.strided_sparse_pattern(1024)
    assert big.total_pairs <= 65536 < 524800


def test_logsparse_examples():
    p = A.logsparse_pattern(1024)
    assert p.row(7).tolist() == [3, 5, 6, 7]
    assert p.row(0).tolist() == [0]
    assert p.total_pairs <= 12288
    counts = p.row_counts()
    bound = np.floor(np.log2(np.maximum(np.arange(1024), 1))) + 2
    assert np.all(counts <= bound)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 20))
def test_strided_matches_definition(n, s):
    p = A.strided_sparse_pattern(n, s)
    for t in range(n):
        want = sorted({j for j in range(t + 1) if t - s < j or j % s == s - 1})
        assert p.row(t).tolist() == want
    # the 2s row bound needs s*s >= n, which the default stride guarantees
    d = A.strided_sparse_pattern(n)
    assert np.all(d.row_counts() <= 2 * A.default_stride(n))


def test_pattern_stats_examples():
    full = A.pattern_stats(A.full_causal_pattern(4))
    assert (full.total_pairs, full.max_row_cardinality) == (10, 4)
    assert full.bytes_estimate == 80
    assert A.pattern_stats(A.logsparse_pattern(2)).total_pairs == 3
    s = A.pattern_stats(A.self_only_pattern(9))
    assert (s.total_pairs, s.max_row_cardinality) == (9, 1)


def test_reachability_examples():
    assert A.reachability_depth(A.full_causal_pattern(50)) == 1
    assert A.reachability_depth(A.logsparse_pattern(16)) <= 4
    assert A.reachability_depth(A.strided_sparse_pattern(16, 4)) <= 2
    assert A.reachability_depth(A.self_only_pattern(1)) == 1


def _brute_depth(p):
    # dense boolean matrix powers; oracle for small n
    m = p.dense_mask().astype(np.int64)
    reach, depth = m.copy(), 1
    lower = np.tril(np.ones_like(m))
    while not np.all(reach[lower == 1] > 0):
        reach = np.minimum(reach @ m, 1)
        depth += 1
    return depth


@pytest.mark.parametrize("kind", ["full", "strided", "logsparse"])
def test_reachability_matches_brute_force(kind):
    for n in (2, 3, 9, 17, 40, 65):
        assert A.reachability_depth(A.make_pattern(kind, n)) == _brute_depth(A.make_pattern(kind, n))


def test_prefix_eccentricity_equals_depth_of_prefix():
    big = A.row_eccentricities(A.logsparse_pattern(200))
    for n in (2, 31, 64, 113, 200):
        assert A.reachability_depth(A.logsparse_pattern(n)) == big[:n].max()


def test_pattern_validation():
    with pytest.raises(ConfigError):
        A.SparsityPattern.from_rows([[0], [0]])
    with pytest.raises(ConfigError):
        A.SparsityPattern.from_rows([[0], [1, 0, 1]])
    with pytest.raises(ConfigError):
        A.SparsityPattern.from_rows([[0], [0, 2]])


def test_pattern_text_roundtrip(tmp_path):
    p = A.strided_sparse_pattern(30)
    A.save_pattern(p, tmp_path / "p.txt")
    assert A.load_pattern(tmp_path / "p.txt") == p
    assert (tmp_path / "p.txt").read_text().splitlines()[10] == " ".join(map(str, p.row(10)))


def test_self_only_is_permutation_covariant():
    rng = np.random.default_rng(6)
    w = A.init_attention_weights(rng, 6, 2)
    x = rng.normal(size=(9, 6))
    perm = rng.permutation(9)
    pat = A.self_only_pattern(9)
    a = A.multi_head_attention(T.Tensor(x), T.Tensor(x), w, pat).data
    b = A.multi_head_attention(T.Tensor(x[perm]), T.Tensor(x[perm]), w, pat).data
    assert np.allclose(a[perm], b, atol=1e-14)


def test_cross_attention_lengths():
    rng = np.random.default_rng(7)
    w = A.init_attention_weights(rng, 4, 2)
    out = A.multi_head_attention(T.Tensor(rng.normal(size=(3, 4))), T.Tensor(rng.normal(size=(6, 4))), w)
    assert out.shape == (3, 4)


def test_axial_counts_and_corner_flow():
    assert A.axial_attended_positions(4, 4) == (8, 16)
    rng = np.random.default_rng(8)
    wr, wc = A.init_attention_weights(rng, 4, 1), A.init_attention_weights(rng, 4, 2)
    x = rng.normal(size=(4, 5, 4))
    base = A.axial_attention(T.Tensor(x), wr, wc).data
    x[0, 0] += 1.0
    out = A.axial_attention(T.Tensor(x), wr, wc).data
    assert np.any(out[3, 4] != base[3, 4])


def test_axial_single_row():
    rng = np.random.default_rng(9)
    wr, wc = A.init_attention_weights(rng, 4, 1), A.init_attention_weights(rng, 4, 1)
    x = T.Tensor(rng.normal(size=(1, 6, 4)))
    row = A.multi_head_attention(x, x, wr)
    # a length-1 column attends only to itself: softmax weight 1 on its own value
    want = row.data @ wc.wv.data @ wc.wo.data
    assert np.allclose(A.axial_attention(x, wr, wc).data, want, atol=1e-13)


def test_axial_order_col_first_differs_and_bad_order():
    rng = np.random.default_rng(10)
    wr, wc = A.init_attention_weights(rng, 4, 1), A.init_attention_weights(rng, 4, 1)
    x = T.Tensor(rng.normal(size=(3, 3, 4)))
    assert A.axial_attention(x, wr, wc, order="col").shape == (3, 3, 4)
    with pytest.raises(ConfigError):
        A.axial_attention(x, wr, wc, order="diag")
    with pytest.raises(ShapeError):
        A.axial_attention(T.Tensor(np.ones((3, 4))), wr, wc)


@pytest.mark.parametrize("name", ["attention_block", "conv_self_attention", "axial_attention"])
def test_attention_gradchecks(name):
    for seed in range(3):
        for label, f, x in T.GRADCHECK_CASES[name](np.random.default_rng(seed)):
            assert T.grad_check(f, x) < 1e-4, label
