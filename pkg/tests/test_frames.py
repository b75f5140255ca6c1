import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfwb import frames as F
from cfwb import models as M
from cfwb import tensor as T
from cfwb.errors import ConfigError, DataError, FormatError, ShapeError, UsageError


def test_constant_velocity_until_wall():
    clip = F.simulate_clip(10, 16, 16, [(6, 6)], [(1, 0)], [F.solid_stamp(4)])
    xs = clip.tracks[0, :, 0]
    assert xs.tolist() == [6, 7, 8, 9, 10, 11, 12, 11, 10, 9]
    assert np.all(clip.tracks[0, :, 1] == 6)


def test_reflection_at_right_wall():
    clip = F.simulate_clip(3, 16, 16, [(12, 3)], [(2, 1)], [F.solid_stamp(4)])
    assert clip.tracks[0, 1, 2] == -2 and clip.tracks[0, 0, 2] == 2
    assert clip.tracks[0, 1, 0] == 10  # bounced: 12 + 2 = 14 > 12 -> 2*12 - 14


def test_overlap_flag():
    s = F.solid_stamp(4)
    clip = F.simulate_clip(2, 16, 16, [(2, 2), (4, 4)], [(1, 0), (0, 1)], [s, s])
    assert clip.collision_flags[0]
    apart = F.simulate_clip(1, 16, 16, [(0, 0), (8, 8)], [(1, 0), (0, 1)], [s, s])
    assert not apart.collision_flags[0]


def test_bad_geometry():
    with pytest.raises(ConfigError):
        F.generate_clips(1, T=3, H=16, W=16, sprite_size=16)
    with pytest.raises(ConfigError):
        F.simulate_clip(0, 16, 16, [(0, 0)], [(1, 1)], [F.solid_stamp(4)])


def test_max_composite():
    a = np.full((4, 4), 100, np.uint8)
    b = np.full((4, 4), 200, np.uint8)
    clip = F.simulate_clip(1, 16, 16, [(0, 0), (2, 2)], [(1, 1), (1, 1)], [a, b])
    assert clip.pixels[0, 1, 1] == 100 and clip.pixels[0, 3, 3] == 200 and clip.pixels[0, 5, 5] == 200


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 5))
def test_generator_physics(seed, n_sprites, speed):
    clips = F.generate_clips(2, n_sprites=n_sprites, T=12, H=32, W=24, sprite_size=5,
                             speed_range=(1, speed), seed=seed)
    for clip in clips:
        v = clip.tracks[:, :, 2:]
        assert np.all(np.abs(v) == np.abs(v[:, :1]))
        c = clip.centers()
        assert np.all((c[..., 0] >= 0) & (c[..., 0] < clip.W) & (c[..., 1] >= 0) & (c[..., 1] < clip.H))
        assert np.all((clip.tracks[..., 0] >= 0) & (clip.tracks[..., 0] <= clip.W - 5))
        # a velocity component only flips when the sprite is against the corresponding wall
        flips = v[:, 1:] != v[:, :-1]
        pos = clip.tracks[:, 1:, :2]
        hi = np.array([clip.W - 5, clip.H - 5])
        at_wall = (pos <= np.abs(v[:, 1:])) | (pos >= hi - np.abs(v[:, 1:]))
        assert np.all(~flips | at_wall)


def test_time_reversal_without_walls():
    s = F.solid_stamp(3)
    fwd = F.simulate_clip(5, 40, 40, [(10, 12)], [(2, -1)], [s])
    end = fwd.tracks[0, -1]
    back = F.simulate_clip(5, 40, 40, [(end[0], end[1])], [(-end[2], -end[3])], [s])
    assert tuple(back.tracks[0, -1, :2]) == (10, 12)


def test_generate_deterministic_and_per_clip_seeds():
    a = F.generate_clips(3, T=5, H=16, W=16, sprite_size=4, seed=9)
    b = F.generate_clips(3, T=5, H=16, W=16, sprite_size=4, seed=9)
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a, b))
    c = F.generate_clips(1, T=5, H=16, W=16, sprite_size=4, seed=11)
    assert np.array_equal(a[2].pixels, c[0].pixels)


def test_64px_box_two_sprites_bounce():
    clips = F.generate_clips(4, n_sprites=2, T=32, H=64, W=64, sprite_size=12, speed_range=(2, 5), seed=0)
    assert clips[0].pixels.shape == (32, 64, 64) and clips[0].n_sprites == 2
    assert any(np.any(np.diff(c.tracks[:, :, 2:], axis=1) != 0) for c in clips)


def test_clip_roundtrip_and_layout(tmp_path):
    clip = F.generate_clips(1, n_sprites=2, T=6, H=20, W=24, sprite_size=5, seed=3)[0]
    F.save_clip(clip, tmp_path / "c.mvc")
    raw = (tmp_path / "c.mvc").read_bytes()
    assert raw[:4] == b"MVC1"
    assert np.frombuffer(raw[4:24], "<u4").tolist() == [1, 6, 20, 24, 2]
    assert len(raw) == 24 + 6 * 20 * 24
    assert (tmp_path / "c.labels.json").exists()
    back = F.load_clip(tmp_path / "c.mvc")
    assert np.array_equal(back.pixels, clip.pixels)
    assert np.array_equal(back.tracks, clip.tracks)
    assert np.array_equal(back.collision_flags, clip.collision_flags)
    (tmp_path / "bad.mvc").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        F.load_clip(tmp_path / "bad.mvc")


def test_pgm_roundtrip(tmp_path):
    frame = np.random.default_rng(0).integers(0, 256, size=(7, 5), dtype=np.uint8)
    F.write_pgm(frame, tmp_path / "f.pgm")
    assert (tmp_path / "f.pgm").read_bytes().startswith(b"P5\n5 7\n255\n")
    assert np.array_equal(F.read_pgm(tmp_path / "f.pgm"), frame)


def test_digit_stamp_source():
    seven = np.zeros((5, 5), np.uint8)
    seven[0] = 255
    seven[1:, 3] = 200
    clip = F.generate_clips(1, n_sprites=1, T=3, H=16, W=16, stamps=[seven], seed=2)[0]
    assert set(np.unique(clip.pixels)) == {0, 200, 255}


def test_patchify_cases():
    f = np.arange(64 * 64).reshape(64, 64)
    grid = F.patchify(f, 8)
    assert grid.shape == (8, 8, 64)
    assert np.array_equal(grid[0, 1], f[:8, 8:16].reshape(-1))
    assert np.array_equal(F.patchify(f[:4, :4], 4)[0, 0], f[:4, :4].reshape(-1))
    with pytest.raises(ConfigError):
        F.patchify(f, 7)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_patch_roundtrip(gh, gw, p, seed):
    f = np.random.default_rng(seed).integers(0, 256, size=(3, gh * p, gw * p))
    assert np.array_equal(F.unpatchify(F.patchify(f, p), p), f)


def _cb(K=8, D=3, seed=0):
    return F.Codebook(np.random.default_rng(seed).normal(size=(K, D)))


def test_vq_encode_examples():
    cb = _cb()
    assert F.vq_encode(cb.entries[3:4], cb).tolist() == [3]
    entries = np.zeros((5, 2))
    entries[1] = [1.0, 0.0]
    entries[4] = [-1.0, 0.0]
    entries[0] = [0.0, 5.0]
    entries[2] = [0.0, -5.0]
    entries[3] = [5.0, 5.0]
    cb2 = F.Codebook(entries)
    assert F.vq_encode(np.zeros((1, 2)), cb2).tolist() == [1]
    assert cb2.usage_counts.tolist() == [0, 1, 0, 0, 0]
    with pytest.raises(ShapeError):
        F.vq_encode(np.zeros((2, 4)), cb2)


def test_vq_encode_brute_force():
    cb = _cb(K=32, D=6, seed=1)
    x = np.random.default_rng(2).normal(size=(1000, 6))
    brute = [min(range(cb.K), key=lambda k: float(np.sum((v - cb.entries[k]) ** 2))) for v in x]
    assert F.vq_encode(x, cb).tolist() == brute


def test_vq_decode():
    cb = _cb()
    assert np.array_equal(F.vq_decode(F.vq_encode(cb.entries, cb), cb), cb.entries)
    with pytest.raises(DataError):
        F.vq_decode(np.array([9]), cb)
    rows = F.vq_decode(np.array([2, 2]), cb)
    assert np.array_equal(rows[0], rows[1])


def test_codebook_invariants():
    with pytest.raises(ConfigError):
        F.Codebook(np.zeros((1, 3)))
    with pytest.raises(DataError):
        F.Codebook(np.array([[0.0], [np.inf]]))
    rng = np.random.default_rng(0)
    data = rng.integers(0, 2, size=(500, 4)).astype(float)  # only 16 distinct vectors
    cb = F.init_codebook(data, 12, rng)
    assert len(np.unique(cb.entries, axis=0)) == 12
    assert all(any(np.array_equal(e, d) for d in data) for e in cb.entries)
    cb = F.init_codebook(data, 24, rng)
    assert len(np.unique(cb.entries, axis=0)) == 24


def test_vq_fixed_point_losses_zero():
    cb = _cb()
    losses = F.vq_train_step(cb.entries.copy(), cb)
    assert losses == {"reconstruction": 0.0, "codebook": 0.0, "commitment": 0.0}
    with pytest.raises(UsageError):
        F.vq_train_step(np.zeros((0, 3)), cb)


def test_straight_through_gradient_identity():
    cb = _cb(K=4, D=3)
    x = np.random.default_rng(5).normal(size=(6, 3))
    idx = F.vq_encode(x, cb)
    z = T.parameter(x.copy())
    q = F.vq_quantize(z, T.Tensor(cb.entries), idx)
    assert np.array_equal(q.data, cb.entries[idx])
    target = np.random.default_rng(6).normal(size=(6, 3))
    T.backward(T.mse_loss(q, target))
    grad_q = 2 * (cb.entries[idx] - target) / q.size
    assert np.array_equal(z.grad, grad_q)


def test_vq_two_clusters_separate():
    rng = np.random.default_rng(0)
    data = np.concatenate([rng.normal(-3, 0.3, size=(200, 2)), rng.normal(3, 0.3, size=(200, 2))])
    cb = F.Codebook(np.array([[-0.1, 0.0], [0.1, 0.0]]))
    for _ in range(500):
        F.vq_train_step(data[rng.integers(0, 400, size=32)], cb, lr=0.1)
    left = F.vq_encode(data[:200], cb)
    right = F.vq_encode(data[200:], cb)
    assert len(set(left.tolist())) == 1 and len(set(right.tolist())) == 1 and left[0] != right[0]


def _full_cover_codebook(clips, p):
    vecs = F.frame_vectors(np.stack([c.pixels for c in clips]), p).reshape(-1, p * p)
    return F.init_codebook(vecs, 64, np.random.default_rng(0))


def test_tokenize_counts_and_exact_roundtrip():
    clip = F.generate_clips(1, T=4, H=64, W=64, sprite_size=10, seed=0)[0]
    cb = F.Codebook(np.random.default_rng(0).uniform(size=(16, 256)))
    tok = F.tokenize_clip(clip, 16, cb)
    assert tok.shape == (64,) and tok.max() < 16
    clips = F.generate_clips(20, n_sprites=1, T=4, H=16, W=16, sprite_size=4, seed=1)
    cb = _full_cover_codebook(clips, 4)
    for c in clips:
        assert np.array_equal(F.detokenize(F.tokenize_clip(c, 4, cb), cb, 16, 16, 4), c.pixels)


@pytest.mark.parametrize("frames", [4, 8, 16, 32])
def test_standard_sequence_lengths_accepted(frames):
    setup = F.FrameSetup(H=64, W=64, p=16, K=16, condition=frames // 2, generate=frames // 2)
    cfg = F.frame_gpt_config(setup, d_model=8, h=2, n_layers=1, d_ff=8)
    assert cfg.max_len == frames * 16
    gpt = M.GPT(cfg)
    clip = F.generate_clips(1, T=frames, H=64, W=64, sprite_size=8, seed=0)[0]
    tok = F.tokenize_clip(clip, 16, F.Codebook(np.random.default_rng(0).uniform(size=(16, 256))))
    assert gpt(tok[None]).shape == (1, frames * 16, 16)


def _tiny_predictor(N=2, Mf=2, seed=0):
    setup = F.FrameSetup(H=8, W=8, p=4, K=8, condition=N, generate=Mf)
    clips = F.generate_clips(10, n_sprites=1, T=N + Mf, H=8, W=8, sprite_size=2, seed=seed)
    pred, _ = F.train_frame_predictor(clips, setup, steps=3, d_model=8, h=2, n_layers=1, d_ff=8)
    return pred, clips


def test_conditional_generate_contracts():
    pred, clips = _tiny_predictor()
    ctx = clips[0].pixels[:2]
    out = F.conditional_generate(pred, ctx, 2, temperature=0)
    assert out.pixels.shape == (4, 8, 8) and out.pixels.dtype == np.uint8
    assert np.array_equal(out.pixels[:2], ctx)
    again = F.conditional_generate(pred, ctx, 2, temperature=0)
    assert np.array_equal(out.pixels, again.pixels)
    s1 = F.conditional_generate(pred, ctx, 2, temperature=1.0, seed=4)
    s2 = F.conditional_generate(pred, ctx, 2, temperature=1.0, seed=4)
    assert np.array_equal(s1.pixels, s2.pixels)
    batch = F.conditional_generate(pred, [c.pixels[:2] for c in clips[:3]], 2, temperature=0)
    assert np.array_equal(batch[0].pixels, out.pixels)
    with pytest.raises(UsageError):
        F.conditional_generate(pred, ctx, 3)
    with pytest.raises(UsageError):
        F.conditional_generate(pred, ctx[:0], 2)
    with pytest.raises(UsageError):
        F.conditional_generate(pred, ctx, 0)


def test_generated_token_count_four_plus_four():
    setup = F.FrameSetup(H=64, W=64, p=16, K=8, condition=2, generate=2)
    assert setup.generate * setup.tpf == 32


def test_token_causality_through_generation():
    pred, clips = _tiny_predictor()
    tok = F.tokenize_clip(clips[0], 4, pred.cb)
    base = pred.gpt(tok).data
    for u in range(9, len(tok)):
        t2 = tok.copy()
        t2[u] = (t2[u] + 3) % 8
        assert np.array_equal(pred.gpt(t2).data[:u], base[:u])


def test_predictor_checkpoint_roundtrip(tmp_path):
    pred, clips = _tiny_predictor()
    pred.save(tmp_path / "fp.ckpt")
    back = F.FramePredictor.load(tmp_path / "fp.ckpt")
    assert np.array_equal(back.cb.entries, pred.cb.entries)
    assert back.setup == pred.setup
    a = F.conditional_generate(pred, clips[1].pixels[:2], 2)
    b = F.conditional_generate(back, clips[1].pixels[:2], 2)
    assert np.array_equal(a.pixels, b.pixels)


def test_frame_metrics_examples():
    clip = F.simulate_clip(3, 16, 16, [(5, 6)], [(1, 1)], [F.solid_stamp(4)])
    m = F.frame_metrics(clip, clip)
    assert m == {"pixel_mse": 0.0, "pixel_accuracy": 1.0, "centroid_error": 0.0}
    black = np.zeros_like(clip.pixels)
    assert F.frame_metrics(black, clip)["pixel_accuracy"] == 1 - 16 / 256
    c = F.centroid(clip.pixels[0])
    assert np.all(np.abs(c - np.array([5 + 1.5, 6 + 1.5])) <= 0.5)
    with pytest.raises(UsageError):
        F.frame_metrics(clip.pixels[:2], clip.pixels)
    assert F.frame_metrics(clip, clip, start=1, stop=3)["pixel_mse"] == 0.0
