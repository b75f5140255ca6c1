"""Bouncing-sprite clips, patch vector quantisation, and conditional frame prediction.

Sprites move with integer velocities inside an H x W box, reflect elastically
off the walls, and pass over each other (max-composited).  Frames are cut
into p x p patches, each patch is snapped to its nearest codebook entry, and
a GPT prior models the resulting token stream frame by frame in raster
order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models as M
from . import tensor as T
from .errors import ConfigError, DataError, FormatError, ShapeError, UsageError

CLIP_MAGIC = b"MVC1"
CLIP_VERSION = 1


@dataclass
class VideoClip:
    """T x H x W uint8 frames plus per-sprite tracks and per-frame collision flags.

    ``tracks[s, t] = (x, y, vx, vy)``: top-left corner of sprite s at frame t
    and the velocity that carries it into frame t+1.
    """

    pixels: np.ndarray
    tracks: np.ndarray
    collision_flags: np.ndarray
    sprite_sizes: tuple = ()
    stamp_ids: tuple = ()

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3:
            raise ShapeError(f"clip pixels must be (T, H, W), got {self.pixels.shape}")
        self.tracks = np.asarray(self.tracks, dtype=np.int64).reshape(-1, self.T, 4)
        self.collision_flags = np.asarray(self.collision_flags, dtype=bool)
        if self.collision_flags.shape != (self.T,):
            raise ShapeError("collision_flags must have one entry per frame")

    @property
    def T(self) -> int:
        return self.pixels.shape[0]

    @property
    def H(self) -> int:
        return self.pixels.shape[1]

    @property
    def W(self) -> int:
        return self.pixels.shape[2]

    @property
    def n_sprites(self) -> int:
        return self.tracks.shape[0]

    def centers(self) -> np.ndarray:
        """(n_sprites, T, 2) sprite centers as (x, y) in pixel coordinates."""
        size = np.asarray(self.sprite_sizes, dtype=np.float64).reshape(-1, 1, 1)
        return self.tracks[:, :, :2] + (size - 1) / 2.0

    def labels(self) -> dict:
        return {
            "T": self.T, "H": self.H, "W": self.W,
            "sprite_sizes": [int(s) for s in self.sprite_sizes],
            "stamp_ids": [int(s) for s in self.stamp_ids],
            "tracks": self.tracks.tolist(),
            "collision_flags": [bool(f) for f in self.collision_flags],
        }


def solid_stamp(size: int) -> np.ndarray:
    return np.full((size, size), 255, dtype=np.uint8)


def _boxes_overlap(x1, y1, s1, x2, y2, s2) -> bool:
    return x1 < x2 + s2 and x2 < x1 + s1 and y1 < y2 + s2 and y2 < y1 + s1


def _reflect(pos: int, vel: int, hi: int) -> tuple[int, int]:
    pos += vel
    if pos < 0:
        return -pos, -vel
    if pos > hi:
        return 2 * hi - pos, -vel
    return pos, vel


def simulate_clip(T: int, H: int, W: int, positions, velocities, stamps) -> VideoClip:
    """Integrate sprites from explicit initial top-left positions and integer velocities."""
    if T < 1:
        raise ConfigError(f"clip length must be >= 1, got {T}")
    stamps = [np.asarray(s, dtype=np.uint8) for s in stamps]
    n = len(stamps)
    if len(positions) != n or len(velocities) != n:
        raise ConfigError("need one position, velocity and stamp per sprite")
    sizes = []
    for st in stamps:
        if st.ndim != 2 or st.shape[0] != st.shape[1]:
            raise ConfigError(f"sprite stamps must be square, got {st.shape}")
        if st.shape[0] >= min(H, W):
            raise ConfigError(f"sprite of size {st.shape[0]} does not fit a {H}x{W} box")
        sizes.append(st.shape[0])
    state = []
    for (x, y), (vx, vy), s in zip(positions, velocities, sizes):
        x, y, vx, vy = int(x), int(y), int(vx), int(vy)
        if not (0 <= x <= W - s and 0 <= y <= H - s):
            raise ConfigError(f"sprite start ({x}, {y}) lies outside the box")
        if abs(vx) > W - s or abs(vy) > H - s:
            raise ConfigError("sprite speed exceeds the free space in the box")
        state.append([x, y, vx, vy])
    pixels = np.zeros((T, H, W), dtype=np.uint8)
    tracks = np.zeros((n, T, 4), dtype=np.int64)
    flags = np.zeros(T, dtype=bool)
    for t in range(T):
        if t > 0:
            for st, s in zip(state, sizes):
                st[0], st[2] = _reflect(st[0], st[2], W - s)
                st[1], st[3] = _reflect(st[1], st[3], H - s)
        for k, (st, s, stamp) in enumerate(zip(state, sizes, stamps)):
            x, y = st[0], st[1]
            np.maximum(pixels[t, y : y + s, x : x + s], stamp, out=pixels[t, y : y + s, x : x + s])
            tracks[k, t] = st
        flags[t] = any(
            _boxes_overlap(state[i][0], state[i][1], sizes[i], state[j][0], state[j][1], sizes[j])
            for i in range(n) for j in range(i + 1, n)
        )
    return VideoClip(pixels, tracks, flags, tuple(sizes))


def generate_clips(n_clips: int, n_sprites: int = 2, T: int = 8, H: int = 64, W: int = 64,
                   sprite_size: int = 8, speed_range: tuple[int, int] = (1, 3), seed: int = 0,
                   stamps: list[np.ndarray] | None = None) -> list[VideoClip]:
    """Random clips; clip i draws from its own generator seeded with ``seed + i``.

    Velocity components are integers with magnitude in ``speed_range``
    (inclusive) and random sign.  ``stamps`` (e.g. digit bitmaps) replace the
    default solid squares; each sprite picks one at random.
    """
    lo, hi = int(speed_range[0]), int(speed_range[1])
    if lo < 0 or hi < lo:
        raise ConfigError(f"bad speed range {speed_range}")
    if stamps is None:
        if sprite_size >= min(H, W) or sprite_size < 1:
            raise ConfigError(f"sprite of size {sprite_size} does not fit a {H}x{W} box")
        stamps = [solid_stamp(sprite_size)]
    clips = []
    for i in range(n_clips):
        rng = np.random.default_rng(seed + i)
        ids = rng.integers(0, len(stamps), size=n_sprites) if len(stamps) > 1 else np.zeros(n_sprites, int)
        chosen = [stamps[k] for k in ids]
        pos, vel = [], []
        for st in chosen:
            s = st.shape[0]
            if s >= min(H, W):
                raise ConfigError(f"sprite of size {s} does not fit a {H}x{W} box")
            pos.append((int(rng.integers(0, W - s + 1)), int(rng.integers(0, H - s + 1))))
            mag = rng.integers(lo, hi + 1, size=2)
            sign = rng.choice([-1, 1], size=2)
            vel.append((int(mag[0] * sign[0]), int(mag[1] * sign[1])))
        clip = simulate_clip(T, H, W, pos, vel, chosen)
        clip.stamp_ids = tuple(int(k) for k in ids)
        clips.append(clip)
    return clips


# ---------------------------------------------------------------------------
# file formats


def _labels_path(path: Path) -> Path:
    return path.with_suffix(".labels.json")


def save_clip(clip: VideoClip, path) -> None:
    """Binary clip (magic, version/T/H/W/n_sprites as u32 LE, pixels) plus a JSON label sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<5I", CLIP_VERSION, clip.T, clip.H, clip.W, clip.n_sprites))
        fh.write(np.ascontiguousarray(clip.pixels).tobytes())
    _labels_path(path).write_text(json.dumps(clip.labels(), indent=1) + "\n")


def load_clip(path) -> VideoClip:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(CLIP_MAGIC) or len(raw) < 24:
        raise FormatError(f"{path}: not a clip file")
    version, T_, H, W, n = struct.unpack_from("<5I", raw, 4)
    if version != CLIP_VERSION:
        raise FormatError(f"{path}: unsupported clip version {version}")
    if len(raw) != 24 + T_ * H * W:
        raise FormatError(f"{path}: expected {T_ * H * W} pixel bytes, found {len(raw) - 24}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=24).reshape(T_, H, W).copy()
    lp = _labels_path(path)
    if lp.exists():
        lab = json.loads(lp.read_text())
        tracks = np.asarray(lab["tracks"], dtype=np.int64).reshape(n, T_, 4)
        return VideoClip(pixels, tracks, lab["collision_flags"], tuple(lab["sprite_sizes"]), tuple(lab["stamp_ids"]))
    return VideoClip(pixels, np.zeros((n, T_, 4)), np.zeros(T_, bool))


def write_pgm(frame: np.ndarray, path) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (frame.shape[1], frame.shape[0]))
        fh.write(frame.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) > 255:
        raise FormatError(f"{path}: only 8-bit binary PGM (P5) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = raw[pos + 1 : pos + 1 + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def export_frames(clip: VideoClip, directory, stem: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(clip.T):
        p = directory / f"{stem}_{t:03d}.pgm"
        write_pgm(clip.pixels[t], p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# patches and the codebook


def patchify(frame: np.ndarray, p: int) -> np.ndarray:
    """(H, W) -> (H/p, W/p, p*p); each patch flattened row-major."""
    frame = np.asarray(frame)
    H, W = frame.shape[-2:]
    if p < 1 or H % p or W % p:
        raise ConfigError(f"patch size {p} does not divide a {H}x{W} frame")
    lead = frame.shape[:-2]
    x = frame.reshape(*lead, H // p, p, W // p, p)
    x = np.swapaxes(x, -3, -2)
    return x.reshape(*lead, H // p, W // p, p * p)


def unpatchify(patches: np.ndarray, p: int) -> np.ndarray:
    patches = np.asarray(patches)
    *lead, gh, gw, pp = patches.shape
    if pp != p * p:
        raise ShapeError(f"patch vectors have length {pp}, expected {p * p}")
    x = patches.reshape(*lead, gh, gw, p, p)
    x = np.swapaxes(x, -3, -2)
    return x.reshape(*lead, gh * p, gw * p)


@dataclass
class Codebook:
    entries: np.ndarray
    usage_counts: np.ndarray | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ConfigError(f"codebook needs at least 2 entries, got shape {self.entries.shape}")
        if not np.all(np.isfinite(self.entries)):
            raise DataError("codebook entries must be finite")
        if self.usage_counts is None:
            self.usage_counts = np.zeros(self.K, dtype=np.int64)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def D(self) -> int:
        return self.entries.shape[1]


def init_codebook(vectors: np.ndarray, K: int, rng: np.random.Generator) -> Codebook:
    """K distinct vectors sampled from the data; topped up with random ones if the data has fewer."""
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, np.shape(vectors)[-1])
    if K < 2:
        raise ConfigError(f"codebook size must be >= 2, got {K}")
    uniq = np.unique(vectors, axis=0)
    if len(uniq) >= K:
        chosen = uniq[np.sort(rng.choice(len(uniq), size=K, replace=False))]
    else:
        extra = rng.uniform(0.0, 1.0, size=(K - len(uniq), vectors.shape[1]))
        chosen = np.concatenate([uniq, extra])
    if len(np.unique(chosen, axis=0)) != K:
        raise DataError("codebook initialisation produced duplicate entries")
    return Codebook(chosen)


def _sq_distances(vectors: np.ndarray, entries: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - entries[None, :, :]
    return (diff * diff).sum(axis=-1)


def vq_encode(vectors, cb: Codebook, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest entry (squared L2) per vector; ties go to the lowest index."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[-1] != cb.D:
        raise ShapeError(f"vectors of dimension {vectors.shape[-1]} vs codebook dimension {cb.D}")
    flat = vectors.reshape(-1, cb.D)
    idx = np.empty(len(flat), dtype=np.int64)
    for i in range(0, len(flat), chunk):
        idx[i : i + chunk] = np.argmin(_sq_distances(flat[i : i + chunk], cb.entries), axis=1)
    cb.usage_counts += np.bincount(idx, minlength=cb.K)
    return idx.reshape(vectors.shape[:-1])


def vq_decode(indices, cb: Codebook) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.K):
        bad = int(idx[(idx < 0) | (idx >= cb.K)].reshape(-1)[0])
        raise DataError(f"code index {bad} outside [0, {cb.K})")
    return cb.entries[idx]


def vq_quantize(z: T.Tensor, codes: T.Tensor, idx: np.ndarray) -> T.Tensor:
    """Quantised vectors whose backward pass copies gradients straight to ``z``."""
    return T.straight_through(z, T.stop_gradient(T.embedding(codes, idx)))


def vq_losses(x: np.ndarray, z: T.Tensor, codes: T.Tensor, idx: np.ndarray, beta: float) -> dict[str, T.Tensor]:
    """Reconstruction, codebook and commitment terms, each a mean over vectors of a squared L2 norm."""
    D = x.shape[-1]
    e = T.embedding(codes, idx)
    q = vq_quantize(z, codes, idx)
    return {
        "reconstruction": T.scale(T.mse_loss(q, x), D),
        "codebook": T.scale(T.mse_loss(e, T.stop_gradient(z)), D),
        "commitment": T.scale(T.mse_loss(z, T.stop_gradient(e)), beta * D),
    }


def vq_train_step(batch, cb: Codebook, beta: float = 0.25, lr: float = 0.5) -> dict[str, float]:
    """One step with an identity encoder/decoder; codebook entries move by SGD on their loss."""
    x = np.asarray(batch, dtype=np.float64).reshape(-1, cb.D) if np.size(batch) else None
    if x is None or len(x) == 0:
        raise UsageError("vq_train_step: empty batch")
    z = T.parameter(x.copy())
    codes = T.parameter(cb.entries)
    idx = vq_encode(x, cb)
    parts = vq_losses(x, z, codes, idx, beta)
    total = T.add(T.add(parts["reconstruction"], parts["codebook"]), parts["commitment"])
    T.backward(total, leaves=[codes])
    cb.entries = cb.entries - lr * codes.grad
    return {k: v.item() for k, v in parts.items()}


# ---------------------------------------------------------------------------
# tokens


def tokens_per_frame(H: int, W: int, p: int) -> int:
    if p < 1 or H % p or W % p:
        raise ConfigError(f"patch size {p} does not divide a {H}x{W} frame")
    return (H // p) * (W // p)


def frame_vectors(pixels: np.ndarray, p: int) -> np.ndarray:
    """(..., H, W) uint8 -> (..., H/p * W/p, p*p) vectors scaled to [0, 1]."""
    pat = patchify(np.asarray(pixels, dtype=np.float64) / 255.0, p)
    return pat.reshape(*pat.shape[:-3], -1, p * p)


def tokenize_frames(pixels: np.ndarray, p: int, cb: Codebook) -> np.ndarray:
    """(..., T, H, W) -> (..., T*(H/p)*(W/p)) tokens, frame-major then raster order."""
    if cb.D != p * p:
        raise ShapeError(f"codebook dimension {cb.D} does not match patch size {p}")
    vec = frame_vectors(pixels, p)
    idx = vq_encode(vec, cb)
    return idx.reshape(*idx.shape[:-2], -1)


def tokenize_clip(clip: VideoClip, p: int, cb: Codebook) -> np.ndarray:
    return tokenize_frames(clip.pixels, p, cb)


def detokenize(tokens, cb: Codebook, H: int, W: int, p: int) -> np.ndarray:
    """Tokens (..., n_frames * tpf) -> uint8 frames (..., n_frames, H, W)."""
    tokens = np.asarray(tokens)
    tpf = tokens_per_frame(H, W, p)
    if tokens.shape[-1] % tpf:
        raise ShapeError(f"{tokens.shape[-1]} tokens is not a whole number of {tpf}-token frames")
    vec = vq_decode(tokens, cb)
    grid = vec.reshape(*tokens.shape[:-1], tokens.shape[-1] // tpf, H // p, W // p, p * p)
    return np.clip(np.rint(unpatchify(grid, p) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# conditional prediction


@dataclass
class FrameSetup:
    H: int = 16
    W: int = 16
    p: int = 4
    K: int = 64
    condition: int = 4
    generate: int = 4

    def __post_init__(self):
        if self.condition < 1 or self.generate < 1:
            raise UsageError(f"need condition >= 1 and generate >= 1, got {self.condition}, {self.generate}")
        tokens_per_frame(self.H, self.W, self.p)

    @property
    def tpf(self) -> int:
        return tokens_per_frame(self.H, self.W, self.p)

    @property
    def frames(self) -> int:
        return self.condition + self.generate

    @property
    def seq_len(self) -> int:
        return self.frames * self.tpf


class FramePredictor:
    """GPT prior over codebook tokens plus the codebook and frame geometry."""

    def __init__(self, gpt: M.GPT, cb: Codebook, setup: FrameSetup):
        if gpt.cfg.vocab_size != cb.K:
            raise ConfigError(f"model vocabulary {gpt.cfg.vocab_size} does not match codebook size {cb.K}")
        self.gpt, self.cb, self.setup = gpt, cb, setup

    def save(self, path) -> None:
        extra = dataclasses.asdict(self.setup)
        extra["codebook"] = self.cb.entries.tolist()
        M.save_checkpoint(self.gpt, path, extra)

    @classmethod
    def load(cls, path) -> "FramePredictor":
        model, extra = M.load_checkpoint(path)
        if not isinstance(model, M.GPT):
            raise FormatError(f"{path}: not a frame-prediction checkpoint")
        cb = Codebook(np.asarray(extra.pop("codebook"), dtype=np.float64))
        return cls(model, cb, FrameSetup(**extra))


def frame_gpt_config(setup: FrameSetup, d_model: int = 64, h: int = 4, n_layers: int = 2, d_ff: int = 128,
                     mask_kind: str = "full", seed: int = 0, learned_pe: bool = True) -> M.TransformerConfig:
    return M.TransformerConfig(d_model=d_model, h=h, d_ff=d_ff, n_layers=n_layers, mask_kind=mask_kind,
                               vocab_size=setup.K, max_len=setup.seq_len, seed=seed, learned_pe=learned_pe)


def conditional_generate(model: FramePredictor, context, M_frames: int, temperature: float = 0.0,
                         seed: int = 0) -> VideoClip | list[VideoClip]:
    """Keep the N context frames verbatim and sample the next ``M_frames`` token by token.

    ``context`` is a VideoClip, an (N, H, W) array, or a list of either
    (batched generation).  Temperature 0 means argmax.
    """
    batched = isinstance(context, list)
    ctx_list = context if batched else [context]
    frames = np.stack([c.pixels if isinstance(c, VideoClip) else np.asarray(c, dtype=np.uint8) for c in ctx_list])
    B, N, H, W = frames.shape
    st = model.setup
    if N < 1 or M_frames < 1:
        raise UsageError(f"need at least 1 context frame and 1 generated frame, got {N} and {M_frames}")
    if (H, W) != (st.H, st.W):
        raise ShapeError(f"context frames are {H}x{W}, model expects {st.H}x{st.W}")
    tpf = st.tpf
    total = (N + M_frames) * tpf
    if total > model.gpt.cfg.max_len:
        raise UsageError(f"{N}+{M_frames} frames need {total} tokens, model max_len is {model.gpt.cfg.max_len}")
    if temperature < 0:
        raise UsageError("temperature must be >= 0")
    rng = M.substream(seed, "sampling")
    tokens = tokenize_frames(frames, st.p, model.cb)
    with T.no_grad():
        for _ in range(M_frames * tpf):
            logits = model.gpt(tokens).data[:, -1, :]
            if temperature == 0:
                nxt = np.argmax(logits, axis=-1)
            else:
                z = logits / temperature
                z = z - z.max(axis=-1, keepdims=True)
                prob = np.exp(z)
                prob /= prob.sum(axis=-1, keepdims=True)
                nxt = np.array([rng.choice(len(pr), p=pr) for pr in prob])
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
    new = detokenize(tokens[:, N * tpf :], model.cb, H, W, st.p)
    out = []
    for b in range(B):
        pix = np.concatenate([frames[b], new[b]])
        src = ctx_list[b]
        n_spr = src.n_sprites if isinstance(src, VideoClip) else 0
        tracks = np.zeros((n_spr, N + M_frames, 4), dtype=np.int64)
        flags = np.zeros(N + M_frames, dtype=bool)
        if isinstance(src, VideoClip):
            tracks[:, :N] = src.tracks[:, :N]
            flags[:N] = src.collision_flags[:N]
        out.append(VideoClip(pix, tracks, flags, src.sprite_sizes if isinstance(src, VideoClip) else ()))
    return out if batched else out[0]


def centroid(frame: np.ndarray) -> np.ndarray:
    """Intensity-weighted (x, y) centre of mass; an empty frame maps to the frame centre."""
    f = np.asarray(frame, dtype=np.float64)
    mass = f.sum()
    H, W = f.shape
    if mass == 0:
        return np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    ys, xs = np.mgrid[0:H, 0:W]
    return np.array([(f * xs).sum() / mass, (f * ys).sum() / mass])


def frame_metrics(pred, truth, start: int = 0, stop: int | None = None, threshold: int = 128) -> dict:
    """Pixel MSE (0-255 scale), binarised pixel accuracy and mean centroid distance over frames start..stop."""
    a = pred.pixels if isinstance(pred, VideoClip) else np.asarray(pred)
    b = truth.pixels if isinstance(truth, VideoClip) else np.asarray(truth)
    if a.shape != b.shape:
        raise UsageError(f"frame_metrics: clip shapes differ {a.shape} vs {b.shape}")
    a, b = a[start:stop], b[start:stop]
    if len(a) == 0:
        raise UsageError("frame_metrics: empty frame range")
    diff = a.astype(np.float64) - b.astype(np.float64)
    acc = np.mean((a >= threshold) == (b >= threshold))
    cerr = np.mean([np.linalg.norm(centroid(x) - centroid(y)) for x, y in zip(a, b)])
    return {"pixel_mse": float(np.mean(diff * diff)), "pixel_accuracy": float(acc), "centroid_error": float(cerr)}


def clip_token_dataset(clips: list[VideoClip], p: int, cb: Codebook) -> M.ArrayDataset:
    return M.ArrayDataset((np.stack([tokenize_clip(c, p, cb) for c in clips]),))


def train_frame_predictor(train_clips: list[VideoClip], setup: FrameSetup, steps: int, lr: float = 1e-3,
                          seed: int = 0, batch_size: int = 16, d_model: int = 64, h: int = 4, n_layers: int = 2,
                          d_ff: int = 128, learned_pe: bool = True,
                          log_every: int = 0) -> tuple[FramePredictor, list[float]]:
    """Codebook from training patches, then teacher-forced next-token training of the GPT prior."""
    for c in train_clips:
        if (c.T, c.H, c.W) != (setup.frames, setup.H, setup.W):
            raise ShapeError(f"training clip {c.T}x{c.H}x{c.W} does not match setup "
                             f"{setup.frames}x{setup.H}x{setup.W}")
    vecs = frame_vectors(np.stack([c.pixels for c in train_clips]), setup.p)
    cb = init_codebook(vecs.reshape(-1, setup.p * setup.p), setup.K, M.substream(seed, "codebook"))
    gpt = M.GPT(frame_gpt_config(setup, d_model, h, n_layers, d_ff, seed=seed, learned_pe=learned_pe))
    data = clip_token_dataset(train_clips, setup.p, cb)
    res = M.train(gpt, data, steps, lr, seed, batch_size, log_every)
    return FramePredictor(gpt, cb, setup), res.losses
