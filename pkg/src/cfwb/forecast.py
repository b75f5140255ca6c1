"""Time-series ingestion, windowing, baselines, metrics and the LSTM vs Transformer comparison."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models as M
from .errors import ConfigError, DataError, FormatError, UsageError

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
SERIES_KINDS = ("sine", "random_walk", "square")


@dataclass
class Series:
    values: np.ndarray
    timestamps: list[str] | None = None
    malformed: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps is not None and len(self.timestamps) != len(self.values):
            raise DataError("series: timestamps and values differ in length")
        if np.isnan(self.values).any():
            raise DataError("series: NaN values are not allowed")

    def __len__(self):
        return len(self.values)


def load_series(path, format: str = "csv", skip_malformed: bool = False) -> Series:
    """Read a ``date,close`` file.

    Malformed rows are counted; unless ``skip_malformed`` is set the first one
    raises a DataError naming its data-row index.
    """
    if format != "csv":
        raise ConfigError(f"unsupported series format {format!r}")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"series file not found: {path}")
    return parse_series(path.read_text(), str(path), skip_malformed)


def parse_series(text: str, source: str = "<text>", skip_malformed: bool = False) -> Series:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header] != ["date", "close"]:
        raise FormatError(f"{source}: expected header 'date,close', got {header!r}")
    dates, values, bad = [], [], []
    prev = None
    for row_idx, row in enumerate(reader):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != 2:
                raise ValueError(f"expected 2 fields, got {len(row)}")
            day = dt.date.fromisoformat(row[0].strip())
            value = float(row[1])
            if not math.isfinite(value):
                raise ValueError(f"non-finite close {row[1]!r}")
        except ValueError as exc:
            bad.append((row_idx, str(exc)))
            if not skip_malformed:
                raise DataError(f"{source}: malformed row {row_idx}: {exc}") from exc
            continue
        if prev is not None and day <= prev:
            raise DataError(f"{source}: dates not strictly increasing at row {row_idx} ({day} after {prev})")
        prev = day
        dates.append(day.isoformat())
        values.append(value)
    if bad:
        log.warning("%s: skipped %d malformed rows (first at row %d)", source, len(bad), bad[0][0])
    return Series(np.array(values), dates, malformed=len(bad))


def write_series(series: Series, path) -> None:
    stamps = series.timestamps
    if stamps is None:
        start = dt.date(2000, 1, 1)
        stamps = [(start + dt.timedelta(days=i)).isoformat() for i in range(len(series))]
    with open(path, "w", newline="") as fh:
        fh.write("date,close\n")
        for d, v in zip(stamps, series.values):
            fh.write(f"{d},{float(v)!r}\n")


def synth_series(kind: str, params: dict | None, n: int, seed: int) -> Series:
    """Seeded synthetic series.

    sine:        a*sin(2*pi*t/P) + b*t + N(0, sigma^2)
    square:      a*sign(sin(2*pi*(t+0.5)/P)) + b*t + N(0, sigma^2)
    random_walk: start + cumulative N(drift, sigma^2) steps
    """
    if n < 1:
        raise UsageError(f"series length must be >= 1, got {n}")
    p = {"a": 1.0, "period": 32.0, "b": 0.0, "sigma": 0.0, "start": 0.0, "drift": 0.0}
    p.update(params or {})
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    if kind == "sine":
        v = p["a"] * np.sin(2 * np.pi * t / p["period"]) + p["b"] * t
    elif kind == "square":
        v = p["a"] * np.sign(np.sin(2 * np.pi * (t + 0.5) / p["period"])) + p["b"] * t
    elif kind == "random_walk":
        steps = rng.normal(p["drift"], p["sigma"] if p["sigma"] > 0 else 1.0, size=n)
        steps[0] = 0.0
        return Series(p["start"] + np.cumsum(steps))
    else:
        raise ConfigError(f"unknown series kind {kind!r}; expected one of {SERIES_KINDS}")
    if p["sigma"] > 0:
        v = v + rng.normal(0.0, p["sigma"], size=n)
    return Series(v)


# ---------------------------------------------------------------------------
# windows


@dataclass
class WindowSet:
    inputs: np.ndarray
    targets: np.ndarray
    mean: float
    std: float
    starts: np.ndarray

    def __len__(self):
        return len(self.inputs)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def window_starts(n: int, L_in: int, L_out: int, stride: int = 1) -> np.ndarray:
    if L_in < 1 or L_out < 1 or stride < 1:
        raise UsageError("L_in, L_out and stride must all be >= 1")
    if L_in + L_out > n:
        raise UsageError(f"series too short: need at least L_in + L_out = {L_in + L_out} values, have {n}")
    return np.arange(0, n - L_in - L_out + 1, stride)


def make_windows(series: Series | np.ndarray, L_in: int, L_out: int, stride: int = 1,
                 split_fraction: float = 0.8) -> tuple[WindowSet, WindowSet]:
    """Contiguous windows on each side of the split; windows crossing it are dropped.

    z-score statistics come from the training inputs only.
    """
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=np.float64)
    if not 0.0 < split_fraction < 1.0:
        raise UsageError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    starts = window_starts(len(values), L_in, L_out, stride)
    split = int(len(values) * split_fraction)
    span = L_in + L_out
    tr = starts[starts + span <= split]
    va = starts[starts >= split]
    if len(tr) == 0 or len(va) == 0:
        raise UsageError(
            f"split at {split} leaves {len(tr)} training and {len(va)} validation windows; "
            f"need at least {2 * span} values on the two sides"
        )
    idx_in = np.arange(L_in)
    idx_out = np.arange(L_in, span)
    train_in = values[tr[:, None] + idx_in]
    mu = float(train_in.mean())
    sd = max(float(train_in.std()), STD_FLOOR)

    def build(st):
        return WindowSet((values[st[:, None] + idx_in] - mu) / sd, (values[st[:, None] + idx_out] - mu) / sd, mu, sd, st)

    return build(tr), build(va)


# ---------------------------------------------------------------------------
# prediction, metrics, baselines


def forecast_rollout(model, context, horizon: int, windows: WindowSet) -> np.ndarray:
    """Autoregressive forecast in original units: each prediction is fed back as input."""
    if horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    ctx = windows.normalize(context)
    squeeze = ctx.ndim == 1
    ctx = np.atleast_2d(ctx)
    preds = []
    for _ in range(horizon):
        nxt = model.predict_next(ctx)
        preds.append(nxt)
        ctx = np.concatenate([ctx[:, 1:], nxt[:, None]], axis=1)
    out = windows.denormalize(np.stack(preds, axis=-1))
    return out[0] if squeeze else out


def teacher_forced(model, series_values: np.ndarray, start: int, L_in: int, horizon: int,
                   windows: WindowSet) -> np.ndarray:
    """Horizon-1 predictions for positions start..start+horizon-1, always fed ground truth."""
    ctx = np.stack([series_values[start - L_in + i : start + i] for i in range(horizon)])
    return windows.denormalize(model.predict_next(windows.normalize(ctx)))


def metrics(pred, actual) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise UsageError(f"metrics: length mismatch {pred.shape} vs {actual.shape}")
    if pred.size < 2:
        raise UsageError("metrics: need at least 2 points for directional accuracy")
    err = pred - actual
    da = np.mean(np.sign(np.diff(pred)) == np.sign(np.diff(actual)))
    return {"mse": float(np.mean(err * err)), "mae": float(np.mean(np.abs(err))), "directional_accuracy": float(da)}


def last_value(context, horizon: int) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if context.size < 1 or horizon < 1:
        raise UsageError("last_value needs a non-empty context and horizon >= 1")
    return np.full(horizon, context[-1])


def seasonal_naive(context, horizon: int, period: int) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if period < 1 or len(context) < period:
        raise UsageError(f"seasonal_naive: context of length {len(context)} is shorter than period {period}")
    last = context[len(context) - period :]
    return last[np.arange(horizon) % period]


# ---------------------------------------------------------------------------
# the comparison experiment


@dataclass
class ExperimentConfig:
    kind: str = "sine"
    a: float = 1.0
    period: float = 32.0
    b: float = 0.01
    sigma: float = 0.05
    n: int = 2000
    data_path: str | None = None
    seed: int = 0
    data_seed: int | None = None
    L_in: int = 64
    horizon: int = 8
    split: float = 0.8
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 32
    d_model: int = 24
    heads: int = 4
    layers: int = 1
    d_ff: int = 48
    mask_kind: str = "full"
    conv_k: int = 4
    min_context: int | None = None  # None: half the input window
    lstm_hidden: int = 32
    seasonal_period: int = 32

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise UsageError(f"unknown experiment option(s): {sorted(unknown)}")
        return cls(**d)


def experiment_series(cfg: ExperimentConfig) -> Series:
    if cfg.data_path:
        return load_series(cfg.data_path)
    params = {"a": cfg.a, "period": cfg.period, "b": cfg.b, "sigma": cfg.sigma}
    data_seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    return synth_series(cfg.kind, params, cfg.n, data_seed)


def build_transformer(cfg: ExperimentConfig, train: WindowSet) -> M.TransformerForecaster:
    return M.TransformerForecaster(M.TransformerConfig(
        d_model=cfg.d_model, h=cfg.heads, d_ff=cfg.d_ff, n_layers=cfg.layers, mask_kind=cfg.mask_kind,
        conv_k=cfg.conv_k, input_dim=1, max_len=cfg.L_in, seed=cfg.seed,
        min_context=cfg.L_in // 2 if cfg.min_context is None else cfg.min_context,
        input_scale=M.relative_scale(train.inputs),
    ))


def build_lstm(cfg: ExperimentConfig, train: WindowSet) -> M.LSTMForecaster:
    return M.LSTMForecaster(M.LstmConfig(hidden=cfg.lstm_hidden, seed=cfg.seed,
                                         input_scale=M.relative_scale(train.inputs)))


def train_forecaster(model, train: WindowSet, cfg: ExperimentConfig) -> M.TrainResult:
    data = M.ArrayDataset((train.inputs, train.targets[:, 0]))
    return M.train(model, data, cfg.steps, cfg.lr, cfg.seed, cfg.batch_size)


def one_step_predictions(model, windows: WindowSet, batch: int = 256) -> np.ndarray:
    out = [model.predict_next(windows.inputs[i : i + batch]) for i in range(0, len(windows), batch)]
    return windows.denormalize(np.concatenate(out))


def evaluate(model, valid: WindowSet) -> dict:
    pred = one_step_predictions(model, valid)
    return metrics(pred, valid.denormalize(valid.targets[:, 0]))


def compare_experiment(cfg: ExperimentConfig, models_out: dict | None = None) -> dict:
    """Train both architectures on the same windows with the same budget and seed.

    Returns a JSON-ready report; ``models_out`` (if given) receives the trained models.
    """
    series = experiment_series(cfg)
    train, valid = make_windows(series, cfg.L_in, 1, 1, cfg.split)
    actual = valid.denormalize(valid.targets[:, 0])
    contexts = valid.denormalize(valid.inputs)

    entries = []
    trained = {}
    for name, build in (("transformer", build_transformer), ("lstm", build_lstm)):
        model = build(cfg, train)
        result = train_forecaster(model, train, cfg)
        trained[name] = model
        m = evaluate(model, valid)
        m["final_train_loss"] = result.losses[-1]
        entries.append({"name": name, "metrics": m, "n_params": int(sum(p.size for p in model.parameters()))})
        log.info("%s: valid mse %.6g", name, m["mse"])

    baselines = [
        {"name": "last_value", "metrics": metrics(contexts[:, -1], actual)},
        {"name": "seasonal_naive", "metrics": metrics(contexts[:, -cfg.seasonal_period], actual)}
        if cfg.seasonal_period <= cfg.L_in else None,
    ]
    baselines = [b for b in baselines if b is not None]

    # autoregressive trace from the first validation window
    start = int(valid.starts[0]) + cfg.L_in
    horizon = min(cfg.horizon, len(series) - start)
    trace_actual = series.values[start : start + horizon]
    trace = {"start_index": start, "actual": trace_actual.tolist()}
    for name, model in trained.items():
        trace[name] = forecast_rollout(model, series.values[start - cfg.L_in : start], horizon, train).tolist()
    if models_out is not None:
        models_out.update(trained)
        models_out["windows"] = train
    return {
        "config": dataclasses.asdict(cfg),
        "models": entries,
        "baselines": baselines,
        "normalization": {"mean": train.mean, "std": train.std},
        "forecast_trace": trace,
    }


# ---------------------------------------------------------------------------
# output formats


def write_forecast_csv(path, actual, predicted, start_index: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("index,actual,predicted\n")
        for i, (a, p) in enumerate(zip(actual, predicted)):
            a_txt = "" if a is None or (isinstance(a, float) and math.isnan(a)) else repr(float(a))
            fh.write(f"{start_index + i},{a_txt},{float(p)!r}\n")


def svg_line_chart(series: dict[str, list[float]], title: str = "", width: int = 640, height: int = 320,
                   x0: int = 0) -> str:
    """Self-contained SVG with one polyline per named series."""
    colors = {"actual": "#1f4fd1", "predicted": "#d11f1f"}
    palette = ["#d11f1f", "#2a9d3f", "#8a2be2", "#e08a00"]
    finite = [v for vals in series.values() for v in vals if v is not None and math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = max((len(v) for v in series.values()), default=1)
    pad = 40

    def xy(i, v):
        x = pad + (width - 2 * pad) * (i / max(n - 1, 1))
        y = height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))
        return f"{x:.2f},{y:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{_xml(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#888"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#888"/>',
        f'<text x="4" y="{pad + 4}" font-family="sans-serif" font-size="10">{hi:.4g}</text>',
        f'<text x="4" y="{height - pad}" font-family="sans-serif" font-size="10">{lo:.4g}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" font-family="sans-serif" font-size="10">{x0}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-family="sans-serif" font-size="10" text-anchor="end">{x0 + n - 1}</text>',
    ]
    k = 0
    for j, (name, vals) in enumerate(series.items()):
        color = colors.get(name) or palette[k % len(palette)]
        if name not in colors:
            k += 1
        pts = " ".join(xy(i, v) for i, v in enumerate(vals) if v is not None and math.isfinite(v))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 90}" y="{pad + 14 * j}" font-family="sans-serif" font-size="11" fill="{color}">{_xml(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
