"""Command-line entry point: ``cfwb <subcommand> [flags]``.

Every run resolves its options as defaults < ``--config`` file < explicit
flags, writes its outputs under ``--out`` and finishes by writing
``manifest.json`` there.  ``cfwb --manifest <file>`` replays a run.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import attention as A
from . import forecast as FC
from . import frames as FR
from . import models as M
from .errors import DataError, NumericalError, UsageError, WorkbenchError

log = logging.getLogger("cfwb")

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    path: bool = False  # an input file/dir; recorded by content hash

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [t for t in str(text).replace(" ", "").split(",") if t]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


SERIES_OPTS = [
    Opt("kind", str, "sine", "sine | random_walk | square"),
    Opt("a", float, 1.0, "amplitude"),
    Opt("period", float, 32.0),
    Opt("b", float, 0.01, "linear trend per step"),
    Opt("sigma", float, 0.05, "noise std"),
    Opt("n", int, 2000, "series length"),
]

MODEL_OPTS = [
    Opt("data", str, None, "date,close file (synthesised from the series options when absent)", path=True),
    Opt("data-seed", int, None, "seed of the synthetic series (defaults to --seed)"),
    Opt("L-in", int, 64, "input window"),
    Opt("horizon", int, 8),
    Opt("split", float, 0.8),
    Opt("steps", int, 2000),
    Opt("lr", float, 1e-3),
    Opt("batch-size", int, 32),
    Opt("d-model", int, 24),
    Opt("heads", int, 4),
    Opt("layers", int, 1),
    Opt("d-ff", int, 48),
    Opt("mask-kind", str, "full"),
    Opt("conv-k", int, 4),
    Opt("min-context", int, None, "leading positions left out of the Transformer's loss (default: L_in/2)"),
    Opt("lstm-hidden", int, 32),
    Opt("seasonal-period", int, 32),
]

CLIP_OPTS = [
    Opt("n-clips", int, 16),
    Opt("n-sprites", int, 2),
    Opt("T", int, 8, "frames per clip"),
    Opt("H", int, 64),
    Opt("W", int, 64),
    Opt("sprite-size", int, 8),
    Opt("speed-min", int, 1),
    Opt("speed-max", int, 3),
    Opt("stamps", str, None, "directory of square PGM stamps (e.g. digit bitmaps)", path=True),
]


@dataclass
class Command:
    name: str
    help: str
    opts: list[Opt]
    run: Callable[[dict, Path], dict]
    parallel: bool = False


# ---------------------------------------------------------------------------
# helpers


def _experiment_config(o: dict) -> FC.ExperimentConfig:
    return FC.ExperimentConfig(
        kind=o["kind"], a=o["a"], period=o["period"], b=o["b"], sigma=o["sigma"], n=o["n"],
        data_path=o["data"], seed=o["seed"], data_seed=o["data_seed"], L_in=o["L_in"], horizon=o["horizon"],
        split=o["split"], steps=o["steps"], lr=o["lr"], batch_size=o["batch_size"], d_model=o["d_model"],
        heads=o["heads"], layers=o["layers"], d_ff=o["d_ff"], mask_kind=o["mask_kind"], conv_k=o["conv_k"],
        min_context=o["min_context"],
        lstm_hidden=o["lstm_hidden"], seasonal_period=o["seasonal_period"],
    )


def _require_file(o: dict, key: str) -> Path:
    flag = "--" + key.replace("_", "-")
    if o.get(key) is None:
        raise UsageError(f"{flag} is required")
    p = Path(o[key])
    if not p.exists():
        raise UsageError(f"{flag}: no such file or directory: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _load_stamps(directory) -> list[np.ndarray] | None:
    if directory is None:
        return None
    files = sorted(Path(directory).glob("*.pgm"))
    if not files:
        raise DataError(f"--stamps: no .pgm files in {directory}")
    return [FR.read_pgm(f) for f in files]


def _clip_batch(args) -> list[FR.VideoClip]:
    o, start, count, stamps = args
    return FR.generate_clips(count, n_sprites=o["n_sprites"], T=o["T"], H=o["H"], W=o["W"],
                             sprite_size=o["sprite_size"], speed_range=(o["speed_min"], o["speed_max"]),
                             seed=o["seed"] + start, stamps=stamps)


def _make_clips(o: dict, n: int, seed: int, parallel: int = 1) -> list[FR.VideoClip]:
    """Clip i uses seed + i whichever worker builds it, so the split does not matter."""
    stamps = _load_stamps(o.get("stamps"))
    oo = dict(o, seed=seed)
    if parallel <= 1 or n < 2:
        return _clip_batch((oo, 0, n, stamps))
    bounds = np.linspace(0, n, min(parallel, n) + 1).astype(int)
    jobs = [(oo, int(a), int(b - a), stamps) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=parallel) as ex:
        return [c for part in ex.map(_clip_batch, jobs) for c in part]


# ---------------------------------------------------------------------------
# commands


def cmd_synth_series(o: dict, out: Path) -> dict:
    params = {"a": o["a"], "period": o["period"], "b": o["b"], "sigma": o["sigma"],
              "start": o["start"], "drift": o["drift"]}
    series = FC.synth_series(o["kind"], params, o["n"], o["seed"])
    FC.write_series(series, out / "series.csv")
    return {"n": len(series)}


def cmd_train_forecaster(o: dict, out: Path) -> dict:
    if o["model"] not in ("transformer", "lstm"):
        raise UsageError(f"--model must be 'transformer' or 'lstm', got {o['model']!r}")
    if o["data"] is not None:
        _require_file(o, "data")
    cfg = _experiment_config(o)
    series = FC.experiment_series(cfg)
    train, valid = FC.make_windows(series, cfg.L_in, 1, 1, cfg.split)
    build = FC.build_transformer if o["model"] == "transformer" else FC.build_lstm
    model = build(cfg, train)
    res = FC.train_forecaster(model, train, cfg)
    m = FC.evaluate(model, valid)
    M.save_checkpoint(model, out / "model.ckpt", {"mean": train.mean, "std": train.std, "L_in": cfg.L_in})
    report = {"model": o["model"], "valid": m, "final_train_loss": res.losses[-1], "loss_trace": res.losses}
    _write_json(out / "report.json", report)
    return {"valid_mse": m["mse"]}


def cmd_forecast(o: dict, out: Path) -> dict:
    ckpt = _require_file(o, "checkpoint")
    data = _require_file(o, "data")
    model, extra = M.load_checkpoint(ckpt)
    if not hasattr(model, "predict_next") or "L_in" not in extra:
        raise UsageError(f"--checkpoint: {ckpt} is not a forecaster checkpoint")
    series = FC.load_series(data)
    L = int(extra["L_in"])
    start = len(series) if o["start"] is None else o["start"]
    if not L <= start <= len(series):
        raise UsageError(f"--start must lie in [{L}, {len(series)}], got {start}")
    norm = FC.WindowSet(np.zeros((0, L)), np.zeros((0, 1)), float(extra["mean"]), float(extra["std"]),
                        np.zeros(0, dtype=int))
    pred = FC.forecast_rollout(model, series.values[start - L : start], o["horizon"], norm)
    actual = [float(v) for v in series.values[start : start + o["horizon"]]]
    actual += [None] * (o["horizon"] - len(actual))
    FC.write_forecast_csv(out / "forecast.csv", actual, pred, start_index=start)
    svg = FC.svg_line_chart({"actual": actual, "predicted": pred.tolist()}, title=f"forecast from {start}", x0=start)
    (out / "forecast.svg").write_text(svg)
    return {"horizon": o["horizon"], "start": start}


def cmd_compare(o: dict, out: Path) -> dict:
    if o["data"] is not None:
        _require_file(o, "data")
    seeds = o["seeds"] if o["seeds"] else [o["seed"]]
    base = _experiment_config(o)
    if base.data_seed is None and len(seeds) > 1:
        base = dataclasses.replace(base, data_seed=o["seed"])
    cfgs = [dataclasses.replace(base, seed=s) for s in seeds]
    if o["parallel"] > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=o["parallel"]) as ex:
            reports = list(ex.map(FC.compare_experiment, cfgs))
    else:
        reports = [FC.compare_experiment(c) for c in cfgs]
    rows = []
    for s, r in zip(seeds, reports):
        mse = {m["name"]: m["metrics"]["mse"] for m in r["models"] + r["baselines"]}
        rows.append({"seed": s, **mse})
    summary = {
        "seeds": seeds,
        "per_seed": rows,
        "transformer_le_lstm": sum(r["transformer"] <= r["lstm"] for r in rows),
    }
    _write_json(out / "report.json", {"summary": summary, "runs": reports})
    trace = reports[0]["forecast_trace"]
    chart = {k: v for k, v in trace.items() if k != "start_index"}
    (out / "compare.svg").write_text(FC.svg_line_chart(chart, title="rollout", x0=trace["start_index"]))
    lines = [f"{'seed':>5} " + " ".join(f"{k:>15}" for k in rows[0] if k != "seed")]
    for r in rows:
        lines.append(f"{r['seed']:>5} " + " ".join(f"{v:15.6g}" for k, v in r.items() if k != "seed"))
    (out / "table.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return summary


def bench_rows(ns: list[int], kinds: list[str]) -> list[dict]:
    rows = []
    for n in ns:
        if n < 1:
            raise UsageError(f"--n values must be >= 1, got {n}")
        for kind in kinds:
            p = A.make_pattern(kind, n)
            st = A.pattern_stats(p)
            rows.append({"n": n, "kind": kind, "total_pairs": st.total_pairs,
                         "max_row": st.max_row_cardinality, "bytes_estimate": st.bytes_estimate,
                         "depth": A.reachability_depth(p)})
    return rows


def cmd_bench_attention(o: dict, out: Path) -> dict:
    kinds = o["kinds"]
    bad = [k for k in kinds if k not in A.MASK_KINDS]
    if bad:
        raise UsageError(f"--kinds: unknown mask kind(s) {bad}")
    rows = bench_rows(o["n"], kinds)
    _write_json(out / "bench.json", rows)
    head = f"{'n':>6} {'kind':>10} {'pairs':>10} {'max_row':>8} {'bytes':>10} {'depth':>6}"
    lines = [head] + [
        f"{r['n']:>6} {r['kind']:>10} {r['total_pairs']:>10} {r['max_row']:>8} {r['bytes_estimate']:>10} {r['depth']:>6}"
        for r in rows
    ]
    (out / "bench.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return {"rows": len(rows)}


def cmd_synth_clips(o: dict, out: Path) -> dict:
    if o["n_clips"] < 1:
        raise UsageError("--n-clips must be >= 1")
    clips = _make_clips(o, o["n_clips"], o["seed"], o["parallel"])
    d = out / "clips"
    d.mkdir(exist_ok=True)
    for i, c in enumerate(clips):
        FR.save_clip(c, d / f"clip_{i:04d}.mvc")
    if o["export_frames"]:
        FR.export_frames(clips[0], out / "frames", "clip_0000")
    return {"clips": len(clips), "collisions": int(sum(c.collision_flags.any() for c in clips))}


def _frame_setup(o: dict) -> FR.FrameSetup:
    return FR.FrameSetup(H=o["H"], W=o["W"], p=o["p"], K=o["K"], condition=o["condition"], generate=o["generate"])


def cmd_train_frames(o: dict, out: Path) -> dict:
    setup = _frame_setup(o)
    if o["clips"] is not None:
        files = sorted(_require_file(o, "clips").glob("*.mvc"))
        if not files:
            raise DataError(f"--clips: no .mvc files in {o['clips']}")
        clips = [FR.load_clip(f) for f in files]
    else:
        clips = _make_clips(dict(o, T=setup.frames), o["n_clips"], o["clip_seed"], o["parallel"])
    pred, losses = FR.train_frame_predictor(
        clips, setup, o["steps"], lr=o["lr"], seed=o["seed"], batch_size=o["batch_size"],
        d_model=o["d_model"], h=o["heads"], n_layers=o["layers"], d_ff=o["d_ff"], learned_pe=o["learned_pe"],
    )
    pred.save(out / "frames.ckpt")
    _write_json(out / "train_report.json", {"steps": len(losses), "final_loss": losses[-1], "loss_trace": losses})
    return {"final_loss": losses[-1]}


def cmd_predict_frames(o: dict, out: Path) -> dict:
    pred = FR.FramePredictor.load(_require_file(o, "checkpoint"))
    clip = FR.load_clip(_require_file(o, "clip"))
    N, Mf = o["condition"], o["generate"]
    if N < 1 or Mf < 1:
        raise UsageError(f"--condition and --generate must be >= 1, got {N} and {Mf}")
    if clip.T < N:
        raise UsageError(f"--clip has {clip.T} frames, fewer than --condition {N}")
    ctx = FR.VideoClip(clip.pixels[:N], clip.tracks[:, :N], clip.collision_flags[:N], clip.sprite_sizes,
                       clip.stamp_ids)
    result = FR.conditional_generate(pred, ctx, Mf, temperature=o["temperature"], seed=o["seed"])
    FR.save_clip(result, out / "predicted.mvc")
    FR.export_frames(result, out / "frames", "predicted")
    summary = {"frames": result.T}
    if clip.T >= N + Mf:
        summary["metrics"] = FR.frame_metrics(result, clip.pixels[: N + Mf], start=N)
    _write_json(out / "predict_report.json", summary)
    return summary


def cmd_gradcheck(o: dict, out: Path) -> dict:
    from .gradcheck import GRADCHECK_CASES, format_table, run_gradcheck

    unknown = sorted(set(o["ops"] or ()) - set(GRADCHECK_CASES))
    if unknown:
        raise UsageError(f"--ops: no gradcheck case named {', '.join(unknown)}")
    if o["seeds"] < 1:
        raise UsageError("--seeds must be >= 1")
    rows = run_gradcheck(range(o["seeds"]), o["ops"])
    table = format_table(rows)
    print(table)
    (out / "gradcheck.txt").write_text(table + "\n")
    _write_json(out / "gradcheck.json", [dataclasses.asdict(r) for r in rows])
    failed = [r.name for r in rows if not r.ok]
    if failed:
        raise NumericalError(f"gradcheck failed for: {', '.join(failed)}")
    return {"ops": len(rows)}


COMMANDS = {c.name: c for c in [
    Command("synth-series", "write a synthetic date,close series", SERIES_OPTS + [
        Opt("start", float, 0.0, "random-walk start"), Opt("drift", float, 0.0, "random-walk drift"),
    ], cmd_synth_series),
    Command("train-forecaster", "train one forecaster and save a checkpoint",
            SERIES_OPTS + MODEL_OPTS + [Opt("model", str, "transformer", "transformer | lstm")],
            cmd_train_forecaster),
    Command("forecast", "autoregressive forecast from a checkpoint", [
        Opt("checkpoint", str, None, path=True), Opt("data", str, None, path=True),
        Opt("horizon", int, 8), Opt("start", int, None, "index of the first forecast step (default: series end)"),
    ], cmd_forecast),
    Command("compare", "Transformer vs LSTM on identical data and budget",
            SERIES_OPTS + MODEL_OPTS + [Opt("seeds", _int_list, [], "comma-separated training seeds")],
            cmd_compare, parallel=True),
    Command("bench-attention", "pair counts and receptive-field depth per mask", [
        Opt("n", _int_list, [64, 256, 1024, 4096], "comma-separated sequence lengths"),
        Opt("kinds", _str_list, list(A.MASK_KINDS), "comma-separated mask kinds"),
    ], cmd_bench_attention),
    Command("synth-clips", "bouncing-sprite clips", CLIP_OPTS + [
        Opt("export-frames", _bool, False, "also write the first clip as PGM frames"),
    ], cmd_synth_clips, parallel=True),
    Command("train-frames", "train the conditional frame predictor", [
        Opt("clips", str, None, "directory of .mvc clips (synthesised when absent)", path=True),
        *[o for o in CLIP_OPTS if o.name not in ("n-clips", "T", "H", "W", "n-sprites", "sprite-size", "speed-max")],
        Opt("n-clips", int, 2000), Opt("clip-seed", int, 1000, "seed of the first synthesised training clip"),
        Opt("n-sprites", int, 1), Opt("sprite-size", int, 4), Opt("H", int, 16), Opt("W", int, 16),
        Opt("speed-max", int, 2),
        Opt("p", int, 4, "patch size"), Opt("K", int, 64, "codebook size"),
        Opt("condition", int, 4), Opt("generate", int, 4),
        Opt("steps", int, 4000), Opt("lr", float, 2e-3), Opt("batch-size", int, 16),
        Opt("d-model", int, 32), Opt("heads", int, 4), Opt("layers", int, 2), Opt("d-ff", int, 64),
        Opt("learned-pe", _bool, True, "trainable position table on top of the sinusoids"),
    ], cmd_train_frames, parallel=True),
    Command("predict-frames", "condition on N frames and generate M more", [
        Opt("checkpoint", str, None, path=True), Opt("clip", str, None, path=True),
        Opt("condition", int, 4), Opt("generate", int, 4), Opt("temperature", float, 1.0),
    ], cmd_predict_frames),
    Command("gradcheck", "finite-difference check of every registered op", [
        Opt("seeds", int, 10, "number of seeds per case"),
        Opt("ops", _str_list, None, "comma-separated subset of cases (default: all)"),
    ], cmd_gradcheck),
]}


# ---------------------------------------------------------------------------
# option resolution, manifests, main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfwb", description=__doc__.splitlines()[0])
    parser.add_argument("--manifest", help="replay the run recorded in this manifest")
    parser.add_argument("--out", help="output directory for --manifest replays")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for cmd in COMMANDS.values():
        p = sub.add_parser(cmd.name, help=cmd.help)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
        p.add_argument("--config", default=argparse.SUPPRESS, help="key=value file, overridden by flags")
        if cmd.parallel:
            p.add_argument("--parallel", type=int, default=argparse.SUPPRESS, help="worker processes")
        for opt in cmd.opts:
            p.add_argument("--" + opt.name, dest=opt.dest, type=opt.type, default=argparse.SUPPRESS, help=opt.help)
    return parser


def read_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"--config: no such file: {p}")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"--config {p}:{lineno}: expected key=value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def resolve(cmd: Command, explicit: dict) -> dict:
    """Defaults, then the --config file, then explicit flags."""
    opts = {o.dest: o for o in cmd.opts}
    resolved: dict[str, Any] = {o.dest: o.default for o in cmd.opts}
    resolved["seed"] = 0
    if cmd.parallel:
        resolved["parallel"] = 1
    if "config" in explicit:
        for key, raw in read_config(explicit["config"]).items():
            if key == "seed" or key == "parallel":
                resolved[key] = int(raw)
            elif key in opts:
                try:
                    resolved[key] = opts[key].type(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"--config: bad value for {key}: {raw!r}") from exc
            else:
                raise UsageError(f"--config: unknown option {key!r} for {cmd.name}")
    for key, value in explicit.items():
        if key not in ("config", "out", "command", "manifest"):
            resolved[key] = value
    for o in cmd.opts:
        if o.path and resolved[o.dest] is not None:
            resolved[o.dest] = str(Path(resolved[o.dest]).resolve())
    if cmd.parallel and resolved["parallel"] < 1:
        raise UsageError("--parallel must be >= 1")
    return resolved


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_digests(cmd: Command, options: dict) -> dict:
    out = {}
    for o in cmd.opts:
        val = options.get(o.dest)
        if not o.path or val is None:
            continue
        p = Path(val)
        if p.is_dir():
            out[o.dest] = {f.name: _digest(f) for f in sorted(p.iterdir()) if f.is_file()}
        elif p.exists():
            out[o.dest] = _digest(p)
    return out


def run_command(name: str, options: dict, out: Path) -> dict:
    cmd = COMMANDS[name]
    out.mkdir(parents=True, exist_ok=True)
    summary = cmd.run(options, out)
    outputs = {
        str(f.relative_to(out)): _digest(f)
        for f in sorted(out.rglob("*")) if f.is_file() and f.name != MANIFEST
    }
    record_opts = {k: v for k, v in options.items() if k != "parallel"}
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": name,
        "seed": options["seed"],
        "options": dict(sorted(record_opts.items())),
        "inputs": _input_digests(cmd, options),
        "summary": summary,
        "outputs": outputs,
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def replay(manifest_path, out: Path | None) -> dict:
    p = Path(manifest_path)
    if not p.exists():
        raise UsageError(f"--manifest: no such file: {p}")
    try:
        man = json.loads(p.read_text())
        name, options = man["command"], dict(man["options"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"--manifest {p}: not a run manifest ({exc})") from exc
    if name not in COMMANDS:
        raise DataError(f"--manifest {p}: unknown command {name!r}")
    cmd = COMMANDS[name]
    if cmd.parallel:
        options["parallel"] = 1
    for key, digest in man.get("inputs", {}).items():
        if _input_digests(cmd, {key: options[key]}).get(key) != digest:
            log.warning("input %s changed since the manifest was written", key)
    return run_command(name, options, out or p.parent)


def _setup_logging() -> None:
    level = os.environ.get("CF_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"CF_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        explicit = vars(args)
        if explicit.get("manifest"):
            if explicit.get("command"):
                raise UsageError("--manifest replays a recorded run; do not also name a subcommand")
            replay(explicit["manifest"], Path(explicit["out"]) if explicit.get("out") else None)
            return 0
        name = explicit.get("command")
        if not name:
            raise UsageError("missing subcommand; try --help")
        options = resolve(COMMANDS[name], explicit)
        run_command(name, options, Path(explicit.get("out") or "out"))
        return 0
    except WorkbenchError as exc:
        print(f"cfwb: error: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cfwb: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
