"""Command-line entry point: ``evretina <subcommand> [options]``.

Subcommands: synth, encode, train, predict, eval, energy. Failures print a
single JSON object ``{"error": ..., "message": ...}`` on stderr; exit code 2
means bad usage or configuration, 1 a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import emulator, energy, evaluation, events, pipeline, srnn, training
from .config import RunConfig, parse_config
from .errors import ConfigError

log = logging.getLogger("evretina")


class UnknownCommand(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UnknownCommand(message)


def _write_json(path: str | os.PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _threads(args, cfg: RunConfig) -> int:
    n = args.threads if args.threads is not None else cfg.threads
    return n if n is not None else (os.cpu_count() or 1)


def _seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.seed


# ------------------------------------------------------------- subcommands


def cmd_synth(args, cfg: RunConfig) -> int:
    geometry = (args.width, args.height)
    out = Path(args.out)
    if args.scene == "rotating-dot":
        seq = emulator.synth_rotating_dot(args.radius, args.orbit, args.rps, args.duration, args.fps, geometry)
        emulator.save_frames(seq, out)
        print(f"wrote {len(seq.frames)} frames to {out}")
    else:
        specs = emulator.pattern_bank_specs(args.n_patterns, _seed(args, cfg))
        scenes = emulator.synth_pattern_bank(args.n_patterns, geometry, _seed(args, cfg), args.duration, args.fps)
        for i, seq in enumerate(scenes):
            emulator.save_frames(seq, out / f"scene_{i:02d}")
        _write_json(out / "scenes.json", [s.__dict__ for s in specs])
        print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_encode(args, cfg: RunConfig) -> int:
    frames = emulator.load_frames(args.frames, args.fps)
    emu = cfg.emulator
    if args.threshold is not None:
        emu = emulator.EmulatorConfig(args.threshold, emu.log_eps, emu.refractory_us)
    stream = emulator.emulate(frames, emu)
    if args.denoise:
        stream = events.denoise(stream)
    if args.resize:
        w, h = args.resize
        stream = events.downsample(stream, w, h)
    events.save_events(stream, args.out)
    print(f"wrote {len(stream)} events ({stream.width}x{stream.height}) to {args.out}")
    return 0


def load_manifest(path: str, arch: srnn.ArchSpec, cfg: RunConfig) -> list[training.TrainRecord]:
    """Records from ``{"window_ms": .., "steps": .., "recordings": [{"events": .., "spikes": .., "start_s": ..}]}``.

    ``window_ms`` and ``steps`` are optional and default to the run config.
    Paths are relative to the manifest file. Spike CSVs use the
    ``cell_id,trial,t_s`` layout; each recording becomes one record group.
    """
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"manifest {path}: {exc}") from exc
    recs = manifest.get("recordings") if isinstance(manifest, dict) else None
    if not isinstance(recs, list) or not recs:
        raise ConfigError(f"manifest {path}: needs a non-empty 'recordings' list")
    unknown = set(manifest) - {"recordings", "window_ms", "steps"}
    if unknown:
        raise ConfigError(f"manifest {path}: unknown keys {sorted(unknown)}")
    window_ms = manifest.get("window_ms", cfg.window_ms)
    steps = manifest.get("steps", cfg.steps)
    if not isinstance(window_ms, (int, float)) or not window_ms > 0:
        raise ConfigError(f"manifest {path}: window_ms must be > 0")
    if not isinstance(steps, int) or isinstance(steps, bool) or steps < 1:
        raise ConfigError(f"manifest {path}: steps must be an integer >= 1")
    polarity = pipeline.polarity_for(arch.input_shape[0])
    _, h, w = arch.input_shape
    out = []
    for g, rec in enumerate(recs):
        unknown = set(rec) - {"events", "spikes", "start_s"}
        if unknown or "events" not in rec or "spikes" not in rec:
            raise ConfigError(f"manifest recording {g}: needs 'events' and 'spikes' (got {sorted(rec)})")
        start_s = float(rec.get("start_s", 0.0))
        stream = events.load_events(os.path.join(base, rec["events"]))
        stream = pipeline.prepare_stream(stream, (h, w), cfg.denoise)
        times = training.read_spike_csv(os.path.join(base, rec["spikes"]), n_cells=arch.n_cells)
        if len(times) != arch.n_cells:
            raise ConfigError(f"recording {g}: {len(times)} cells, architecture expects {arch.n_cells}")
        n_win = pipeline.available_windows(stream, window_ms, steps, start_us=int(round(start_s * 1e6)))
        if n_win == 0:
            continue
        targets = training.build_targets(times, window_ms, steps, n_windows=int(n_win), start_s=start_s)
        out += pipeline.stream_records(stream, targets, window_ms, steps, g,
                                       start_us=int(round(start_s * 1e6)), polarity=polarity)
    return out


def _dataset(cfg: RunConfig, arch: srnn.ArchSpec, seed: int) -> list[training.TrainRecord]:
    if "manifest" in cfg.data:
        return load_manifest(cfg.resolve(cfg.data["manifest"]), arch, cfg)
    if "synthetic" in cfg.data:
        s = dict(cfg.data["synthetic"])
        if "geometry" in s:
            s["geometry"] = tuple(s["geometry"])
        ds = pipeline.synthetic_dataset(n_cells=arch.n_cells, seed=seed, input_hw=arch.input_shape[1:],
                                        window_ms=cfg.window_ms, steps=cfg.steps, emulator=cfg.emulator, **s)
        return ds.records
    raise ConfigError("config 'data' needs a 'manifest' or 'synthetic' entry")


def cmd_train(args, cfg: RunConfig) -> int:
    seed = _seed(args, cfg)
    arch = cfg.arch_spec()
    records = _dataset(cfg, arch, seed)
    net = srnn.build_network(arch, seed=seed)
    tcfg = cfg.train_config(threads=_threads(args, cfg), seed=seed)
    result = training.train(net, records, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    srnn.save_checkpoint(net, out / "model.bin")
    result.write_csv(out / "train_log.csv")
    _write_json(out / "summary.json", {
        "best_epoch": result.best_epoch,
        "best_val_pcc": None if np.isnan(result.best_val_pcc) else result.best_val_pcc,
        "diverged": result.diverged,
        "epochs_run": len(result.epochs),
        "n_records": len(records),
        "seed": seed,
    })
    print(f"trained {len(result.epochs)} epochs; best val PCC {result.best_val_pcc:.4f}; checkpoint {out / 'model.bin'}")
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    net = srnn.load_checkpoint(args.checkpoint)
    _, h, w = net.arch.input_shape
    stream = pipeline.prepare_stream(events.load_events(args.events), (h, w), cfg.denoise)
    n = pipeline.available_windows(stream, cfg.window_ms, cfg.steps)
    polarity = pipeline.polarity_for(net.arch.input_shape[0])
    zeros = np.zeros((n, net.arch.n_cells))
    recs = pipeline.stream_records(stream, zeros, cfg.window_ms, cfg.steps, polarity=polarity)
    rates = training.predict(net, recs) if recs else zeros
    evaluation.write_rates_csv(args.out, rates)
    print(f"wrote {len(rates)} windows x {net.arch.n_cells} cells to {args.out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    pred = evaluation.read_rates_csv(args.pred)
    if args.targets:
        data = evaluation.read_rates_csv(args.targets)
    else:
        times = training.read_spike_csv(args.spikes, n_cells=pred.shape[1])
        data = training.build_targets(times, cfg.window_ms, cfg.steps, n_windows=len(pred))
    if data.shape != pred.shape:
        raise ConfigError(f"prediction {pred.shape} and recorded {data.shape} rate matrices differ")
    report = evaluation.pcc_report(pred, data)
    hist = evaluation.diff_histogram(pred, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_pcc_csv(out / "pcc.csv", report)
    hist.write_csv(out / "diff_hist.csv")
    nan = lambda v: None if np.isnan(v) else v
    _write_json(out / "metrics.json", {
        "mean_pcc": nan(report.mean),
        "pooled_pcc": nan(report.pooled),
        "excluded_cells": report.excluded,
        "central_fraction": nan(hist.central_fraction),
    })
    if args.raster_cell is not None:
        seed = _seed(args, cfg)
        raster = evaluation.poisson_raster(float(pred[args.raster_window, args.raster_cell]),
                                           cfg.window_ms * cfg.steps, seed=seed)
        raster.write_csv(out / "raster.csv")
    print(f"mean PCC {report.mean:.4f} (pooled {report.pooled:.4f}) over {pred.shape[1]} cells")
    return 0


def cmd_energy(args, cfg: RunConfig) -> int:
    model = cfg.energy_model()
    if args.specs:
        specs = energy.load_specs(args.specs)
    elif args.reference:
        specs = energy.network_energy_specs(srnn.full_arch(), steps=cfg.steps)
    else:
        specs = energy.network_energy_specs(cfg.arch_spec(), steps=cfg.steps)
    report = energy.framework_report(specs, model=model)
    text = report.to_json() if args.format == "json" else report.to_text()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="evretina", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="render synthetic frame sequences")
    s.add_argument("--scene", choices=["rotating-dot", "pattern-bank"], default="rotating-dot")
    s.add_argument("--rps", type=float, default=2.0, help="revolutions per second")
    s.add_argument("--radius", type=float, default=4.0)
    s.add_argument("--orbit", type=float, default=20.0)
    s.add_argument("--duration", type=float, default=0.66, help="seconds")
    s.add_argument("--fps", type=float, default=1000.0)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--n-patterns", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("encode", parents=[common], help="frames -> DVS event file")
    e.add_argument("--frames", required=True, help="directory of PGM frames")
    e.add_argument("--fps", type=float, help="defaults to frames.json")
    e.add_argument("--threshold", type=float, help="log-contrast threshold")
    e.add_argument("--denoise", action="store_true")
    e.add_argument("--resize", type=int, nargs=2, metavar=("W", "H"))
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    t = sub.add_parser("train", parents=[common], help="train a network from a config")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="rate predictions for an event file")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--events", required=True)
    pr.add_argument("--out", required=True, help="CSV path")
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", parents=[common], help="score predictions against recordings")
    ev.add_argument("--pred", required=True)
    g = ev.add_mutually_exclusive_group(required=True)
    g.add_argument("--targets", help="rate CSV (window,cell_0,...)")
    g.add_argument("--spikes", help="spike CSV (cell_id,trial,t_s)")
    ev.add_argument("--raster-cell", type=int)
    ev.add_argument("--raster-window", type=int, default=0)
    ev.add_argument("--out", required=True, help="output directory")
    ev.set_defaults(func=cmd_eval)

    en = sub.add_parser("energy", parents=[common], help="energy comparison report")
    en.add_argument("--reference", action="store_true", help="full-size geometry with reference firing rates")
    en.add_argument("--specs", help="JSON list of component specs")
    en.add_argument("--format", choices=["text", "json"], default="text")
    en.add_argument("--out")
    en.set_defaults(func=cmd_energy)
    return p


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = parse_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.func(args, cfg)
    except ConfigError as exc:
        return _fail(2, exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        return _fail(1, exc)


dispatch = main


if __name__ == "__main__":
    sys.exit(main())
