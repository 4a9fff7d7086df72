"""Command-line entry point: ``lightjdt <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error (bad file, bad graph,
bad config).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import graphs
from .model import JDTModel, ModelConfig, load_checkpoint, save_checkpoint
from .moteval import MotParseError, UndefinedMetricError, evaluate_files, write_mot_file
from .profiler import GraphError, analytic_profile, instrumented_profile, load_graph, resolution_sweep, sweep_csv
from .synthdata import SceneConfig, SceneConfigError, read_frames, write_sequence, generate
from .tracker import TrackerConfig, to_mot_records, track_sequence
from .train import RECIPE_SCENE, TrainConfig, train, training_sequences

log = logging.getLogger("lightjdt")

SWEEP_RESOLUTIONS = [(400, 666), (480, 799), (520, 866), (600, 999), (680, 1133), (760, 1266), (800, 1333)]


class DataError(Exception):
    """Bad input data; maps to exit code 2."""


class UsageError(Exception):
    """Bad command-line usage that argparse cannot catch; maps to exit code 1."""


def _load_graph(ref: str):
    """A bundled graph name or a path to a graph JSON file."""
    if ref in graphs.BUNDLED:
        return graphs.load_bundled(ref)
    path = Path(ref)
    if not path.exists():
        raise DataError(f"no graph file or bundled graph named {ref!r} (bundled: {', '.join(graphs.BUNDLED)})")
    try:
        return load_graph(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{ref}: malformed graph file ({exc})") from None


def _resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 800x1333, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return h, w


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def svg_line_chart(series: dict[str, list[tuple[float, float]]], x_label: str, y_label: str,
                   width: int = 640, height: int = 400) -> str:
    """A plain polyline chart, one line per series."""
    pad_l, pad_r, pad_t, pad_b = 80, 160, 20, 50
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y1 = max(ys) * 1.05 or 1.0
    x1 = x1 if x1 > x0 else x0 + 1

    def px(x, y):
        return (pad_l + (x - x0) / (x1 - x0) * (width - pad_l - pad_r),
                height - pad_b - y / y1 * (height - pad_t - pad_b))

    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
           f'font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" y2="{height - pad_b}" stroke="black"/>',
           f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
           f'<text x="{(pad_l + width - pad_r) / 2}" y="{height - 10}" text-anchor="middle">{x_label}</text>',
           f'<text x="15" y="{(pad_t + height - pad_b) / 2}" text-anchor="middle" '
           f'transform="rotate(-90 15 {(pad_t + height - pad_b) / 2})">{y_label}</text>']
    for i in range(5):
        yv = y1 * i / 4
        _, yy = px(x0, yv)
        out.append(f'<text x="{pad_l - 5}" y="{yy + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for k, (name, pts) in enumerate(series.items()):
        c = colours[k % len(colours)]
        coords = " ".join(f"{a:.1f},{b:.1f}" for a, b in (px(x, y) for x, y in pts))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{coords}"/>')
        out.append(f'<text x="{width - pad_r + 10}" y="{pad_t + 20 * (k + 1)}" fill="{c}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- commands

def cmd_profile(args) -> int:
    graph, name, default_shape = _load_graph(args.graph)
    shape = default_shape if args.input is None else (default_shape[0],) + args.input
    report = analytic_profile(graph, shape)
    table = report.to_table()
    print(f"{name} at {shape[1]}x{shape[2]}")
    print(table, end="")
    for g, (p, m) in report.shares().items():
        print(f"{g:12s} params {p:6.2f}%  MACs {m:6.2f}%")
    if args.instrumented:
        counted = instrumented_profile(graph, shape, seed=args.seed)
        bad = [(lp.name, lp.macs, c) for lp, c in zip(report.layers, counted) if lp.macs != c]
        if bad:
            raise DataError(f"analytic and counted MACs differ for {len(bad)} layers, first {bad[0]}")
        print(f"counter check: {sum(counted):,} MACs executed, matches analytic total")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}_profile.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / f"{name}_profile.txt").write_text(table, encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    loaded = [_load_graph(g) for g in args.graphs]
    resolutions = args.resolutions or SWEEP_RESOLUTIONS
    rows = []
    sweeps = {}
    for graph, name, shape in loaded:
        sweeps[name] = resolution_sweep(graph, resolutions, channels=shape[0])
    base = sweeps[loaded[0][1]]
    for name, sw in sweeps.items():
        for (h, w, m), (_, _, mb) in zip(sw, base):
            rows.append((name, h, w, m, m / mb))
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    if args.svg:
        series = {name: [(h * w / 1e6, m / 1e9) for h, w, m in sw] for name, sw in sweeps.items()}
        Path(args.svg).write_text(svg_line_chart(series, "input pixels (millions)", "GMACs"), encoding="utf-8")
    return 0


def cmd_synth(args) -> int:
    d = _read_json(args.config)
    if args.length is not None:
        d["length"] = args.length
    d["seed"] = args.seed
    try:
        cfg = SceneConfig.from_dict(d)
    except (SceneConfigError, TypeError) as exc:
        raise DataError(f"scene config: {exc}") from None
    out = Path(args.out_dir)
    for k in range(args.sequences):
        seq = generate(SceneConfig.from_dict({**cfg.to_dict(), "seed": cfg.seed * 1000 + k}))
        target = out if args.sequences == 1 else out / f"seq{k:03d}"
        write_sequence(seq, target)
        (target / "scene.json").write_text(json.dumps(seq.config.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.sequences} sequence(s) to {out}")
    return 0


def cmd_train(args) -> int:
    scene_d = _read_json(args.scene) if args.scene else {"length": RECIPE_SCENE.length}
    scene_d.setdefault("seed", args.seed)
    try:
        scene = SceneConfig.from_dict(scene_d)
        mcfg = ModelConfig.from_dict(_read_json(args.model))
        model = JDTModel(mcfg, args.seed)
    except (SceneConfigError, TypeError, ValueError) as exc:
        raise DataError(f"config: {exc}") from None
    if (scene.height, scene.width) != (64, 64):
        log.info("training on %dx%d frames", scene.height, scene.width)
    tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                       lr_drop_epoch=args.lr_drop)
    seqs = training_sequences(scene, args.frames)
    curve = train(model, seqs, tcfg, callback=lambda e, l: log.info("epoch %d loss %.5f", e + 1, l))
    save_checkpoint(args.out, model, args.seed)
    if args.loss_csv:
        lines = ["epoch,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(curve)]
        Path(args.loss_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"final loss {curve[-1]:.6f}; checkpoint {args.out}" if curve else f"checkpoint {args.out}")
    return 0


def cmd_track(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{args.checkpoint}: {exc}") from None
    try:
        frames = read_frames(args.frames)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if not frames:
        raise DataError(f"{args.frames}: no .ljt frames found")
    _, h, w = frames[0][1].shape
    cfg = TrackerConfig(score_threshold=args.score_threshold, iou_threshold=args.iou_threshold,
                        nms_iou=None if args.nms_iou <= 0 else args.nms_iou)
    results = track_sequence(model, frames, cfg)
    write_mot_file(args.out, to_mot_records(results, w, h))
    print(f"tracked {len(frames)} frames; results in {args.out}")
    return 0


def cmd_eval(args) -> int:
    try:
        report = evaluate_files(args.gt, args.result, args.iou_threshold)
    except (OSError, MotParseError, UndefinedMetricError) as exc:
        raise DataError(str(exc)) from None
    print(report.to_table(), end="")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lightjdt", description="Butterfly-encoder JDT toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.set_defaults(func=fn)
        return sp

    sp = add("profile", cmd_profile, "Layer-by-layer params and MACs of a layer graph.")
    sp.add_argument("graph", help=f"graph JSON path or bundled name ({', '.join(graphs.BUNDLED)})")
    sp.add_argument("--input", type=_resolution, help="input HxW (default: the graph's own)")
    sp.add_argument("--out-dir", help="write <name>_profile.csv and .txt here")
    sp.add_argument("--instrumented", action="store_true",
                    help="also execute the graph and check counted MACs against the formulas")

    sp = add("sweep", cmd_sweep, "Total MACs of one or more graphs over input resolutions.")
    sp.add_argument("graphs", nargs="+", help="graph paths or bundled names; the first is the ratio baseline")
    sp.add_argument("--resolutions", type=_resolution, nargs="+", help="HxW list (default: 400x666 ... 800x1333)")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.add_argument("--svg", help="also draw a line chart here")

    sp = add("synth", cmd_synth, "Generate synthetic sequences with MOTChallenge ground truth.")
    sp.add_argument("out_dir")
    sp.add_argument("--config", help="scene config JSON (SceneConfig fields)")
    sp.add_argument("--length", type=int, help="frames per sequence (overrides config)")
    sp.add_argument("--sequences", type=int, default=1, help="number of sequences")

    sp = add("train", cmd_train, "Train the toy model on synthetic sequences.")
    sp.add_argument("--scene", help="scene config JSON (default: 2-frame clips)")
    sp.add_argument("--model", help="model config JSON (ModelConfig fields)")
    sp.add_argument("--frames", type=int, default=200, help="training frames (default 200)")
    sp.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--lr-drop", type=int, default=None, help="epoch at which lr drops tenfold")
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--out", default="model.npz", help="checkpoint path")
    sp.add_argument("--loss-csv", help="write the per-epoch loss curve here")

    sp = add("track", cmd_track, "Track a directory of .ljt frames with a checkpoint.")
    sp.add_argument("checkpoint")
    sp.add_argument("frames", help="directory of NNNNNN.ljt frames")
    sp.add_argument("--out", default="result.txt", help="MOTChallenge result CSV")
    sp.add_argument("--score-threshold", type=float, default=0.4)
    sp.add_argument("--iou-threshold", type=float, default=0.5)
    sp.add_argument("--nms-iou", type=float, default=0.5, help="duplicate suppression IoU; 0 disables")

    sp = add("eval", cmd_eval, "CLEAR-MOT metrics of a result file against ground truth.")
    sp.add_argument("gt")
    sp.add_argument("result")
    sp.add_argument("--iou-threshold", type=float, default=0.5)
    sp.add_argument("--csv", help="also write the report as CSV")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; --help exits with 0
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    np.random.seed(args.seed)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lightjdt: {exc}", file=sys.stderr)
        return 1
    except (DataError, GraphError) as exc:
        print(f"lightjdt: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
