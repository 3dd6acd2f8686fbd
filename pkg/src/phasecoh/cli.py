"""Command-line entry point wiring the library into reproducible runs.

Subcommands: synth, train, score, eval, pci, report. Every run writes a
manifest recording the effective configuration, seeds, and SHA-256
checksums of its inputs, so a run can be repeated bit-identically.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import detect, ingest, synth
from .coherence import CoherenceError, pci
from .config import ConfigError, PRESETS, load_config
from .ingest import IngestError, SplitSpec, Scaler, make_splits, load_csv
from .model import (CheckpointError, ModelConfig, ModelError, init_params,
                    count_params, load_checkpoint, params_from_tensors)
from .spectral import SpectralConfig, SpectralError, to_spectral_tensor
from .train import (LossWeights, TrainingError, save_trained_checkpoint,
                    train_loop)

HELP_WIDTH = 96


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _fmt(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command: str, config: dict, inputs: dict,
                   extras: dict | None = None) -> None:
    manifest = {"command": command, "config": config,
                "inputs": {str(k): sha256_file(v) for k, v in inputs.items()}}
    if extras:
        manifest.update(extras)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="phasecoh", formatter_class=_fmt,
                     description="Phase-coherence frequency-domain anomaly "
                                 "detection for multivariate sensor streams.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", formatter_class=_fmt,
                       help="generate the bundled synthetic attack scenario",
                       description="Write the canonical coupled-oscillator "
                                   "scenario as normal.csv and attack.csv plus "
                                   "a scenario manifest.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=synth.CANONICAL_SEED,
                   help="generator seed (default: %(default)s)")

    p = sub.add_parser("train", formatter_class=_fmt,
                       help="train a detector on normal data",
                       description="Fit the reconstruction model on the normal "
                                   "CSV, validate, pick the detection threshold, "
                                   "and write checkpoint + history + manifest.")
    p.add_argument("--normal", required=True, help="CSV of normal operation")
    p.add_argument("--attack", required=True, help="CSV of the attack period")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", default="default", choices=PRESETS,
                   help="configuration preset (default: %(default)s)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.FIELD=VALUE",
                   help="override a config field (repeatable; wins over file)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--timestamp-column", default="timestamp")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p = sub.add_parser("score", formatter_class=_fmt,
                       help="score test windows with a trained checkpoint",
                       description="Rebuild the test split (holdout + attack "
                                   "windows) with the checkpointed config and "
                                   "emit one scored row per window.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--normal", required=True, help="CSV of normal operation")
    p.add_argument("--attack", required=True, help="CSV of the attack period")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--threshold", type=float, default=None,
                   help="decision threshold (default: the checkpointed one)")

    p = sub.add_parser("eval", formatter_class=_fmt,
                       help="compute detection metrics from a score CSV",
                       description="Read a score CSV (start_index, score, "
                                   "label, prediction) and print the metric "
                                   "table; optionally re-threshold and write "
                                   "the report as JSON.")
    p.add_argument("--scores", required=True, help="score CSV from 'score'")
    p.add_argument("--threshold", type=float, default=None,
                   help="re-classify scores at this threshold")
    p.add_argument("--out", default=None, help="write the report JSON here")

    p = sub.add_parser("pci", formatter_class=_fmt,
                       help="phase-coherence matrices of CSV windows",
                       description="Slice the CSV into windows, compute each "
                                   "window's phase-coherence matrix, and write "
                                   "the mean matrix plus a per-pair summary.")
    p.add_argument("--csv", required=True, help="input data CSV")
    p.add_argument("--out", required=True, help="mean coherence matrix CSV")
    p.add_argument("--summary", default=None,
                   help="per-pair min/mean/max CSV over all windows")
    p.add_argument("--dump-spectra", default=None,
                   help="per-window magnitude/phase CSV for inspection")
    p.add_argument("--window-size", type=int, default=60)
    p.add_argument("--stride", type=int, default=None,
                   help="window stride (default: window size)")
    p.add_argument("--n-fft", type=int, default=128)
    p.add_argument("--analysis-window", default="hann",
                   choices=("hann", "rectangular"))
    p.add_argument("--label-column", default="label")
    p.add_argument("--timestamp-column", default="timestamp")

    p = sub.add_parser("report", formatter_class=_fmt,
                       help="render history and score plots to SVG",
                       description="Render the training history as a loss-curve "
                                   "plot and the score CSV as per-class "
                                   "histograms.")
    p.add_argument("--history", default=None, help="history CSV from 'train'")
    p.add_argument("--scores", default=None, help="score CSV from 'score'")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=None,
                   help="draw this threshold on the histogram")
    return parser


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    normal, attacked, specs = synth.canonical_scenario(seed=args.seed)
    synth.write_csv(normal, out / "normal.csv")
    synth.write_csv(attacked, out / "attack.csv")
    cfg = synth.canonical_config(seed=args.seed)
    write_manifest(out / "manifest.json", "synth", cfg.to_dict(),
                   {"normal.csv": out / "normal.csv",
                    "attack.csv": out / "attack.csv"},
                   extras={"attacks": [s.to_dict() for s in specs],
                           "partners": {str(k): v
                                        for k, v in synth.CANONICAL_PARTNERS.items()},
                           "seed": args.seed})
    print(f"wrote {out / 'normal.csv'} ({normal.n_rows} rows), "
          f"{out / 'attack.csv'} ({attacked.n_rows} rows)")
    return 0


def _load_frames(args):
    normal = load_csv(args.normal, label_column=args.label_column,
                      timestamp_column=args.timestamp_column)
    attack = load_csv(args.attack, label_column=args.label_column,
                      timestamp_column=args.timestamp_column)
    return normal, attack


def _cmd_train(args) -> int:
    run = load_config(args.config, args.preset, args.overrides)
    normal, attack = _load_frames(args)
    if run.model.n_channels != normal.n_channels:
        run.model = replace(run.model, n_channels=normal.n_channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(normal, attack, run.split, run.model.window_size)
    log = None if args.quiet else (lambda line: print(line, flush=True))
    params, history, best_epoch = train_loop(
        splits.train, splits.val, run.model, run.train, run.weights,
        history_path=out / "history.csv", log=log)
    val_scores = detect.score_windows(splits.val, run.model, params, run.weights)
    threshold = detect.percentile_threshold(val_scores, run.percentile)
    extra_tensors = {"run.scaler.mean": splits.scaler.mean,
                     "run.scaler.std": splits.scaler.std}
    extra_config = {"weights": asdict(run.weights), "split": asdict(run.split),
                    "percentile": run.percentile, "threshold": threshold,
                    "label_column": args.label_column,
                    "timestamp_column": args.timestamp_column,
                    "best_epoch": best_epoch}
    save_trained_checkpoint(out / "checkpoint.bin", params, run.model,
                            extra_tensors=extra_tensors,
                            extra_config=extra_config)
    write_manifest(out / "manifest.json", "train", run.to_dict(),
                   {"normal": args.normal, "attack": args.attack},
                   extras={"threshold": threshold, "best_epoch": best_epoch,
                           "boundaries": splits.boundaries,
                           "n_train_windows": len(splits.train),
                           "n_val_windows": len(splits.val)})
    print(f"best epoch {best_epoch}, threshold {threshold:.6g}, "
          f"checkpoint {out / 'checkpoint.bin'}")
    return 0


def _load_trained(path):
    tensors, config = load_checkpoint(path)
    cfg = ModelConfig.from_dict(config["model"])
    scaler = Scaler(mean=tensors.pop("run.scaler.mean"),
                    std=tensors.pop("run.scaler.std"))
    params = params_from_tensors(tensors, cfg)
    weights = LossWeights(**config["weights"])
    split = SplitSpec(**config["split"])
    return cfg, params, scaler, weights, split, config


def _cmd_score(args) -> int:
    cfg, params, scaler, weights, split, config = _load_trained(args.checkpoint)
    args.label_column = config.get("label_column", "label")
    args.timestamp_column = config.get("timestamp_column", "timestamp")
    normal, attack = _load_frames(args)
    splits = make_splits(normal, attack, split, cfg.window_size)
    # the scaler must be the training-time one, not a refit
    if not (np.allclose(splits.scaler.mean, scaler.mean)
            and np.allclose(splits.scaler.std, scaler.std)):
        print("warning: refit scaler differs from the checkpointed one; "
              "using the checkpointed scaler", file=sys.stderr)
        holdout_rows = splits.boundaries["holdout_rows"]
        eval_stride = splits.boundaries["eval_stride"]
        splits.holdout = ingest.slice_windows(
            normal.slice_rows(*holdout_rows), scaler, cfg.window_size, eval_stride)
        splits.attack = ingest.slice_windows(attack, scaler, cfg.window_size,
                                             eval_stride)
    threshold = args.threshold if args.threshold is not None else config["threshold"]
    holdout_offset = splits.boundaries["holdout_rows"][0]
    rows = []
    for window, offset in ([(w, holdout_offset) for w in splits.holdout]
                           + [(w, normal.n_rows) for w in splits.attack]):
        rows.append((window.start_index + offset, window, window.label))
    scores = detect.score_windows([w for _, w, _ in rows], cfg, params, weights)
    predictions = detect.classify(scores, threshold)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_index", "score", "label", "prediction"])
        for (start, _, label), score, pred in zip(rows, scores, predictions):
            writer.writerow([start, repr(float(score)), label, int(pred)])
    write_manifest(str(args.out) + ".manifest.json", "score",
                   {"threshold": threshold, "checkpoint": str(args.checkpoint)},
                   {"normal": args.normal, "attack": args.attack,
                    "checkpoint": args.checkpoint})
    print(f"scored {len(rows)} windows -> {args.out} (threshold {threshold:.6g})")
    return 0


def _read_score_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"start_index", "score", "label", "prediction"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise IngestError(
                f"{path}: expected columns {sorted(needed)}, got {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise IngestError(f"{path}: no scored windows")
    scores = np.array([float(r["score"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    predictions = np.array([int(r["prediction"]) for r in rows])
    return scores, labels, predictions


def _cmd_eval(args) -> int:
    scores, labels, predictions = _read_score_csv(args.scores)
    if args.threshold is not None:
        predictions = detect.classify(scores, args.threshold)
        threshold = args.threshold
    else:
        threshold = float("nan")
    report = detect.evaluate(predictions, labels, scores, threshold=threshold)
    print(report.table())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def _cmd_pci(args) -> int:
    frame = load_csv(args.csv, label_column=args.label_column,
                     timestamp_column=args.timestamp_column)
    stride = args.stride if args.stride is not None else args.window_size
    spectral_cfg = SpectralConfig(n_fft=args.n_fft,
                                  analysis_window=args.analysis_window)
    identity = Scaler(mean=np.zeros(frame.n_channels),
                      std=np.ones(frame.n_channels))
    windows = ingest.slice_windows(frame, identity, args.window_size, stride)
    mats = []
    spectra_rows = []
    for window in windows:
        spec = to_spectral_tensor(window, spectral_cfg)
        mats.append(pci(spec.phase).values)
        if args.dump_spectra:
            for ch in range(spec.n_channels):
                for b in range(spec.n_bins):
                    spectra_rows.append((window.start_index,
                                         frame.channel_names[ch], b,
                                         spec.magnitude[ch, b],
                                         spec.phase[ch, b]))
    stack = np.stack(mats)
    names = frame.channel_names
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + names)
        for i, row in enumerate(stack.mean(axis=0)):
            writer.writerow([names[i]] + [repr(float(v)) for v in row])
    if args.summary:
        with open(args.summary, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel_i", "channel_j", "min", "mean", "max"])
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    vals = stack[:, i, j]
                    writer.writerow([names[i], names[j], repr(float(vals.min())),
                                     repr(float(vals.mean())), repr(float(vals.max()))])
    if args.dump_spectra:
        with open(args.dump_spectra, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window_start", "channel", "bin", "magnitude", "phase"])
            writer.writerows(spectra_rows)
    print(f"{len(windows)} windows -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    if args.history is None and args.scores is None:
        raise UsageError("report: need --history and/or --scores")
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "phasecoh"
    import matplotlib.pyplot as plt
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.history:
        with open(args.history, newline="") as fh:
            rows = list(csv.DictReader(fh))
        epochs = [int(r["epoch"]) for r in rows]
        fig, ax = plt.subplots(figsize=(7, 4))
        for col in ("train_mag", "train_phase", "train_coh", "train_total",
                    "val_total"):
            ax.plot(epochs, [float(r[col]) for r in rows], label=col)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        path = out / "loss_curves.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    if args.scores:
        scores, labels, _ = _read_score_csv(args.scores)
        fig, ax = plt.subplots(figsize=(7, 4))
        bins = np.histogram_bin_edges(scores, bins=40)
        ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="normal")
        ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="attack")
        if args.threshold is not None:
            ax.axvline(args.threshold, color="k", linestyle="--",
                       label="threshold")
        ax.set_xlabel("anomaly score")
        ax.set_ylabel("windows")
        ax.legend()
        fig.tight_layout()
        path = out / "score_hist.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


_COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "score": _cmd_score,
             "eval": _cmd_eval, "pci": _cmd_pci, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage()
                             + "phasecoh: error: a subcommand is required")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (IngestError, SpectralError, CoherenceError, ModelError,
            CheckpointError, ConfigError, FileNotFoundError) as exc:
        print(f"phasecoh: data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, FloatingPointError) as exc:
        print(f"phasecoh: numeric failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
