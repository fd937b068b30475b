"""Command line entry point: one executable, one subcommand per pipeline stage.

Subcommands succeed with exit code 0 and never mutate their inputs; on
failure they print a single ``error: <category>: <message>`` line to stderr
and exit 1 (2 for bad usage). Set EMOFUSE_LOG=debug|info|warning to change
log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import audio as audio_mod
from . import video as video_mod
from .dataset import (
    WindowDataset,
    read_dataset,
    read_frame_features,
    write_dataset,
    write_frame_features,
)
from .errors import EmofuseError
from .evaluation import DEFAULT_W_ACC, DEFAULT_W_F1, evaluate
from .model import load_checkpoint, predict_video
from .sequencing import align_modalities, cut_windows, parse_annotations
from .training import TrainConfig, dataset_metrics, run_training

logger = logging.getLogger(__name__)

_MODE_FLAG = {"audio": "audio_only", "video": "video_only", "fused": "fused"}


def _setup_logging():
    level = os.environ.get("EMOFUSE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _require_file(path, what):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# --------------------------------------------------------------------------
# extract-audio
# --------------------------------------------------------------------------


def cmd_extract_audio(args) -> int:
    _require_file(args.wav, "wav file")
    _require_file(args.annotations, "annotation file")
    track = parse_annotations(args.annotations)
    n_chunks = len(track.labels)
    signal = audio_mod.load_wav(args.wav)
    cfg = audio_mod.DspConfig(
        n_fft=args.n_fft,
        hop_length=args.hop,
        log_floor=args.floor,
        n_mels=args.n_mels,
        n_mfcc=args.n_mfcc,
    )
    bounds = audio_mod.chunk_boundaries(signal.duration_s, n_chunks)
    feats = audio_mod.extract_chunk_features(signal, bounds, cfg)
    matrix = np.stack([f.fused for f in feats]).astype(np.float32)
    write_frame_features(
        args.out,
        matrix,
        modality="audio",
        meta={
            "video_id": track.video_id,
            "source_wav": os.path.basename(args.wav),
            "sample_rate": signal.sample_rate,
            "n_chunks": n_chunks,
            "dsp": {
                "n_fft": cfg.n_fft,
                "hop_length": cfg.hop_length,
                "n_mels": cfg.n_mels,
                "n_mfcc": cfg.n_mfcc,
                "fmin": cfg.fmin,
                "fmax": cfg.fmax,
                "log_floor": cfg.log_floor,
            },
        },
    )
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} audio features to {args.out}")
    return 0


# --------------------------------------------------------------------------
# ingest-video
# --------------------------------------------------------------------------


def cmd_ingest_video(args) -> int:
    _require_file(args.csv, "csv file")
    if args.columns:
        selection = video_mod.load_column_manifest(args.columns)
    else:
        selection = video_mod.default_selection()
    records = video_mod.parse_openface_csv(args.csv, selection)
    matrix = np.stack([r.features for r in records]).astype(np.float32)
    n_invalid = sum(1 for r in records if not r.valid)
    write_frame_features(
        args.out,
        matrix,
        modality="video",
        meta={
            "video_id": os.path.splitext(os.path.basename(args.csv))[0],
            "source_csv": os.path.basename(args.csv),
            "columns": list(selection.include_columns),
            "n_invalid_frames": n_invalid,
        },
    )
    print(
        f"parsed {len(records)} rows ({n_invalid} invalid) into "
        f"{matrix.shape[1]}-dim features at {args.out}"
    )
    return 0


# --------------------------------------------------------------------------
# build-dataset
# --------------------------------------------------------------------------


def _is_container(path) -> bool:
    return os.path.isfile(os.path.join(path, "manifest.json"))


def _collect_videos(args) -> list[tuple[str, str, str]]:
    """(video_id, audio_container, video_container) triples, sorted by id."""
    if os.path.isfile(args.annotations):
        track_id = os.path.splitext(os.path.basename(args.annotations))[0]
        return [(track_id, args.audio, args.video)]
    triples = []
    for name in sorted(os.listdir(args.annotations)):
        if not name.endswith(".txt"):
            continue
        vid = os.path.splitext(name)[0]
        triples.append(
            (vid, os.path.join(args.audio, vid), os.path.join(args.video, vid))
        )
    if not triples:
        raise FileNotFoundError(f"no .txt annotation files under {args.annotations}")
    return triples


def cmd_build_dataset(args) -> int:
    triples = _collect_videos(args)

    def assemble(triple):
        vid, audio_dir, video_dir = triple
        ann_path = (
            args.annotations
            if os.path.isfile(args.annotations)
            else os.path.join(args.annotations, vid + ".txt")
        )
        track = parse_annotations(ann_path, video_id=vid)
        audio_feats, audio_manifest = read_frame_features(audio_dir)
        video_feats, video_manifest = read_frame_features(video_dir)
        frames = align_modalities(track, audio_feats, video_feats)
        windows = cut_windows(frames, length=args.window, stride=args.stride)
        return vid, len(frames), windows, audio_manifest, video_manifest

    if args.jobs > 1 and len(triples) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(assemble, triples))
    else:
        results = [assemble(t) for t in triples]

    meta = {
        "dsp": results[0][3].get("meta", {}).get("dsp", {}),
        "columns": results[0][4].get("meta", {}).get("columns", []),
    }
    dataset = WindowDataset.from_video_windows(
        [(vid, n, windows) for vid, n, windows, _, _ in results],
        window_len=args.window,
        stride=args.stride,
        meta=meta,
    )
    write_dataset(dataset, args.out)
    print(
        f"wrote {dataset.n_windows} windows from {len(results)} video(s) to {args.out}"
    )
    return 0


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    train_set = read_dataset(args.train)
    val_set = read_dataset(args.val)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        learning_rate=args.lr,
        mode=_MODE_FLAG[args.mode],
        recurrent=args.recurrent,
        include_class7=not args.exclude_class7,
        standardize_features=args.standardize,
        early_stop_patience=args.patience,
    )
    os.makedirs(args.out, exist_ok=True)
    state_path = os.path.join(args.out, "checkpoint.ckpt")
    best_path = os.path.join(args.out, "best.ckpt")
    model, report = run_training(
        train_set,
        val_set,
        config,
        state_path=state_path,
        best_path=best_path,
        resume_from=args.resume,
    )

    with open(os.path.join(args.out, "train_log.txt"), "w") as fh:
        for r in report.records:
            fh.write(
                f"epoch {r.epoch} train_loss {r.train_loss:.6f} "
                f"val_combined {r.val_combined:.6f} val_accuracy {r.val_accuracy:.6f} "
                f"val_macro_f1 {r.val_macro_f1:.6f}\n"
            )
    summary = {"config": asdict(config), **report.summary()}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if report.diverged:
        print("error: divergence: training loss became non-finite", file=sys.stderr)
        return 1
    print(
        f"trained {config.mode} ({config.recurrent}) for {len(report.records)} epochs; "
        f"best val combined {report.best_metric:.4f} at epoch {report.best_epoch}"
    )
    return 0


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def _parse_weights(text: str) -> tuple[float, float]:
    try:
        w_f1, w_acc = (float(p) for p in text.split(","))
    except ValueError:
        raise EmofuseError(f"weights must be 'w_f1,w_acc', got {text!r}") from None
    return w_f1, w_acc


def cmd_evaluate(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    model, _, meta = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    w_f1, w_acc = _parse_weights(args.weights)

    from .training import standardize_dataset

    if model.feature_stats is not None:
        dataset = standardize_dataset(dataset, model.feature_stats)

    os.makedirs(args.out, exist_ok=True)
    pred_dir = os.path.join(args.out, "predictions")
    os.makedirs(pred_dir, exist_ok=True)

    all_preds, all_truth = [], []
    for entry in dataset.videos:
        windows = dataset.video_windows(entry)
        labels, probs = predict_video(model, windows, entry.n_frames)
        truth = np.zeros(entry.n_frames, dtype=np.int64)
        for w in windows:
            real = dataset.window_len - w.pad_count
            truth[w.start_frame : w.start_frame + real] = w.labels[:real]
        all_preds.append(labels)
        all_truth.append(truth)
        with open(os.path.join(pred_dir, f"{entry.video_id}.txt"), "w") as fh:
            for i in range(entry.n_frames):
                row = ",".join(f"{p:.6f}" for p in probs[i])
                fh.write(f"{i},{labels[i]},{row}\n")

    report = evaluate(
        np.concatenate(all_preds), np.concatenate(all_truth), w_f1=w_f1, w_acc=w_acc
    )
    summary = {
        "mode": model.config.mode,
        "recurrent": model.config.recurrent,
        **report.summary(),
    }
    with open(os.path.join(args.out, "eval_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savetxt(
        os.path.join(args.out, "confusion.csv"),
        report.confusion,
        fmt="%d",
        delimiter=",",
    )
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(_format_report(summary))
    print(_format_report(summary), end="")
    return 0


def _format_report(summary: dict) -> str:
    lines = [
        f"mode: {summary['mode']} ({summary['recurrent']})",
        f"frames evaluated: {summary['n_evaluated']} of {summary['n_frames']}",
    ]
    if summary["combined"] is None:
        lines.append("no evaluable frames")
    else:
        lines += [
            f"accuracy:  {summary['accuracy']:.4f}",
            f"macro F1:  {summary['macro_f1']:.4f}",
            f"combined:  {summary['combined']:.4f} "
            f"(w_f1={summary['weights']['f1']}, w_acc={summary['weights']['accuracy']})",
        ]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


def cmd_report(args) -> int:
    rows = []
    for path in args.summary:
        _require_file(path, "summary file")
        with open(path) as fh:
            s = json.load(fh)
        features = {"audio_only": "Audio only", "video_only": "Video only", "fused": "Audio+Video"}[
            s["mode"]
        ]
        model_desc = f"{s['recurrent'].upper()} layers"
        perf = "n/a" if s["combined"] is None else f"{100.0 * s['combined']:.1f}%"
        rows.append((features, model_desc, perf))

    headers = ("Features", "Model", "Performance")
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(3)
    ]
    out = [" | ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    out.append("-+-".join("-" * w for w in widths))
    for r in rows:
        out.append(" | ".join(r[i].ljust(widths[i]) for i in range(3)))
    print("\n".join(out))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emofuse",
        description="Bimodal (audio + facial features) frame-level expression recognition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-audio", help="WAV + annotations -> per-frame 168-dim audio features")
    p.add_argument("--wav", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-fft", type=int, default=2048)
    p.add_argument("--hop", type=int, default=512)
    p.add_argument("--floor", type=float, default=1e-10)
    p.add_argument("--n-mels", type=int, default=128)
    p.add_argument("--n-mfcc", type=int, default=40)
    p.set_defaults(func=cmd_extract_audio)

    p = sub.add_parser("ingest-video", help="OpenFace CSV -> per-frame video features")
    p.add_argument("--csv", required=True)
    p.add_argument("--columns", default=None, help="column manifest (default: shipped OpenFace 2.x list)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_video)

    p = sub.add_parser("build-dataset", help="aligned features + annotations -> window dataset")
    p.add_argument("--audio", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train a model on window datasets")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("audio", "video", "fused"), default="fused")
    p.add_argument("--recurrent", choices=("gru", "lstm"), default="gru")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--exclude-class7", action="store_true",
                   help="drop unannotated (class 7) timesteps from the loss")
    p.add_argument("--standardize", action="store_true",
                   help="standardize features with training-split statistics")
    p.add_argument("--resume", default=None, help="resume from a state checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a window dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=f"{DEFAULT_W_F1},{DEFAULT_W_ACC}",
                   help="combined-metric weights as 'w_f1,w_acc'")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="tabulate one or more evaluation summaries")
    p.add_argument("--summary", nargs="+", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmofuseError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
