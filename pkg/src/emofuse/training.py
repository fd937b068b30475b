"""Epoch loop: seeded shuffling, batching, validation tracking, early stop.

Every source of randomness is derived from (seed, epoch, step), so a run is
reproducible from its config and a checkpoint resume continues the exact
uninterrupted trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import WindowDataset
from .errors import DivergenceError, SchemaError
from .evaluation import evaluate
from .model import (
    FeatureStats,
    FusionModel,
    ModelConfig,
    RmsProp,
    load_checkpoint,
    predict_video,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    learning_rate: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-7
    mode: str = "fused"
    recurrent: str = "gru"
    include_class7: bool = True
    standardize_features: bool = False
    early_stop_patience: int = 5
    metric_w_f1: float = 0.67
    metric_w_acc: float = 0.33
    window_len: int = 15
    stride: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise SchemaError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise SchemaError("learning_rate must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_combined: float
    val_accuracy: float
    val_macro_f1: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -np.inf
    stopped_early: bool = False
    diverged: bool = False

    def summary(self) -> dict:
        return {
            "epochs_run": len(self.records),
            "best_epoch": self.best_epoch,
            "best_metric": self.best_metric if np.isfinite(self.best_metric) else None,
            "stopped_early": self.stopped_early,
            "diverged": self.diverged,
            "history": [asdict(r) for r in self.records],
        }


# --------------------------------------------------------------------------
# Feature standardization
# --------------------------------------------------------------------------


def fit_stats(train_set: WindowDataset) -> FeatureStats:
    """Per-dimension mean/std over all training window rows."""
    audio = train_set.audio.reshape(-1, train_set.audio_dim).astype(np.float64)
    video = train_set.video.reshape(-1, train_set.video_dim).astype(np.float64)
    return FeatureStats(
        audio_mean=audio.mean(axis=0).astype(np.float32),
        audio_std=np.maximum(audio.std(axis=0), STD_FLOOR).astype(np.float32),
        video_mean=video.mean(axis=0).astype(np.float32),
        video_std=np.maximum(video.std(axis=0), STD_FLOOR).astype(np.float32),
    )


def standardize(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (features - mean) / np.maximum(std, STD_FLOOR)


def standardize_dataset(dataset: WindowDataset, stats: FeatureStats) -> WindowDataset:
    out = WindowDataset(
        audio=standardize(dataset.audio, stats.audio_mean, stats.audio_std).astype(np.float32),
        video=standardize(dataset.video, stats.video_mean, stats.video_std).astype(np.float32),
        labels=dataset.labels,
        start_frames=dataset.start_frames,
        pad_counts=dataset.pad_counts,
        videos=dataset.videos,
        window_len=dataset.window_len,
        stride=dataset.stride,
        meta=dict(dataset.meta),
    )
    return out


# --------------------------------------------------------------------------
# Validation and the epoch loop
# --------------------------------------------------------------------------


def _loss_mask(dataset: WindowDataset, include_class7: bool) -> np.ndarray:
    # padded tail rows never contribute to the loss
    L = dataset.window_len
    rows = np.arange(L)[None, :]
    mask = (rows < (L - dataset.pad_counts)[:, None]).astype(np.float32)
    if not include_class7:
        mask *= (dataset.labels != 7).astype(np.float32)
    return mask


def dataset_metrics(model: FusionModel, dataset: WindowDataset, w_f1: float, w_acc: float):
    """Frame-level evaluation over every video in the container."""
    preds, truths = [], []
    for entry in dataset.videos:
        windows = dataset.video_windows(entry)
        labels, _ = predict_video(model, windows, entry.n_frames)
        truth = np.zeros(entry.n_frames, dtype=np.int64)
        for w in windows:
            real = dataset.window_len - w.pad_count
            truth[w.start_frame : w.start_frame + real] = w.labels[:real]
        preds.append(labels)
        truths.append(truth)
    return evaluate(np.concatenate(preds), np.concatenate(truths), w_f1=w_f1, w_acc=w_acc)


def train_accuracy(model: FusionModel, dataset: WindowDataset) -> float:
    """Plain per-frame accuracy over all frames, class 7 included."""
    correct = 0
    total = 0
    for entry in dataset.videos:
        windows = dataset.video_windows(entry)
        labels, _ = predict_video(model, windows, entry.n_frames)
        truth = np.zeros(entry.n_frames, dtype=np.int64)
        for w in windows:
            real = dataset.window_len - w.pad_count
            truth[w.start_frame : w.start_frame + real] = w.labels[:real]
        correct += int((labels == truth).sum())
        total += entry.n_frames
    return correct / total


def _epoch_seed(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def _step_seed(seed: int, epoch: int, step: int) -> int:
    # stable scalar for the per-layer dropout streams
    return int(np.random.default_rng([seed, epoch, step]).integers(0, 2**31 - 1))


def run_training(
    train_set: WindowDataset,
    val_set: WindowDataset,
    config: TrainConfig,
    state_path=None,
    best_path=None,
    resume_from=None,
) -> tuple[FusionModel, TrainReport]:
    """Train a model on the container, validating each epoch.

    ``state_path`` receives the full resumable state (model + optimizer +
    progress) after every epoch; ``best_path`` the best-validation-metric
    model so far. ``resume_from`` continues a run saved via ``state_path``.
    """
    if train_set.audio_dim != val_set.audio_dim or train_set.video_dim != val_set.video_dim:
        raise SchemaError("train/val feature dims differ")

    report = TrainReport()
    start_epoch = 0
    epochs_since_improve = 0

    if resume_from is not None:
        model, optimizer, meta = load_checkpoint(resume_from)
        if optimizer is None:
            raise SchemaError(f"{resume_from}: checkpoint has no optimizer state, cannot resume")
        progress = meta.get("progress", {})
        start_epoch = int(progress.get("epoch_completed", 0))
        report.best_metric = float(progress.get("best_metric", -np.inf))
        report.best_epoch = int(progress.get("best_epoch", -1))
        epochs_since_improve = int(progress.get("epochs_since_improve", 0))
        stats = model.feature_stats
    else:
        stats = fit_stats(train_set) if config.standardize_features else None
        model_cfg = ModelConfig(
            mode=config.mode,
            recurrent=config.recurrent,
            audio_dim=train_set.audio_dim,
            video_dim=train_set.video_dim,
            window_len=train_set.window_len,
            seed=config.seed,
        )
        model = FusionModel(model_cfg)
        model.feature_stats = stats
        optimizer = RmsProp(config.learning_rate, config.rho, config.eps)

    if stats is not None:
        train_set = standardize_dataset(train_set, stats)
        val_set = standardize_dataset(val_set, stats)

    mask_all = _loss_mask(train_set, config.include_class7)
    n = train_set.n_windows

    for epoch in range(start_epoch, config.epochs):
        perm = _epoch_seed(config.seed, epoch).permutation(n)
        losses = []
        try:
            for step, lo in enumerate(range(0, n, config.batch_size)):
                idx = perm[lo : lo + config.batch_size]
                loss = model.train_step(
                    train_set.audio[idx],
                    train_set.video[idx],
                    train_set.labels[idx],
                    mask_all[idx],
                    optimizer,
                    seed=_step_seed(config.seed, epoch, step),
                )
                losses.append(loss)
        except DivergenceError:
            logger.error("epoch %d: training diverged, keeping last good state", epoch + 1)
            report.diverged = True
            break

        val = dataset_metrics(model, val_set, config.metric_w_f1, config.metric_w_acc)
        combined = val.combined if val.combined is not None else 0.0
        record = EpochRecord(
            epoch=epoch + 1,
            train_loss=float(np.mean(losses)),
            val_combined=combined,
            val_accuracy=val.accuracy if val.accuracy is not None else 0.0,
            val_macro_f1=val.macro_f1 if val.macro_f1 is not None else 0.0,
        )
        report.records.append(record)
        logger.info(
            "epoch %d: train_loss=%.4f val_combined=%.4f",
            record.epoch, record.train_loss, record.val_combined,
        )

        if combined > report.best_metric:
            report.best_metric = combined
            report.best_epoch = epoch + 1
            epochs_since_improve = 0
            if best_path is not None:
                save_checkpoint(best_path, model, meta={"train_config": asdict(config)})
        else:
            epochs_since_improve += 1

        if state_path is not None:
            save_checkpoint(
                state_path,
                model,
                optimizer=optimizer,
                meta={
                    "train_config": asdict(config),
                    "progress": {
                        "epoch_completed": epoch + 1,
                        "best_metric": report.best_metric,
                        "best_epoch": report.best_epoch,
                        "epochs_since_improve": epochs_since_improve,
                    },
                },
            )

        if config.early_stop_patience > 0 and epochs_since_improve >= config.early_stop_patience:
            report.stopped_early = True
            break

    return model, report
