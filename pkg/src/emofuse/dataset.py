"""On-disk containers: per-frame feature files and the windowed dataset.

A container is a directory holding ``manifest.json`` plus flat little-endian
float32 blobs, one per field. The manifest records every blob's shape and
SHA-256 so readers can distinguish truncation/corruption from a schema
mismatch. Integer fields (labels, frame offsets) are stored as float32 too;
they are exact up to 2**24, far beyond any frame count seen here.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, SchemaError
from .sequencing import SequenceWindow, WINDOW_LEN, WINDOW_STRIDE

FORMAT_VERSION = 1


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_blob(dirpath, name: str, array: np.ndarray) -> dict:
    path = os.path.join(dirpath, name)
    data = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(data.tobytes())
    return {
        "file": name,
        "shape": list(array.shape),
        "dtype": "float32",
        "sha256": _sha256(path),
    }


def _read_blob(dirpath, entry: dict) -> np.ndarray:
    path = os.path.join(dirpath, entry["file"])
    shape = tuple(entry["shape"])
    expected_bytes = int(np.prod(shape)) * 4
    if not os.path.exists(path):
        raise CorruptionError(f"{path}: blob missing")
    actual = os.path.getsize(path)
    if actual != expected_bytes:
        raise CorruptionError(
            f"{path}: expected {expected_bytes} bytes for shape {shape}, found {actual}"
        )
    if _sha256(path) != entry["sha256"]:
        raise CorruptionError(f"{path}: checksum mismatch")
    with open(path, "rb") as fh:
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(shape)


def _write_manifest(dirpath, manifest: dict):
    path = os.path.join(dirpath, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_manifest(dirpath) -> dict:
    path = os.path.join(dirpath, "manifest.json")
    if not os.path.exists(path):
        raise SchemaError(f"{dirpath}: no manifest.json; not a container")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# Per-frame feature container (extract-audio / ingest-video output)
# --------------------------------------------------------------------------


def write_frame_features(path, features: np.ndarray, modality: str, meta: dict | None = None):
    """Persist an [n_frames, dim] feature matrix for one video."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise SchemaError(f"frame features must be 2-D, got shape {features.shape}")
    os.makedirs(path, exist_ok=True)
    manifest = {
        "kind": "frame_features",
        "format_version": FORMAT_VERSION,
        "modality": modality,
        "count": int(features.shape[0]),
        "dim": int(features.shape[1]),
        "meta": meta or {},
        "blobs": {"features": _write_blob(path, "features.f32", features)},
    }
    _write_manifest(path, manifest)


def read_frame_features(path) -> tuple[np.ndarray, dict]:
    manifest = _read_manifest(path)
    if manifest.get("kind") != "frame_features":
        raise SchemaError(f"{path}: not a frame_features container")
    features = _read_blob(path, manifest["blobs"]["features"])
    if features.shape != (manifest["count"], manifest["dim"]):
        raise SchemaError(
            f"{path}: manifest says {manifest['count']}x{manifest['dim']}, "
            f"blob is {features.shape}"
        )
    return features, manifest


# --------------------------------------------------------------------------
# Windowed dataset container
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    n_frames: int
    window_offset: int
    window_count: int


@dataclass
class WindowDataset:
    """All windows of one or more videos, stacked for training."""

    audio: np.ndarray  # [W, L, A] float32
    video: np.ndarray  # [W, L, D] float32
    labels: np.ndarray  # [W, L] int64
    start_frames: np.ndarray  # [W] int64
    pad_counts: np.ndarray  # [W] int64
    videos: list[VideoEntry]
    window_len: int = WINDOW_LEN
    stride: int = WINDOW_STRIDE
    meta: dict = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return self.audio.shape[0]

    @property
    def audio_dim(self) -> int:
        return self.audio.shape[2]

    @property
    def video_dim(self) -> int:
        return self.video.shape[2]

    def video_windows(self, entry: VideoEntry) -> list[SequenceWindow]:
        lo, hi = entry.window_offset, entry.window_offset + entry.window_count
        return [
            SequenceWindow(
                audio_seq=self.audio[i],
                video_seq=self.video[i],
                labels=self.labels[i],
                start_frame=int(self.start_frames[i]),
                pad_count=int(self.pad_counts[i]),
            )
            for i in range(lo, hi)
        ]

    @classmethod
    def from_video_windows(
        cls,
        per_video: list[tuple[str, int, list[SequenceWindow]]],
        window_len: int = WINDOW_LEN,
        stride: int = WINDOW_STRIDE,
        meta: dict | None = None,
    ) -> "WindowDataset":
        videos = []
        offset = 0
        all_windows: list[SequenceWindow] = []
        for video_id, n_frames, windows in per_video:
            videos.append(
                VideoEntry(
                    video_id=video_id,
                    n_frames=n_frames,
                    window_offset=offset,
                    window_count=len(windows),
                )
            )
            all_windows.extend(windows)
            offset += len(windows)
        if not all_windows:
            raise SchemaError("dataset has no windows")
        return cls(
            audio=np.stack([w.audio_seq for w in all_windows]).astype(np.float32),
            video=np.stack([w.video_seq for w in all_windows]).astype(np.float32),
            labels=np.stack([w.labels for w in all_windows]).astype(np.int64),
            start_frames=np.array([w.start_frame for w in all_windows], dtype=np.int64),
            pad_counts=np.array([w.pad_count for w in all_windows], dtype=np.int64),
            videos=videos,
            window_len=window_len,
            stride=stride,
            meta=dict(meta or {}),
        )


def write_dataset(dataset: WindowDataset, path):
    os.makedirs(path, exist_ok=True)
    blobs = {
        "audio": _write_blob(path, "audio.f32", dataset.audio),
        "video": _write_blob(path, "video.f32", dataset.video),
        "labels": _write_blob(path, "labels.f32", dataset.labels),
        "start_frames": _write_blob(path, "start_frames.f32", dataset.start_frames),
        "pad_counts": _write_blob(path, "pad_counts.f32", dataset.pad_counts),
    }
    manifest = {
        "kind": "window_dataset",
        "format_version": FORMAT_VERSION,
        "n_windows": dataset.n_windows,
        "window_len": dataset.window_len,
        "stride": dataset.stride,
        "audio_dim": dataset.audio_dim,
        "video_dim": dataset.video_dim,
        "videos": [
            {
                "video_id": v.video_id,
                "n_frames": v.n_frames,
                "window_offset": v.window_offset,
                "window_count": v.window_count,
            }
            for v in dataset.videos
        ],
        "meta": dataset.meta,
        "blobs": blobs,
    }
    _write_manifest(path, manifest)


def read_dataset(path) -> WindowDataset:
    manifest = _read_manifest(path)
    if manifest.get("kind") != "window_dataset":
        raise SchemaError(f"{path}: not a window_dataset container")
    blobs = manifest["blobs"]
    audio = _read_blob(path, blobs["audio"])
    video = _read_blob(path, blobs["video"])
    labels = _read_blob(path, blobs["labels"])
    start_frames = _read_blob(path, blobs["start_frames"])
    pad_counts = _read_blob(path, blobs["pad_counts"])

    w, length = manifest["n_windows"], manifest["window_len"]
    checks = [
        (audio.shape[0] == w and audio.shape[1] == length, "audio"),
        (audio.shape[2] == manifest["audio_dim"], "audio_dim"),
        (video.shape[0] == w and video.shape[1] == length, "video"),
        (video.shape[2] == manifest["video_dim"], "video_dim"),
        (labels.shape == (w, length), "labels"),
        (start_frames.shape == (w,), "start_frames"),
        (pad_counts.shape == (w,), "pad_counts"),
    ]
    for ok, what in checks:
        if not ok:
            raise SchemaError(f"{path}: blob {what!r} disagrees with manifest dims")
    videos = [
        VideoEntry(
            video_id=v["video_id"],
            n_frames=v["n_frames"],
            window_offset=v["window_offset"],
            window_count=v["window_count"],
        )
        for v in manifest["videos"]
    ]
    if sum(v.window_count for v in videos) != w:
        raise SchemaError(f"{path}: per-video window counts do not sum to {w}")
    return WindowDataset(
        audio=audio,
        video=video,
        labels=labels.astype(np.int64),
        start_frames=start_frames.astype(np.int64),
        pad_counts=pad_counts.astype(np.int64),
        videos=videos,
        window_len=length,
        stride=manifest["stride"],
        meta=manifest.get("meta", {}),
    )
