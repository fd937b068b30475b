"""Two-branch recurrent fusion network over 15-frame windows.

Audio windows [B,15,168] run through GRU(128) then GRU(64); video windows
[B,15,D] through GRU(256) then GRU(64). Each recurrent layer's output goes
through batch normalization, PReLU, then dropout(0.25). The two 64-wide
sequences are concatenated per timestep and passed through dense(64) with
PReLU and dense(8) with softmax, giving an 8-way distribution per frame.

Single-modality variants keep one branch and a dense(64->64) head input;
``recurrent`` switches every recurrent layer between GRU and LSTM.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    CorruptionError,
    CoverageError,
    DivergenceError,
    SchemaError,
    ShapeError,
)
from .nn.layers import BatchNorm, Dense, Dropout, PReLU, softmax, softmax_cross_entropy
from .nn.optim import RmsProp
from .nn.recurrent import Gru, Lstm
from .sequencing import SequenceWindow

MODES = ("fused", "audio_only", "video_only")
RECURRENT_KINDS = ("gru", "lstm")


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "fused"
    recurrent: str = "gru"
    audio_dim: int = 168
    video_dim: int = 714
    window_len: int = 15
    n_classes: int = 8
    audio_hidden: tuple[int, int] = (128, 64)
    video_hidden: tuple[int, int] = (256, 64)
    head_hidden: int = 64
    dropout: float = 0.25
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise SchemaError(f"unknown mode {self.mode!r}")
        if self.recurrent not in RECURRENT_KINDS:
            raise SchemaError(f"unknown recurrent kind {self.recurrent!r}")


@dataclass
class FeatureStats:
    """Per-dimension standardization fitted on the training split."""

    audio_mean: np.ndarray
    audio_std: np.ndarray
    video_mean: np.ndarray
    video_std: np.ndarray


class FusionModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.feature_stats: FeatureStats | None = None
        rng = np.random.default_rng(config.seed)
        rec = Gru if config.recurrent == "gru" else Lstm

        self.audio_stack = []
        self.video_stack = []
        if config.mode in ("fused", "audio_only"):
            self.audio_stack = self._branch("audio", config.audio_dim, config.audio_hidden, rec, rng)
        if config.mode in ("fused", "video_only"):
            self.video_stack = self._branch("video", config.video_dim, config.video_hidden, rec, rng)

        head_in = 0
        if self.audio_stack:
            head_in += config.audio_hidden[-1]
        if self.video_stack:
            head_in += config.video_hidden[-1]
        self.head = [
            Dense(head_in, config.head_hidden, rng, self.dtype, name="head.dense1"),
            PReLU(config.head_hidden, dtype=self.dtype, name="head.prelu"),
            Dense(config.head_hidden, config.n_classes, rng, self.dtype, name="head.dense2"),
        ]
        self._layers = self.audio_stack + self.video_stack + self.head

    def _branch(self, prefix, in_dim, hidden, rec_cls, rng):
        layers = []
        dims = [in_dim, *hidden]
        for i in range(len(hidden)):
            h = dims[i + 1]
            layers.append(rec_cls(dims[i], h, rng, self.dtype, name=f"{prefix}.rnn{i + 1}"))
            layers.append(
                BatchNorm(
                    h,
                    momentum=self.config.bn_momentum,
                    eps=self.config.bn_eps,
                    dtype=self.dtype,
                    name=f"{prefix}.bn{i + 1}",
                )
            )
            layers.append(PReLU(h, dtype=self.dtype, name=f"{prefix}.prelu{i + 1}"))
            layers.append(Dropout(self.config.dropout, name=f"{prefix}.drop{i + 1}"))
        return layers

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._layers:
            for pname, arr in layer.params.items():
                out[f"{layer.name}.{pname}"] = arr
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._layers:
            for pname, arr in layer.grads.items():
                out[f"{layer.name}.{pname}"] = arr
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self._layers:
            if isinstance(layer, BatchNorm):
                out[f"{layer.name}.running_mean"] = layer.running_mean
                out[f"{layer.name}.running_var"] = layer.running_var
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # -- forward / backward -------------------------------------------------

    def _layer_rng(self, layer_name: str, seed: int) -> np.random.Generator:
        # stable per-layer stream: identical masks for identical (seed, name)
        return np.random.default_rng([seed, zlib.crc32(layer_name.encode())])

    def _run_stack(self, stack, x, training, seed):
        for layer in stack:
            if isinstance(layer, Dropout):
                rng = self._layer_rng(layer.name, seed) if training else None
                x = layer.forward(x, training=training, rng=rng)
            else:
                x = layer.forward(x, training=training)
        return x

    def _stack_backward(self, stack, dy):
        for layer in reversed(stack):
            dy = layer.backward(dy)
            if isinstance(dy, tuple):  # recurrent layers also return dh0
                dy = dy[0]
        return dy

    def forward(self, audio, video, training: bool = False, seed: int = 0) -> np.ndarray:
        """Per-timestep class distributions, shape [B, T, n_classes]."""
        parts = []
        if self.audio_stack:
            if audio is None:
                raise ShapeError("model mode requires audio input")
            audio = np.asarray(audio, dtype=self.dtype)
            if audio.ndim == 2:
                audio = audio[None]
            if audio.shape[-1] != self.config.audio_dim:
                raise ShapeError(
                    f"audio dim {audio.shape[-1]} != model {self.config.audio_dim}"
                )
            parts.append(self._run_stack(self.audio_stack, audio, training, seed))
        if self.video_stack:
            if video is None:
                raise ShapeError("model mode requires video input")
            video = np.asarray(video, dtype=self.dtype)
            if video.ndim == 2:
                video = video[None]
            if video.shape[-1] != self.config.video_dim:
                raise ShapeError(
                    f"video dim {video.shape[-1]} != model {self.config.video_dim}"
                )
            parts.append(self._run_stack(self.video_stack, video, training, seed))
        fused = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)
        self._split = None if len(parts) == 1 else parts[0].shape[-1]
        logits = self._run_stack(self.head, fused, training, seed)
        return softmax(logits)

    def backward_from_logits(self, dlogits):
        dfused = self._stack_backward(self.head, dlogits)
        if self._split is None:
            if self.audio_stack:
                self._stack_backward(self.audio_stack, dfused)
            else:
                self._stack_backward(self.video_stack, dfused)
        else:
            self._stack_backward(self.audio_stack, dfused[..., : self._split])
            self._stack_backward(self.video_stack, dfused[..., self._split :])

    def train_step(
        self,
        audio,
        video,
        labels,
        mask,
        optimizer: RmsProp,
        seed: int = 0,
    ) -> float:
        """One forward/backward/update over a batch; returns the mean loss."""
        probs = self.forward(audio, video, training=True, seed=seed)
        labels = np.asarray(labels)
        losses = -np.log(
            np.maximum(
                np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0],
                np.finfo(probs.dtype).tiny,
            )
        )
        mask = np.asarray(mask, dtype=probs.dtype)
        total = mask.sum()
        if total == 0:
            raise ShapeError("train_step: mask excludes every timestep")
        loss = float((losses * mask).sum() / total)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss {loss}")

        dlogits = probs.copy()
        flat = dlogits.reshape(-1, dlogits.shape[-1])
        flat[np.arange(flat.shape[0]), labels.reshape(-1)] -= 1.0
        dlogits *= (mask / total)[..., None]
        self.backward_from_logits(dlogits)
        optimizer.step(self.parameters(), self.gradients())
        return loss


def predict_video(
    model: FusionModel, windows: list[SequenceWindow], n_frames: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame labels and probabilities for one video's windows.

    Frames covered by several windows get the mean of their softmax rows;
    ties in the final argmax resolve to the lowest class index. Padded
    window rows are discarded.
    """
    if not windows:
        raise CoverageError("no windows supplied")
    L = model.config.window_len
    n_classes = model.config.n_classes
    acc = np.zeros((n_frames, n_classes), dtype=np.float64)
    counts = np.zeros(n_frames, dtype=np.int64)

    # fixed accumulation order makes the result exactly window-order-invariant
    windows = sorted(windows, key=lambda w: (w.start_frame, w.pad_count))
    audio = np.stack([w.audio_seq for w in windows])
    video = np.stack([w.video_seq for w in windows])
    probs = model.forward(audio, video, training=False)
    for i, w in enumerate(windows):
        real = L - w.pad_count
        if w.start_frame < 0 or w.start_frame + real > n_frames:
            raise CoverageError(
                f"window at {w.start_frame} (+{real} real rows) exceeds {n_frames} frames"
            )
        acc[w.start_frame : w.start_frame + real] += probs[i, :real]
        counts[w.start_frame : w.start_frame + real] += 1
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise CoverageError(f"frame {missing} not covered by any window")
    mean_probs = acc / counts[:, None]
    return np.argmax(mean_probs, axis=1), mean_probs


# --------------------------------------------------------------------------
# Checkpoints: magic, u64 header length, JSON header, concatenated blobs
# --------------------------------------------------------------------------

_MAGIC = b"EMFCKPT1"


def save_checkpoint(path, model: FusionModel, optimizer: RmsProp | None = None, meta: dict | None = None):
    arrays: list[tuple[str, str, np.ndarray]] = []
    for name, arr in model.parameters().items():
        arrays.append((name, "param", arr))
    for name, arr in model.buffers().items():
        arrays.append((name, "buffer", arr))
    if optimizer is not None:
        for name, arr in optimizer.state_arrays().items():
            arrays.append((f"optimizer.{name}", "optimizer", arr))
    if model.feature_stats is not None:
        s = model.feature_stats
        for name, arr in (
            ("stats.audio_mean", s.audio_mean),
            ("stats.audio_std", s.audio_std),
            ("stats.video_mean", s.video_mean),
            ("stats.video_std", s.video_std),
        ):
            arrays.append((name, "stats", arr))

    blob = bytearray()
    entries = []
    for name, kind, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append(
            {
                "name": name,
                "kind": kind,
                "shape": list(np.asarray(arr).shape),
                "offset": len(blob),
                "nbytes": len(data),
            }
        )
        blob.extend(data)

    header = {
        "format": "emofuse-checkpoint",
        "format_version": 1,
        "config": asdict(model.config),
        "optimizer": None
        if optimizer is None
        else {
            "learning_rate": optimizer.learning_rate,
            "rho": optimizer.rho,
            "eps": optimizer.eps,
        },
        "arrays": entries,
        "meta": meta or {},
        "blob_sha256": hashlib.sha256(bytes(blob)).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[FusionModel, RmsProp | None, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise CorruptionError(f"{path}: not an emofuse checkpoint")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + header_len
    if len(data) < header_end:
        raise CorruptionError(f"{path}: truncated header")
    header = json.loads(data[16:header_end])
    blob = data[header_end:]
    sha = hashlib.sha256(blob).hexdigest()
    if sha != header["blob_sha256"]:
        raise CorruptionError(f"{path}: blob checksum mismatch")

    cfg_dict = dict(header["config"])
    cfg_dict["audio_hidden"] = tuple(cfg_dict["audio_hidden"])
    cfg_dict["video_hidden"] = tuple(cfg_dict["video_hidden"])
    model = FusionModel(ModelConfig(**cfg_dict))

    loaded: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(blob):
            raise CorruptionError(f"{path}: array {entry['name']} extends past blob")
        arr = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(entry["shape"])
        loaded[entry["name"]] = arr.astype(model.dtype)

    params = model.parameters()
    for name, arr in params.items():
        if name not in loaded:
            raise SchemaError(f"{path}: checkpoint missing parameter {name}")
        if loaded[name].shape != arr.shape:
            raise SchemaError(f"{path}: parameter {name} shape mismatch")
        arr[...] = loaded[name]
    for layer in model._layers:
        if isinstance(layer, BatchNorm):
            layer.running_mean = loaded[f"{layer.name}.running_mean"].copy()
            layer.running_var = loaded[f"{layer.name}.running_var"].copy()

    stats_keys = ("stats.audio_mean", "stats.audio_std", "stats.video_mean", "stats.video_std")
    if all(k in loaded for k in stats_keys):
        model.feature_stats = FeatureStats(*(loaded[k].copy() for k in stats_keys))

    optimizer = None
    if header.get("optimizer"):
        o = header["optimizer"]
        optimizer = RmsProp(o["learning_rate"], o["rho"], o["eps"])
        optimizer.load_state(
            {
                e["name"][len("optimizer.") :]: loaded[e["name"]].copy()
                for e in header["arrays"]
                if e["kind"] == "optimizer"
            }
        )
    return model, optimizer, header.get("meta", {})
