"""Frame-level quality regressor: BLSTM, optional 1-D conv, optional attention.

Layout is time-major internally: a sequence of T frames with C channels is
a (T, C) array. Spectrograms arrive as (F, T) and are transposed once.

Variants:

    baseline1  BLSTM -> Dense -> FrameScore
    l_1dcnn    BLSTM -> 1DCNN -> Dense -> FrameScore
    l_att      BLSTM -> ATT -> Dense -> FrameScore
    lc_att     BLSTM -> 1DCNN -> ATT -> Dense -> FrameScore

The utterance score is always the mean of the frame scores.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as tt
from .signal import FeatureConfig, Spectrogram
from .tensor import Tensor

VARIANTS = ("baseline1", "l_1dcnn", "l_att", "lc_att")

CHECKPOINT_MAGIC = b"FQAC"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "lc_att"
    n_bins: int = 257
    lstm_hidden: int = 100  # per direction
    conv_kernels: int = 250
    conv_width: int = 3
    attention_width: int = 32
    dense_width: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.conv_width != 3:
            raise ValueError("only width-3 kernels are supported")

    @property
    def has_conv(self) -> bool:
        return self.variant in ("l_1dcnn", "lc_att")

    @property
    def has_attention(self) -> bool:
        return self.variant in ("l_att", "lc_att")

    @property
    def blstm_out(self) -> int:
        return 2 * self.lstm_hidden

    @property
    def head_in(self) -> int:
        return self.conv_kernels if self.has_conv else self.blstm_out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def reduced_config(variant: str = "lc_att") -> ModelConfig:
    """Desk-scale widths: hidden 16, 32 kernels, attention width 8."""
    return ModelConfig(variant=variant, lstm_hidden=16, conv_kernels=32, attention_width=8)


@dataclass
class ScoreOutput:
    frame_scores: np.ndarray
    utterance_score: float


# layer name -> parameter names, in forward order
LAYERS = {
    "BLSTM": ("blstm.fwd.W", "blstm.fwd.U", "blstm.fwd.b", "blstm.bwd.W", "blstm.bwd.U", "blstm.bwd.b"),
    "1DCNN": ("conv.K", "conv.b"),
    "ATT": ("att.W_t", "att.W_tp", "att.b_t", "att.W_a", "att.b_a"),
    "Dense": ("dense.W", "dense.b"),
    "Frame_score": ("frame.W", "frame.b"),
}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, d = cfg.lstm_hidden, cfg.n_bins
    shapes = {}
    for direction in ("fwd", "bwd"):
        shapes[f"blstm.{direction}.W"] = (4 * h, d)
        shapes[f"blstm.{direction}.U"] = (4 * h, h)
        shapes[f"blstm.{direction}.b"] = (4 * h,)
    c = cfg.blstm_out
    if cfg.has_conv:
        shapes["conv.K"] = (cfg.conv_kernels, c, cfg.conv_width)
        shapes["conv.b"] = (cfg.conv_kernels,)
        c = cfg.conv_kernels
    if cfg.has_attention:
        a = cfg.attention_width
        shapes["att.W_t"] = (c, a)
        shapes["att.W_tp"] = (c, a)
        shapes["att.b_t"] = (a,)
        shapes["att.W_a"] = (1, a)
        shapes["att.b_a"] = (1,)
    shapes["dense.W"] = (c, cfg.dense_width)
    shapes["dense.b"] = (cfg.dense_width,)
    shapes["frame.W"] = (cfg.dense_width, 1)
    shapes["frame.b"] = (1,)
    return shapes


def layer_param_formulas(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form per-layer parameter counts."""
    h, d = cfg.lstm_hidden, cfg.n_bins
    c = cfg.blstm_out
    out = {"BLSTM": 2 * 4 * (d * h + h * h + h)}
    if cfg.has_conv:
        out["1DCNN"] = cfg.conv_kernels * (c * cfg.conv_width + 1)
        c = cfg.conv_kernels
    if cfg.has_attention:
        out["ATT"] = 2 * c * cfg.attention_width + 2 * cfg.attention_width + 1
    out["Dense"] = c * cfg.dense_width + cfg.dense_width
    out["Frame_score"] = cfg.dense_width + 1
    out["Utterance_score"] = 0
    return out


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.config.variant

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> list[Tensor]:
        return list(self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                                         for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k)
                                         for k, v in self.tensors.items()})


def count_params(params: ModelParams | ModelConfig) -> dict[str, int]:
    """Per-layer counts plus ``total``, read off the actual tensors."""
    if isinstance(params, ModelConfig):
        shapes = param_shapes(params)
    else:
        shapes = {k: v.shape for k, v in params.tensors.items()}
    counts = {}
    for layer, names in LAYERS.items():
        present = [n for n in names if n in shapes]
        if present:
            counts[layer] = int(sum(np.prod(shapes[n]) for n in present))
    counts["Utterance_score"] = 0
    counts["total"] = sum(counts.values())
    return counts


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: ModelConfig | str = "lc_att", seed: int = 0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    cfg = ModelConfig(variant=config) if isinstance(config, str) else config
    rng = np.random.default_rng(seed)
    tensors = {}
    h = cfg.lstm_hidden
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name in ("att.b_t", "att.b_a"):
            arr = np.zeros(shape, dtype=dtype)
            if name.startswith("blstm"):
                arr[h:2 * h] = 1.0
        elif name == "conv.K":
            n, c, w = shape
            arr = _glorot(rng, shape, c * w, n * w, dtype)
        elif name.startswith("blstm"):
            # fan computed per gate block
            arr = _glorot(rng, shape, shape[1], shape[0] // 4, dtype)
        else:
            arr = _glorot(rng, shape, shape[0], shape[1], dtype)
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------- layers

def blstm_forward(params: ModelParams, frames) -> Tensor:
    """(T, F) frames -> (T, 2H): forward states then backward states per row."""
    p = params.tensors
    return tt.bilstm_scan(frames, *(p[n] for n in LAYERS["BLSTM"]))


def conv_forward(params: ModelParams, h) -> Tensor:
    p = params.tensors
    return tt.relu(tt.conv1d_same(h, p["conv.K"], p["conv.b"]))


def attention_weights(params: ModelParams, h) -> Tensor:
    """(T, T) matrix whose row t is softmax over t' of the frame-pair scores."""
    p = params.tensors
    h = tt.as_tensor(h)
    t = h.shape[0]
    a = p["att.W_t"].shape[1]
    left = tt.reshape(h @ p["att.W_t"], (t, 1, a))
    right = tt.reshape(h @ p["att.W_tp"], (1, t, a))
    hidden = tt.tanh(left + right + p["att.b_t"])
    logits = tt.sigmoid(hidden @ tt.transpose(p["att.W_a"]) + p["att.b_a"])
    return tt.softmax(tt.reshape(logits, (t, t)), axis=1)


def attention_forward(params: ModelParams, h) -> Tensor:
    """(T, C) -> (T, C); each output frame is a convex combination of all input frames."""
    return attention_weights(params, h) @ h


def head_forward(params: ModelParams, h) -> Tensor:
    p = params.tensors
    dense = tt.relu(h @ p["dense.W"] + p["dense.b"])
    return tt.reshape(dense @ p["frame.W"] + p["frame.b"], (-1,))


def _frames_of(spec) -> np.ndarray:
    bins = spec.bins if isinstance(spec, Spectrogram) else np.asarray(spec)
    return bins.T


def forward_tensors(params: ModelParams, spec) -> tuple[Tensor, Tensor]:
    """Frame scores (T,) and utterance score (scalar) as tape tensors."""
    cfg = params.config
    frames = _frames_of(spec)
    if frames.ndim != 2 or frames.shape[1] != cfg.n_bins:
        raise tt.ShapeError(f"expected a {cfg.n_bins}xT spectrogram, got {frames.T.shape}")
    if not np.all(np.isfinite(frames)):
        raise tt.NonFiniteError("input spectrogram contains non-finite values")
    dtype = params.tensors["dense.W"].data.dtype
    h = blstm_forward(params, Tensor(frames.astype(dtype, copy=False)))
    if cfg.has_conv:
        h = conv_forward(params, h)
    if cfg.has_attention:
        h = attention_forward(params, h)
    frame_scores = head_forward(params, h)
    return frame_scores, tt.mean(frame_scores)


def forward(params: ModelParams, spec) -> ScoreOutput:
    frame_scores, utt = forward_tensors(params, spec)
    return ScoreOutput(frame_scores.data.copy(), float(utt.data))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: ModelParams, feature_config: FeatureConfig | None = None,
                    extra: dict | None = None) -> None:
    """Write magic, version, a JSON header and little-endian float32 tensors.

    Tensors are stored as float32, so the round trip is bit-exact for
    float32 parameters.
    """
    feature_config = feature_config or FeatureConfig()
    header = {
        "variant": params.variant,
        "model_config": params.config.to_dict(),
        "feature_config": feature_config.to_dict(),
        "feature_digest": feature_config.digest(),
        "scoring_scale": "pseudo-snr-1-8",
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


@dataclass
class Checkpoint:
    params: ModelParams
    feature_config: FeatureConfig
    header: dict


def load_checkpoint(path, variant: str | None = None,
                    feature_config: FeatureConfig | None = None) -> Checkpoint:
    """Read a checkpoint; ``variant``/``feature_config`` are checked when given."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off = 12
    header = json.loads(data[off:off + hlen])
    off += hlen
    if variant is not None and header["variant"] != variant:
        raise CheckpointError(f"{path}: checkpoint holds variant {header['variant']!r}, not {variant!r}")
    fcfg = FeatureConfig.from_dict(header["feature_config"])
    if fcfg.digest() != header["feature_digest"]:
        raise CheckpointError(f"{path}: feature config digest mismatch")
    if feature_config is not None and feature_config.digest() != fcfg.digest():
        raise CheckpointError(f"{path}: feature config differs from the requested one")
    cfg = ModelConfig.from_dict(header["model_config"])
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        off += 4 * n
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
    expected = param_shapes(cfg)
    got = {k: v.shape for k, v in tensors.items()}
    if got != expected:
        raise CheckpointError(f"{path}: tensor layout does not match variant {cfg.variant!r}")
    return Checkpoint(ModelParams(cfg, tensors), fcfg, header)


def with_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    return replace(cfg, variant=variant)
