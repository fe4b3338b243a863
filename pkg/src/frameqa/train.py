"""Utterance+frame loss, RMSprop, and the per-utterance training loop."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .corpus import Manifest
from .metrics import lcc, srcc, threshold_from_train
from .model import ModelConfig, ModelParams, ScoreOutput, forward, forward_tensors, init_params, save_checkpoint
from .signal import FeatureConfig, features
from .tensor import NonFiniteError, Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    initial_lr: float = 0.001
    lr_decay_per_epoch: float = 0.95
    rmsprop_rho: float = 0.9
    rmsprop_epsilon: float = 1e-7
    seed: int = 0
    shuffle: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr_decay_per_epoch must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    """Learning rate for zero-based ``epoch``."""
    return config.initial_lr * config.lr_decay_per_epoch ** epoch


def quality_loss(target: float, frame_scores: Tensor, utterance_score: Tensor) -> Tensor:
    """Squared utterance error plus mean squared frame error, both against ``target``."""
    utt = tt.square(utterance_score - target)
    frames = tt.mean(tt.square(frame_scores - target))
    return tt.reshape(utt + frames, ())


def loss(target: float, output: ScoreOutput) -> float:
    fs = np.asarray(output.frame_scores, dtype=np.float64)
    if fs.size < 1:
        raise ValueError("need at least one frame")
    return float((target - output.utterance_score) ** 2 + np.mean((target - fs) ** 2))


@dataclass
class RMSprop:
    rho: float = 0.9
    epsilon: float = 1e-7
    accumulators: dict = field(default_factory=dict)
    steps: int = 0
    epoch: int = 0

    def step(self, params, grads, lr: float) -> None:
        """In-place update of every tensor in ``params`` (name -> Tensor)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise tt.ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
            v = self.accumulators.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.rho * v + (1.0 - self.rho) * g * g
            self.accumulators[name] = v
            p.data = p.data - lr * g / (np.sqrt(v) + self.epsilon)
        self.steps += 1


@dataclass
class Example:
    id: str
    target: float
    bins: np.ndarray  # (F, T)
    is_clean: bool = False


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    mean_train_loss: float
    val_lcc: float | None = None
    val_srcc: float | None = None
    seconds: float = 0.0

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("seconds")  # timing would break byte-identical logs
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    feature_config: FeatureConfig
    history: list[EpochRecord]
    best_epoch: int
    threshold: float | None = None


def load_examples(manifest: Manifest, feature_config: FeatureConfig, full_span_only: bool = False) -> list[Example]:
    out = []
    for utt in manifest:
        if full_span_only and utt.recipe.span != "full":
            continue
        try:
            spec = features(manifest.load_audio(utt), feature_config)
        except (OSError, ValueError) as exc:
            raise TrainingError(f"utterance {utt.id}: {exc}") from exc
        out.append(Example(utt.id, utt.target_score, spec.bins, utt.is_clean))
    return out


def fit_feature_scale(examples: list[Example]) -> float:
    """Factor that brings the RMS of all training features to 1."""
    total = sum(float(np.sum(np.square(e.bins))) for e in examples)
    count = sum(e.bins.size for e in examples)
    rms = np.sqrt(total / count)
    return 1.0 / rms if rms > 0 else 1.0


def predict(params: ModelParams, examples: list[Example]) -> np.ndarray:
    return np.array([forward(params, e.bins).utterance_score for e in examples])


def train_examples(examples: list[Example], config: TrainConfig, model_config: ModelConfig,
                   val_examples: list[Example] | None = None, params: ModelParams | None = None,
                   on_epoch=None) -> tuple[ModelParams, ModelParams, list[EpochRecord], int]:
    """Core loop over pre-computed features; one RMSprop step per utterance."""
    if not examples:
        raise TrainingError("no training utterances")
    dtype = np.dtype(config.dtype)
    params = params.astype(dtype) if params is not None else init_params(model_config, config.seed, dtype)
    opt = RMSprop(config.rmsprop_rho, config.rmsprop_epsilon)
    rng = np.random.default_rng(config.seed)
    named = params.tensors
    order_names = list(named)
    inputs = [e.bins.astype(dtype) for e in examples]
    history = []
    best, best_score, best_epoch = params.copy(), -np.inf, -1
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = learning_rate(epoch, config)
        order = rng.permutation(len(examples)) if config.shuffle else np.arange(len(examples))
        losses = []
        for idx in order:
            ex = examples[idx]
            try:
                with tt.Tape() as tape:
                    fs, utt = forward_tensors(params, inputs[idx])
                    value = quality_loss(ex.target, fs, utt)
                grads = tape.backward(value, [named[n] for n in order_names])
                opt.step(named, {n: grads[named[n]] for n in order_names}, lr)
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingError(f"utterance {ex.id}: {exc}") from exc
            losses.append(float(value.data))
        opt.epoch = epoch + 1
        rec = EpochRecord(epoch, lr, float(np.mean(losses)))
        if val_examples:
            pred = predict(params, val_examples)
            targets = np.array([e.target for e in val_examples])
            rec.val_lcc = float(lcc(pred, targets))
            rec.val_srcc = float(srcc(pred, targets))
            score = rec.val_lcc
        else:
            score = -rec.mean_train_loss
        if score > best_score:
            best, best_score, best_epoch = params.copy(), score, epoch
        rec.seconds = time.perf_counter() - t0
        history.append(rec)
        log.info("epoch %d lr=%.3g loss=%.4f val_lcc=%s (%.1fs)", epoch, lr, rec.mean_train_loss,
                 rec.val_lcc, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    return params, best, history, best_epoch


def train(manifest: Manifest, config: TrainConfig = TrainConfig(), model_config: ModelConfig = ModelConfig(),
          feature_config: FeatureConfig = FeatureConfig(), val_manifest: Manifest | None = None,
          out_dir=None, auto_scale: bool = True, run_config: dict | None = None,
          fit_threshold: bool = False) -> TrainResult:
    """Train on the full-span utterances of ``manifest``.

    With ``auto_scale`` the feature scale is fitted on the training set and
    stored in the returned feature config (and in every checkpoint). With
    ``fit_threshold`` the clean/noisy threshold is fitted on the final
    model's training predictions. When ``out_dir`` is given, writes
    ``final.ckpt``, ``best.ckpt`` and an append-only ``train_log.jsonl``.
    """
    if len(manifest) == 0:
        raise TrainingError("manifest is empty")
    if auto_scale:
        raw = load_examples(manifest, FeatureConfig(**{**feature_config.to_dict(), "scale": 1.0}), True)
        scale = fit_feature_scale(raw)
        feature_config = FeatureConfig(**{**feature_config.to_dict(), "scale": scale})
        examples = [Example(e.id, e.target, e.bins * scale, e.is_clean) for e in raw]
    else:
        examples = load_examples(manifest, feature_config, True)
    val = load_examples(val_manifest, feature_config) if val_manifest is not None else None

    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"
        log_path.write_text("")

    def append(rec):
        if log_path is not None:
            with log_path.open("a") as fh:
                fh.write(rec.to_json() + "\n")

    params, best, history, best_epoch = train_examples(examples, config, model_config, val, on_epoch=append)
    threshold = None
    if fit_threshold:
        try:
            threshold = threshold_from_train(predict(params, examples), [e.is_clean for e in examples])
        except ValueError as exc:
            log.warning("no threshold fitted: %s", exc)
    if out_dir is not None:
        extra = {"train_config": config.to_dict(), "run_config": run_config or {}, "threshold": threshold}
        save_checkpoint(out_dir / "final.ckpt", params, feature_config, {**extra, "epochs_run": len(history)})
        save_checkpoint(out_dir / "best.ckpt", best, feature_config, {**extra, "best_epoch": best_epoch})
    return TrainResult(params, best, feature_config, history, best_epoch, threshold)
