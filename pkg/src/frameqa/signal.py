"""Waveform I/O and magnitude-spectrogram features."""
from __future__ import annotations

import csv
import hashlib
import json
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class TooShortError(ValueError):
    """Raised when a clip cannot hold a single analysis frame."""


class WavFormatError(ValueError):
    """Raised for WAV files outside 16-bit mono PCM at the expected rate."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise ValueError("audio clip is empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio clip contains non-finite samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"invalid sample rate {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    frame_ms: float = 32.0
    hop_ms: float = 16.0
    fft_size: int = 512
    window: str = "hann"  # or "rect"
    log_compress: bool = False  # log(1 + |X|) when set
    scale: float = 1.0  # global per-corpus factor applied last

    @property
    def frame_length(self) -> int:
        return ms_to_samples(self.frame_ms, self.sample_rate)

    @property
    def hop_length(self) -> int:
        return ms_to_samples(self.hop_ms, self.sample_rate)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Spectrogram:
    bins: np.ndarray  # (F, T)
    frame_length_samples: int
    hop_samples: int
    sample_rate: int
    config: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def frame_times(self) -> np.ndarray:
        """Start time in seconds of every frame."""
        return np.arange(self.n_frames) * self.hop_samples / self.sample_rate


def ms_to_samples(ms: float, sample_rate: int) -> int:
    n = ms * sample_rate / 1000.0
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ValueError(f"{ms} ms is not a whole number of samples at {sample_rate} Hz")
    return int(round(n))


def n_frames_for(n_samples: int, frame_length: int, hop: int) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // hop + 1


def frame_signal(clip: AudioClip, frame_ms: float = 32.0, hop_ms: float = 16.0) -> np.ndarray:
    """Slice ``clip`` into overlapping frames, shape ``(T, frame_length)``.

    Trailing samples that do not fill a whole frame are dropped.
    """
    length = ms_to_samples(frame_ms, clip.sample_rate)
    hop = ms_to_samples(hop_ms, clip.sample_rate)
    n = len(clip)
    if n < length:
        raise TooShortError(f"clip too short: {n} samples < one frame of {length}")
    t = n_frames_for(n, length, hop)
    view = np.lib.stride_tricks.sliding_window_view(clip.samples, length)[::hop]
    return np.ascontiguousarray(view[:t])


def analysis_window(kind: str, length: int) -> np.ndarray:
    if kind == "hann":
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)
    if kind in ("rect", "rectangular", "boxcar"):
        return np.ones(length)
    raise ValueError(f"unknown window {kind!r}")


def spectrogram(clip: AudioClip, fft_size: int = 512, config: FeatureConfig | None = None) -> Spectrogram:
    """Magnitude STFT of ``clip`` with shape ``(fft_size // 2 + 1, T)``.

    ``config`` supplies framing, window, compression and scale; its
    ``fft_size`` is overridden by the explicit argument.
    """
    cfg = config or FeatureConfig(sample_rate=clip.sample_rate)
    if cfg.fft_size != fft_size:
        cfg = FeatureConfig(**{**cfg.to_dict(), "fft_size": fft_size})
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} Hz != feature rate {cfg.sample_rate} Hz")
    frames = frame_signal(clip, cfg.frame_ms, cfg.hop_ms)
    if fft_size < frames.shape[1]:
        raise ValueError(f"fft_size {fft_size} shorter than frame length {frames.shape[1]}")
    win = analysis_window(cfg.window, frames.shape[1])
    mag = np.abs(np.fft.rfft(frames * win, n=fft_size, axis=1)).T
    if cfg.log_compress:
        mag = np.log1p(mag)
    if cfg.scale != 1.0:
        mag = mag * cfg.scale
    return Spectrogram(
        bins=np.ascontiguousarray(mag),
        frame_length_samples=frames.shape[1],
        hop_samples=cfg.hop_length,
        sample_rate=clip.sample_rate,
        config=cfg,
    )


def features(clip: AudioClip, config: FeatureConfig) -> Spectrogram:
    return spectrogram(clip, config.fft_size, config)


def read_wav(path, expected_rate: int | None = 16000) -> AudioClip:
    """Load a 16-bit signed mono PCM WAV as floats in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            if w.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV ({w.getcomptype()}) not supported")
            raw = w.readframes(n)
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(f"{path}: expected {expected_rate} Hz, got {rate} Hz")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(data, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as 16-bit mono PCM, clipping to the representable range."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def write_spectrogram_csv(path, spec: Spectrogram) -> None:
    """Rows are frequency bins, columns are frames."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in spec.bins:
            writer.writerow([repr(float(v)) for v in row])
