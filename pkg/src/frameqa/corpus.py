"""SNR-controlled mixing, pseudo-score labels and corpus manifests."""
from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import AudioClip, FeatureConfig, n_frames_for, read_wav, write_wav

MANIFEST_SCHEMA = 1
DEFAULT_SNR_GRID = (-10.0, -5.0, 5.0, 10.0, 20.0)
CLEAN = "clean"

# SNR (dB) -> pseudo score; unmixed audio scores CLEAN_SCORE
SCORE_TABLE = ((-10.0, 1.0), (-5.0, 2.0), (5.0, 4.0), (10.0, 5.0), (20.0, 7.0))
CLEAN_SCORE = 8.0
MIN_SCORE = 1.0


class DegenerateMixError(ValueError):
    """Raised when either signal has zero power over the mixing span."""


class CorpusError(ValueError):
    pass


def is_clean_marker(snr) -> bool:
    return snr is None or snr == CLEAN or (isinstance(snr, float) and math.isinf(snr) and snr > 0)


def pseudo_score(snr_db) -> float:
    """Quality label for a mixing SNR; ``"clean"``/``None``/``+inf`` give 8.

    Off-grid SNRs interpolate linearly between table rows and clamp at the
    table ends, so the result always lies in [1, 8].
    """
    if is_clean_marker(snr_db):
        return CLEAN_SCORE
    snr = float(snr_db)
    if math.isnan(snr):
        raise ValueError("SNR is NaN")
    xs, ys = zip(*SCORE_TABLE)
    return float(min(max(np.interp(snr, xs, ys), MIN_SCORE), CLEAN_SCORE))


def span_to_samples(span, n_samples: int, feature_config: FeatureConfig | None = None) -> tuple[int, int]:
    """Sample range ``[lo, hi)`` covered by an inclusive frame span."""
    if span is None or span == "full":
        return 0, n_samples
    cfg = feature_config or FeatureConfig()
    start, end = int(span[0]), int(span[1])
    n_frames = n_frames_for(n_samples, cfg.frame_length, cfg.hop_length)
    if not 0 <= start <= end < n_frames:
        raise CorpusError(f"span [{start}, {end}] outside utterance with {n_frames} frames")
    return start * cfg.hop_length, end * cfg.hop_length + cfg.frame_length


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def noise_excerpt(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """``length`` samples of ``noise`` from a random offset, tiling as needed."""
    offset = int(rng.integers(0, noise.size))
    reps = -(-(offset + length) // noise.size)
    return np.tile(noise, reps)[offset:offset + length]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, span="full", seed: int = 0,
               feature_config: FeatureConfig | None = None) -> AudioClip:
    """Add scaled noise to ``clean`` over ``span`` so the span SNR is ``snr_db``.

    Powers are mean squares over the span only. Samples outside the span
    are returned untouched.
    """
    if noise.sample_rate != clean.sample_rate:
        raise CorpusError(f"noise rate {noise.sample_rate} Hz != clean rate {clean.sample_rate} Hz")
    if not math.isfinite(snr_db):
        raise CorpusError(f"SNR must be finite, got {snr_db}")
    lo, hi = span_to_samples(span, len(clean), feature_config)
    rng = np.random.default_rng(seed)
    seg = clean.samples[lo:hi]
    excerpt = noise_excerpt(noise.samples, hi - lo, rng)
    p_clean, p_noise = power(seg), power(excerpt)
    if p_clean == 0.0:
        raise DegenerateMixError("clean signal has zero power over the mixing span; SNR undefined")
    if p_noise == 0.0:
        raise DegenerateMixError("noise excerpt has zero power; SNR undefined")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    out = clean.samples.copy()
    out[lo:hi] = seg + gain * excerpt
    return AudioClip(out, clean.sample_rate)


def measured_snr(clean: AudioClip, mixed: AudioClip, span="full",
                 feature_config: FeatureConfig | None = None) -> float:
    lo, hi = span_to_samples(span, len(clean), feature_config)
    added = mixed.samples[lo:hi] - clean.samples[lo:hi]
    return 10.0 * math.log10(power(clean.samples[lo:hi]) / power(added))


def fit_pcm_range(clip: AudioClip, peak: float = 0.999) -> tuple[AudioClip, float]:
    """Rescale the whole clip to ``peak`` if it exceeds [-1, 1]; returns the factor used."""
    top = float(np.max(np.abs(clip.samples)))
    if top <= 1.0:
        return clip, 1.0
    factor = peak / top
    return AudioClip(clip.samples * factor, clip.sample_rate), factor


# ---------------------------------------------------------------- manifests

@dataclass
class MixRecipe:
    clean_id: str
    noise_id: str = "none"
    snr_db: float | str = CLEAN
    span: str | tuple[int, int] = "full"
    seed: int = 0

    def __post_init__(self):
        if not is_clean_marker(self.snr_db):
            self.snr_db = float(self.snr_db)
            if not math.isfinite(self.snr_db):
                raise CorpusError("snr_db must be finite")
        else:
            self.snr_db = CLEAN
        if self.span != "full":
            start, end = (int(v) for v in self.span)
            if start < 0 or end < start:
                raise CorpusError(f"invalid span {self.span}")
            self.span = (start, end)


@dataclass
class LabeledUtterance:
    id: str
    path: str
    recipe: MixRecipe
    target_score: float
    rescale: float = 1.0

    @property
    def is_clean(self) -> bool:
        return self.recipe.snr_db == CLEAN

    def to_record(self) -> dict:
        r = self.recipe
        return {
            "id": self.id,
            "path": self.path,
            "clean_id": r.clean_id,
            "noise_id": r.noise_id,
            "snr_db": r.snr_db,
            "span": r.span if r.span == "full" else list(r.span),
            "target_score": self.target_score,
            "seed": r.seed,
            "rescale": self.rescale,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledUtterance":
        span = rec["span"] if rec["span"] == "full" else tuple(rec["span"])
        recipe = MixRecipe(rec["clean_id"], rec["noise_id"], rec["snr_db"], span, rec["seed"])
        return cls(rec["id"], rec["path"], recipe, float(rec["target_score"]), float(rec.get("rescale", 1.0)))


@dataclass
class Manifest:
    split: str
    utterances: list[LabeledUtterance] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    root: Path | None = None  # directory relative paths resolve against

    def __post_init__(self):
        ids = [u.id for u in self.utterances]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CorpusError(f"duplicate utterance ids in split {self.split!r}: {dup[:5]}")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def resolve(self, utt: LabeledUtterance) -> Path:
        p = Path(utt.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load_audio(self, utt: LabeledUtterance) -> AudioClip:
        return read_wav(self.resolve(utt), expected_rate=self.meta.get("sample_rate", 16000))

    def dumps(self) -> str:
        head = {"schema": MANIFEST_SCHEMA, "split": self.split, **self.meta}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(u.to_record(), sort_keys=True) for u in self.utterances]
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def loads(cls, text: str, root=None) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise CorpusError("empty manifest")
        head = json.loads(lines[0])
        schema = head.pop("schema", None)
        if schema != MANIFEST_SCHEMA:
            raise CorpusError(f"unsupported manifest schema {schema!r}")
        split = head.pop("split")
        utts = [LabeledUtterance.from_record(json.loads(ln)) for ln in lines[1:]]
        return cls(split, utts, head, Path(root) if root is not None else None)

    @classmethod
    def load(cls, path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        m = cls.loads(path.read_text(), root=path.parent)
        if check_files:
            missing = [u.id for u in m.utterances if not m.resolve(u).exists()]
            if missing:
                raise CorpusError(f"{path}: {len(missing)} referenced files missing, e.g. {missing[0]}")
        return m


def utterance_seed(master_seed: int, key: str) -> int:
    """Per-utterance seed, independent of processing order."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(key.encode())])
    return int(ss.generate_state(1)[0])


def _snr_tag(snr) -> str:
    if is_clean_marker(snr):
        return CLEAN
    return f"{float(snr):+g}dB".replace("+", "p").replace("-", "m")


def _as_items(clips) -> list[tuple[str, AudioClip]]:
    items = list(clips.items()) if isinstance(clips, dict) else list(clips)
    ids = [k for k, _ in items]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate ids in input set")
    return items


def _plan(clean_items, noise_ids, snr_grid, seed, split, span_fn=None, include_clean=True):
    jobs = []
    levels = [*snr_grid, CLEAN] if include_clean else list(snr_grid)
    for cid, clip in clean_items:
        for snr in levels:
            uid = f"{split}/{cid}/{_snr_tag(snr)}"
            useed = utterance_seed(seed, uid)
            if is_clean_marker(snr):
                recipe = MixRecipe(cid, "none", CLEAN, "full", useed)
            else:
                rng = np.random.default_rng(useed)
                nid = noise_ids[int(rng.integers(len(noise_ids)))]
                span = span_fn(clip, rng) if span_fn else "full"
                recipe = MixRecipe(cid, nid, snr, span, useed)
            jobs.append((uid, clip, recipe))
    return jobs


def _render(job, noises, out_dir: Path, feature_config):
    uid, clip, recipe = job
    if recipe.snr_db == CLEAN:
        mixed, factor = fit_pcm_range(clip)
    else:
        mixed = mix_at_snr(clip, noises[recipe.noise_id], recipe.snr_db, recipe.span, recipe.seed, feature_config)
        mixed, factor = fit_pcm_range(mixed)
    rel = Path(uid.replace("/", "__") + ".wav")
    write_wav(out_dir / rel, mixed)
    return LabeledUtterance(uid, str(rel), recipe, pseudo_score(recipe.snr_db), factor)


def build_split(split: str, clean, noises, snr_grid=DEFAULT_SNR_GRID, seed: int = 0, out_dir=".",
                span_fn=None, workers: int = 1, meta: dict | None = None,
                feature_config: FeatureConfig | None = None, include_clean: bool = True) -> Manifest:
    clean_items = _as_items(clean)
    noise_items = dict(_as_items(noises))
    if not clean_items:
        raise CorpusError(f"no clean utterances for split {split!r}")
    if not noise_items and snr_grid:
        raise CorpusError("noise set is empty")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    jobs = _plan(clean_items, sorted(noise_items), snr_grid, seed, split, span_fn, include_clean)

    def run(job):
        utt = _render(job, noise_items, out_dir / "audio", feature_config)
        utt.path = str(Path("audio") / utt.path)
        return utt

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            utts = list(pool.map(run, jobs))
    else:
        utts = [run(j) for j in jobs]
    sr = clean_items[0][1].sample_rate
    head = {"sample_rate": sr, "scoring_scale": "pseudo-snr-1-8", "seed": int(seed),
            "snr_grid": [float(s) for s in snr_grid], **(meta or {})}
    m = Manifest(split, utts, head, out_dir)
    m.save(out_dir / f"{split}.jsonl")
    return m


def build_corpus(clean_set, noise_set, snr_grid=DEFAULT_SNR_GRID, seed: int = 0, out_dir=".",
                 workers: int = 1, meta: dict | None = None) -> tuple[Manifest, Manifest]:
    """Mix every clean utterance at every grid SNR, plus once unmixed.

    ``clean_set`` is a ``(train, test)`` pair of id->clip mappings (or
    lists of pairs) with disjoint ids; manifests are written to
    ``out_dir/train.jsonl`` and ``out_dir/test.jsonl``.
    """
    train_clean, test_clean = (_as_items(c) for c in clean_set)
    overlap = {k for k, _ in train_clean} & {k for k, _ in test_clean}
    if overlap:
        raise CorpusError(f"train/test clean sets overlap: {sorted(overlap)[:5]}")
    train = build_split("train", train_clean, noise_set, snr_grid, seed, out_dir, workers=workers, meta=meta)
    test = build_split("test", test_clean, noise_set, snr_grid, seed, out_dir, workers=workers, meta=meta)
    return train, test


# ---------------------------------------------------------------- synthetic audio

def synth_speech(rng: np.random.Generator, duration: float, sample_rate: int = 16000) -> AudioClip:
    """Harmonic, amplitude-modulated tone complex with a wandering pitch.

    The envelope never drops below 20% of its peak, so every frame carries
    power.
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(100.0, 300.0)
    vibrato = 1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sample_rate
    n_harm = int(rng.integers(2, 6))
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        x += rng.uniform(0.3, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(3.0, 6.0)
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    x *= env
    x *= rng.uniform(0.2, 0.5) / np.max(np.abs(x))
    return AudioClip(x, sample_rate)


def synth_noise(rng: np.random.Generator, kind: str, duration: float, sample_rate: int = 16000) -> AudioClip:
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "filtered":
        white = rng.normal(size=n)
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1 / sample_rate)
        centre, width = rng.uniform(300, 6000), rng.uniform(200, 3000)
        spec *= np.exp(-0.5 * ((freqs - centre) / width) ** 2) + 0.05
        x = np.fft.irfft(spec, n)
    elif kind == "chirp":
        f_lo, f_hi = sorted(rng.uniform(100, 7000, size=2))
        period = rng.uniform(0.2, 1.0)
        frac = (t % period) / period
        phase = 2 * np.pi * np.cumsum(f_lo + (f_hi - f_lo) * frac) / sample_rate
        x = np.sin(phase) + 0.1 * rng.normal(size=n)
    elif kind == "impulses":
        x = 0.05 * rng.normal(size=n)
        step = int(sample_rate / rng.uniform(5, 40))
        decay = np.exp(-np.arange(200) / rng.uniform(10, 60))
        for i in range(int(rng.integers(0, step)), n, step):
            seg = min(200, n - i)
            x[i:i + seg] += rng.choice([-1.0, 1.0]) * decay[:seg] * rng.normal(size=seg)
    elif kind == "white":
        x = rng.normal(size=n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    x /= np.max(np.abs(x))
    return AudioClip(0.5 * x, sample_rate)


NOISE_KINDS = ("filtered", "chirp", "impulses")


def synth_clean_set(n_utts: int, duration_range=(1.0, 3.0), seed: int = 0, prefix: str = "utt",
                    sample_rate: int = 16000) -> dict[str, AudioClip]:
    out = {}
    for i in range(n_utts):
        uid = f"{prefix}{i:04d}"
        rng = np.random.default_rng(utterance_seed(seed, "clean/" + uid))
        out[uid] = synth_speech(rng, rng.uniform(*duration_range), sample_rate)
    return out


def synth_noise_set(n_noises: int = 12, seed: int = 0, duration: float = 4.0,
                    sample_rate: int = 16000) -> dict[str, AudioClip]:
    out = {}
    for i in range(n_noises):
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        nid = f"noise{i:02d}_{kind}"
        rng = np.random.default_rng(utterance_seed(seed, "noise/" + nid))
        out[nid] = synth_noise(rng, kind, duration, sample_rate)
    return out


def synth_corpus(n_utts: int, duration_range=(1.0, 3.0), seed: int = 0, out_dir=".",
                 n_test: int | None = None, n_noises: int = 12, snr_grid=DEFAULT_SNR_GRID,
                 workers: int = 1) -> tuple[Manifest, Manifest]:
    """Synthetic stand-in corpus: ``n_utts`` training and ``n_test`` test clean clips.

    ``n_test`` defaults to ``n_utts // 5``. Train and test noises are drawn
    from one shared pool.
    """
    if n_utts < 2:
        raise CorpusError("need at least 2 utterances")
    n_test = max(1, n_utts // 5) if n_test is None else n_test
    lo, hi = duration_range
    if not 0 < lo <= hi:
        raise CorpusError(f"bad duration range {duration_range}")
    train_clean = synth_clean_set(n_utts, duration_range, seed, prefix="tr")
    test_clean = synth_clean_set(n_test, duration_range, seed, prefix="te")
    noises = synth_noise_set(n_noises, seed)
    meta = {"generator": "synthetic", "duration_range": [float(lo), float(hi)]}
    return build_corpus((train_clean, test_clean), noises, snr_grid, seed, out_dir, workers, meta)


def random_span(min_frac: float = 0.3, max_frac: float = 0.5, feature_config: FeatureConfig | None = None):
    """Span chooser for partially corrupted utterances: a random run of frames."""
    cfg = feature_config or FeatureConfig()

    def choose(clip: AudioClip, rng: np.random.Generator):
        n_frames = n_frames_for(len(clip), cfg.frame_length, cfg.hop_length)
        length = max(1, int(round(n_frames * rng.uniform(min_frac, max_frac))))
        start = int(rng.integers(0, n_frames - length + 1))
        return (start, start + length - 1)

    return choose


def build_localization_set(clean, noises, snr_db: float = 15.0, seed: int = 0, out_dir=".",
                           span_fn=None, split: str = "localize") -> Manifest:
    """One partially corrupted copy of each clean clip at ``snr_db``."""
    span_fn = span_fn or random_span()
    return build_split(split, clean, noises, [snr_db], seed, out_dir, span_fn=span_fn,
                       meta={"purpose": "localization"}, include_clean=False)
