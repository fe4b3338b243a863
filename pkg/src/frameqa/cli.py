"""``frameqa`` command line: mix, train, score, localize, eval, spectrogram.

Human-readable output goes to stdout, diagnostics to stderr. Set
``FRAMEQA_LOG=INFO`` (or DEBUG) for progress messages.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import corpus
from .localize import detect_regions, write_frame_csv
from .metrics import DEFAULT_THRESHOLD, evaluate, threshold_from_train
from .model import ModelConfig, forward, load_checkpoint, reduced_config
from .signal import FeatureConfig, features, read_wav, write_spectrogram_csv
from .train import TrainConfig, load_examples, predict, train

log = logging.getLogger("frameqa")


@dataclass
class RunConfig:
    """Every knob of one command invocation, embedded in its artifacts."""
    command: str
    feature: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    threshold: float | None = None
    seed: int | None = None
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _load_dir(path: Path) -> dict:
    files = sorted(path.glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files in {path}")
    return {f.stem: read_wav(f) for f in files}


def cmd_mix(args) -> int:
    out = Path(args.out)
    grid = _floats(args.snr_grid)
    run = RunConfig("mix", seed=args.seed, paths={"out": str(out)})
    if args.synthetic:
        lo, hi = _floats(args.duration)
        train_m, test_m = corpus.synth_corpus(args.n, (lo, hi), args.seed, out, n_test=args.n_test,
                                              snr_grid=grid, workers=args.workers)
    else:
        if not args.clean_dir or not args.noise_dir:
            raise ValueError("--clean-dir and --noise-dir are required without --synthetic")
        clean_dir = Path(args.clean_dir)
        run.paths.update(clean_dir=str(clean_dir), noise_dir=str(args.noise_dir))
        noises = _load_dir(Path(args.noise_dir))
        if (clean_dir / "train").is_dir() and (clean_dir / "test").is_dir():
            train_clean, test_clean = _load_dir(clean_dir / "train"), _load_dir(clean_dir / "test")
        else:
            clips = _load_dir(clean_dir)
            ids = sorted(clips)
            np.random.default_rng(args.seed).shuffle(ids)
            n_test = max(1, int(round(len(ids) * args.test_fraction)))
            test_clean = {k: clips[k] for k in sorted(ids[:n_test])}
            train_clean = {k: clips[k] for k in sorted(ids[n_test:])}
        train_m, test_m = corpus.build_corpus((train_clean, test_clean), noises, grid, args.seed, out,
                                              args.workers, meta={"run_config": run.to_dict()})
    print(f"train: {len(train_m)} utterances -> {out / 'train.jsonl'}")
    print(f"test:  {len(test_m)} utterances -> {out / 'test.jsonl'}")
    return 0


def _model_config(args) -> ModelConfig:
    if args.reduced:
        return reduced_config(args.variant)
    return ModelConfig(variant=args.variant)


def cmd_train(args) -> int:
    manifest = corpus.Manifest.load(args.manifest)
    val = corpus.Manifest.load(args.val_manifest) if args.val_manifest else None
    tcfg = TrainConfig(epochs=args.epochs, seed=args.seed, initial_lr=args.lr, lr_decay_per_epoch=args.lr_decay)
    fcfg = FeatureConfig(log_compress=args.log_features, window=args.window)
    mcfg = _model_config(args)
    run = RunConfig("train", fcfg.to_dict(), mcfg.to_dict(), tcfg.to_dict(), seed=args.seed,
                    paths={"manifest": str(args.manifest), "out_dir": str(args.out_dir)})
    res = train(manifest, tcfg, mcfg, fcfg, val, args.out_dir, run_config=run.to_dict(), fit_threshold=True)
    last = res.history[-1]
    print(f"trained {mcfg.variant} for {len(res.history)} epochs; final mean loss {last.mean_train_loss:.4f}")
    print(f"checkpoints: {Path(args.out_dir) / 'final.ckpt'}, {Path(args.out_dir) / 'best.ckpt'}")
    return 0


def _threshold_of(ckpt, override=None) -> float:
    if override is not None:
        return override
    t = ckpt.header.get("extra", {}).get("threshold")
    return DEFAULT_THRESHOLD if t is None else float(t)


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    clip = read_wav(args.wav, ckpt.feature_config.sample_rate)
    spec = features(clip, ckpt.feature_config)
    out = forward(ckpt.params, spec.bins)
    print(f"{out.utterance_score:.4f}")
    if args.frames_csv:
        write_frame_csv(args.frames_csv, out.frame_scores, _threshold_of(ckpt), 1,
                        spec.hop_samples / spec.sample_rate)
    return 0


def cmd_localize(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    clip = read_wav(args.wav, ckpt.feature_config.sample_rate)
    spec = features(clip, ckpt.feature_config)
    out = forward(ckpt.params, spec.bins)
    thr = _threshold_of(ckpt, args.threshold)
    regions = detect_regions(out.frame_scores, thr, args.min_len, args.smooth)
    hop = spec.hop_samples / spec.sample_rate
    if args.out:
        write_frame_csv(args.out, out.frame_scores, thr, args.smooth, hop, regions)
    print(f"utterance score {out.utterance_score:.4f}; threshold {thr:.3f}; {len(regions)} region(s)")
    for r in regions:
        print(f"  frames {r.start_frame}-{r.end_frame}  ({r.start_frame * hop:.3f}s-"
              f"{(r.end_frame + 1) * hop:.3f}s)  mean score {r.mean_frame_score:.3f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = corpus.Manifest.load(args.manifest)
    examples = load_examples(manifest, ckpt.feature_config)
    pred = predict(ckpt.params, examples)
    if args.fit_threshold:
        train_m = corpus.Manifest.load(args.fit_threshold)
        train_ex = load_examples(train_m, ckpt.feature_config)
        thr = threshold_from_train(predict(ckpt.params, train_ex), [e.is_clean for e in train_ex])
    else:
        thr = _threshold_of(ckpt, args.threshold)
    run = RunConfig("eval", ckpt.feature_config.to_dict(), ckpt.params.config.to_dict(), threshold=thr,
                    paths={"manifest": str(args.manifest), "checkpoint": str(args.checkpoint)})
    report = evaluate([e.id for e in examples], [e.target for e in examples], pred, thr,
                      meta={"run_config": run.to_dict()})
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.records())
    return 0


def cmd_spectrogram(args) -> int:
    spec = features(read_wav(args.wav), FeatureConfig(log_compress=args.log_features, window=args.window))
    write_spectrogram_csv(args.out, spec)
    print(f"{spec.bins.shape[0]}x{spec.bins.shape[1]} spectrogram -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frameqa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mix", help="build train/test manifests of SNR-mixed audio")
    m.add_argument("--clean-dir")
    m.add_argument("--noise-dir")
    m.add_argument("--snr-grid", default="-10,-5,5,10,20")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--synthetic", action="store_true", help="generate clean speech and noise")
    m.add_argument("--n", type=int, default=100, help="synthetic training utterances")
    m.add_argument("--n-test", type=int, default=None)
    m.add_argument("--duration", default="1,3", help="synthetic duration range in seconds")
    m.add_argument("--test-fraction", type=float, default=0.2)
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_mix)

    t = sub.add_parser("train", help="train a model on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--variant", default="lc_att", choices=["baseline1", "l_1dcnn", "l_att", "lc_att"])
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--reduced", action="store_true", help="hidden 16, 32 kernels, attention width 8")
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--lr-decay", type=float, default=0.95)
    t.add_argument("--log-features", action="store_true", help="use log(1 + magnitude) features")
    t.add_argument("--window", default="hann", choices=["hann", "rect"])
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score one WAV file")
    s.add_argument("--wav", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--frames-csv")
    s.set_defaults(func=cmd_score)

    lz = sub.add_parser("localize", help="find low-quality regions in one WAV file")
    lz.add_argument("--wav", required=True)
    lz.add_argument("--checkpoint", required=True)
    lz.add_argument("--threshold", type=float)
    lz.add_argument("--min-len", type=int, default=3)
    lz.add_argument("--smooth", type=int, default=5)
    lz.add_argument("--out", help="per-frame CSV")
    lz.set_defaults(func=cmd_localize)

    e = sub.add_parser("eval", help="LCC/SRCC/precision/recall/F1 on a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", required=True)
    g = e.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=float)
    g.add_argument("--fit-threshold", metavar="TRAIN_MANIFEST", help="fit the threshold on this manifest")
    e.add_argument("--out", help="machine-readable report (JSON lines)")
    e.set_defaults(func=cmd_eval)

    sp = sub.add_parser("spectrogram", help="dump a spectrogram as CSV")
    sp.add_argument("--wav", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log-features", action="store_true")
    sp.add_argument("--window", default="hann", choices=["hann", "rect"])
    sp.set_defaults(func=cmd_spectrogram)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FRAMEQA_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        log.debug("command failed", exc_info=True)
        print(f"frameqa: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
