"""Desk-scale experiments on the synthetic corpus.

Shared by ``scripts/`` and the acceptance tests. Every function is
deterministic for a fixed config, and reports serialize to canonical JSON.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import corpus
from .localize import detect_regions, localization_iou
from .metrics import evaluate, threshold_from_train
from .model import ModelConfig, forward, reduced_config
from .signal import FeatureConfig
from .train import Example, TrainConfig, fit_feature_scale, load_examples, predict, train_examples


@dataclass(frozen=True)
class DeskConfig:
    n_utts: int = 100
    n_test: int = 20
    duration_range: tuple[float, float] = (1.0, 2.0)
    corpus_seed: int = 7
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 15
    variants: tuple[str, ...] = ("lc_att", "baseline1")
    log_features: bool = False
    n_localize: int = 20
    localize_snr: float = 15.0
    span_fraction: tuple[float, float] = (0.3, 0.5)
    min_len: int = 3
    smooth_window: int = 5

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Data:
    train: list[Example]
    test: list[Example]
    localize: list[Example]
    spans: list[tuple[int, int]]
    feature_config: FeatureConfig


def prepare(cfg: DeskConfig, work_dir) -> Data:
    """Build the synthetic corpus plus a partially corrupted localization set."""
    work_dir = Path(work_dir)
    train_m, test_m = corpus.synth_corpus(cfg.n_utts, cfg.duration_range, cfg.corpus_seed,
                                          work_dir / "corpus", n_test=cfg.n_test)
    test_clean = corpus.synth_clean_set(cfg.n_test, cfg.duration_range, cfg.corpus_seed, prefix="te")
    chosen = dict(list(test_clean.items())[:cfg.n_localize])
    loc_m = corpus.build_localization_set(chosen, corpus.synth_noise_set(12, cfg.corpus_seed), cfg.localize_snr,
                                          cfg.corpus_seed, work_dir / "corpus",
                                          span_fn=corpus.random_span(*cfg.span_fraction))
    raw_cfg = FeatureConfig(log_compress=cfg.log_features)
    raw = load_examples(train_m, raw_cfg, full_span_only=True)
    scale = fit_feature_scale(raw)
    fcfg = FeatureConfig(log_compress=cfg.log_features, scale=scale)
    train = [Example(e.id, e.target, e.bins * scale, e.is_clean) for e in raw]
    return Data(train, load_examples(test_m, fcfg), load_examples(loc_m, fcfg),
                [u.recipe.span for u in loc_m], fcfg)


@dataclass
class RunResult:
    variant: str
    seed: int
    losses: list[float]
    test: dict
    threshold: float
    localization_iou: float | None = None
    per_utt_iou: list[float] = field(default_factory=list)
    curve_std: float | None = None  # mean within-utterance std of localization frame scores


def run_one(data: Data, variant: str, seed: int, cfg: DeskConfig,
            model_config: ModelConfig | None = None) -> RunResult:
    mcfg = model_config or reduced_config(variant)
    tcfg = TrainConfig(epochs=cfg.epochs, seed=seed)
    params, _, history, _ = train_examples(data.train, tcfg, mcfg)
    train_pred = predict(params, data.train)
    thr = threshold_from_train(train_pred, [e.is_clean for e in data.train])
    test_pred = predict(params, data.test)
    rep = evaluate([e.id for e in data.test], [e.target for e in data.test], test_pred, thr)
    ious, stds = [], []
    for ex, span in zip(data.localize, data.spans):
        curve = forward(params, ex.bins).frame_scores
        regions = detect_regions(curve, thr, cfg.min_len, cfg.smooth_window)
        ious.append(localization_iou(regions, [span]))
        stds.append(float(np.std(curve)))
    return RunResult(variant, seed, [h.mean_train_loss for h in history],
                     {"lcc": rep.lcc, "srcc": rep.srcc, "precision": rep.precision,
                      "recall": rep.recall, "f1": rep.f1},
                     thr, float(np.mean(ious)) if ious else None, ious,
                     float(np.mean(stds)) if stds else None)


def run_desk(cfg: DeskConfig, work_dir, progress=None) -> dict:
    """Train every variant at every seed; returns a JSON-ready report."""
    data = prepare(cfg, work_dir)
    runs = []
    for seed in cfg.seeds:
        for variant in cfg.variants:
            res = run_one(data, variant, seed, cfg)
            runs.append(asdict(res))
            if progress:
                progress(res)
    return {"config": cfg.to_dict(), "feature_config": data.feature_config.to_dict(),
            "n_train": len(data.train), "n_test": len(data.test), "runs": runs}


@dataclass(frozen=True)
class OverfitConfig:
    n_subset: int = 10
    epochs: int = 300
    target_loss: float = 0.05
    variant: str = "lc_att"
    seed: int = 0
    subset_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def overfit_smoke(data: Data, cfg: OverfitConfig = OverfitConfig()) -> dict:
    """Train the reduced model on a small fixed subset of the training set."""
    rng = np.random.default_rng(cfg.subset_seed)
    idx = sorted(int(i) for i in rng.choice(len(data.train), cfg.n_subset, replace=False))
    subset = [data.train[i] for i in idx]
    _, _, history, _ = train_examples(subset, TrainConfig(epochs=cfg.epochs, seed=cfg.seed),
                                      reduced_config(cfg.variant))
    losses = [h.mean_train_loss for h in history]
    below = [i for i, v in enumerate(losses) if v < cfg.target_loss]
    return {"config": cfg.to_dict(), "ids": [e.id for e in subset], "losses": losses,
            "final_loss": losses[-1], "first_epoch_below": below[0] if below else None}


def canonical(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1)


def lcc_table(report: dict) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = {}
    for r in report["runs"]:
        out.setdefault(r["variant"], {})[r["seed"]] = r["test"]["lcc"]
    return out
