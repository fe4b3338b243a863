import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frameqa import corpus as C
from frameqa.signal import AudioClip, FeatureConfig, features

SNRS = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)


def clip(rng, n=8000, scale=0.1):
    return AudioClip(rng.normal(size=n) * scale)


@pytest.mark.parametrize("snr", SNRS)
def test_mix_hits_requested_snr(snr):
    rng = np.random.default_rng(int(snr) + 50)
    clean, noise = clip(rng), clip(rng, 3000, 0.7)
    mixed = C.mix_at_snr(clean, noise, snr, seed=3)
    assert abs(C.measured_snr(clean, mixed) - snr) < 0.01


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), snr=st.floats(-15, 30), start=st.integers(0, 15), length=st.integers(1, 15))
def test_partial_span_is_exact_and_local(seed, snr, start, length):
    rng = np.random.default_rng(seed)
    clean, noise = clip(rng, 8000), clip(rng, 1234, 2.0)
    span = (start, start + length - 1)
    mixed = C.mix_at_snr(clean, noise, snr, span, seed=seed)
    lo, hi = C.span_to_samples(span, len(clean))
    assert abs(C.measured_snr(clean, mixed, span) - snr) < 0.01
    assert np.array_equal(mixed.samples[:lo], clean.samples[:lo])
    assert np.array_equal(mixed.samples[hi:], clean.samples[hi:])


def test_span_to_samples_covers_frames():
    cfg = FeatureConfig()
    assert C.span_to_samples((0, 0), 16000) == (0, 512)
    assert C.span_to_samples((37, 87), 32000) == (37 * 256, 87 * 256 + 512)
    assert C.span_to_samples("full", 100) == (0, 100)
    with pytest.raises(C.CorpusError):
        C.span_to_samples((10, 200), 16000, cfg)


def test_per_frame_noise_power_follows_span():
    rng = np.random.default_rng(1)
    clean, noise = clip(rng, 16000, 0.05), clip(rng, 16000, 1.0)
    mixed = C.mix_at_snr(clean, noise, 0.0, (20, 40), seed=0)
    diff = features(AudioClip(mixed.samples - clean.samples), FeatureConfig()).bins
    frame_energy = np.sum(diff ** 2, axis=0)
    assert np.all(frame_energy[21:40] > 0)
    assert np.all(frame_energy[:19] == 0) and np.all(frame_energy[42:] == 0)


def test_degenerate_mix_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(C.DegenerateMixError):
        C.mix_at_snr(AudioClip(np.zeros(4000)), clip(rng), 5.0)
    with pytest.raises(C.DegenerateMixError):
        C.mix_at_snr(clip(rng), AudioClip(np.zeros(4000)), 5.0)
    with pytest.raises(C.CorpusError):
        C.mix_at_snr(clip(rng), AudioClip(np.ones(100), 8000), 5.0)


def test_mix_determinism_and_seed_dependence():
    rng = np.random.default_rng(2)
    clean, noise = clip(rng), clip(rng, 5000)
    a = C.mix_at_snr(clean, noise, 5.0, seed=11).samples
    assert np.array_equal(a, C.mix_at_snr(clean, noise, 5.0, seed=11).samples)
    assert not np.array_equal(a, C.mix_at_snr(clean, noise, 5.0, seed=12).samples)


def test_noise_excerpt_tiles_short_noise():
    noise = np.arange(5.0)
    out = C.noise_excerpt(noise, 12, np.random.default_rng(0))
    assert out.size == 12
    assert np.array_equal(np.diff(out) % 5, np.ones(11))


@pytest.mark.parametrize("snr,score", [(-10, 1), (-5, 2), (5, 4), (10, 5), (20, 7), ("clean", 8), (None, 8),
                                       (float("inf"), 8), (15, 6.0), (0, 3.0), (-30, 1), (40, 7)])
def test_pseudo_score_table(snr, score):
    assert C.pseudo_score(snr) == pytest.approx(score, abs=1e-12)


@given(a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_pseudo_score_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 1.0 <= C.pseudo_score(lo) <= C.pseudo_score(hi) <= 7.0


def test_pseudo_score_nan_rejected():
    with pytest.raises(ValueError):
        C.pseudo_score(float("nan"))


def test_fit_pcm_range():
    loud = AudioClip(np.array([0.5, -2.0, 1.0]))
    fitted, factor = C.fit_pcm_range(loud)
    assert factor == pytest.approx(0.999 / 2.0)
    assert np.max(np.abs(fitted.samples)) == pytest.approx(0.999)
    quiet = AudioClip(np.array([0.1, -0.2]))
    assert C.fit_pcm_range(quiet) == (quiet, 1.0)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    train, test = C.synth_corpus(5, (0.5, 0.8), seed=3, out_dir=out, n_test=2)
    return out, train, test


def test_corpus_counts_and_labels(small_corpus):
    out, train, test = small_corpus
    assert len(train) == 5 * 6 and len(test) == 2 * 6
    assert sum(u.is_clean for u in train) == 5
    for u in train:
        assert u.target_score == C.pseudo_score(u.recipe.snr_db)
        assert train.resolve(u).exists()
    train_clean = {u.recipe.clean_id for u in train}
    assert not train_clean & {u.recipe.clean_id for u in test}
    assert (out / "train.jsonl").exists() and (out / "test.jsonl").exists()


def test_corpus_manifest_round_trip(small_corpus):
    out, train, _ = small_corpus
    loaded = C.Manifest.load(out / "train.jsonl")
    assert loaded.dumps() == train.dumps()
    head = json.loads((out / "train.jsonl").read_text().splitlines()[0])
    assert head["schema"] == C.MANIFEST_SCHEMA and head["split"] == "train"


def test_corpus_audio_matches_recipe(small_corpus):
    _, train, _ = small_corpus
    clean = C.synth_clean_set(5, (0.5, 0.8), seed=3, prefix="tr")
    noises = C.synth_noise_set(12, 3)
    for u in train:
        if u.is_clean:
            continue
        r = u.recipe
        want = C.mix_at_snr(clean[r.clean_id], noises[r.noise_id], r.snr_db, r.span, r.seed)
        got = train.load_audio(u).samples / u.rescale
        assert np.max(np.abs(got - want.samples)) < 2.0 / 32768 / u.rescale


def test_corpus_is_deterministic(tmp_path):
    a = C.synth_corpus(3, (0.4, 0.5), seed=9, out_dir=tmp_path / "a", n_test=1)
    b = C.synth_corpus(3, (0.4, 0.5), seed=9, out_dir=tmp_path / "b", n_test=1, workers=3)
    assert a[0].dumps() == b[0].dumps() and a[1].dumps() == b[1].dumps()
    for ua, ub in zip(a[0], b[0]):
        assert a[0].resolve(ua).read_bytes() == b[0].resolve(ub).read_bytes()


def test_overlapping_splits_rejected(tmp_path):
    clean = C.synth_clean_set(2, (0.3, 0.3), seed=0)
    with pytest.raises(C.CorpusError, match="overlap"):
        C.build_corpus((clean, clean), C.synth_noise_set(2), out_dir=tmp_path)


def test_manifest_rejects_duplicates_and_missing_files(tmp_path):
    u = C.LabeledUtterance("x", "a.wav", C.MixRecipe("c"), 8.0)
    with pytest.raises(C.CorpusError, match="duplicate"):
        C.Manifest("train", [u, u])
    C.Manifest("train", [u]).save(tmp_path / "m.jsonl")
    with pytest.raises(C.CorpusError, match="missing"):
        C.Manifest.load(tmp_path / "m.jsonl")
    with pytest.raises(C.CorpusError, match="schema"):
        C.Manifest.loads('{"schema": 99, "split": "x"}\n')


def test_synthetic_speech_contract():
    rng = np.random.default_rng(0)
    x = C.synth_speech(rng, 1.0)
    assert len(x) == 16000
    assert 0.2 <= np.max(np.abs(x.samples)) <= 0.5
    frames = features(x, FeatureConfig()).bins
    assert np.all(np.sum(frames ** 2, axis=0) > 0)
    for kind in (*C.NOISE_KINDS, "white"):
        n = C.synth_noise(rng, kind, 0.5)
        assert np.max(np.abs(n.samples)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        C.synth_noise(rng, "hum", 0.5)


def test_localization_set_spans(tmp_path):
    clean = C.synth_clean_set(4, (1.0, 1.5), seed=1, prefix="te")
    m = C.build_localization_set(clean, C.synth_noise_set(3, 1), 15.0, 1, tmp_path,
                                 span_fn=C.random_span(0.3, 0.5))
    assert len(m) == 4
    for u in m:
        start, end = u.recipe.span
        n_frames = features(m.load_audio(u), FeatureConfig()).n_frames
        assert 0 <= start <= end < n_frames
        assert 0.25 <= (end - start + 1) / n_frames <= 0.55
        assert u.target_score == 6.0


def test_utterance_seed_is_order_free():
    assert C.utterance_seed(1, "a") == C.utterance_seed(1, "a")
    assert C.utterance_seed(1, "a") != C.utterance_seed(1, "b")
    assert C.utterance_seed(1, "a") != C.utterance_seed(2, "a")
