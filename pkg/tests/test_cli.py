import json

import numpy as np
import pytest

from frameqa import corpus as C
from frameqa import model as M
from frameqa.cli import main
from frameqa.signal import FeatureConfig


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_mix_synthetic_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "mix", "--synthetic", "--n", 4, "--n-test", 1, "--duration", "0.3,0.4",
                           "--seed", 7, "--out", tmp_path / name)
        assert code == 0 and "train: 24 utterances" in out
    for split in ("train", "test"):
        assert (tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes()


def test_mix_from_directories(tmp_path, capsys):
    from frameqa.signal import write_wav
    for i, c in enumerate(C.synth_clean_set(5, (0.3, 0.3), seed=1).values()):
        write_wav(tmp_path / "clean" / f"c{i}.wav", c)
    for i, n in enumerate(C.synth_noise_set(2, 1, duration=0.5).values()):
        write_wav(tmp_path / "noise" / f"n{i}.wav", n)
    code, out, _ = run(capsys, "mix", "--clean-dir", tmp_path / "clean", "--noise-dir", tmp_path / "noise",
                       "--out", tmp_path / "m", "--snr-grid", "0,10")
    assert code == 0
    train = C.Manifest.load(tmp_path / "m" / "train.jsonl")
    test = C.Manifest.load(tmp_path / "m" / "test.jsonl")
    assert len(train) == 4 * 3 and len(test) == 1 * 3
    assert train.meta["run_config"]["command"] == "mix"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["mix", "--synthetic", "--n", "12", "--n-test", "2", "--duration", "0.5,0.8", "--seed", "3",
                 "--out", str(root / "data")]) == 0
    assert main(["train", "--manifest", str(root / "data" / "train.jsonl"), "--variant", "baseline1",
                 "--reduced", "--epochs", "8", "--out-dir", str(root / "run")]) == 0
    return root


def test_score_orders_clean_above_heavy_noise(trained, capsys):
    test = C.Manifest.load(trained / "data" / "test.jsonl")
    by_level = {}
    for u in test:
        by_level.setdefault(u.recipe.snr_db, []).append(test.resolve(u))
    scores = {}
    for level in ("clean", -10.0):
        vals = []
        for wav in by_level[level]:
            code, out, _ = run(capsys, "score", "--wav", wav, "--checkpoint", trained / "run" / "final.ckpt")
            assert code == 0
            vals.append(float(out.strip()))
        scores[level] = np.mean(vals)
    assert abs(scores["clean"] - 8) < abs(scores[-10.0] - 8)


def test_score_writes_frame_csv(trained, tmp_path, capsys):
    test = C.Manifest.load(trained / "data" / "test.jsonl")
    wav = test.resolve(test.utterances[0])
    code, _, _ = run(capsys, "score", "--wav", wav, "--checkpoint", trained / "run" / "final.ckpt",
                     "--frames-csv", tmp_path / "f.csv")
    assert code == 0
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "frame_index,time_seconds,score,smoothed_score,anomalous_flag" and len(lines) > 2


def test_localize_prints_regions(trained, tmp_path, capsys):
    test = C.Manifest.load(trained / "data" / "test.jsonl")
    wav = test.resolve(test.utterances[0])
    code, out, _ = run(capsys, "localize", "--wav", wav, "--checkpoint", trained / "run" / "best.ckpt",
                       "--threshold", 100, "--out", tmp_path / "l.csv")
    assert code == 0 and "1 region(s)" in out


def test_eval_on_perfect_predictor(trained, monkeypatch, capsys):
    import frameqa.cli as cli
    monkeypatch.setattr(cli, "predict", lambda params, examples: np.array([e.target for e in examples]))
    code, out, _ = run(capsys, "eval", "--manifest", trained / "data" / "test.jsonl", "--checkpoint",
                       trained / "run" / "final.ckpt", "--threshold", 7.1)
    assert code == 0
    values = [float(v) for v in out.splitlines()[1].split()]
    assert values == [1.0, 1.0, 1.0, 1.0, 1.0]


def test_eval_command_table(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--manifest", trained / "data" / "test.jsonl", "--checkpoint",
                       trained / "run" / "final.ckpt", "--out", tmp_path / "r.jsonl")
    assert code == 0
    head = out.splitlines()[0].split()
    assert head == ["LCC", "SRCC", "Precision", "Recall", "F1"]
    summary = json.loads((tmp_path / "r.jsonl").read_text().splitlines()[0])
    assert summary["kind"] == "summary" and summary["run_config"]["command"] == "eval"


def test_eval_is_byte_reproducible(trained, tmp_path, capsys):
    args = ["eval", "--manifest", trained / "data" / "test.jsonl", "--checkpoint", trained / "run" / "final.ckpt",
            "--fit-threshold", trained / "data" / "train.jsonl"]
    run(capsys, *args, "--out", tmp_path / "a.jsonl")
    run(capsys, *args, "--out", tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_errors_are_single_line(tmp_path, capsys):
    code, out, err = run(capsys, "score", "--wav", tmp_path / "missing.wav", "--checkpoint", tmp_path / "x.ckpt")
    assert code != 0 and out == ""
    assert err.count("\n") == 1 and err.startswith("frameqa: error:")


def test_corrupt_checkpoint_reported(trained, tmp_path, capsys):
    raw = (trained / "run" / "final.ckpt").read_bytes()
    (tmp_path / "c.ckpt").write_bytes(b"XXXX" + raw[4:])
    test = C.Manifest.load(trained / "data" / "test.jsonl")
    code, _, err = run(capsys, "score", "--wav", test.resolve(test.utterances[0]), "--checkpoint",
                       tmp_path / "c.ckpt")
    assert code == 1 and "bad magic" in err and err.count("\n") == 1


def test_unknown_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["score", "--bogus"])
    assert exc.value.code != 0


def test_spectrogram_command(tmp_path, capsys):
    from frameqa.signal import write_wav
    write_wav(tmp_path / "a.wav", C.synth_speech(np.random.default_rng(0), 0.2))
    code, out, _ = run(capsys, "spectrogram", "--wav", tmp_path / "a.wav", "--out", tmp_path / "s.csv")
    assert code == 0 and out.startswith("257x")
