"""End-to-end command-line behaviour: exit codes, determinism, pipelines."""

import json
import os

import numpy as np
import pytest

from helpers import howling_profile, synth_speech
from howlsim.acoustic import load_rir_set
from howlsim.cli import run
from howlsim.spectral import feature_dim, load_matrix
from howlsim.wavio import SAMPLE_RATE, read_wav, write_wav


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("speech")
    rng = np.random.default_rng(777)
    for i in range(4):
        n = int((2.5 + 0.4 * i) * SAMPLE_RATE)
        write_wav(root / f"utt{i}.wav", synth_speech(rng, n))
    return str(root)


@pytest.fixture(scope="module")
def rir_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("rirs") / "room.rir"
    assert run(["gen-rir", "--rt60", "0.2", "--seed", "3", "--out", str(path)]) == 0
    return str(path)


# ---------------------------------------------------------------- usage errors


def test_usage_errors_exit_2(capsys):
    assert run([]) == 2
    assert run(["no-such-command"]) == 2
    assert run(["gen-rir", "--rt60", "0.2", "--out", "x.rir"]) == 2  # seed required
    assert run(["simulate", "--rirs", "r.rir", "--out", "y.wav"]) == 2  # seed required
    assert run(["gen-rir", "--rt60", "0.2", "--seed", "1", "--out", "x.rir", "--bogus"]) == 2
    capsys.readouterr()


def test_io_errors_exit_1(tmp_path, capsys):
    assert run(["gen-rir", "--rt60", "0", "--seed", "1", "--out", str(tmp_path / "no" / "dir" / "x.rir")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("howlsim gen-rir: error:")
    assert run(["evaluate", "--manifest", str(tmp_path / "absent.jsonl")]) == 1
    assert "howlsim evaluate: error:" in capsys.readouterr().err
    assert run(["simulate", "--rirs", str(tmp_path / "absent.rir"), "--seed", "1", "--out", str(tmp_path / "y.wav")]) == 1
    capsys.readouterr()


# ---------------------------------------------------------------- gen-rir


def test_gen_rir_anechoic_and_deterministic(tmp_path):
    a, b = tmp_path / "a.rir", tmp_path / "b.rir"
    assert run(["gen-rir", "--rt60", "0", "--seed", "1", "--out", str(a)]) == 0
    assert run(["gen-rir", "--rt60", "0", "--seed", "1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rir_set = load_rir_set(str(a))
    assert rir_set.devices == 2
    assert rir_set.room.rt60 == 0.0
    h11 = rir_set.path(1, 1)
    # anechoic: a single direct tap dominates
    assert np.sum(np.abs(h11) > 1e-6) <= 2


def test_gen_rir_other_seed_differs(tmp_path):
    a, b = tmp_path / "a.rir", tmp_path / "b.rir"
    assert run(["gen-rir", "--rt60", "0.2", "--seed", "1", "--out", str(a)]) == 0
    assert run(["gen-rir", "--rt60", "0.2", "--seed", "2", "--out", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()


# ---------------------------------------------------------------- simulate


def test_simulate_passthrough_howls_at_loop_gain_above_unity(tmp_path, rir_file):
    out = tmp_path / "howl.wav"
    mic = tmp_path / "mic.wav"
    code = run([
        "simulate", "--rirs", rir_file, "--seed", "5", "--out", str(out),
        "--suppressor", "passthrough", "--loop-gain", "1.2", "--delta-t", "0.1",
        "--seconds", "12", "--save-mic", str(mic),
    ])
    assert code == 0
    y = read_wav(str(out))
    assert len(y) == 12 * SAMPLE_RATE
    railed, grew = howling_profile(y)
    assert railed and grew
    assert os.path.isfile(mic)


def test_simulate_low_gain_stays_bounded(tmp_path, rir_file):
    out = tmp_path / "calm.wav"
    code = run([
        "simulate", "--rirs", rir_file, "--seed", "5", "--out", str(out),
        "--suppressor", "passthrough", "--loop-gain", "0.4", "--delta-t", "0.1",
        "--seconds", "6",
    ])
    assert code == 0
    railed, _ = howling_profile(read_wav(str(out)))
    assert not railed


def test_simulate_is_byte_deterministic(tmp_path, rir_file):
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    argv = ["simulate", "--rirs", rir_file, "--seed", "9", "--seconds", "3", "--suppressor", "nlms"]
    assert run(argv + ["--out", str(a)]) == 0
    assert run(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------- corpus pipeline


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, corpus):
    root = tmp_path_factory.mktemp("cli_corpus")
    spec = {
        "speech_source": corpus,
        "seed": 21,
        "counts": [0, 0, 3],
        "rir_sets": 2,
        "rt60_range": [0.15, 0.3],
        "scene_seconds": 2.0,
    }
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = root / "corpus"
    assert run(["make-dataset", "--spec", str(spec_path), "--out", str(out)]) == 0
    return out


def test_make_dataset_writes_manifest(corpus_dir, capsys):
    assert (corpus_dir / "manifest.jsonl").is_file()
    assert len((corpus_dir / "manifest.jsonl").read_text().splitlines()) == 3
    capsys.readouterr()


def test_baseline_run_oracle_then_evaluate_hits_cap(corpus_dir, tmp_path, capsys):
    enhanced = tmp_path / "enh"
    assert run([
        "baseline-run", "--manifest", str(corpus_dir / "manifest.jsonl"),
        "--suppressor", "oracle", "--out", str(enhanced), "--threads", "2",
    ]) == 0
    report = tmp_path / "report.txt"
    assert run([
        "evaluate", "--manifest", str(corpus_dir / "manifest.jsonl"),
        "--enhanced", str(enhanced), "--report", str(report),
    ]) == 0
    table = capsys.readouterr().out
    assert "SFR (dB)" in table
    assert report.is_file()
    twin = json.loads((tmp_path / "report.txt.json").read_text())
    scored = [b for b in twin["buckets"] if b["count"]]
    assert scored and all(b["processed"] == twin["cap_db"] for b in scored)


def test_baseline_run_rejects_empty_selection(corpus_dir, capsys):
    assert run([
        "baseline-run", "--manifest", str(corpus_dir / "manifest.jsonl"),
        "--suppressor", "nlms", "--out", "unused", "--scene-id", "test-99999",
    ]) == 1
    assert "no scenes selected" in capsys.readouterr().err


def test_features_dump_layout_and_shape(corpus_dir, tmp_path, capsys):
    out = tmp_path / "feats"
    assert run([
        "features-dump", "--manifest", str(corpus_dir / "manifest.jsonl"), "--out", str(out),
    ]) == 0
    files = sorted(os.listdir(out))
    assert files == ["test-00000.mat", "test-00001.mat", "test-00002.mat"]
    matrix, meta = load_matrix(str(out / files[0]))
    assert matrix.shape[1] == feature_dim(2)
    assert "channels=y1,x1" in meta["geometry"]
    capsys.readouterr()
