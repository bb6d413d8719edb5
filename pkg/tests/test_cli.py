import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from ctfderev.cli import main, work_lock
from ctfderev.dsp import Waveform, read_wav, write_wav
from ctfderev.errors import DataError
from ctfderev.train.corpus import synth_utterance

TINY = {
    "seed": 5,
    "corpus": {"counts": {"train": 3, "validation": 2, "test": 1}, "seconds": 1.0},
    "rooms": [{"name": "box", "dimensions": [4.0, 3.0, 2.5]}],
    "rt60s": [0.3],
    "positions": {"train": 1, "validation": 1, "test": 2},
    "train": {"epochs": 1, "batch_size": 2, "channels": [4, 4, 4], "taps": 3, "context": 3},
}


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    root = tmp_path_factory.mktemp("proj")
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


@pytest.fixture(scope="module")
def finished(project):
    assert main(["run", "--config", str(project)]) == 0
    return project.parent


def test_run_produces_every_artifact(finished):
    work = finished / "work"
    for rel in ["rirs/box_t0300_p00.wav", "dataset/manifest.json", "train/ifilt/best.ckpt",
                "train/dsm/log.csv", "train/dirm/last.ckpt", "eval/scores.jsonl", "eval/table.csv",
                "report/tables.txt", "report/metrics.png", "report/training.png",
                "report/spectrograms.png"]:
        assert (work / rel).is_file(), rel
    assert not (work / ".lock").exists()
    index = json.loads((work / "index.json").read_text())
    assert {"simulate-rirs", "build-dataset", "train-ifilt", "evaluate", "report"} <= set(index)
    assert len(index["simulate-rirs"]) == 2 * 4


def test_table_layout(finished):
    text = (finished / "work" / "eval" / "table.txt").read_text()
    assert "Average results for the static simulated RIRs" in text
    assert "Average results for the time-varying simulated RIRs" in text
    for label in ("Rev.", "DSM", "dIRM", "iFilt", "SRMR"):
        assert label in text
    rows = (finished / "work" / "eval" / "table.csv").read_text().splitlines()
    assert rows[0] == "scenario,room,rt60,metric,Rev.,DSM,dIRM,iFilt"
    # rooms x RT60s x metrics cells per scenario, each with one value per method
    body = [r.split(",") for r in rows[1:] if r.split(",")[1] != "Avg."]
    assert len(body) == 2 * 1 * 1 * 3
    scores = [json.loads(line) for line in (finished / "work" / "eval" / "scores.jsonl").read_text().splitlines()]
    assert len(scores) == (2 + 1) * 4


def test_commands_are_idempotent(finished, capsys):
    before = json.loads((finished / "work" / "index.json").read_text())
    cfg = str(finished / "config.yaml")
    assert main(["simulate-rirs", "--config", cfg]) == 0
    assert main(["build-dataset", "--config", cfg]) == 0
    assert main(["evaluate", "--config", cfg]) == 0
    after = json.loads((finished / "work" / "index.json").read_text())
    for command in ("simulate-rirs", "build-dataset", "evaluate"):
        assert after[command] == before[command]


def test_dereverb(finished, tmp_path, capsys):
    src = tmp_path / "in.wav"
    write_wav(src, synth_utterance(1, duration=1.2))
    out = tmp_path / "out.wav"
    assert main(["dereverb", "--identity", "-i", str(src), "-o", str(out)]) == 0
    x, y = read_wav(src).samples, read_wav(out).samples
    assert y.size == x.size
    np.testing.assert_allclose(y[400:-400], x[400:-400], atol=1e-6)
    ckpt = finished / "work" / "train" / "dsm" / "best.ckpt"
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    assert main(["dereverb", "--checkpoint", str(ckpt), "-i", str(src), "-o", str(a)]) == 0
    assert main(["dereverb", "--checkpoint", str(ckpt), "-i", str(src), "-o", str(b), "--pcm16"]) == 0
    assert abs(len(read_wav(a)) - x.size) <= 400
    assert main(["dereverb", "--checkpoint", str(ckpt), "-i", str(src), "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["dereverb", "--checkpoint", str(ckpt), "--head", "ifilt", "-i", str(src), "-o", str(b)]) == 2


def test_exit_codes(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "not found" in capsys.readouterr().err
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({**TINY, "corpus": {"synthetic": False}}))
    assert main(["build-dataset", "--config", str(cfg)]) == 3
    assert "corpus" in capsys.readouterr().err
    src = tmp_path / "x.wav"
    write_wav(src, Waveform(np.zeros(1000), 8000))
    assert main(["dereverb", "--identity", "-i", str(src), "-o", str(tmp_path / "y.wav")]) == 3
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    write_wav(src, Waveform(np.zeros(4000)))
    assert main(["dereverb", "--checkpoint", str(tmp_path / "bad.ckpt"), "-i", str(src),
                 "-o", str(tmp_path / "y.wav")]) == 3
    with pytest.raises(SystemExit):
        main(["train", "--head", "wpe"])


def test_divergence_exit_code(tmp_path, monkeypatch, capsys):
    from ctfderev import cli
    from ctfderev.errors import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("loss went to nan")

    monkeypatch.setattr(cli, "cmd_train", boom)
    monkeypatch.setitem(cli.COMMANDS, "train", (boom, ""))
    monkeypatch.chdir(tmp_path)
    assert main(["train"]) == 4


def test_lock(tmp_path):
    with work_lock(tmp_path):
        assert (tmp_path / ".lock").read_text() == str(os.getpid())
        with pytest.raises(DataError, match="in use"):
            with work_lock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()
    # a lock left behind by a dead process is taken over
    dead = subprocess.run([sys.executable, "-c", "import os; print(os.getpid())"],
                          capture_output=True, text=True).stdout.strip()
    (tmp_path / ".lock").write_text(dead)
    with work_lock(tmp_path):
        pass


def test_init_config_and_global_flags(tmp_path, capsys):
    out = tmp_path / "c.yaml"
    assert main(["--seed", "9", "init-config", str(out)]) == 0
    data = yaml.safe_load(out.read_text())
    assert data["seed"] == 9 and data["profile"] == "desk"
    assert "# paper-scale values" in out.read_text()
    assert main(["init-config", str(out)]) == 2
    assert main(["init-config", str(out), "--force", "--profile", "paper", "--seed", "4"]) == 0
    data = yaml.safe_load(out.read_text())
    assert data["profile"] == "paper" and data["seed"] == 4


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ctfderev.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("simulate-rirs", "build-dataset", "train", "dereverb", "evaluate", "report"):
        assert name in res.stdout
