import json

import numpy as np
import pytest

from ctfderev.dsp import read_wav
from ctfderev.errors import ConfigError, DataError
from ctfderev.room import convolve_static
from ctfderev.train.dataset import (DatasetManifest, _digest, build_dataset, list_corpus, load_pair,
                                    load_rir, load_training_split, make_manifest, plan_rirs)


def test_plan_counts_and_ids():
    rooms = [{"name": "room1", "dimensions": [8.0, 6.0, 4.0]}]
    assert len(plan_rirs(rooms, [0.5, 0.75, 1.0], {"train": 9, "validation": 3, "test": 3})) == 45
    small = plan_rirs(rooms, [0.5, 1.0], {"train": 2, "validation": 0, "test": 1})
    assert len(small) == 6
    assert small[0].id == "room1_t0500_p00" and small[-1].id == "room1_t1000_p02"
    assert [r.split for r in small[:3]] == ["train", "train", "test"]


def test_plan_is_seeded():
    rooms = [{"name": "r", "dimensions": [5.0, 4.0, 3.0]}]
    a = plan_rirs(rooms, [0.5], {"train": 3}, seed=1)
    assert a == plan_rirs(rooms, [0.5], {"train": 3}, seed=1)
    assert a != plan_rirs(rooms, [0.5], {"train": 3}, seed=2)


def test_manifest_structure(tiny_dataset):
    _, manifest, _ = tiny_dataset
    assert len(manifest.split("train")) == 4
    assert len(manifest.split("validation")) == 2
    # every test utterance meets both test RIRs and the one scene
    tests = manifest.split("test")
    assert len(tests) == 2 * (2 + 1)
    assert sum(e.scenario == "time-varying" for e in tests) == 2
    assert list(manifest.scenes) == ["scene:box_t0300"]
    assert len(manifest.scenes["scene:box_t0300"]) == 2
    manifest.check_disjoint()


def test_disjointness_violation_detected(tiny_dataset):
    _, manifest, _ = tiny_dataset
    d = manifest.to_dict()
    d["entries"][0]["rir"] = manifest.split("test")[0].rir
    with pytest.raises(DataError, match="appears in both"):
        DatasetManifest.from_dict(d).check_disjoint()


def test_manifest_round_trip(tiny_dataset, tmp_path):
    _, manifest, _ = tiny_dataset
    manifest.save(tmp_path / "m.json")
    back = DatasetManifest.load(tmp_path / "m.json")
    assert back.to_dict() == manifest.to_dict()
    with pytest.raises(DataError, match="build-dataset"):
        DatasetManifest.load(tmp_path / "missing.json")


def test_stored_pairs_match_fresh_convolution(tiny_dataset):
    root, manifest, digests = tiny_dataset
    entry = manifest.split("train")[0]
    y, ye = load_pair(root / "data", entry)
    s = read_wav(entry.utterance)
    h = load_rir(root / "rirs", entry.rir, entry.early_len)
    fy, fye, _ = convolve_static(s, h)
    np.testing.assert_allclose(y.samples, fy.samples, atol=1e-6)
    np.testing.assert_allclose(ye.samples, fye.samples, atol=1e-6)
    assert h.relative_early_len == 32
    stored = json.loads((root / "data" / "checksums.json").read_text())
    assert stored == digests
    assert digests[entry.key] == _digest(y.samples, ye.samples)


def test_rebuild_gives_identical_digests(tiny_dataset, tmp_path):
    root, manifest, digests = tiny_dataset
    subset = DatasetManifest(manifest.entries[:2] + manifest.split("test")[-1:], manifest.seed,
                             manifest.stft, manifest.scenes, manifest.switch_period)
    again = build_dataset(subset, root / "rirs", tmp_path / "again")
    assert all(again[k] == digests[k] for k in again)


def test_training_loader_refuses_test_split(tiny_dataset):
    root, manifest, _ = tiny_dataset
    items = load_training_split(manifest, root / "data", "train", "ifilt")
    assert len(items) == 4 and items[0].lps.shape[1] == 257
    with pytest.raises(DataError, match="test"):
        load_training_split(manifest, root / "data", "test", "ifilt")


def test_list_corpus_unsplit(tmp_path):
    from ctfderev.train.corpus import write_corpus

    write_corpus(tmp_path / "c", {"train": 5}, duration=0.5)
    flat = tmp_path / "c" / "train"
    out = list_corpus(flat, {"train": 3, "validation": 1, "test": 1}, seed=0)
    assert [len(out[s]) for s in ("train", "validation", "test")] == [3, 1, 1]
    assert len(set(sum(out.values(), []))) == 5
    with pytest.raises(ConfigError):
        list_corpus(flat)
    with pytest.raises(DataError, match="6 needed"):
        list_corpus(flat, {"train": 6})
    with pytest.raises(DataError, match="not found"):
        list_corpus(tmp_path / "nowhere")


def test_manifest_needs_split_rirs(tiny_dataset):
    _, manifest, _ = tiny_dataset
    with pytest.raises(ConfigError, match="validation"):
        make_manifest({"validation": ["a.wav"]}, [], seed=0)
