import pytest
import yaml

from ctfderev.config import PROFILES, env_overrides, load_config
from ctfderev.errors import ConfigError


def test_desk_defaults():
    cfg = load_config(environ={})
    assert cfg.profile == "desk"
    assert cfg.train_config.epochs == 20 and cfg.train_config.early_len == 32
    assert cfg.data["rt60s"] == [0.5, 1.0]
    assert cfg.stft.num_bins == 257
    assert cfg.data["methods"] == ["rev", "dsm", "dirm", "ifilt"]


def test_paper_profile():
    cfg = load_config(profile="paper", environ={})
    assert cfg.train_config.epochs == 200 and cfg.train_config.batch_size == 32
    assert len(cfg.data["rooms"]) == 2 and cfg.data["rt60s"] == [0.5, 0.75, 1.0]
    assert cfg.data["corpus"]["counts"]["train"] == 4620


def test_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"seed": 3, "train": {"epochs": 7, "batch_size": 2}}))
    env = {"CTFDEREV_TRAIN__EPOCHS": "9", "OTHER": "x"}
    cfg = load_config(path, environ=env)
    assert cfg.train_config.epochs == 9
    assert cfg.train_config.batch_size == 2
    assert cfg.seed == 3 and cfg.train_config.seed == 3
    assert load_config(path, environ=env, seed=11).train_config.seed == 11
    assert cfg.work_dir == tmp_path / "work"


def test_round_trip_through_yaml(tmp_path):
    cfg = load_config(profile="paper", environ={})
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    assert load_config(path, environ={}).to_dict() == cfg.to_dict()


def test_env_parsing():
    tree = env_overrides({"CTFDEREV_PATHS__WORK": "/tmp/w", "CTFDEREV_RT60S": "[0.3, 0.6]"})
    assert tree == {"paths": {"work": "/tmp/w"}, "rt60s": [0.3, 0.6]}


@pytest.mark.parametrize("bad", [
    {"train": {"epoch": 3}},
    {"nonsense": 1},
    {"train": {"context": 4}},
    {"methods": ["wpe"]},
    {"rooms": [{"name": "r", "dimensions": [1, 2]}]},
    {"rt60s": []},
])
def test_rejects_bad_values(bad, tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(bad))
    with pytest.raises(ConfigError):
        load_config(path, environ={})


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.yaml", environ={})
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml", environ={})
    with pytest.raises(ConfigError):
        load_config(profile="huge", environ={})
    assert set(PROFILES) == {"desk", "paper"}
