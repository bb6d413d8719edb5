"""Project configuration: YAML file, named profiles and environment overrides.

Resolution order, later wins: profile defaults, the YAML file, environment
variables, command-line flags.  Environment variables use the prefix
``CTFDEREV_`` and a double underscore between nesting levels, e.g.
``CTFDEREV_TRAIN__EPOCHS=5`` or ``CTFDEREV_PATHS__WORK=/tmp/run``; values are
parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dsp import StftConfig
from .errors import ConfigError
from .evaluate import METHOD_ORDER
from .nn.unet import PAPER_CHANNELS
from .train.loop import TrainConfig

ENV_PREFIX = "CTFDEREV_"

_DESK = {
    "profile": "desk",
    "seed": 0,
    "paths": {"corpus": "corpus", "work": "work"},
    "corpus": {"synthetic": True, "counts": {"train": 40, "validation": 8, "test": 8}, "seconds": 3.0},
    "stft": {"window_len": 400, "hop": 160, "fft_len": 512, "window_kind": "hamming"},
    "rooms": [{"name": "room1", "dimensions": [8.0, 6.0, 4.0]}],
    "rt60s": [0.5, 1.0],
    "positions": {"train": 4, "validation": 1, "test": 2},
    "scenes": {"enabled": True, "switch_period": 1.0},
    "dataset": {"rirs_per_utterance": 1},
    "train": {"epochs": 20, "batch_size": 1, "context": 5, "taps": 9, "early_len": 32,
              "base_lr": 1e-3, "lr_decay": 0.9, "lr_every": 10, "checkpoint_every": 1,
              "channels": list(PAPER_CHANNELS), "output_init": "identity", "output_gain": 0.1},
    "methods": list(METHOD_ORDER),
}

_PAPER = copy.deepcopy(_DESK)
_PAPER.update({
    "profile": "paper",
    "corpus": {"synthetic": False, "counts": {"train": 4620, "validation": 400, "test": 192},
               "seconds": 3.0},
    "rooms": [{"name": "room1", "dimensions": [8.0, 6.0, 4.0]},
              {"name": "room2", "dimensions": [6.0, 4.0, 3.5]}],
    "rt60s": [0.5, 0.75, 1.0],
    "positions": {"train": 9, "validation": 3, "test": 3},
})
_PAPER["train"] = {**_DESK["train"], "epochs": 200, "batch_size": 32}

PROFILES = {"desk": _DESK, "paper": _PAPER}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in ("counts", "positions"):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        node = tree
        for p in path[:-1]:
            node = node.setdefault(p, {})
        try:
            node[path[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {name}: {exc}") from None
    return tree


@dataclass(frozen=True)
class ProjectConfig:
    data: dict
    base_dir: Path = Path(".")

    def __post_init__(self):
        d = self.data
        try:
            self.stft
            self.train_config
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        if d["profile"] not in PROFILES:
            raise ConfigError(f"unknown profile {d['profile']!r}")
        if not d["rooms"] or not d["rt60s"]:
            raise ConfigError("at least one room and one RT60 are required")
        for room in d["rooms"]:
            if set(room) != {"name", "dimensions"} or len(room["dimensions"]) != 3:
                raise ConfigError(f"room entries need a name and three dimensions, got {room}")
        for m in d["methods"]:
            if m not in METHOD_ORDER:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHOD_ORDER)}")
        if any(int(v) < 0 for v in d["positions"].values()):
            raise ConfigError("position counts must be non-negative")

    @property
    def profile(self) -> str:
        return self.data["profile"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def path(self, key: str) -> Path:
        p = Path(os.path.expanduser(str(self.data["paths"][key])))
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def corpus_dir(self) -> Path:
        return self.path("corpus")

    @property
    def work_dir(self) -> Path:
        return self.path("work")

    @property
    def stft(self) -> StftConfig:
        return StftConfig(**self.data["stft"])

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.data["train"], "seed": self.seed})

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)

    def with_overrides(self, over: dict) -> "ProjectConfig":
        return ProjectConfig(_merge(self.data, over), self.base_dir)


def load_config(path: str | Path | None = None, profile: str | None = None,
                environ=None, seed: int | None = None) -> ProjectConfig:
    """Build the effective configuration; see the module docstring for precedence."""
    file_data: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(file_data, dict):
            raise ConfigError(f"{path} must hold a mapping at the top level")
        base_dir = path.resolve().parent
    env = env_overrides(environ)
    name = profile or env.get("profile") or file_data.get("profile") or "desk"
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose one of {', '.join(PROFILES)}")
    data = _merge(PROFILES[name], file_data)
    data = _merge(data, env)
    data["profile"] = name
    if seed is not None:
        data["seed"] = int(seed)
    return ProjectConfig(data, base_dir)
