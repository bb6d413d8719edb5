"""Run every method over the test split and score it against the early-reverberant reference."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .errors import ConfigError
from .heads import HEADS, enhance
from .metrics import UtteranceScore, estoi, si_sdr
from .nn.checkpoint import load_checkpoint
from .train.dataset import DatasetManifest, load_pair

log = logging.getLogger(__name__)

REV = "rev"
METHOD_LABELS = {"rev": "Rev.", "dsm": "DSM", "dirm": "dIRM", "ifilt": "iFilt"}
METHOD_ORDER = ("rev", "dsm", "dirm", "ifilt")


def evaluate_test_split(manifest: DatasetManifest, data_dir: str | Path,
                        checkpoints: dict[str, str | Path], methods=METHOD_ORDER) -> list[UtteranceScore]:
    """Per-utterance scores for ``methods``; ``rev`` is the unprocessed mixture.

    The reference is always ``y^E``, the early-reverberant signal.
    """
    models = {}
    for method in methods:
        if method == REV:
            continue
        if method not in HEADS:
            raise ConfigError(f"unknown method {method!r}")
        if method not in checkpoints:
            raise ConfigError(f"no checkpoint given for method {method!r}")
        ckpt = load_checkpoint(checkpoints[method])
        if ckpt.head != method:
            raise ConfigError(f"checkpoint {checkpoints[method]} holds a {ckpt.head} model, not {method}")
        models[method] = ckpt.build_model().eval()
    scores = []
    for entry in manifest.split("test"):
        y, ref = load_pair(data_dir, entry)
        for method in methods:
            est = y if method == REV else enhance(models[method], method, y, manifest.stft)
            scores.append(UtteranceScore(entry.key, entry.room, entry.rt60, entry.scenario, method,
                                         si_sdr(est, ref), estoi(est, ref)))
        log.info("scored %s", entry.key)
    return scores


def write_scores(path: str | Path, scores: list[UtteranceScore]) -> None:
    with open(path, "w") as f:
        for s in scores:
            f.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def read_scores(path: str | Path) -> list[UtteranceScore]:
    with open(path) as f:
        return [UtteranceScore(**json.loads(line)) for line in f if line.strip()]
