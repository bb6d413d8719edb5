import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_ROOM = [{"name": "box", "dimensions": [4.0, 3.0, 2.5]}]
TINY_COUNTS = {"train": 4, "validation": 2, "test": 2}
TINY_POSITIONS = {"train": 2, "validation": 1, "test": 2}


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A few 1 s utterances reverberated by short simulated RIRs, built once per session."""
    from ctfderev.train.corpus import write_corpus
    from ctfderev.train.dataset import (build_dataset, list_corpus, load_records, make_manifest,
                                        plan_rirs, save_rir, simulate_record)

    root = tmp_path_factory.mktemp("tiny")
    write_corpus(root / "corpus", TINY_COUNTS, seed=3, duration=1.0)
    for rec in plan_rirs(TINY_ROOM, [0.3], TINY_POSITIONS, seed=3):
        h, done = simulate_record(rec)
        save_rir(root / "rirs", h, done)
    manifest = make_manifest(list_corpus(root / "corpus"), load_records(root / "rirs"), seed=3)
    digests = build_dataset(manifest, root / "rirs", root / "data")
    return root, manifest, digests


# acceptance verdicts, printed as one line per criterion at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
