"""RIR store, dataset manifest and the persisted example store."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import StftConfig, Waveform, read_wav, stft, write_wav
from ..errors import ConfigError, DataError
from ..heads import Prepared, prepare
from ..room import (RirFilter, RoomSpec, SceneScript, convolve_static, convolve_time_varying,
                    random_positions, simulate_rir)

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class RirRecord:
    id: str
    room: str
    dimensions: tuple
    rt60: float
    split: str
    source_pos: tuple
    mic_pos: tuple
    seed: int
    onset: int = 0
    num_taps: int = 0
    reflection: float | None = None

    def room_spec(self) -> RoomSpec:
        return RoomSpec(self.dimensions, self.rt60, self.source_pos, self.mic_pos, seed=self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "RirRecord":
        d = dict(d)
        for k in ("dimensions", "source_pos", "mic_pos"):
            d[k] = tuple(d[k])
        return cls(**d)


def plan_rirs(rooms: list[dict], rt60s: list[float], positions: dict[str, int],
              seed: int = 0) -> list[RirRecord]:
    """The seeded RIR grid: rooms x RT60s x positions, each position tagged with a split."""
    plan = []
    for r_idx, room in enumerate(rooms):
        dims = tuple(float(v) for v in room["dimensions"])
        for t_idx, rt60 in enumerate(rt60s):
            n = 0
            for split in SPLITS:
                for _ in range(int(positions.get(split, 0))):
                    rng = np.random.default_rng([seed, r_idx, t_idx, n])
                    src, mic = random_positions(dims, rng)
                    rid = f"{room['name']}_t{int(round(rt60 * 1000)):04d}_p{n:02d}"
                    plan.append(RirRecord(rid, room["name"], dims, float(rt60), split,
                                          tuple(map(float, src)), tuple(map(float, mic)),
                                          int(seed)))
                    n += 1
    return plan


def simulate_record(rec: RirRecord, sample_rate: int = 16000) -> tuple[RirFilter, RirRecord]:
    h = simulate_rir(rec.room_spec(), sample_rate=sample_rate)
    done = RirRecord(**{**asdict(rec), "onset": h.onset, "num_taps": len(h),
                        "reflection": float(h.meta.get("reflection", np.nan))})
    return h, done


def save_rir(directory: Path, h: RirFilter, rec: RirRecord) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{rec.id}.wav"
    write_wav(path, Waveform(h.taps, h.sample_rate))
    meta = {**asdict(rec), "sample_rate": h.sample_rate}
    (directory / f"{rec.id}.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def load_record(directory: Path, rid: str) -> RirRecord:
    path = Path(directory) / f"{rid}.json"
    if not path.is_file():
        raise DataError(f"RIR metadata not found: {path} (run simulate-rirs first)")
    meta = json.loads(path.read_text())
    meta.pop("sample_rate", None)
    return RirRecord.from_dict(meta)


def load_rir(directory: Path, rid: str, early_len: int, sample_rate: int = 16000) -> RirFilter:
    rec = load_record(directory, rid)
    taps = read_wav(Path(directory) / f"{rid}.wav", sample_rate).samples
    return RirFilter(taps, sample_rate, onset=rec.onset).with_early_len(early_len)


def load_records(directory: Path) -> list[RirRecord]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"RIR store not found: {directory} (run simulate-rirs first)")
    return [load_record(directory, p.stem) for p in sorted(directory.glob("*.json"))]


@dataclass(frozen=True)
class ManifestEntry:
    key: str
    utterance: str
    rir: str
    split: str
    early_len: int
    scenario: str
    room: str
    rt60: float


@dataclass
class DatasetManifest:
    entries: list
    seed: int = 0
    stft: StftConfig = field(default_factory=StftConfig)
    scenes: dict = field(default_factory=dict)
    switch_period: float = 1.0

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def rir_ids(self, entry: ManifestEntry) -> list[str]:
        return self.scenes[entry.rir] if entry.scenario == "time-varying" else [entry.rir]

    def check_disjoint(self) -> None:
        """Raise unless utterances and RIRs are each confined to one split."""
        owner = {}
        for e in self.entries:
            for item in [("utterance", e.utterance)] + [("rir", r) for r in self.rir_ids(e)]:
                prev = owner.setdefault(item, e.split)
                if prev != e.split:
                    raise DataError(f"{item[0]} {item[1]} appears in both {prev} and {e.split}")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stft": asdict(self.stft), "scenes": self.scenes,
                "switch_period": self.switch_period,
                "entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls([ManifestEntry(**e) for e in d["entries"]], d["seed"], StftConfig(**d["stft"]),
                   d.get("scenes", {}), d.get("switch_period", 1.0))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"dataset manifest not found: {path} (run build-dataset first)")
        return cls.from_dict(json.loads(path.read_text()))


def make_manifest(utterances: dict[str, list[str]], records: list[RirRecord], seed: int = 0,
                  early_len: int = 32, rirs_per_utterance: int = 1, scenes: bool = True,
                  switch_period: float = 1.0, config: StftConfig = StftConfig()) -> DatasetManifest:
    """Pair utterances with RIRs of the same split.

    Training and validation utterances each get ``rirs_per_utterance``
    distinct RIRs drawn from their split (pooled over rooms and RT60s).
    Test utterances are paired with every test RIR and, when ``scenes`` is
    set, with one time-varying scene per (room, RT60) that cycles through
    that cell's test RIRs.
    """
    rng = np.random.default_rng(seed)
    by_split = {s: [r for r in records if r.split == s] for s in SPLITS}
    entries: list[ManifestEntry] = []
    scene_map: dict[str, list[str]] = {}

    def add(split, utt, rid, scenario, room, rt60):
        entries.append(ManifestEntry(f"{split}-{len(entries):05d}", str(utt), rid, split,
                                     int(early_len), scenario, room, float(rt60)))

    for split in ("train", "validation"):
        pool = by_split[split]
        if utterances.get(split) and not pool:
            raise ConfigError(f"no RIRs tagged for the {split} split")
        k = min(rirs_per_utterance, len(pool))
        for utt in utterances.get(split, []):
            for i in rng.choice(len(pool), size=k, replace=False):
                rec = pool[int(i)]
                add(split, utt, rec.id, "static", rec.room, rec.rt60)
    tests = by_split["test"]
    cells: dict[tuple, list[RirRecord]] = {}
    for rec in tests:
        cells.setdefault((rec.room, rec.rt60), []).append(rec)
    if scenes:
        for (room, rt60), recs in sorted(cells.items()):
            scene_map[f"scene:{room}_t{int(round(rt60 * 1000)):04d}"] = [r.id for r in recs]
    for utt in utterances.get("test", []):
        for rec in tests:
            add("test", utt, rec.id, "static", rec.room, rec.rt60)
        for sid, ids in scene_map.items():
            first = next(r for r in tests if r.id == ids[0])
            add("test", utt, sid, "time-varying", first.room, first.rt60)
    manifest = DatasetManifest(entries, seed, config, scene_map, switch_period)
    manifest.check_disjoint()
    return manifest


def list_corpus(corpus: Path, counts: dict[str, int] | None = None, seed: int = 0) -> dict[str, list[str]]:
    """Utterances per split.

    A corpus with ``train/``, ``validation/`` and ``test/`` subdirectories is
    taken as already split; otherwise the WAV files are shuffled (seeded) and
    cut into ``counts``.
    """
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise DataError(f"corpus directory not found: {corpus}")
    if all((corpus / s).is_dir() for s in SPLITS):
        out = {s: sorted(str(p) for p in (corpus / s).glob("*.wav")) for s in SPLITS}
        if counts:
            out = {s: v[:counts.get(s, len(v))] for s, v in out.items()}
    else:
        files = sorted(str(p) for p in corpus.rglob("*.wav"))
        if counts is None:
            raise ConfigError("an unsplit corpus needs per-split utterance counts")
        need = sum(counts.get(s, 0) for s in SPLITS)
        if len(files) < need:
            raise DataError(f"corpus {corpus} has {len(files)} WAV files, {need} needed")
        order = np.random.default_rng(seed).permutation(len(files))
        out, start = {}, 0
        for s in SPLITS:
            out[s] = [files[i] for i in order[start:start + counts.get(s, 0)]]
            start += counts.get(s, 0)
    if not any(out.values()):
        raise DataError(f"no WAV files found under {corpus}")
    return out


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return h.hexdigest()


def synthesize_entry(manifest: DatasetManifest, entry: ManifestEntry, rir_dir: Path):
    """Reverberant mixture ``y`` and early target ``y^E`` for one entry."""
    s = read_wav(entry.utterance)
    rirs = [load_rir(rir_dir, rid, entry.early_len, s.sample_rate) for rid in manifest.rir_ids(entry)]
    if entry.scenario == "time-varying":
        y, ye, _ = convolve_time_varying(s, SceneScript(tuple(rirs), manifest.switch_period))
    else:
        y, ye, _ = convolve_static(s, rirs[0])
    return y, ye


def build_dataset(manifest: DatasetManifest, rir_dir: Path, out_dir: Path) -> dict[str, str]:
    """Persist ``y`` and ``y^E`` per entry as float WAV; returns per-entry SHA-256 digests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for entry in manifest.entries:
        y, ye = synthesize_entry(manifest, entry, Path(rir_dir))
        write_wav(out_dir / f"{entry.key}_y.wav", y)
        write_wav(out_dir / f"{entry.key}_ye.wav", ye)
        digests[entry.key] = _digest(y.samples, ye.samples)
    manifest.save(out_dir / "manifest.json")
    (out_dir / "checksums.json").write_text(json.dumps(digests, indent=1, sort_keys=True))
    return digests


def load_pair(data_dir: Path, entry: ManifestEntry) -> tuple[Waveform, Waveform]:
    data_dir = Path(data_dir)
    return read_wav(data_dir / f"{entry.key}_y.wav"), read_wav(data_dir / f"{entry.key}_ye.wav")


def load_training_split(manifest: DatasetManifest, data_dir: Path, split: str,
                        head: str) -> list[Prepared]:
    """Prepared examples for training or validation; the test split is refused."""
    if split not in ("train", "validation"):
        raise DataError(f"the training loop may not read the {split!r} split")
    items = []
    for entry in manifest.split(split):
        assert entry.split == split
        y, ye = load_pair(data_dir, entry)
        items.append(prepare(entry.key, stft(y, manifest.stft), stft(ye, manifest.stft), head))
    if not items:
        raise DataError(f"the {split} split is empty")
    return items
