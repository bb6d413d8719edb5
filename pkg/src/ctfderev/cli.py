"""Command-line entry point: ``ctfderev <command> [options]``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from . import report as rpt
from .config import PROFILES, ProjectConfig, load_config
from .dsp import read_wav, stft, write_wav
from .errors import ConfigError, CtfDerevError, DataError
from .evaluate import METHOD_ORDER, REV, evaluate_test_split, read_scores, write_scores
from .heads import HEADS, check_head, enhance
from .metrics import aggregate
from .nn.checkpoint import load_checkpoint
from .train import corpus as synth
from .train.dataset import (build_dataset, list_corpus, load_pair, load_records, load_training_split,
                            make_manifest, plan_rirs, save_rir, simulate_record, DatasetManifest)
from .train.loop import BEST, LOG, train

log = logging.getLogger("ctfderev")

LOCK_NAME = ".lock"
INDEX_NAME = "index.json"
_PAPER_KEYS = ("corpus", "rooms", "rt60s", "positions", "train")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _layout(cfg: ProjectConfig) -> dict[str, Path]:
    w = cfg.work_dir
    return {"rirs": w / "rirs", "dataset": w / "dataset", "train": w / "train",
            "eval": w / "eval", "report": w / "report"}


@contextmanager
def work_lock(work_dir: Path):
    """Exclusive lock file; a lock left by a dead process is taken over."""
    work_dir.mkdir(parents=True, exist_ok=True)
    path = work_dir / LOCK_NAME
    for _ in range(2):
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            try:
                pid = int(path.read_text().strip() or 0)
            except (OSError, ValueError):
                pid = 0
            if pid and _alive(pid):
                raise DataError(f"work directory {work_dir} is in use by process {pid} ({path})") from None
            path.unlink(missing_ok=True)
    else:
        raise DataError(f"could not acquire {path}")
    with os.fdopen(fd, "w") as f:
        f.write(str(os.getpid()))
    try:
        yield
    finally:
        path.unlink(missing_ok=True)


def _alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def record_outputs(cfg: ProjectConfig, command: str, paths: list[Path]) -> None:
    """Update the work-dir index with the digests of a command's outputs."""
    index_path = cfg.work_dir / INDEX_NAME
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    index[command] = {str(p.relative_to(cfg.work_dir)): _sha256(p) for p in sorted(paths)}
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True))


def cmd_init_config(cfg: ProjectConfig, args) -> int:
    out = Path(args.path)
    if out.exists() and not args.force:
        raise ConfigError(f"{out} exists; pass --force to overwrite")
    text = cfg.to_yaml()
    if cfg.profile == "desk":
        # keep the full-scale numbers next to the desk defaults, commented out
        paper = yaml.safe_dump({k: PROFILES["paper"][k] for k in _PAPER_KEYS}, sort_keys=False)
        text += "\n# paper-scale values for reference; apply them with --profile paper:\n"
        text += "".join(f"# {line}\n" for line in paper.splitlines())
    out.write_text(text)
    print(f"wrote {out}")
    return 0


def cmd_synth_corpus(cfg: ProjectConfig, args) -> int:
    c = cfg.data["corpus"]
    paths = synth.write_corpus(cfg.corpus_dir, c["counts"], seed=cfg.seed, duration=float(c["seconds"]))
    print(f"wrote {len(paths)} synthetic utterances under {cfg.corpus_dir}")
    return 0


def cmd_simulate_rirs(cfg: ProjectConfig, args) -> int:
    out = _layout(cfg)["rirs"]
    plan = plan_rirs(cfg.data["rooms"], cfg.data["rt60s"], cfg.data["positions"], cfg.seed)
    written = []
    for rec in plan:
        h, done = simulate_record(rec)
        written.append(save_rir(out, h, done))
        written.append(out / f"{rec.id}.json")
        print(f"{rec.id}: {rec.split}, {len(h)} taps, onset {h.onset}")
    record_outputs(cfg, "simulate-rirs", written)
    print(f"wrote {len(plan)} RIRs to {out}")
    return 0


def _ensure_corpus(cfg: ProjectConfig) -> None:
    if cfg.corpus_dir.is_dir():
        return
    if cfg.data["corpus"]["synthetic"]:
        cmd_synth_corpus(cfg, None)
    else:
        raise DataError(f"corpus directory not found: {cfg.corpus_dir} (set paths.corpus)")


def cmd_build_dataset(cfg: ProjectConfig, args) -> int:
    lay = _layout(cfg)
    _ensure_corpus(cfg)
    utts = list_corpus(cfg.corpus_dir, cfg.data["corpus"]["counts"], cfg.seed)
    manifest = make_manifest(utts, load_records(lay["rirs"]), seed=cfg.seed,
                             early_len=cfg.train_config.early_len,
                             rirs_per_utterance=int(cfg.data["dataset"]["rirs_per_utterance"]),
                             scenes=bool(cfg.data["scenes"]["enabled"]),
                             switch_period=float(cfg.data["scenes"]["switch_period"]),
                             config=cfg.stft)
    digests = build_dataset(manifest, lay["rirs"], lay["dataset"])
    record_outputs(cfg, "build-dataset", [lay["dataset"] / "manifest.json", lay["dataset"] / "checksums.json"])
    counts = {s: len(manifest.split(s)) for s in ("train", "validation", "test")}
    print(f"built {len(digests)} examples {counts} in {lay['dataset']}")
    return 0


def _manifest(cfg: ProjectConfig) -> DatasetManifest:
    return DatasetManifest.load(_layout(cfg)["dataset"] / "manifest.json")


def cmd_train(cfg: ProjectConfig, args) -> int:
    lay = _layout(cfg)
    heads = [check_head(args.head)] if args.head else [m for m in cfg.data["methods"] if m in HEADS]
    manifest = _manifest(cfg)
    tc = cfg.train_config
    for head in heads:
        tr = load_training_split(manifest, lay["dataset"], "train", head)
        va = load_training_split(manifest, lay["dataset"], "validation", head)
        out = lay["train"] / head
        res = train(tc, head, tr, va, out, resume=args.resume, progress=print)
        outputs = [out / LOG] + [p for p in (out / BEST, out / "last.ckpt") if p.exists()]
        record_outputs(cfg, f"train-{head}", outputs)
        print(f"[{head}] best validation loss {res.best_val:.6g} at epoch {res.best_epoch + 1}")
    return 0


def cmd_dereverb(cfg: ProjectConfig, args) -> int:
    y = read_wav(args.input)
    if args.identity:
        model, head = None, "ifilt"
    else:
        if not args.checkpoint:
            raise ConfigError("dereverb needs --checkpoint (or --identity)")
        ckpt = load_checkpoint(args.checkpoint)
        head = ckpt.head
        if args.head and check_head(args.head) != head:
            raise ConfigError(f"checkpoint holds a {head} model, not {args.head}")
        model = ckpt.build_model()
    out = enhance(model, head, y, cfg.stft, identity=args.identity)
    write_wav(args.output, out, pcm16=args.pcm16)
    print(f"wrote {args.output} ({out.duration:.2f} s, {head})")
    return 0


def _checkpoints(cfg: ProjectConfig, pairs: list[str] | None) -> dict[str, Path]:
    ckpts = {h: _layout(cfg)["train"] / h / BEST for h in HEADS}
    for item in pairs or []:
        method, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--checkpoint expects METHOD=PATH, got {item!r}")
        ckpts[check_head(method)] = Path(path)
    return ckpts


def cmd_evaluate(cfg: ProjectConfig, args) -> int:
    lay = _layout(cfg)
    methods = [m for m in METHOD_ORDER if m in cfg.data["methods"]]
    if REV not in methods:
        methods.insert(0, REV)
    scores = evaluate_test_split(_manifest(cfg), lay["dataset"], _checkpoints(cfg, args.checkpoint), methods)
    lay["eval"].mkdir(parents=True, exist_ok=True)
    write_scores(lay["eval"] / "scores.jsonl", scores)
    summary = aggregate(scores)
    rpt.write_table_csv(lay["eval"] / "table.csv", summary)
    text = rpt.format_table(summary)
    (lay["eval"] / "table.txt").write_text(text)
    record_outputs(cfg, "evaluate", [lay["eval"] / n for n in ("scores.jsonl", "table.csv", "table.txt")])
    print(text)
    return 0


def cmd_report(cfg: ProjectConfig, args) -> int:
    lay = _layout(cfg)
    scores_path = lay["eval"] / "scores.jsonl"
    if not scores_path.exists():
        raise DataError(f"{scores_path} not found (run evaluate first)")
    summary = aggregate(read_scores(scores_path))
    out = lay["report"]
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "tables.csv", out / "tables.txt", out / "metrics.png"]
    rpt.write_table_csv(written[0], summary)
    written[1].write_text(rpt.format_table(summary))
    rpt.plot_metrics(written[2], summary)
    logs = {h: lay["train"] / h / LOG for h in HEADS if (lay["train"] / h / LOG).exists()}
    if logs:
        rpt.plot_training(out / "training.png", logs)
        written.append(out / "training.png")
    ifilt_ckpt = lay["train"] / "ifilt" / BEST
    manifest = _manifest(cfg)
    tests = manifest.split("test")
    if tests:
        y, ye = load_pair(lay["dataset"], tests[0])
        panels = [("reverberant |Y|", stft(y, manifest.stft).magnitude),
                  ("early target |Y^E|", stft(ye, manifest.stft).magnitude)]
        if ifilt_ckpt.exists():
            est = enhance(load_checkpoint(ifilt_ckpt).build_model(), "ifilt", y, manifest.stft)
            panels.append(("iFilt estimate", stft(est, manifest.stft).magnitude))
        rpt.plot_spectrograms(out / "spectrograms.png", panels, manifest.stft.hop / y.sample_rate,
                              y.sample_rate)
        written.append(out / "spectrograms.png")
    record_outputs(cfg, "report", written)
    print(written[1].read_text())
    print("figures: " + ", ".join(str(p) for p in written if p.suffix == ".png"))
    return 0


def cmd_run(cfg: ProjectConfig, args) -> int:
    """Every stage in order: corpus, RIRs, dataset, training per head, evaluation, report."""
    args.resume = getattr(args, "resume", False)
    args.head = None
    args.checkpoint = None
    _ensure_corpus(cfg)
    for step in (cmd_simulate_rirs, cmd_build_dataset, cmd_train, cmd_evaluate, cmd_report):
        step(cfg, args)
    return 0


COMMANDS = {
    "init-config": (cmd_init_config, "write the effective configuration as YAML"),
    "synth-corpus": (cmd_synth_corpus, "write seeded speech-like utterances into paths.corpus"),
    "simulate-rirs": (cmd_simulate_rirs, "simulate the RIR grid (rooms x RT60s x positions)"),
    "build-dataset": (cmd_build_dataset, "pair utterances with RIRs and store y and y^E"),
    "train": (cmd_train, "train one head (or every configured head)"),
    "dereverb": (cmd_dereverb, "enhance one WAV file with a trained checkpoint"),
    "evaluate": (cmd_evaluate, "score every method on the test split"),
    "report": (cmd_report, "write result tables and figures"),
    "run": (cmd_run, "run every stage end to end"),
}
_UNLOCKED = {"init-config", "dereverb"}


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not reset values given before the subcommand
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML project config", **kw)
    common.add_argument("--profile", choices=sorted(PROFILES), help="base profile (default: desk)", **kw)
    common.add_argument("--seed", type=int, help="override the global seed", **kw)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctfderev", parents=[_common(False)],
        description="Speech dereverberation with per-frame CTF inverse filters from an online U-net.",
        epilog="Exit codes: 0 ok, 1 unexpected error, 2 config error, 3 data error, 4 divergence. "
               "Config values can be overridden with CTFDEREV_<SECTION>__<KEY> environment variables.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[_common(True)], description=help_text)
        if name == "init-config":
            p.add_argument("path", help="output YAML file")
            p.add_argument("--force", action="store_true")
        if name in ("train", "dereverb"):
            p.add_argument("--head", choices=HEADS, help="estimation head")
        if name in ("train", "run"):
            p.add_argument("--resume", action="store_true", help="continue from last.ckpt")
        if name == "dereverb":
            p.add_argument("--checkpoint", metavar="PATH")
            p.add_argument("--input", "-i", required=True, metavar="WAV")
            p.add_argument("--output", "-o", required=True, metavar="WAV")
            p.add_argument("--identity", action="store_true",
                           help="apply the identity filter instead of a network (pipeline check)")
            p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float")
        if name == "evaluate":
            p.add_argument("--checkpoint", action="append", metavar="METHOD=PATH",
                           help="checkpoint per method (default: work/train/<method>/best.ckpt)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        cfg = load_config(args.config, args.profile, seed=args.seed)
        func = COMMANDS[args.command][0]
        if args.command in _UNLOCKED:
            return func(cfg, args)
        with work_lock(cfg.work_dir):
            return func(cfg, args)
    except CtfDerevError as exc:
        print(f"ctfderev: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("ctfderev: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
