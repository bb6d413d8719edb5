"""Mini-batch training of one head with per-epoch validation and checkpointing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError, DivergenceError
from ..heads import Batch, Prepared, check_head, collate, head_backward, head_channels, head_forward, mse_loss, network_bins
from ..nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..nn.optim import AdamState, adam_step, lr_schedule
from ..nn.unet import PAPER_CHANNELS, UNet, UNetSpec

log = logging.getLogger(__name__)

BEST = "best.ckpt"
LAST = "last.ckpt"
LOG = "log.csv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    context: int = 5
    taps: int = 9
    early_len: int = 32
    base_lr: float = 1e-3
    lr_decay: float = 0.9
    lr_every: int = 10
    seed: int = 0
    checkpoint_every: int = 1
    channels: tuple = PAPER_CHANNELS
    output_init: str = "identity"
    output_gain: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        for name in ("epochs", "batch_size", "context", "taps", "early_len", "lr_every", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.context % 2 == 0:
            raise ConfigError("train.context (frame context) must be odd")
        if self.output_init not in ("zero", "identity"):
            raise ConfigError("train.output_init must be 'zero' or 'identity'")
        if not (self.base_lr > 0 and 0 < self.lr_decay <= 1):
            raise ConfigError("learning rate must be positive and its decay in (0, 1]")

    def unet_spec(self, head: str) -> UNetSpec:
        return UNetSpec(self.channels, head_channels(head, self.taps), self.context)

    def output_bias(self, head: str) -> np.ndarray | None:
        """Initial output bias: ``delta(p)`` for the filter head under ``identity`` init."""
        if self.output_init != "identity" or check_head(head) != "ifilt":
            return None
        bias = np.zeros(self.taps)
        bias[0] = 1.0
        return bias

    def lr(self, epoch: int) -> float:
        return lr_schedule(epoch, self.base_lr, self.lr_decay, self.lr_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class TrainResult:
    head: str
    epochs_run: int
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    initial_loss: float = math.nan


def batch_loss(model: UNet, head: str, batch: Batch, backward: bool) -> float:
    k_net = network_bins(batch.mag.shape[2], model.spec.bin_multiple)
    out = model.forward(batch.features(k_net), batch.mask if model.training else None)
    est, cache = head_forward(head, out, batch)
    loss, grad = mse_loss(est, batch.target, batch.mask)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite {head} loss")
    if backward:
        model.backward(head_backward(head, cache, grad, k_net).astype(out.dtype))
    return loss


def evaluate_loss(model: UNet, head: str, items: list[Prepared], batch_size: int) -> float:
    """Cell-weighted mean loss in eval mode."""
    model.eval()
    total = weight = 0.0
    for i in range(0, len(items), batch_size):
        batch = collate(items[i:i + batch_size])
        cells = float(batch.mask.sum())
        total += batch_loss(model, head, batch, backward=False) * cells
        weight += cells
    return total / weight


def initial_loss(model: UNet, head: str, items: list[Prepared], batch_size: int) -> float:
    """Train-mode loss before any update; batch-norm running statistics are left untouched."""
    saved = {k: v.copy() for k, v in model.named_buffers().items()}
    model.train()
    total = weight = 0.0
    for i in range(0, len(items), batch_size):
        batch = collate(items[i:i + batch_size])
        cells = float(batch.mask.sum())
        total += batch_loss(model, head, batch, backward=False) * cells
        weight += cells
    model.load_state(model.named_params(), saved)
    return total / weight


def _append_log(path: Path, rows: list[tuple]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(["epoch", "split", "loss", "lr"])
        w.writerows(rows)


def train(config: TrainConfig, head: str, train_items: list[Prepared], val_items: list[Prepared],
          out_dir: str | Path, resume: bool = False,
          progress: Callable[[str], None] | None = None) -> TrainResult:
    """Train one head; writes ``best.ckpt``, ``last.ckpt`` and ``log.csv`` into ``out_dir``."""
    head = check_head(head)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = UNet(config.unet_spec(head), seed=config.seed, output_bias=config.output_bias(head),
                 output_gain=config.output_gain if config.output_bias(head) is not None else 1.0)
    model.input_grad = False
    adam = AdamState()
    start = 0
    result = TrainResult(head, 0)
    if resume and (out_dir / LAST).exists():
        ckpt = load_checkpoint(out_dir / LAST)
        if ckpt.head != head:
            raise ConfigError(f"{out_dir / LAST} holds a {ckpt.head} model, not {head}")
        model.load_state(ckpt.params, ckpt.buffers)
        adam = ckpt.adam
        start = ckpt.epoch + 1
        result.best_val = ckpt.extra.get("best_val", math.inf)
        result.best_epoch = ckpt.extra.get("best_epoch", -1)
    else:
        if (out_dir / LOG).exists():
            (out_dir / LOG).unlink()
        result.initial_loss = initial_loss(model, head, train_items, config.batch_size)

    for epoch in range(start, config.epochs):
        lr = config.lr(epoch)
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_items))
        total = cells = 0.0
        for i in range(0, len(order), config.batch_size):
            batch = collate([train_items[j] for j in order[i:i + config.batch_size]])
            loss = batch_loss(model, head, batch, backward=True)
            adam_step(model.named_params(), model.named_grads(), adam, lr)
            n = float(batch.mask.sum())
            total += loss * n
            cells += n
        train_loss = total / cells
        val_loss = evaluate_loss(model, head, val_items, config.batch_size)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite {head} validation loss at epoch {epoch}")
        result.train_loss.append(train_loss)
        result.val_loss.append(val_loss)
        _append_log(out_dir / LOG, [(epoch, "train", repr(train_loss), repr(lr)),
                                    (epoch, "validation", repr(val_loss), repr(lr))])
        improved = val_loss < result.best_val
        if improved:
            result.best_val, result.best_epoch = val_loss, epoch
        extra = {"best_val": result.best_val, "best_epoch": result.best_epoch,
                 "train_config": config.to_dict()}
        if improved:
            save_checkpoint(out_dir / BEST, Checkpoint.capture(model, head, epoch, config.seed, adam, extra))
        if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
            save_checkpoint(out_dir / LAST, Checkpoint.capture(model, head, epoch, config.seed, adam, extra))
        line = (f"[{head}] epoch {epoch + 1}/{config.epochs} lr {lr:.2e} "
                f"train {train_loss:.5g} val {val_loss:.5g}{' *' if improved else ''}")
        log.info(line)
        if progress:
            progress(line)
        result.epochs_run += 1
    return result
