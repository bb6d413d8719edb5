"""The three estimation heads on top of the U-net, in batched ``(N, L, K, ...)`` layout.

* ``ifilt``: the network emits ``P`` filter taps per bin and frame; the
  estimate is ``relu(sum_p W[p] * |Y[l - p]|)`` and is compared with ``|Y^E|``.
* ``dsm``: one channel regressing the early-reverberant LPS.
* ``dirm``: one channel through a sigmoid, regressing the Wiener mask.

Bins at and above the network's bin count (the Nyquist bin by default)
bypass the network with the identity (``W = delta``, mask 1, LPS passed through).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .derev import dsm_head_decode, reconstruct, wiener_mask
from .dsp import SpectralFrameSet, StftConfig, Waveform, lps, stft
from .errors import ConfigError, DataError

HEADS = ("ifilt", "dsm", "dirm")


def check_head(head: str) -> str:
    head = head.lower()
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}; choose one of {', '.join(HEADS)}")
    return head


def head_channels(head: str, taps: int) -> int:
    return taps if check_head(head) == "ifilt" else 1


def network_bins(num_bins: int, multiple: int) -> int:
    return (num_bins // multiple) * multiple


@dataclass
class Prepared:
    """Per-utterance arrays in ``(L, K)`` layout."""

    key: str
    lps: np.ndarray
    mag: np.ndarray
    target: np.ndarray | None
    num_frames: int


def head_target(head: str, y: SpectralFrameSet, y_early: SpectralFrameSet) -> np.ndarray:
    """Training target in the head's own domain, ``(L, K)``."""
    head = check_head(head)
    if head == "ifilt":
        return np.abs(y_early.coeffs).T
    if head == "dsm":
        return lps(y_early).T
    return wiener_mask(y_early.coeffs, y.coeffs - y_early.coeffs).values.T


def prepare(key: str, y: SpectralFrameSet, y_early: SpectralFrameSet | None = None,
            head: str = "ifilt") -> Prepared:
    target = None if y_early is None else head_target(head, y, y_early).astype(np.float32)
    return Prepared(key, lps(y).T.astype(np.float32), np.abs(y.coeffs).T.astype(np.float32),
                    target, y.num_frames)


@dataclass
class Batch:
    keys: list
    lps: np.ndarray      # (N, L, K)
    mag: np.ndarray      # (N, L, K)
    target: np.ndarray | None
    mask: np.ndarray     # (N, L) bool

    def features(self, k_net: int) -> np.ndarray:
        return np.ascontiguousarray(self.lps[:, :, :k_net])


def collate(items: list[Prepared]) -> Batch:
    if not items:
        raise DataError("empty batch")
    n, l_max, k = len(items), max(p.num_frames for p in items), items[0].lps.shape[1]
    dtype = items[0].mag.dtype
    lps_b = np.zeros((n, l_max, k), dtype)
    mag_b = np.zeros((n, l_max, k), dtype)
    tgt_b = None if items[0].target is None else np.zeros((n, l_max, k), dtype)
    mask = np.zeros((n, l_max), bool)
    for i, p in enumerate(items):
        lps_b[i, :p.num_frames] = p.lps
        mag_b[i, :p.num_frames] = p.mag
        if tgt_b is not None:
            tgt_b[i, :p.num_frames] = p.target
        mask[i, :p.num_frames] = True
    return Batch([p.key for p in items], lps_b, mag_b, tgt_b, mask)


def shifted_stack(mag: np.ndarray, taps: int) -> np.ndarray:
    """``(N, L, K)`` to ``(N, L, K, P)`` with ``out[:, l, :, p] = mag[:, l - p, :]``."""
    n, num_frames, k = mag.shape
    out = np.zeros((n, num_frames, k, taps), mag.dtype)
    for p in range(min(taps, num_frames)):
        out[:, p:, :, p] = mag[:, :num_frames - p]
    return out


def head_forward(head: str, out: np.ndarray, batch: Batch):
    """Map network output ``(N, L, Kn, C)`` to a full-band estimate ``(N, L, K)``.

    Returns ``(estimate, cache)``; the cache feeds :func:`head_backward`.
    """
    head = check_head(head)
    k_net = out.shape[2]
    if head == "ifilt":
        stack = shifted_stack(batch.mag[:, :, :k_net], out.shape[3])
        pre = np.einsum("nlkp,nlkp->nlk", out, stack)
        est = np.concatenate([np.maximum(pre, 0), batch.mag[:, :, k_net:]], axis=2)
        return est, (stack, pre > 0)
    if head == "dsm":
        est = np.concatenate([out[..., 0], batch.lps[:, :, k_net:]], axis=2)
        return est, None
    m = 1.0 / (1.0 + np.exp(-out[..., 0]))
    ones = np.ones(batch.mag.shape[:2] + (batch.mag.shape[2] - k_net,), out.dtype)
    return np.concatenate([m, ones], axis=2), m


def head_backward(head: str, cache, d_est: np.ndarray, k_net: int) -> np.ndarray:
    """Gradient with respect to the network output, ``(N, L, Kn, C)``."""
    head = check_head(head)
    d = d_est[:, :, :k_net]
    if head == "ifilt":
        stack, active = cache
        return (d * active)[..., None] * stack
    if head == "dsm":
        return d[..., None]
    m = cache
    return (d * m * (1.0 - m))[..., None]


def mse_loss(est: np.ndarray, target: np.ndarray, valid: np.ndarray | None = None):
    """Mean squared error over valid cells and its gradient with respect to ``est``.

    ``valid`` marks valid frames and broadcasts against the trailing bin
    axis: ``(N, L)`` for ``(N, L, K)`` grids, ``(L,)`` for ``(L, K)``.
    """
    if est.shape != target.shape:
        raise DataError(f"shape mismatch: {est.shape} vs {target.shape}")
    diff = target.astype(np.float64) - est.astype(np.float64)
    if valid is None:
        weight = np.ones(est.shape[:-1] + (1,))
    else:
        weight = np.asarray(valid, dtype=np.float64)[..., None]
    count = weight.sum() * est.shape[-1]
    if count == 0:
        raise DataError("loss over an empty valid mask")
    loss = float(np.sum(weight * diff ** 2) / count)
    grad = -2.0 / count * diff * weight
    return loss, grad


def estimate_magnitude(head: str, est: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """Head-domain estimate ``(L, K)`` to a magnitude grid ``(K, L)``."""
    head = check_head(head)
    if head == "ifilt":
        return est.T
    if head == "dsm":
        return dsm_head_decode(est.T)
    return est.T * mag.T


def enhance(model, head: str, y: Waveform, config: StftConfig = StftConfig(),
            identity: bool = False) -> Waveform:
    """Full inference path for one utterance: features, network, head, resynthesis."""
    spec = stft(y, config)
    item = prepare("x", spec)
    batch = collate([item])
    if identity:
        if check_head(head) != "ifilt":
            raise ConfigError("identity mode applies to the ifilt head only")
        mag = spec.magnitude
        k_net, taps = spec.coeffs.shape[0] - 1, 1
        out = np.ones((1, spec.num_frames, k_net, taps), np.float64)
        est, _ = head_forward("ifilt", out, collate([Prepared("x", item.lps, mag.T, None, spec.num_frames)]))
    else:
        model.eval()
        k_net = network_bins(spec.coeffs.shape[0], model.spec.bin_multiple)
        out = model.forward(batch.features(k_net), batch.mask)
        est, _ = head_forward(head, out, batch)
    magnitude = estimate_magnitude(head, est[0].astype(np.float64), batch.mag[0].astype(np.float64))
    return reconstruct(magnitude, spec, len(y))
