"""Differentiable layers with hand-written backward passes.

Activations are laid out as ``(N, L, K, C)``: batch, frames, frequency bins,
channels.  Convolution runs along ``K`` (with stride) and along ``L`` (stride
1, same padding).  A kernel spanning ``kl > 1`` frames is evaluated by first
stacking the ``kl`` neighbouring frames into the channel axis, which is
exactly a zero-padded 2-D cross-correlation.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ConfigError, DataError, UsageError


class Module:
    """Parameter container; ``grads`` mirrors ``params`` after ``backward``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True
        self.need_input_grad = True
        self._cache = None

    def _need_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called without a forward pass")
        return self._cache


def stack_frames(x: np.ndarray, kl: int) -> np.ndarray:
    """``(N, L, K, C) -> (N, L, K, kl*C)``; slot ``v`` holds frame ``l + v - kl//2``."""
    if kl == 1:
        return x
    n, num_frames, k, c = x.shape
    half = kl // 2
    out = np.zeros((n, num_frames, k, kl, c), dtype=x.dtype)
    for v in range(kl):
        shift = v - half
        lo, hi = max(0, -shift), min(num_frames, num_frames - shift)
        if lo < hi:
            out[:, lo:hi, :, v, :] = x[:, lo + shift:hi + shift]
    return out.reshape(n, num_frames, k, kl * c)


def unstack_frames(xs: np.ndarray, kl: int) -> np.ndarray:
    """Adjoint of :func:`stack_frames`."""
    if kl == 1:
        return xs
    n, num_frames, k, ck = xs.shape
    c = ck // kl
    xs = xs.reshape(n, num_frames, k, kl, c)
    half = kl // 2
    out = np.zeros((n, num_frames, k, c), dtype=xs.dtype)
    for v in range(kl):
        shift = v - half
        lo, hi = max(0, -shift), min(num_frames, num_frames - shift)
        if lo < hi:
            out[:, lo + shift:hi + shift] += xs[:, lo:hi, :, v, :]
    return out


def _im2col(x2: np.ndarray, kk: int, stride: int) -> np.ndarray:
    """``(B, K, C) -> (B * K_out, kk * C)`` with same padding along K."""
    b, k, c = x2.shape
    pad = kk // 2
    k_out = -(-k // stride)
    xp = np.zeros((b, k + 2 * pad + stride, c), dtype=x2.dtype)
    xp[:, pad:pad + k] = x2
    s0, s1, s2 = xp.strides
    view = as_strided(xp, (b, k_out, kk * c), (s0, stride * s1, s2), writeable=False)
    return np.ascontiguousarray(view).reshape(b * k_out, kk * c)


def _im2col_offsets(x2: np.ndarray, j_min: int, j_max: int) -> np.ndarray:
    """``(B, K, C) -> (B * K, J * C)``; window ``j`` reads ``x[k + j]`` (zero outside)."""
    b, k, c = x2.shape
    width = j_max - j_min + 1
    xp = np.zeros((b, k + width, c), dtype=x2.dtype)
    lo = -j_min
    xp[:, lo:lo + k] = x2
    s0, s1, s2 = xp.strides
    view = as_strided(xp, (b, k, width * c), (s0, s1, s2), writeable=False)
    return np.ascontiguousarray(view).reshape(b * k, width * c)


def _polyphase(kk: int, stride: int):
    """Window offsets and tap table for the stride-``stride`` transposed correlation.

    Output bin ``stride * m + r`` receives ``W[u] * dy[m + j]`` with
    ``u = r + kk // 2 - stride * j``.
    """
    pad = kk // 2
    j_min = (pad - (kk - 1)) // stride
    j_max = (stride - 1 + pad) // stride
    table = [[r + pad - stride * j for r in range(stride)] for j in range(j_min, j_max + 1)]
    return j_min, j_max, table


def _transposed_weight_matrix(w: np.ndarray, stride: int) -> tuple[np.ndarray, int, int]:
    """``(C_out, C_in, kk, 1)`` conv weight -> ``(J * C_out, stride * C_in)`` matrix."""
    c_out, c_in, kk, _ = w.shape
    j_min, j_max, table = _polyphase(kk, stride)
    mat = np.zeros((j_max - j_min + 1, c_out, stride, c_in), dtype=w.dtype)
    for jj, taps in enumerate(table):
        for r, u in enumerate(taps):
            if 0 <= u < kk:
                mat[jj, :, r, :] = w[:, :, u, 0]
    return mat.reshape(-1, stride * c_in), j_min, j_max


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    """``(C_out, C_in, kk, kl)`` -> ``(kk * kl * C_in, C_out)`` matching the column order."""
    return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])


def _weight_from_matrix(m: np.ndarray, shape) -> np.ndarray:
    c_out, c_in, kk, kl = shape
    return m.reshape(kk, kl, c_in, c_out).transpose(3, 2, 0, 1)


def _check_kernel(kernel, stride):
    kk, kl = kernel
    if kk % 2 == 0 or kl % 2 == 0:
        raise ConfigError(f"kernel sizes must be odd, got {kernel}")
    if stride[0] not in (1, 2) or stride[1] != 1:
        raise ConfigError(f"stride must be (1|2, 1), got {stride}")


def conv2d(x, weight, bias, stride_k=1):
    """Functional convolution; returns ``(y, cols)`` for reuse in backward."""
    c_out, c_in, kk, kl = weight.shape
    if x.shape[-1] != c_in:
        raise DataError(f"expected {c_in} input channels, got {x.shape[-1]}")
    n, num_frames, k, _ = x.shape
    xs = stack_frames(x, kl)
    cols = _im2col(xs.reshape(n * num_frames, k, kl * c_in), kk, stride_k)
    y = cols @ _weight_matrix(weight)
    if bias is not None:
        y += bias
    return y.reshape(n, num_frames, -1, c_out), cols


def conv2d_input_grad(dy, weight, k_in, stride_k=1):
    """Gradient of :func:`conv2d` with respect to its input (the transposed convolution)."""
    c_out, c_in, kk, kl = weight.shape
    n, num_frames, k_out, _ = dy.shape
    if not stride_k * (k_out - 1) < k_in <= stride_k * k_out:
        raise DataError(f"{k_in} input bins inconsistent with {k_out} output bins at stride {stride_k}")
    # stack the kl frame slots as separate input-channel groups
    w1 = weight.transpose(0, 3, 1, 2).reshape(c_out, kl * c_in, kk, 1)
    mat, j_min, j_max = _transposed_weight_matrix(w1, stride_k)
    cols = _im2col_offsets(dy.reshape(n * num_frames, k_out, c_out), j_min, j_max)
    dxs = (cols @ mat).reshape(n, num_frames, k_out * stride_k, kl * c_in)
    return unstack_frames(dxs[:, :, :k_in], kl)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel=(9, 1), stride=(1, 1),
                 rng=None, dtype=np.float32):
        super().__init__()
        _check_kernel(kernel, stride)
        self.stride = stride[0]
        kk, kl = kernel
        fan_in = in_channels * kk * kl
        bound = math.sqrt(6.0 / fan_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = rng.uniform(-bound, bound, (out_channels, in_channels, kk, kl)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def forward(self, x):
        y, _ = conv2d(x, self.params["weight"], self.params["bias"], self.stride)
        self._cache = x
        return y

    def backward(self, dy):
        x = self._need_cache()
        w = self.params["weight"]
        c_out, c_in, kk, kl = w.shape
        n, num_frames, k, _ = x.shape
        cols = _im2col(stack_frames(x, kl).reshape(n * num_frames, k, kl * c_in), kk, self.stride)
        dy2 = dy.reshape(-1, c_out)
        self.grads["weight"] = _weight_from_matrix(cols.T @ dy2, w.shape)
        self.grads["bias"] = dy2.sum(axis=0)
        if not self.need_input_grad:
            return None
        return conv2d_input_grad(dy, w, k, self.stride)


class ConvTranspose2d(Module):
    """Fractionally-strided convolution: the adjoint of :class:`Conv2d`.

    ``weight`` has shape ``(C_in, C_out, kk, kl)``, i.e. the weight of the
    convolution it transposes, so ``K_out = stride * K_in``.
    """

    def __init__(self, in_channels, out_channels, kernel=(9, 1), stride=(2, 1),
                 rng=None, dtype=np.float32):
        super().__init__()
        _check_kernel(kernel, stride)
        self.stride = stride[0]
        kk, kl = kernel
        fan_in = in_channels * kk * kl
        bound = math.sqrt(6.0 / fan_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = rng.uniform(-bound, bound, (in_channels, out_channels, kk, kl)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def forward(self, x):
        w = self.params["weight"]
        if x.shape[-1] != w.shape[0]:
            raise DataError(f"expected {w.shape[0]} input channels, got {x.shape[-1]}")
        y = conv2d_input_grad(x, w, x.shape[2] * self.stride, self.stride)
        y += self.params["bias"]
        self._cache = x
        return y

    def backward(self, dy):
        x = self._need_cache()
        w = self.params["weight"]
        c_in_t, c_out_t, kk, kl = w.shape
        n, num_frames, k, _ = dy.shape
        cols = _im2col(stack_frames(dy, kl).reshape(n * num_frames, k, kl * c_out_t), kk, self.stride)
        x2 = x.reshape(-1, c_in_t)
        self.grads["weight"] = _weight_from_matrix(cols.T @ x2, w.shape)
        self.grads["bias"] = dy.sum(axis=(0, 1, 2))
        dx = cols @ _weight_matrix(w)
        return dx.reshape(x.shape)


class BatchNorm(Module):
    """Per-channel normalisation over batch, frames and bins.

    An optional ``(N, L)`` validity mask restricts the batch statistics to
    real frames, so padding never influences valid outputs.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["scale"] = np.ones(channels, dtype=dtype)
        self.params["shift"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, mask=None):
        gamma, beta = self.params["scale"], self.params["shift"]
        if not self.training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            self._cache = (xhat, inv, None, None)
            return gamma * xhat + beta
        c = x.shape[-1]
        if mask is None or mask.all():
            m4 = None
            count = x.size // c
            flat = x.reshape(-1, c)
            mean = flat.mean(axis=0)
            centred = x - mean
            var = np.einsum("ij,ij->j", centred.reshape(-1, c), centred.reshape(-1, c)) / count
        else:
            m4 = mask.astype(x.dtype)[:, :, None, None]
            count = mask.sum() * x.shape[2]
            if count < 2:
                raise DataError("batch norm needs at least two valid values per channel")
            mean = (x * m4).sum(axis=(0, 1, 2)) / count
            centred = (x - mean) * m4
            var = (centred ** 2).sum(axis=(0, 1, 2)) / count
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = centred * inv
        self.running_mean = (self.momentum * self.running_mean + (1 - self.momentum) * mean).astype(x.dtype)
        self.running_var = (self.momentum * self.running_var + (1 - self.momentum) * var).astype(x.dtype)
        self._cache = (xhat, inv, m4, count)
        return gamma * xhat + beta

    def backward(self, dy):
        xhat, inv, m4, count = self._need_cache()
        gamma = self.params["scale"]
        c = dy.shape[-1]
        dy2, xhat2 = dy.reshape(-1, c), xhat.reshape(-1, c)
        # padded cells output the shift alone, so they only reach its gradient
        self.grads["scale"] = np.einsum("ij,ij->j", dy2, xhat2)
        self.grads["shift"] = dy2.sum(axis=0)
        if count is None:
            return dy * (gamma * inv)
        if m4 is None:
            mean_dy = self.grads["shift"] / count
            return (gamma * inv) * (dy - mean_dy - xhat * (self.grads["scale"] / count))
        dy = dy * m4
        mean_dy = dy.sum(axis=(0, 1, 2)) / count
        return (gamma * inv) * (dy - mean_dy * m4 - xhat * (self.grads["scale"] / count))


class ReLU(Module):
    def forward(self, x):
        y = np.maximum(x, 0)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * (y > 0)
