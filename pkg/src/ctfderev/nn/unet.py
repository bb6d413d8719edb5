"""Online U-net producing one output vector per frequency bin and frame."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, UsageError
from .layers import BatchNorm, Conv2d, ConvTranspose2d, ReLU

PAPER_CHANNELS = (16, 16, 32, 32, 64, 64, 64, 32, 32, 16, 16)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    has_batchnorm: bool
    activation: str


@dataclass(frozen=True)
class UNetSpec:
    """Encoder/decoder plan.

    With ``I`` hidden layers, the first ``I // 2`` halve the bin axis, an
    odd ``I`` adds a stride-1 bottleneck, and the last ``I // 2`` are
    transposed convolutions doubling it back.  Hidden layer ``i`` and
    ``I - i`` are joined by channel concatenation when they share a
    resolution and are not adjacent.
    """

    channels: tuple[int, ...] = PAPER_CHANNELS
    out_channels: int = 9
    context: int = 5
    kernel_k: int = 9
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) < 2:
            raise ConfigError("the U-net needs at least two hidden layers")
        if self.context % 2 == 0 or self.kernel_k % 2 == 0:
            raise ConfigError("kernel sizes and frame context must be odd")
        if min(self.channels) < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")

    @property
    def num_hidden(self) -> int:
        return len(self.channels)

    @property
    def num_down(self) -> int:
        return self.num_hidden // 2

    def level(self, i: int) -> int:
        """Number of halvings of the bin axis at the output of hidden layer ``i``."""
        d = self.num_down
        if i <= d:
            return i
        if i == d + 1 and self.num_hidden % 2:
            return d
        return self.num_hidden - i

    @property
    def skip_pairs(self) -> list[tuple[int, int]]:
        hidden = self.num_hidden
        pairs = []
        for i in range(1, hidden):
            j = hidden - i
            if i < j and j - i > 1 and self.level(i) == self.level(j):
                pairs.append((i, j))
        return pairs

    def layer_specs(self) -> list[LayerSpec]:
        skip_into = {j + 1: i for i, j in self.skip_pairs}
        specs = []
        prev = self.in_channels
        for i in range(1, self.num_hidden + 1):
            c_in = prev + (self.channels[skip_into[i] - 1] if i in skip_into else 0)
            down = self.level(i) > self.level(i - 1) if i > 1 else True
            up = self.level(i) < self.level(i - 1) if i > 1 else False
            kernel = (self.kernel_k, self.context if i == 1 else 1)
            if up:
                specs.append(LayerSpec("TransposedConv", c_in, self.channels[i - 1], kernel, (2, 1), True, "ReLU"))
            else:
                specs.append(LayerSpec("Conv", c_in, self.channels[i - 1], kernel, (2 if down else 1, 1), True, "ReLU"))
            prev = self.channels[i - 1]
        c_in = prev + (self.channels[skip_into[self.num_hidden + 1] - 1]
                       if self.num_hidden + 1 in skip_into else 0)
        specs.append(LayerSpec("Conv", c_in, self.out_channels, (self.kernel_k, 1), (1, 1), False, "Linear"))
        return specs

    @property
    def bin_multiple(self) -> int:
        return 2 ** self.num_down

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetSpec":
        return cls(**{**d, "channels": tuple(d["channels"])})


@dataclass
class _Block:
    conv: object
    norm: BatchNorm | None = None
    act: ReLU | None = None
    outputs: list = field(default_factory=list)


class UNet:
    """Forward/backward over ``(N, L, K)`` feature grids.

    ``forward`` returns ``(N, L, K, out_channels)``.  The input is one
    channel; the first layer's kernel spans ``context`` frames.
    """

    def __init__(self, spec: UNetSpec = UNetSpec(), seed: int = 0, dtype=np.float32,
                 output_bias: np.ndarray | None = None, output_gain: float = 1.0):
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.blocks: list[_Block] = []
        for ls in spec.layer_specs():
            cls = ConvTranspose2d if ls.kind == "TransposedConv" else Conv2d
            conv = cls(ls.in_channels, ls.out_channels, ls.kernel, ls.stride, rng=rng, dtype=dtype)
            norm = BatchNorm(ls.out_channels, dtype=dtype) if ls.has_batchnorm else None
            act = ReLU() if ls.activation == "ReLU" else None
            self.blocks.append(_Block(conv, norm, act))
        self.blocks[-1].conv.params["weight"] *= dtype(output_gain)
        if output_bias is not None:
            bias = self.blocks[-1].conv.params["bias"]
            bias[...] = np.broadcast_to(np.asarray(output_bias, dtype=dtype), bias.shape)
        self._skip_into = {j + 1: i for i, j in spec.skip_pairs}
        self._skip_from = {i: j + 1 for i, j in spec.skip_pairs}
        self._forward_done = False
        self.training = True

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for idx, block in enumerate(self.blocks, start=1):
            for part in ("conv", "norm"):
                mod = getattr(block, part)
                if mod is not None:
                    for name, arr in mod.params.items():
                        out[f"layer{idx}.{part}.{name}"] = arr
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for idx, block in enumerate(self.blocks, start=1):
            for part in ("conv", "norm"):
                mod = getattr(block, part)
                if mod is not None:
                    for name in mod.params:
                        out[f"layer{idx}.{part}.{name}"] = mod.grads[name]
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for idx, block in enumerate(self.blocks, start=1):
            if block.norm is not None:
                out[f"layer{idx}.norm.running_mean"] = block.norm.running_mean
                out[f"layer{idx}.norm.running_var"] = block.norm.running_var
        return out

    def load_state(self, params: dict, buffers: dict):
        for idx, block in enumerate(self.blocks, start=1):
            for part in ("conv", "norm"):
                mod = getattr(block, part)
                if mod is None:
                    continue
                for name in mod.params:
                    key = f"layer{idx}.{part}.{name}"
                    if params[key].shape != mod.params[name].shape:
                        raise DataError(f"shape mismatch for {key}")
                    mod.params[name][...] = params[key]
            if block.norm is not None:
                block.norm.running_mean = np.asarray(buffers[f"layer{idx}.norm.running_mean"], dtype=self.dtype).copy()
                block.norm.running_var = np.asarray(buffers[f"layer{idx}.norm.running_var"], dtype=self.dtype).copy()

    def num_parameters(self) -> int:
        return sum(a.size for a in self.named_params().values())

    def train(self, mode: bool = True):
        self.training = mode
        for block in self.blocks:
            for mod in (block.conv, block.norm, block.act):
                if mod is not None:
                    mod.training = mode
        return self

    def eval(self):
        return self.train(False)

    def forward(self, features: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        if features.ndim != 3:
            raise DataError(f"expected (N, L, K) features, got shape {features.shape}")
        if features.shape[2] % self.spec.bin_multiple:
            raise DataError(
                f"bin count {features.shape[2]} must be a multiple of {self.spec.bin_multiple}"
            )
        h = features.astype(self.dtype, copy=False)[..., None]
        outs = {}
        for idx, block in enumerate(self.blocks, start=1):
            if idx in self._skip_into:
                src = outs[self._skip_into[idx]]
                if src.shape[2] != h.shape[2]:
                    raise DataError(f"skip into layer {idx}: {src.shape[2]} vs {h.shape[2]} bins")
                h = np.concatenate([h, src], axis=-1)
            h = block.conv.forward(h)
            if block.norm is not None:
                h = block.norm.forward(h, mask)
            if block.act is not None:
                h = block.act.forward(h)
            outs[idx] = h
        self._forward_done = True
        return h

    @property
    def input_grad(self) -> bool:
        return self.blocks[0].conv.need_input_grad

    @input_grad.setter
    def input_grad(self, flag: bool):
        self.blocks[0].conv.need_input_grad = flag

    def backward(self, dout: np.ndarray) -> np.ndarray | None:
        """Fills parameter gradients; returns the feature gradient if ``input_grad``."""
        if not self._forward_done:
            raise UsageError("UNet.backward called without a forward pass")
        skip_grads: dict[int, np.ndarray] = {}
        g = dout.astype(self.dtype, copy=False)
        for idx in range(len(self.blocks), 0, -1):
            block = self.blocks[idx - 1]
            if idx in skip_grads:
                g = g + skip_grads.pop(idx)
            if block.act is not None:
                g = block.act.backward(g)
            if block.norm is not None:
                g = block.norm.backward(g)
            g = block.conv.backward(g)
            if g is None:
                break
            if idx in self._skip_into:
                src = self._skip_into[idx]
                c_src = self.spec.channels[src - 1]
                skip_grads[src] = g[..., -c_src:]
                g = g[..., :-c_src]
        self._forward_done = False
        return None if g is None else g[..., 0]
