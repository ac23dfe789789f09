"""U-Net and IMU-Net construction, forward/backward passes and architecture analyzers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernel import BatchNorm, Conv2d, Layer, MaxPool, ReLU, ShapeError, UpConv, concat_channels

UNET_CHANNELS = (64, 128, 256, 512, 1024)
IMUNET_CHANNELS = (8, 16, 32, 64, 128)
N_POOLS = 4
SENSOR_AXES = 6

VARIANTS = ("unet", "imunet")
LAYOUTS = ("spatial", "temporal")


@dataclass(frozen=True)
class NetworkSpec:
    variant: str = "imunet"
    layout: str = "spatial"
    pool_k: int | None = None
    window_len: int = 1000
    num_classes: int = 2
    encoder_channels: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.pool_k is None:
            object.__setattr__(self, "pool_k", 4 if self.variant == "imunet" else 2)
        if not self.encoder_channels:
            chans = IMUNET_CHANNELS if self.variant == "imunet" else UNET_CHANNELS
            object.__setattr__(self, "encoder_channels", chans)
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if len(self.encoder_channels) != N_POOLS + 1:
            raise ValueError(f"need {N_POOLS + 1} encoder widths, got {self.encoder_channels}")
        if self.pool_k < 1 or self.window_len < 1:
            raise ValueError("pool_k and window_len must be positive")

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder_channels[:-1]))

    @property
    def input_shape(self) -> tuple[int, int, int]:
        if self.layout == "spatial":
            return (1, SENSOR_AXES, self.window_len)
        return (SENSOR_AXES, 1, self.window_len)

    @property
    def padded_len(self) -> int:
        unit = self.pool_k ** N_POOLS
        return -(-self.window_len // unit) * unit

    def to_text(self) -> str:
        """Canonical ``key=value`` lines, sorted by key."""
        items = {
            "encoder_channels": ",".join(map(str, self.encoder_channels)),
            "layout": self.layout,
            "num_classes": str(self.num_classes),
            "pool_k": str(self.pool_k),
            "variant": self.variant,
            "window_len": str(self.window_len),
        }
        return "".join(f"{k}={v}\n" for k, v in sorted(items.items()))

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(
            variant=kv["variant"],
            layout=kv["layout"],
            pool_k=int(kv["pool_k"]),
            window_len=int(kv["window_len"]),
            num_classes=int(kv["num_classes"]),
            encoder_channels=tuple(int(c) for c in kv["encoder_channels"].split(",")),
        )


class DoubleConv:
    """conv-BN-ReLU twice."""

    def __init__(self, in_ch: int, out_ch: int):
        self.layers: list[Layer] = [
            Conv2d(in_ch, out_ch), BatchNorm(out_ch), ReLU(),
            Conv2d(out_ch, out_ch), BatchNorm(out_ch), ReLU(),
        ]
        self.names = ["conv1", "bn1", "relu1", "conv2", "bn2", "relu2"]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Network:
    """Encoder/decoder segmentation network assembled from ``NetworkSpec``.

    Inputs are batches ``(N, C, H, window_len)`` in the layout given by ``spec.layout``;
    outputs are logits ``(N, num_classes, 1, window_len)``.
    """

    def __init__(self, spec: NetworkSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        in_ch = spec.input_shape[0]
        enc = spec.encoder_channels
        k = spec.pool_k
        self.encoders = []
        prev = in_ch
        for c in enc:
            self.encoders.append(DoubleConv(prev, c))
            prev = c
        self.pools = [MaxPool(k) for _ in range(N_POOLS)]
        self.ups = []
        self.decoders = []
        for c in spec.decoder_channels:
            self.ups.append(UpConv(prev, c, k))
            self.decoders.append(DoubleConv(2 * c, c))
            prev = c
        self.head = Conv2d(prev, spec.num_classes)
        self._skip_channels: list[int] = []

    # -- parameter plumbing -------------------------------------------------

    def named_layers(self):
        for i, block in enumerate(self.encoders, start=1):
            for name, layer in zip(block.names, block.layers):
                yield f"enc{i}.{name}", layer
        for i, (up, block) in enumerate(zip(self.ups, self.decoders), start=N_POOLS + 2):
            yield f"up{i}", up
            for name, layer in zip(block.names, block.layers):
                yield f"dec{i}.{name}", layer
        yield f"head{2 * N_POOLS + 2}", self.head

    def named_params(self):
        for lname, layer in self.named_layers():
            for pname, arr in layer.params.items():
                yield f"{lname}.{pname}", arr

    def named_buffers(self):
        for lname, layer in self.named_layers():
            for bname, arr in layer.buffers.items():
                yield f"{lname}.{bname}", arr

    def params_and_grads(self):
        out = []
        for _, layer in self.named_layers():
            for pname, arr in layer.params.items():
                out.append((arr, layer.grads.get(pname)))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: arr.copy() for name, arr in self.named_params()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_params())
        own.update(dict(self.named_buffers()))
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, arr in own.items():
            if state[name].shape != arr.shape:
                raise ShapeError(f"{name}: stored shape {state[name].shape} != {arr.shape}")
            arr[...] = state[name]

    # -- passes -------------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        want = self.spec.input_shape
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"expected input (N, {want[0]}, {want[1]}, {want[2]}), got {x.shape}")
        return x

    def forward(self, x, training: bool = False):
        x = self._check_input(x).astype(self.dtype, copy=False)
        length = x.shape[-1]
        pad = self.spec.padded_len - length
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (0, 0), (0, pad)), mode="edge")
        skips = []
        for i, block in enumerate(self.encoders):
            x = block.forward(x, training)
            if i < N_POOLS:
                skips.append(x)
                x = self.pools[i].forward(x, training)
        for up, block, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up.forward(x, training)
            x = concat_channels(x, skip)
            x = block.forward(x, training)
        self._skip_channels = [s.shape[1] for s in reversed(skips)]
        x = self.head.forward(x, training)
        self._head_height = x.shape[2]
        if x.shape[2] > 1:
            x = x.mean(axis=2, keepdims=True)
        return x[..., :length]

    def backward(self, dlogits):
        """Back-propagate ``dlogits``; fills each layer's ``grads`` and returns the input gradient."""
        length = dlogits.shape[-1]
        full = self.spec.padded_len
        dy = np.zeros(dlogits.shape[:-1] + (full,), dtype=dlogits.dtype)
        dy[..., :length] = dlogits
        h = self._head_height
        if h > 1:
            dy = np.broadcast_to(dy / h, dy.shape[:2] + (h, full)).copy()
        dy = self.head.backward(dy)
        dskips = []
        for up, block, c in zip(reversed(self.ups), reversed(self.decoders), reversed(self._skip_channels)):
            dy = block.backward(dy)
            dskips.append(dy[:, -c:])
            dy = up.backward(dy[:, :-c])
        for i in range(len(self.encoders) - 1, -1, -1):
            if i < N_POOLS:
                dy = self.pools[i].backward(dy) + dskips[i]
            dy = self.encoders[i].backward(dy)
        if full > length:
            dx = dy[..., :length].copy()
            dx[..., length - 1] += dy[..., length:].sum(axis=-1)
            return dx
        return dy


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Instantiate ``spec`` with He-normal weights, zero biases and unit BN scale."""
    unit = spec.pool_k ** N_POOLS
    if spec.window_len < unit:
        raise ValueError(f"window_len={spec.window_len} shorter than pool_k**{N_POOLS}={unit}")
    net = Network(spec, dtype=dtype)
    rng = np.random.default_rng(seed)
    for _, layer in net.named_layers():
        if isinstance(layer, (Conv2d, UpConv)):
            w = layer.params["weight"]
            fan_in = w.shape[1] * w.shape[2] * w.shape[3] if isinstance(layer, Conv2d) else w.shape[1]
            w[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w.shape)
    return net


def count_params(net: Network) -> int:
    return int(sum(arr.size for _, arr in net.named_params()))


def layer_macs(spec: NetworkSpec, input_shape: Sequence[int] | None = None) -> list[tuple[str, int]]:
    """Multiply-accumulates per conv/up-conv over the padded feature maps.

    A same-padded 3x3 conv is counted at the full kernel size for every
    output position (padding taps included).
    """
    c, h, length = input_shape if input_shape is not None else spec.input_shape
    k = spec.pool_k
    unit = k ** N_POOLS
    lp = -(-length // unit) * unit
    out = []
    lens = [lp // k ** i for i in range(N_POOLS + 1)]
    prev = c
    for i, ch in enumerate(spec.encoder_channels):
        out.append((f"enc{i + 1}.conv1", prev * 9 * ch * h * lens[i]))
        out.append((f"enc{i + 1}.conv2", ch * 9 * ch * h * lens[i]))
        prev = ch
    for j, ch in enumerate(spec.decoder_channels):
        stage = N_POOLS + 2 + j
        li = lens[N_POOLS - 1 - j]
        out.append((f"up{stage}", prev * ch * h * li))
        out.append((f"dec{stage}.conv1", 2 * ch * 9 * ch * h * li))
        out.append((f"dec{stage}.conv2", ch * 9 * ch * h * li))
        prev = ch
    out.append((f"head{2 * N_POOLS + 2}", prev * 9 * spec.num_classes * h * lp))
    return out


def count_macs(net_or_spec, input_shape: Sequence[int] | None = None) -> int:
    spec = net_or_spec.spec if isinstance(net_or_spec, Network) else net_or_spec
    return int(sum(m for _, m in layer_macs(spec, input_shape)))


def count_flops(net_or_spec, input_shape: Sequence[int] | None = None, per_mac: int = 2) -> int:
    """Convolution FLOPs at ``per_mac`` operations per multiply-accumulate.

    Pooling, batch norm and ReLU are excluded.
    """
    return per_mac * count_macs(net_or_spec, input_shape)


def conv_flops(in_ch: int, out_ch: int, kernel: tuple[int, int], h: int, length: int, per_mac: int = 2) -> int:
    """FLOPs of one same-padded conv layer."""
    return per_mac * in_ch * out_ch * kernel[0] * kernel[1] * h * length


def receptive_field_from_pools(pools: Sequence[int], kernel: int = 3) -> int:
    rf = kernel
    for p in pools:
        rf *= p
    return rf


def receptive_field(spec: NetworkSpec) -> int:
    """Product of the temporal pooling factors times the final 3-tap kernel."""
    return receptive_field_from_pools([spec.pool_k] * N_POOLS)


def covers_half_window(spec: NetworkSpec) -> bool:
    return receptive_field(spec) > spec.window_len / 2
