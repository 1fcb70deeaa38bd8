"""RAIU-Net encoder/decoder and the two-stage CHS-Net cascade."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import functional as F
from .attention import SSDSkip
from .blocks import DoubleConv, Downsample, ResidualInceptionBlock
from .errors import ConfigurationError, ShapeError
from .nn import INFER, Context, Conv2d, Dropout, Init, Module, TransposedConv2d
from .tensor import Tensor

COUPLINGS = ("masked_slice", "lung_map", "slice_and_map")


@dataclass
class NetworkConfig:
    stages: int = 4
    base_filters: int = 32
    depth_growth: float = 1.5
    input_size: tuple[int, int, int] = (256, 256, 1)
    use_rib: bool = True
    use_hybrid_pool: bool = True
    use_ssd: bool = True
    dropout_rate: float = 0.5
    gate_activation: str = "sigmoid"
    cascade_coupling: str = "masked_slice"
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.validate()

    def validate(self) -> None:
        if self.stages < 2:
            raise ConfigurationError(f"stages must be >= 2, got {self.stages}")
        if self.base_filters < 1 or self.depth_growth <= 0:
            raise ConfigurationError("base_filters and depth_growth must be positive")
        if len(self.input_size) != 3 or min(self.input_size) < 1:
            raise ConfigurationError(f"input_size must be (w, h, c), got {self.input_size}")
        w, h, _ = self.input_size
        k = 2 ** self.stages
        if w % k or h % k:
            raise ConfigurationError(f"input extents {w}x{h} must be divisible by 2**stages = {k}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.gate_activation not in ("sigmoid", "relu"):
            raise ConfigurationError(f"gate_activation must be sigmoid or relu, got {self.gate_activation!r}")
        if self.cascade_coupling not in COUPLINGS:
            raise ConfigurationError(f"cascade_coupling must be one of {COUPLINGS}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def widths(self) -> list[int]:
        """Filters per stage: base * growth**i rounded to the nearest multiple of 4."""
        out = []
        for i in range(self.stages):
            v = self.base_filters * self.depth_growth ** i
            out.append(max(4, int(np.floor(v / 4 + 0.5)) * 4))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class RAIUNet(Module):
    """U-shaped network of residual inception blocks with attention-refined skips.

    With ``use_rib`` off the blocks are plain double 3x3 convs; with
    ``use_hybrid_pool`` off downsampling is 2x2 max pooling; with ``use_ssd``
    off encoder maps are concatenated directly.  A dropout layer follows every
    block and is only active when the forward context carries a rate.
    """

    def __init__(self, cfg: NetworkConfig, in_channels: int | None = None, init: Init | None = None):
        super().__init__()
        self.cfg = cfg
        init = init or Init(cfg.seed, cfg.dtype)
        widths = cfg.widths()
        self.widths = widths
        self.in_channels = cfg.input_size[2] if in_channels is None else in_channels

        def block(d, d_out):
            if cfg.use_rib:
                return ResidualInceptionBlock(init, d, d_out, cfg.use_hybrid_pool)
            return DoubleConv(init, d, d_out)

        self.encoder = Module()
        d = self.in_channels
        for i, w in enumerate(widths):
            setattr(self.encoder, f"block{i}", block(d, w))
            setattr(self.encoder, f"drop{i}", Dropout())
            if i < len(widths) - 1:
                setattr(self.encoder, f"down{i}", Downsample(init, w, cfg.use_hybrid_pool))
            d = w

        self.decoder = Module()
        for i in reversed(range(len(widths) - 1)):
            setattr(self.decoder, f"up{i}", TransposedConv2d(init, widths[i + 1], widths[i], 2))
            if cfg.use_ssd:
                setattr(self.decoder, f"ssd{i}", SSDSkip(init, widths[i], widths[i + 1], cfg.gate_activation))
            setattr(self.decoder, f"block{i}", block(2 * widths[i], widths[i]))
            setattr(self.decoder, f"drop{i}", Dropout())

        self.head = Conv2d(init, widths[0], 1, 1)

    def encode(self, x: Tensor, ctx: Context = INFER) -> list[Tensor]:
        feats = []
        n = len(self.widths)
        for i in range(n):
            x = getattr(self.encoder, f"block{i}")(x, ctx)
            x = getattr(self.encoder, f"drop{i}")(x, ctx)
            feats.append(x)
            if i < n - 1:
                x = getattr(self.encoder, f"down{i}")(x, ctx)
        return feats

    def forward_features(self, x: Tensor, ctx: Context = INFER) -> dict[str, list[Tensor]]:
        """Run the net and return every stage's output (for shape contracts)."""
        feats = self.encode(x, ctx)
        y = feats[-1]
        skips, decoded = [], []
        for i in reversed(range(len(self.widths) - 1)):
            up = getattr(self.decoder, f"up{i}")(y, ctx)
            skip = feats[i]
            if self.cfg.use_ssd:
                skip = getattr(self.decoder, f"ssd{i}")(skip, y, ctx)
            skips.append(skip)
            y = getattr(self.decoder, f"block{i}")(F.concat([up, skip]), ctx)
            y = getattr(self.decoder, f"drop{i}")(y, ctx)
            decoded.append(y)
        out = F.sigmoid(self.head(y))
        return {"encoder": feats, "skips": skips, "decoder": decoded, "output": [out]}

    def forward(self, x: Tensor, ctx: Context = INFER) -> Tensor:
        _check_input(x, self.cfg, self.in_channels)
        return self.forward_features(x, ctx)["output"][0]


def _check_input(x: Tensor, cfg: NetworkConfig, channels: int) -> None:
    w, h, _ = cfg.input_size
    if x.ndim != 4 or x.shape[1:] != (w, h, channels):
        raise ShapeError(f"expected a batch (b,{w},{h},{channels}), got {x.shape}")


class CHSNet(Module):
    """Two RAIU-Nets in series: lung contour first, then infection.

    The second net's input is derived from the slice and the first net's lung
    map according to ``cfg.cascade_coupling`` (default: their product).
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        init = Init(cfg.seed, cfg.dtype)
        c = cfg.input_size[2]
        self.lung_net = RAIUNet(cfg, c, init)
        self.infection_net = RAIUNet(cfg, 2 * c if cfg.cascade_coupling == "slice_and_map" else c, init)
        self.lung_override: float | None = None

    def couple(self, x: Tensor, lung: Tensor) -> Tensor:
        mode = self.cfg.cascade_coupling
        if mode == "masked_slice":
            return F.mul(x, lung)
        if mode == "lung_map":
            return lung
        return F.concat([x, lung])

    def forward(self, x: Tensor, ctx: Context = INFER) -> tuple[Tensor, Tensor]:
        _check_input(x, self.cfg, self.cfg.input_size[2])
        lung = self.lung_net(x, ctx)
        if self.lung_override is not None:
            lung = Tensor(np.full(lung.shape, self.lung_override, dtype=lung.dtype))
        infection = self.infection_net(self.couple(x, lung), ctx)
        return lung, infection


class DirectNet(Module):
    """Single RAIU-Net segmenting infection straight from the slice (no cascade)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.net = RAIUNet(cfg, cfg.input_size[2], Init(cfg.seed, cfg.dtype))

    def forward(self, x: Tensor, ctx: Context = INFER) -> tuple[None, Tensor]:
        return None, self.net(x, ctx)


MODEL_KINDS = {"chs": CHSNet, "raiu": DirectNet}


def build_raiu_net(cfg: NetworkConfig) -> RAIUNet:
    return RAIUNet(cfg)


def build_chs_net(cfg: NetworkConfig) -> CHSNet:
    return CHSNet(cfg)


def build_model(cfg: NetworkConfig, kind: str = "chs") -> Module:
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"model kind must be one of {sorted(MODEL_KINDS)}, got {kind!r}")
    return MODEL_KINDS[kind](cfg)


def model_kind(model: Module) -> str:
    for k, cls in MODEL_KINDS.items():
        if isinstance(model, cls):
            return k
    raise ConfigurationError(f"not a checkpointable model: {type(model).__name__}")


def forward(model: Module, batch: Tensor | np.ndarray, mode: str = "infer", seed: int = 0, dropout: float = 0.0):
    """Run ``model`` on a ``(b, w, h, c)`` batch.

    ``mode="train"`` uses batch statistics and a dropout stream seeded by
    ``seed``; ``mode="infer"`` uses running statistics and no dropout.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=model.cfg.dtype))
    if mode == "train":
        ctx = Context.train(dropout, seed)
    elif mode == "infer":
        ctx = INFER
    else:
        raise ConfigurationError(f"mode must be train or infer, got {mode!r}")
    return model(x, ctx)


# ------------------------------------------------------------------- census

@dataclass
class Census:
    per_layer: dict[str, int] = field(default_factory=dict)
    total: int = 0

    def by_prefix(self, prefix: str) -> int:
        return sum(v for k, v in self.per_layer.items() if k.startswith(prefix))


def parameter_census(model: Module) -> Census:
    """Exact trainable-parameter counts keyed by parameter path."""
    per = {name: int(p.size) for name, p in model.named_parameters()}
    return Census(per, sum(per.values()))


def dsc_layers(model: Module):
    """Yield ``(path, layer)`` for every depthwise separable conv in ``model``."""
    from .nn import DepthwiseSeparableConv

    for name, mod in model.named_modules():
        if isinstance(mod, DepthwiseSeparableConv):
            yield name, mod


# --------------------------------------------------------------- checkpoint

MAGIC = b"CHSN\x01"


def save_checkpoint(model: Module, path: str | Path) -> None:
    """Write config and every parameter/buffer as little-endian float64.

    Layout: magic, u32 header length, UTF-8 JSON header (config and model
    kind), u32 tensor count, then per tensor: u32 name length, name, u32 rank,
    u32 extents, data.
    """
    header = json.dumps({"kind": model_kind(model), "config": model.cfg.to_dict()}, sort_keys=True).encode()
    tensors = [(n, p.data) for n, p in model.named_parameters()]
    tensors += [("buffer:" + n, b) for n, b in model.named_buffers()]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Module:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ConfigurationError(f"{path}: not a CHS-Net checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    (hlen,) = take("<I")
    header = json.loads(raw[pos:pos + hlen])
    pos += hlen
    model = build_model(NetworkConfig.from_dict(header["config"]), header["kind"])
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    (count,) = take("<I")
    for _ in range(count):
        (nlen,) = take("<I")
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += 8 * n
        if name.startswith("buffer:"):
            target = buffers[name[len("buffer:"):]]
            target[...] = arr
        else:
            p = params[name]
            if p.shape != arr.shape:
                raise ShapeError(f"{path}: {name} has shape {arr.shape}, expected {p.shape}")
            p.data[...] = arr
    return model
