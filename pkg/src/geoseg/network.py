"""Dynamic Res-U-Net: residual encoder, pixel-shuffle U-Net decoder, freeze groups.

Layer names in the encoder follow the torchvision ResNet layout (``conv1``,
``bn1``, ``layer1`` .. ``layer4``), so ResNet34 weights exported to the
named-tensor archive load without renaming.

Decoder widths are inferred from the encoder at build time. For a 224x224
input with the default widths the shapes run::

    encoder  64x112x112 -> 64x56x56 -> 128x28x28 -> 256x14x14 -> 512x7x7
    middle   1024x7x7 -> 512x7x7
    block 1  shuffle 256x14x14, +skip 256 -> 512x14x14
    block 2  shuffle 256x28x28, +skip 128 -> 384x28x28
    block 3  shuffle 192x56x56, +skip 64  -> 256x56x56
    block 4  shuffle 128x112x112, +skip 64 -> 96x112x112
    head     conv 384x112x112 -> shuffle 96x224x224, +input -> 99x224x224 -> 2x224x224
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

RESNET34_BLOCKS = (3, 4, 6, 3)
RESNET34_WIDTHS = (64, 64, 128, 256, 512)


class ConfigError(ValueError):
    pass


class WeightFileError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_size: tuple[int, int] = (224, 224)
    encoder_widths: tuple[int, ...] = RESNET34_WIDTHS  # stem, then one per stage
    encoder_blocks_per_stage: tuple[int, ...] = RESNET34_BLOCKS
    in_channels: int = 3
    out_classes: int = 2
    init: str | None = None  # path to an encoder archive, or None for random
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.encoder_widths = tuple(int(v) for v in self.encoder_widths)
        self.encoder_blocks_per_stage = tuple(int(v) for v in self.encoder_blocks_per_stage)
        self.validate()

    def validate(self):
        h, w = self.input_size
        if h < 32 or w < 32 or h % 32 or w % 32:
            raise ConfigError(f"input size {self.input_size} must be >= 32 and divisible by 32")
        if self.out_classes != 2:
            raise ConfigError("out_classes must be 2 (building / background)")
        if len(self.encoder_widths) != 5 or len(self.encoder_blocks_per_stage) != 4:
            raise ConfigError("need 5 encoder widths (stem + 4 stages) and 4 block counts")
        if any(v < 1 for v in self.encoder_widths + self.encoder_blocks_per_stage):
            raise ConfigError("encoder widths and block counts must be positive")


def pixel_shuffle(x, r: int):
    """Periodic shuffle: out[c, r*h + i, r*w + j] = in[c*r*r + i*r + j, h, w].

    Works on (C, H, W) or (N, C, H, W) tensors or arrays.
    """
    r = int(r)
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} is not divisible by r^2 = {r * r}")
    oc = c // (r * r)
    y = x.reshape(n, oc, r, r, h, w)
    if isinstance(y, torch.Tensor):
        y = y.permute(0, 1, 4, 2, 5, 3)
    else:
        y = y.transpose(0, 1, 4, 2, 5, 3)
    y = y.reshape(n, oc, h * r, w * r)
    return y[0] if squeeze else y


def pixel_unshuffle(x, r: int):
    """Inverse of :func:`pixel_shuffle`."""
    r = int(r)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial size {(h, w)} not divisible by {r}")
    y = x.reshape(n, c, h // r, r, w // r, r)
    y = y.permute(0, 1, 3, 5, 2, 4) if isinstance(y, torch.Tensor) else y.transpose(0, 1, 3, 5, 2, 4)
    y = y.reshape(n, c * r * r, h // r, w // r)
    return y[0] if squeeze else y


class PixelShuffle(nn.Module):
    def __init__(self, r: int):
        super().__init__()
        self.r = r

    def forward(self, x):
        return pixel_shuffle(x, self.r)


def conv_bn_relu(ni: int, nf: int, ks: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(ni, nf, ks, stride=stride, padding=ks // 2, bias=False),
        nn.BatchNorm2d(nf),
        nn.ReLU(inplace=True),
    )


class BasicBlock(nn.Module):
    def __init__(self, ni: int, nf: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(ni, nf, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(nf)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(nf, nf, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(nf)
        self.downsample = None
        if stride != 1 or ni != nf:
            self.downsample = nn.Sequential(nn.Conv2d(ni, nf, 1, stride, bias=False), nn.BatchNorm2d(nf))

    def forward(self, x):
        idt = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + idt)


class Encoder(nn.Module):
    """ResNet body; returns the stem activation and the four stage outputs."""

    def __init__(self, widths, blocks, in_channels: int = 3):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, widths[0], 7, 2, 3, bias=False)
        self.bn1 = nn.BatchNorm2d(widths[0])
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, 2, 1)
        ni = widths[0]
        for i, (nf, nb) in enumerate(zip(widths[1:], blocks)):
            stride = 1 if i == 0 else 2
            layers = [BasicBlock(ni, nf, stride)] + [BasicBlock(nf, nf) for _ in range(nb - 1)]
            setattr(self, f"layer{i + 1}", nn.Sequential(*layers))
            ni = nf

    def forward(self, x):
        stem = self.relu(self.bn1(self.conv1(x)))
        x = self.maxpool(stem)
        feats = [stem]
        for i in range(1, 5):
            x = getattr(self, f"layer{i}")(x)
            feats.append(x)
        return feats


def icnr_(weight: torch.Tensor, r: int = 2, init=nn.init.kaiming_normal_) -> torch.Tensor:
    """Initialise a conv feeding a pixel shuffle so the upsample starts as nearest-neighbour."""
    nf, ni, kh, kw = weight.shape
    sub = torch.zeros(nf // (r * r), ni, kh, kw)
    init(sub)
    with torch.no_grad():
        weight.copy_(sub.repeat_interleave(r * r, dim=0))
    return weight


class ShuffleUp(nn.Module):
    """1x1 conv to nf * r^2 channels, ReLU, periodic shuffle by r."""

    def __init__(self, ni: int, nf: int, r: int = 2):
        super().__init__()
        self.conv = nn.Conv2d(ni, nf * r * r, 1)
        icnr_(self.conv.weight, r)
        nn.init.zeros_(self.conv.bias)
        self.relu = nn.ReLU(inplace=True)
        self.shuf = PixelShuffle(r)

    def forward(self, x):
        return self.shuf(self.relu(self.conv(x)))


class UnetBlock(nn.Module):
    def __init__(self, up_in: int, skip_in: int, nf: int | None = None):
        super().__init__()
        self.shuf = ShuffleUp(up_in, up_in // 2)
        self.bn = nn.BatchNorm2d(skip_in)
        ni = up_in // 2 + skip_in
        nf = ni if nf is None else nf
        self.conv1 = conv_bn_relu(ni, nf)
        self.conv2 = conv_bn_relu(nf, nf)

    def forward(self, up, skip):
        up = self.shuf(up)
        if up.shape[-2:] != skip.shape[-2:]:
            up = F.interpolate(up, skip.shape[-2:], mode="nearest")
        x = F.relu(torch.cat([up, self.bn(skip)], dim=1))
        return self.conv2(self.conv1(x))


class Head(nn.Module):
    """Final shuffle to full resolution, input cross-connection, residual extension, pooler."""

    def __init__(self, ni: int, in_channels: int, out_classes: int):
        super().__init__()
        self.shuf = ShuffleUp(ni, ni)
        nc = ni + in_channels
        self.ext1 = conv_bn_relu(nc, nc)
        self.ext2 = conv_bn_relu(nc, nc)
        self.pooler = nn.Conv2d(nc, out_classes, 1)

    def forward(self, x, inp):
        x = torch.cat([self.shuf(x), inp], dim=1)
        x = x + self.ext2(self.ext1(x))
        return self.pooler(x)


class SegModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.encoder_widths
        self.encoder = Encoder(w, cfg.encoder_blocks_per_stage, cfg.in_channels)
        self.middle = nn.Sequential(conv_bn_relu(w[4], 2 * w[4]), conv_bn_relu(2 * w[4], w[4]))
        blocks, up = [], w[4]
        # skips from deep to shallow: stage3, stage2, stage1, stem
        for i, skip in enumerate((w[3], w[2], w[1], w[0])):
            last = i == 3
            ni = up // 2 + skip
            blk = UnetBlock(up, skip, ni // 2 if last else ni)
            blocks.append(blk)
            up = ni // 2 if last else ni
        self.decoder = nn.ModuleList(blocks)
        self.head = Head(up, cfg.in_channels, cfg.out_classes)
        self._frozen: set[str] = set()

    def param_groups(self) -> dict[str, nn.Module]:
        g = {"encoder.stem": nn.ModuleList([self.encoder.conv1, self.encoder.bn1])}
        for i in range(1, 5):
            g[f"encoder.stage{i}"] = getattr(self.encoder, f"layer{i}")
        g["decoder.middle"] = self.middle
        for i, blk in enumerate(self.decoder, start=1):
            g[f"decoder.block{i}"] = blk
        g["head"] = self.head
        return g

    def encoder_features(self, x):
        return self.encoder(x)

    def forward(self, x):
        h, w = x.shape[-2:]
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels or h % 32 or w % 32:
            raise ValueError(f"expected N x {self.cfg.in_channels} x H x W with H, W divisible by 32, got {tuple(x.shape)}")
        feats = self.encoder(x)
        y = self.middle(feats[4])
        for blk, skip in zip(self.decoder, (feats[3], feats[2], feats[1], feats[0])):
            y = blk(y, skip)
        return self.head(y, x)

    def train(self, mode: bool = True):
        super().train(mode)
        # frozen groups keep their batch-norm statistics fixed
        groups = self.param_groups()
        for name in self._frozen:
            groups[name].eval()
        return self

    @property
    def frozen_groups(self) -> frozenset:
        return frozenset(self._frozen)


def init_weights(model: nn.Module, seed: int = 0) -> None:
    """Seeded He-normal init for convolutions; BN to identity."""
    gen = torch.Generator().manual_seed(int(seed))
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels // m.groups * m.kernel_size[0] * m.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                w = torch.randn(m.weight.shape, generator=gen) * std
                m.weight.copy_(w)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for m in model.modules():
        if isinstance(m, ShuffleUp):
            r = m.shuf.r
            nf = m.conv.out_channels // (r * r)
            fan_in = m.conv.in_channels
            sub = torch.randn((nf, fan_in, 1, 1), generator=gen) * math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                m.conv.weight.copy_(sub.repeat_interleave(r * r, dim=0))


def build_model(cfg: ModelConfig | None = None) -> SegModel:
    cfg = cfg or ModelConfig()
    cfg.validate()
    model = SegModel(cfg)
    init_weights(model, cfg.seed)
    if cfg.init:
        load_pretrained_encoder(model, cfg.init)
    return model


def forward(model: SegModel, batch) -> torch.Tensor:
    """Logits (N, 2, H, W) for a batch given as a tensor or array."""
    x = torch.as_tensor(np.asarray(batch, dtype=np.float32)) if not isinstance(batch, torch.Tensor) else batch
    return model(x)


def building_probability(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the two classes; channel 1 is "building"."""
    return torch.softmax(logits, dim=1)[:, 1]


FROZEN, UNFROZEN = "frozen", "unfrozen"


def set_frozen(model: SegModel, policy: str) -> None:
    """``frozen``: only the head trains. ``unfrozen``: everything trains."""
    if policy not in (FROZEN, UNFROZEN):
        raise ValueError(f"policy must be {FROZEN!r} or {UNFROZEN!r}, got {policy!r}")
    frozen = {n for n in model.param_groups() if n != "head"} if policy == FROZEN else set()
    for name, mod in model.param_groups().items():
        for p in mod.parameters():
            p.requires_grad_(name not in frozen)
    model._frozen = frozen
    model.train(model.training)


# -- named-tensor archives ---------------------------------------------------
#
# Layout: 8-byte little-endian length L, then L bytes of UTF-8 JSON index,
# then the raw tensor bytes. The index maps
#   {"tensors": {name: {"shape": [...], "dtype": "float32", "offset": int, "nbytes": int}},
#    "metadata": {...}}
# with offsets relative to the start of the data section.

ARCHIVE_MAGIC = b"GSTENSOR"
_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64, "uint8": np.uint8}


def save_tensor_archive(tensors: dict, path, metadata: dict | None = None) -> None:
    index, chunks, offset = {}, [], 0
    for name in sorted(tensors):
        # np.array rather than ascontiguousarray: the latter promotes 0-d scalars to shape (1,)
        arr = np.array(tensors[name].detach().cpu().numpy()
                       if isinstance(tensors[name], torch.Tensor) else tensors[name], order="C")
        dt = arr.dtype.name
        if dt not in _DTYPES:
            raise WeightFileError(f"tensor {name!r}: unsupported dtype {dt}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": dt, "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps({"tensors": index, "metadata": metadata or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        for c in chunks:
            f.write(c)


def load_tensor_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != ARCHIVE_MAGIC:
        raise WeightFileError(f"{path}: not a tensor archive")
    n = int.from_bytes(data[8:16], "little")
    try:
        head = json.loads(data[16:16 + n])
    except ValueError as exc:
        raise WeightFileError(f"{path}: corrupt index ({exc})") from None
    base = 16 + n
    out = {}
    for name, meta in head["tensors"].items():
        dt = np.dtype(_DTYPES[meta["dtype"]]).newbyteorder("<")
        start = base + meta["offset"]
        buf = data[start:start + meta["nbytes"]]
        if len(buf) != meta["nbytes"]:
            raise WeightFileError(f"{path}: tensor {name!r} truncated")
        out[name] = np.frombuffer(buf, dtype=dt).reshape(meta["shape"]).astype(dt.newbyteorder("="))
    return out, head.get("metadata", {})


def _group_of(name: str) -> str:
    parts = name.split(".")
    if parts[0] in ("conv1", "bn1"):
        return "stem"
    if parts[0].startswith("layer"):
        return f"stage {parts[0][5:]}"
    return parts[0]


def encoder_state(model: SegModel) -> dict[str, torch.Tensor]:
    return {k: v for k, v in model.encoder.state_dict().items() if not k.endswith("num_batches_tracked")}


def save_encoder(model: SegModel, path) -> None:
    save_tensor_archive(encoder_state(model), path, {"kind": "encoder"})


def load_pretrained_encoder(model: SegModel, path) -> None:
    """Replace encoder weights from an archive; decoder and head are untouched.

    Keys may carry a torchvision-style ``encoder.`` prefix or none. Extra
    keys (e.g. a classifier ``fc``) are ignored.
    """
    tensors, _ = load_tensor_archive(path)
    tensors = {k[len("encoder."):] if k.startswith("encoder.") else k: v for k, v in tensors.items()}
    own = encoder_state(model)
    missing = sorted(set(own) - set(tensors))
    if missing:
        raise WeightFileError(f"{path}: missing encoder tensors for {_group_of(missing[0])} (e.g. {missing[0]})")
    for k, ref in own.items():
        if tuple(tensors[k].shape) != tuple(ref.shape):
            raise WeightFileError(
                f"{path}: shape mismatch in {_group_of(k)}: {k} is {tuple(tensors[k].shape)}, "
                f"model expects {tuple(ref.shape)}")
    with torch.no_grad():
        for k, ref in own.items():
            ref.copy_(torch.from_numpy(np.array(tensors[k])).to(ref.dtype))


def save_checkpoint(model: SegModel, path, **metadata) -> None:
    state = {k: v for k, v in model.state_dict().items()}
    meta = {"config": _cfg_dict(model.cfg), **metadata}
    save_tensor_archive(state, path, meta)


def load_checkpoint(path) -> tuple[SegModel, dict]:
    tensors, meta = load_tensor_archive(path)
    cfg = ModelConfig(**{**meta["config"], "init": None})
    model = SegModel(cfg)
    state = model.state_dict()
    for k in state:
        if k not in tensors:
            raise WeightFileError(f"{path}: checkpoint lacks {k}")
        if tuple(tensors[k].shape) != tuple(state[k].shape):
            raise WeightFileError(f"{path}: shape mismatch for {k}")
    model.load_state_dict({k: torch.from_numpy(np.array(tensors[k])) for k in state})
    return model, meta


def _cfg_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
