"""Bi-dense super-resolution network assembly.

The graph is: 3x3 feature extraction -> densely connected intra blocks,
themselves wired by inter-block dense connections -> 1x1 global
compression with a global identity skip -> learned upsampling (either
transposed convolutions or a convolution feeding a pixel shuffle) ->
3x3 reconstruction back to RGB.

Each intra block is: 1x1 input compression, L densely connected 3x3
layers with ReLU (layer i consumes the concatenation of everything the
block produced so far), a 1x1 output compression over all L+1 feature
slabs, and a local skip from the compressed input.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autograd as ag
from .autograd import ConvParams, ShapeError, Tensor

__all__ = [
    "Variant",
    "ModelConfig",
    "IntraDenseBlock",
    "Upsampler",
    "Network",
    "base_config",
    "wo_comp_config",
    "build_network",
    "build_ablation",
    "intra_block_forward",
    "inter_forward",
    "forward",
    "count_params",
    "param_breakdown",
    "audit_shapes",
    "block_input_channels",
]


class Variant(str, Enum):
    DBDN = "dbdn"            # deconvolution upsampler
    DBDN_PLUS = "dbdn-plus"  # sub-pixel (conv + pixel shuffle) upsampler
    WO_INTER = "wo-inter"    # blocks chained in a line instead of densely wired
    WO_COMP = "wo-comp"      # one very deep block instead of many compressed ones


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; fully determines the network graph.

    ``concat_extraction`` widens every inter-block concatenation with the
    extraction features as well (an alternative reading of the wiring);
    the default keeps block b >= 2 consuming only the preceding blocks'
    outputs.
    """

    variant: Variant = Variant.DBDN
    blocks: int = 16
    layers: int = 8
    n_r: int = 64
    n_g: int = 64
    scale: int = 2
    concat_extraction: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        for name in ("blocks", "layers", "n_r", "n_g"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.variant is Variant.WO_COMP and self.blocks != 1:
            raise ValueError("the single-block variant requires blocks=1")


def base_config(variant: Variant = Variant.DBDN, scale: int = 2) -> ModelConfig:
    """The published preset: 16 blocks of 8 dense layers, 64 channels throughout."""
    return ModelConfig(variant=variant, blocks=16, layers=8, n_r=64, n_g=64, scale=scale)


def wo_comp_config(scale: int = 2) -> ModelConfig:
    """Single-block ablation preset: 128 dense layers with 16 filters each."""
    return ModelConfig(variant=Variant.WO_COMP, blocks=1, layers=128,
                       n_r=64, n_g=16, scale=scale)


@dataclass
class IntraDenseBlock:
    input_compression: ConvParams        # 1x1, widens-in -> n_r
    dense_layers: list[ConvParams]       # 3x3, n_r + (i-1)*n_g -> n_g, ReLU
    output_compression: ConvParams       # 1x1, n_r + L*n_g -> n_r


@dataclass
class Upsampler:
    kind: str                 # "deconv" or "subpixel"
    convs: list[ConvParams]
    shuffle: int = 1          # pixel-shuffle factor when kind == "subpixel"


@dataclass
class Network:
    config: ModelConfig
    extraction: ConvParams
    blocks: list[IntraDenseBlock]
    global_compression: ConvParams
    upsampler: Upsampler
    reconstruction: ConvParams

    def conv_layers(self) -> list[tuple[str, ConvParams]]:
        """All conv layers with their canonical names, in build order."""
        items = [("extraction", self.extraction)]
        for b, blk in enumerate(self.blocks, start=1):
            items.append((f"blocks.{b}.input_compression", blk.input_compression))
            for i, p in enumerate(blk.dense_layers, start=1):
                items.append((f"blocks.{b}.dense.{i}", p))
            items.append((f"blocks.{b}.output_compression", blk.output_compression))
        items.append(("global_compression", self.global_compression))
        for i, p in enumerate(self.upsampler.convs, start=1):
            items.append((f"upsampler.{i}", p))
        items.append(("reconstruction", self.reconstruction))
        return items

    def parameters(self) -> list[tuple[str, Tensor]]:
        """(name, tensor) pairs in canonical build order; defines checkpoint order."""
        out = []
        for name, p in self.conv_layers():
            out.append((f"{name}.weight", p.weight))
            out.append((f"{name}.bias", p.bias))
        return out

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self, x)


# ---------------------------------------------------------------------------
# Construction


def _init_conv(rng: np.random.Generator, in_c: int, out_c: int, k: int,
               stride: int, padding: int, transposed: bool, dtype) -> ConvParams:
    # fan-in-scaled uniform init, zero biases
    bound = float(np.sqrt(1.0 / (in_c * k * k)))
    shape = (in_c, out_c, k, k) if transposed else (out_c, in_c, k, k)
    weight = rng.uniform(-bound, bound, size=shape).astype(dtype)
    bias = np.zeros((1, out_c, 1, 1), dtype=dtype)
    return ConvParams(Tensor(weight, dtype=dtype), Tensor(bias, dtype=dtype),
                      stride=stride, padding=padding, transposed=transposed)


def block_input_channels(cfg: ModelConfig, b: int) -> int:
    """Channels arriving at block ``b`` (1-indexed) before input compression."""
    if cfg.variant in (Variant.WO_INTER, Variant.WO_COMP) or b == 1:
        return cfg.n_r
    width = cfg.n_r * (b - 1)
    if cfg.concat_extraction:
        width += cfg.n_r
    return width


def _build_upsampler(cfg: ModelConfig, rng: np.random.Generator, dtype) -> Upsampler:
    n_r, a = cfg.n_r, cfg.scale
    if cfg.variant is Variant.DBDN_PLUS:
        conv = _init_conv(rng, n_r, a * a * n_r, 3, 1, 1, transposed=False, dtype=dtype)
        return Upsampler("subpixel", [conv], shuffle=a)
    if a == 2:
        stages = [(6, 2, 2)]
    elif a == 3:
        stages = [(9, 3, 3)]
    else:
        stages = [(6, 2, 2), (6, 2, 2)]
    convs = [_init_conv(rng, n_r, n_r, k, s, p, transposed=True, dtype=dtype)
             for k, s, p in stages]
    return Upsampler("deconv", convs)


def build_network(cfg: ModelConfig, rng_seed: int = 0, dtype=np.float32) -> Network:
    """Allocate and initialize every layer; deterministic for a fixed seed."""
    rng = np.random.default_rng(rng_seed)
    extraction = _init_conv(rng, 3, cfg.n_r, 3, 1, 1, transposed=False, dtype=dtype)
    blocks = []
    for b in range(1, cfg.blocks + 1):
        in_c = block_input_channels(cfg, b)
        input_comp = _init_conv(rng, in_c, cfg.n_r, 1, 1, 0, transposed=False, dtype=dtype)
        dense = [
            _init_conv(rng, cfg.n_r + (i - 1) * cfg.n_g, cfg.n_g, 3, 1, 1,
                       transposed=False, dtype=dtype)
            for i in range(1, cfg.layers + 1)
        ]
        output_comp = _init_conv(rng, cfg.n_r + cfg.layers * cfg.n_g, cfg.n_r,
                                 1, 1, 0, transposed=False, dtype=dtype)
        blocks.append(IntraDenseBlock(input_comp, dense, output_comp))
    global_comp = _init_conv(rng, cfg.blocks * cfg.n_r, cfg.n_r, 1, 1, 0,
                             transposed=False, dtype=dtype)
    upsampler = _build_upsampler(cfg, rng, dtype)
    reconstruction = _init_conv(rng, cfg.n_r, 3, 3, 1, 1, transposed=False, dtype=dtype)
    return Network(cfg, extraction, blocks, global_comp, upsampler, reconstruction)


def build_ablation(cfg: ModelConfig, rng_seed: int = 0, dtype=np.float32) -> Network:
    """Build one of the two structural ablations (chained blocks / single deep block)."""
    if cfg.variant not in (Variant.WO_INTER, Variant.WO_COMP):
        raise ValueError(f"not an ablation variant: {cfg.variant.value}")
    return build_network(cfg, rng_seed, dtype)


# ---------------------------------------------------------------------------
# Forward


def intra_block_forward(block: IntraDenseBlock, x: Tensor) -> Tensor:
    """Compressed dense stack with a local skip from the compressed input."""
    l0 = ag.conv2d(x, block.input_compression)
    feats = [l0]
    for p in block.dense_layers:
        inp = feats[0] if len(feats) == 1 else ag.concat_channels(feats)
        feats.append(ag.relu(ag.conv2d(inp, p)))
    compressed = ag.conv2d(ag.concat_channels(feats), block.output_compression)
    return ag.add(compressed, l0)


def inter_forward(net: Network, l0: Tensor) -> Tensor:
    """Run the block stack on extraction features; returns compressed output + skip."""
    cfg = net.config
    chained = cfg.variant in (Variant.WO_INTER, Variant.WO_COMP)
    outs: list[Tensor] = []
    for block in net.blocks:
        if not outs:
            inp = l0
        elif chained:
            inp = outs[-1]
        else:
            parts = ([l0] if cfg.concat_extraction else []) + outs
            inp = parts[0] if len(parts) == 1 else ag.concat_channels(parts)
        outs.append(intra_block_forward(block, inp))
    h = outs[0] if len(outs) == 1 else ag.concat_channels(outs)
    t = ag.conv2d(h, net.global_compression)
    return ag.add(t, l0)


def _upsample_forward(up: Upsampler, x: Tensor) -> Tensor:
    for p in up.convs:
        x = ag.conv2d_transpose(x, p) if up.kind == "deconv" else ag.conv2d(x, p)
    if up.kind == "subpixel":
        x = ag.pixel_shuffle(x, up.shuffle)
    return x


def forward(net: Network, x: Tensor) -> Tensor:
    """Map an RGB batch (n, 3, h, w) to (n, 3, scale*h, scale*w); output unclamped."""
    if x.shape[1] != 3:
        raise ShapeError(f"network input must have 3 channels, got {x.shape[1]}")
    l0 = ag.conv2d(x, net.extraction)
    g = inter_forward(net, l0)
    u = _upsample_forward(net.upsampler, g)
    return ag.conv2d(u, net.reconstruction)


# ---------------------------------------------------------------------------
# Accounting


def count_params(net: Network) -> int:
    """Exact total of weight and bias elements."""
    return sum(p.n_params() for _, p in net.conv_layers())


def param_breakdown(net: Network) -> list[tuple[str, int]]:
    """Per-subnetwork parameter totals in build order."""
    rows = [("extraction", net.extraction.n_params())]
    for b, blk in enumerate(net.blocks, start=1):
        n = (blk.input_compression.n_params()
             + sum(p.n_params() for p in blk.dense_layers)
             + blk.output_compression.n_params())
        rows.append((f"block {b}", n))
    rows.append(("global_compression", net.global_compression.n_params()))
    rows.append(("upsampler", sum(p.n_params() for p in net.upsampler.convs)))
    rows.append(("reconstruction", net.reconstruction.n_params()))
    return rows


def audit_shapes(net: Network, h: int = 8, w: int = 8) -> list[tuple[str, int, int, int, int]]:
    """Dry-run shape propagator.

    Walks the exact forward wiring on symbolic (channels, height, width)
    triples, asserting that every conv layer's declared in_channels equals
    the channel count actually arriving at it.  Returns one row per layer:
    (name, in_channels, out_channels, out_h, out_w).
    """
    cfg = net.config
    rows: list[tuple[str, int, int, int, int]] = []

    def visit(name: str, p: ConvParams, c: int, hh: int, ww: int) -> tuple[int, int, int]:
        if p.in_channels != c:
            raise ShapeError(
                f"{name}: {c} channels arrive but layer expects {p.in_channels}"
            )
        kh, kw = p.kernel
        if p.transposed:
            nh = (hh - 1) * p.stride - 2 * p.padding + kh
            nw = (ww - 1) * p.stride - 2 * p.padding + kw
        else:
            nh = (hh + 2 * p.padding - kh) // p.stride + 1
            nw = (ww + 2 * p.padding - kw) // p.stride + 1
        rows.append((name, c, p.out_channels, nh, nw))
        return p.out_channels, nh, nw

    c, hh, ww = visit("extraction", net.extraction, 3, h, w)
    root_c = c
    chained = cfg.variant in (Variant.WO_INTER, Variant.WO_COMP)
    outs: list[int] = []
    for b, blk in enumerate(net.blocks, start=1):
        if not outs:
            in_c = root_c
        elif chained:
            in_c = outs[-1]
        else:
            in_c = sum(outs) + (root_c if cfg.concat_extraction else 0)
        c, hh, ww = visit(f"blocks.{b}.input_compression", blk.input_compression,
                          in_c, hh, ww)
        l0_c = c
        feat_c = [c]
        for i, p in enumerate(blk.dense_layers, start=1):
            c, hh, ww = visit(f"blocks.{b}.dense.{i}", p, sum(feat_c), hh, ww)
            feat_c.append(c)
        c, hh, ww = visit(f"blocks.{b}.output_compression", blk.output_compression,
                          sum(feat_c), hh, ww)
        if c != l0_c:
            raise ShapeError(f"blocks.{b}: local skip joins {l0_c} vs {c} channels")
        outs.append(c)
    c, hh, ww = visit("global_compression", net.global_compression, sum(outs), hh, ww)
    if c != root_c:
        raise ShapeError(f"global skip joins {root_c} vs {c} channels")
    for i, p in enumerate(net.upsampler.convs, start=1):
        c, hh, ww = visit(f"upsampler.{i}", p, c, hh, ww)
    if net.upsampler.kind == "subpixel":
        a = net.upsampler.shuffle
        if c % (a * a):
            raise ShapeError(f"upsampler feeds {c} channels, not divisible by {a}^2")
        c, hh, ww = c // (a * a), hh * a, ww * a
    c, hh, ww = visit("reconstruction", net.reconstruction, c, hh, ww)
    if c != 3:
        raise ShapeError(f"reconstruction must emit 3 channels, emits {c}")
    if (hh, ww) != (h * cfg.scale, w * cfg.scale):
        raise ShapeError(
            f"output {hh}x{ww} is not {cfg.scale}x the {h}x{w} input"
        )
    return rows
