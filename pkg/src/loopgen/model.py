"""Small video UNet with routed cross-attention and temporal attention.

Layout: ``conv_in`` (9 -> C), two down blocks, one middle block, two up
blocks with skip connections, ``conv_out`` (C -> 4). Every block runs a
residual conv unit, a cross-attention whose context is chosen per level by
a :class:`RoutingConfig`, and a temporal attention unit (``Temm``) with a
36-slot positional table.

Weights live in a flat ``name -> array`` dict. :func:`forward` accepts an
override mapping so a training step can substitute tape-watched leaves for
the trainable subset while frozen weights stay plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

from . import numerics as nx
from .errors import CapacityError, ContractError, DimensionError, ParameterError

IMAGE = "image"
TEXT = "text"

POS_SLOTS = 36
IN_CHANNELS = 9
OUT_CHANNELS = 4

GROUPS = ("conv_in", "CAB", "TEMM.Q", "TEMM.K", "TEMM.V", "TEMM.other", "backbone")
TEMM_GROUPS = frozenset({"TEMM.Q", "TEMM.K", "TEMM.V", "TEMM.other"})
STAGE_GROUPS = {
    1: frozenset({"conv_in", "CAB"}) | TEMM_GROUPS,
    2: frozenset({"conv_in"}) | TEMM_GROUPS,
    3: frozenset({"conv_in", "TEMM.Q", "TEMM.V"}),
}

# Reference parameter counts (millions, fp32) of the full-size network. Not
# reproducible here; kept for the arithmetic identity on stage 3's total.
FULL_SCALE_MILLIONS = {
    "conv_in": 0.10,
    "CAB": 969.63,
    "TEMM": 1668.55,
    "TEMM.Q": 151.55,
    "TEMM.K": 151.55,
    "TEMM.V": 151.55,
}
FULL_SCALE_STAGE3_MILLIONS = 303.2

DOWN_BLOCKS = ("down0", "down1")
UP_BLOCKS = ("up0", "up1")
BLOCKS = DOWN_BLOCKS + ("mid",) + UP_BLOCKS


@dataclass(frozen=True)
class RoutingConfig:
    down_source: Optional[str]
    middle_source: Optional[str]
    up_source: Optional[str]

    def __post_init__(self):
        for src in (self.down_source, self.middle_source, self.up_source):
            if src not in (IMAGE, TEXT, None):
                raise ParameterError(f"unknown context source {src!r}")

    def source_for(self, block: str) -> Optional[str]:
        if block in DOWN_BLOCKS:
            return self.down_source
        if block == "mid":
            return self.middle_source
        return self.up_source

    @property
    def sources(self) -> frozenset:
        return frozenset({self.down_source, self.middle_source, self.up_source}) - {None}


ROUTING_PRESETS = (
    RoutingConfig(IMAGE, TEXT, TEXT),
    RoutingConfig(IMAGE, None, TEXT),
    RoutingConfig(TEXT, TEXT, TEXT),
    RoutingConfig(IMAGE, IMAGE, IMAGE),
    RoutingConfig(TEXT, TEXT, IMAGE),
)


def routing_preset(index: int) -> RoutingConfig:
    if not 0 <= index < len(ROUTING_PRESETS):
        raise ParameterError(f"routing preset must be 0..{len(ROUTING_PRESETS) - 1}, got {index}")
    return ROUTING_PRESETS[index]


@dataclass(frozen=True)
class NetConfig:
    width: int = 32
    ctx_dim: int = 32
    routing_preset: int = 0

    @property
    def routing(self) -> RoutingConfig:
        return routing_preset(self.routing_preset)


@dataclass
class Temm:
    pos_embedding: object  # (36, d)
    q_proj: object
    k_proj: object
    v_proj: object
    out_proj: object
    out_bias: object


@dataclass
class CrossAttnWeights:
    q: object  # (d, d)
    k: object  # (d_ctx, d)
    v: object  # (d_ctx, d)
    out: object  # (d, d)
    out_bias: object


def group_of(name: str) -> str:
    if name.startswith("conv_in."):
        return "conv_in"
    if ".attn." in name:
        return "CAB"
    if ".temm." in name:
        leaf = name.rsplit(".", 1)[1]
        return {"q": "TEMM.Q", "k": "TEMM.K", "v": "TEMM.V"}.get(leaf, "TEMM.other")
    return "backbone"


class UNetLite:
    def __init__(self, config: NetConfig, params: Mapping[str, np.ndarray]):
        self.config = config
        self.params = dict(params)
        self.groups = {name: group_of(name) for name in self.params}

    @property
    def routing(self) -> RoutingConfig:
        return self.config.routing

    def names_in(self, groups) -> list:
        groups = set(groups)
        return [n for n in self.params if self.groups[n] in groups]

    def temm(self, block: str, p: Mapping) -> Temm:
        pre = f"{block}.temm."
        return Temm(p[pre + "pos"], p[pre + "q"], p[pre + "k"], p[pre + "v"], p[pre + "out"], p[pre + "out_b"])

    def cross_attn(self, block: str, p: Mapping) -> CrossAttnWeights:
        pre = f"{block}.attn."
        return CrossAttnWeights(p[pre + "q"], p[pre + "k"], p[pre + "v"], p[pre + "out"], p[pre + "out_b"])

    def shape_manifest(self) -> dict:
        return {name: list(a.shape) for name, a in self.params.items()}

    def copy(self) -> "UNetLite":
        return UNetLite(self.config, {k: v.copy() for k, v in self.params.items()})

    def config_dict(self) -> dict:
        return asdict(self.config)


# -- initialisation ------------------------------------------------------------


def sinusoidal_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    freq = np.exp(-math.log(10000.0) * 2 * i / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)[:, : d - d // 2]
    return table


def conv_in_extend(pretrained4: np.ndarray, rng: np.random.Generator, std: float = 1e-3) -> np.ndarray:
    """Widen a 4-channel input conv to 9 channels, keeping the first 4 as-is."""
    pretrained4 = np.asarray(pretrained4, dtype=np.float64)
    if pretrained4.ndim != 4 or pretrained4.shape[1] != 4:
        raise DimensionError(f"expected (C, 4, 3, 3) weights, got {pretrained4.shape}")
    extra = rng.standard_normal((pretrained4.shape[0], 5) + pretrained4.shape[2:]) * std
    return np.concatenate([pretrained4, extra], axis=1)


def init_unet(config: NetConfig = NetConfig(), seed: int = 0, extend_std: float = 1e-3) -> UNetLite:
    """Fixed-seed random network standing in for pretrained weights.

    The 4-channel input conv is drawn first, then widened to 9 channels with
    :func:`conv_in_extend`, exercising the same reuse path as a real
    checkpoint would.
    """
    rng = np.random.default_rng(seed)
    C, D = config.width, config.ctx_dim

    def dense(fan_in, fan_out, gain=1.0):
        return rng.standard_normal((fan_in, fan_out)) * gain / math.sqrt(fan_in)

    def conv(cout, cin, gain=1.0):
        return rng.standard_normal((cout, cin, 3, 3)) * gain / math.sqrt(9 * cin)

    p = {}
    p["conv_in.w"] = conv_in_extend(conv(C, 4), rng, extend_std)
    p["conv_in.b"] = np.zeros(C)
    p["time.w1"] = dense(C, C)
    p["time.b1"] = np.zeros(C)
    p["time.w2"] = dense(C, C)
    p["time.b2"] = np.zeros(C)
    for block in BLOCKS:
        cin = 2 * C if block in UP_BLOCKS else C
        pre = f"{block}.res."
        p[pre + "conv1.w"] = conv(C, cin)
        p[pre + "conv1.b"] = np.zeros(C)
        p[pre + "temb.w"] = dense(C, C)
        p[pre + "temb.b"] = np.zeros(C)
        p[pre + "conv2.w"] = conv(C, C, gain=0.5)
        p[pre + "conv2.b"] = np.zeros(C)
        if cin != C:
            p[pre + "skip.w"] = dense(cin, C)
        pre = f"{block}.attn."
        p[pre + "q"] = dense(C, C)
        p[pre + "k"] = dense(D, C)
        p[pre + "v"] = dense(D, C)
        p[pre + "out"] = dense(C, C, gain=0.2)
        p[pre + "out_b"] = np.zeros(C)
        pre = f"{block}.temm."
        p[pre + "pos"] = sinusoidal_table(POS_SLOTS, C)
        p[pre + "q"] = dense(C, C)
        p[pre + "k"] = dense(C, C)
        p[pre + "v"] = dense(C, C)
        p[pre + "out"] = dense(C, C, gain=0.2)
        p[pre + "out_b"] = np.zeros(C)
    p["conv_out.w"] = conv(OUT_CHANNELS, C)
    p["conv_out.b"] = np.zeros(OUT_CHANNELS)
    return UNetLite(config, p)


# -- building blocks -------------------------------------------------------------


def cross_attend(z, ctx, w: Optional[CrossAttnWeights]):
    """Residual cross-attention of ``z`` (``(..., L, d)``) onto ``ctx`` tokens.

    ``w is None`` (routing switched off) returns ``z`` untouched.
    """
    if w is None:
        return z
    if ctx is None or nx._val(ctx).ndim != 2 or nx._val(ctx).shape[0] == 0:
        raise ContractError("cross-attention needs a non-empty (L, d_ctx) context")
    q = nx.matmul(z, w.q)
    k = nx.matmul(ctx, w.k)
    v = nx.matmul(ctx, w.v)
    attn = nx.scaled_dot_attention(q, k, v)
    return nx.add(z, nx.add(nx.matmul(attn, w.out), w.out_bias))


def temporal_attend(z, temm: Temm):
    """Per-position self-attention across frames; ``z`` is ``(T, P, d)``."""
    T = nx._val(z).shape[0]
    slots = nx._val(temm.pos_embedding).shape[0]
    if T > slots:
        raise CapacityError(f"{T} frames exceed the {slots}-slot positional table")
    x = nx.transpose(z, (1, 0, 2))
    xp = nx.add(x, nx.getitem(temm.pos_embedding, slice(0, T)))
    q = nx.matmul(xp, temm.q_proj)
    k = nx.matmul(xp, temm.k_proj)
    v = nx.matmul(x, temm.v_proj)
    attn = nx.scaled_dot_attention(q, k, v)
    out = nx.add(x, nx.add(nx.matmul(attn, temm.out_proj), temm.out_bias))
    return nx.transpose(out, (1, 0, 2))


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half) / half)
    emb = np.zeros(dim)
    emb[:half] = np.sin(t * freq)
    emb[half : 2 * half] = np.cos(t * freq)
    return emb


def _res_block(p, pre, x, temb):
    C = nx._val(p[pre + "conv1.b"]).shape[0]
    h = nx.conv2d_3x3(nx.silu(x), p[pre + "conv1.w"], p[pre + "conv1.b"])
    tproj = nx.add(nx.matmul(nx.reshape(nx.silu(temb), (1, -1)), p[pre + "temb.w"]), p[pre + "temb.b"])
    h = nx.add(h, nx.reshape(tproj, (1, C, 1, 1)))
    h = nx.conv2d_3x3(nx.silu(h), p[pre + "conv2.w"], p[pre + "conv2.b"])
    if pre + "skip.w" in p:
        skip = nx.transpose(nx.matmul(nx.transpose(x, (0, 2, 3, 1)), p[pre + "skip.w"]), (0, 3, 1, 2))
    else:
        skip = x
    return nx.add(skip, h)


def _block(net: UNetLite, p, block, h, temb, ctx_by_source, routing: RoutingConfig):
    h = _res_block(p, f"{block}.res.", h, temb)
    T, C, H, W = nx._val(h).shape
    source = routing.source_for(block)
    if source is not None:
        tokens = nx.transpose(nx.reshape(h, (T, C, H * W)), (0, 2, 1))
        tokens = cross_attend(tokens, ctx_by_source[source], net.cross_attn(block, p))
        h = nx.reshape(nx.transpose(tokens, (0, 2, 1)), (T, C, H, W))
    seq = nx.transpose(nx.reshape(h, (T, C, H * W)), (0, 2, 1))
    seq = temporal_attend(seq, net.temm(block, p))
    return nx.reshape(nx.transpose(seq, (0, 2, 1)), (T, C, H, W))


def forward(
    net: UNetLite,
    z_c,
    t: int,
    image_ctx,
    text_ctx,
    routing: Optional[RoutingConfig] = None,
    params: Optional[Mapping] = None,
):
    """Predict the noise in ``z_c``'s first four channels.

    ``z_c`` is ``(T, 9, h, w)`` with ``h`` and ``w`` divisible by 4. Context
    tokens are ``(L, d_ctx)``; the one a routing leaves unused is never read.
    ``params`` overrides entries of ``net.params`` by name.
    """
    routing = net.routing if routing is None else routing
    p = net.params if params is None else {**net.params, **params}
    shape = nx._val(z_c).shape
    if len(shape) != 4 or shape[1] != IN_CHANNELS:
        raise DimensionError(f"expected (T, {IN_CHANNELS}, h, w) input, got {shape}")
    if shape[0] > POS_SLOTS:
        raise CapacityError(f"{shape[0]} frames exceed the {POS_SLOTS}-slot positional table")
    if shape[2] % 4 or shape[3] % 4:
        raise DimensionError(f"latent extents {shape[2]}x{shape[3]} must be divisible by 4")
    ctx = {IMAGE: image_ctx, TEXT: text_ctx}

    temb = timestep_embedding(t, net.config.width)
    temb = nx.add(nx.matmul(temb[None], p["time.w1"]), p["time.b1"])
    temb = nx.add(nx.matmul(nx.silu(temb), p["time.w2"]), p["time.b2"])

    h = nx.conv2d_3x3(z_c, p["conv_in.w"], p["conv_in.b"])
    skips = []
    for block in DOWN_BLOCKS:
        h = _block(net, p, block, h, temb, ctx, routing)
        skips.append(h)
        h = nx.avg_pool2(h)
    h = _block(net, p, "mid", h, temb, ctx, routing)
    for block in UP_BLOCKS:
        h = nx.concat([nx.upsample2(h), skips.pop()], axis=1)
        h = _block(net, p, block, h, temb, ctx, routing)
    return nx.conv2d_3x3(nx.silu(h), p["conv_out.w"], p["conv_out.b"])


# -- parameter accounting --------------------------------------------------------


def trainable_mask(net: Optional[UNetLite], stage: int) -> frozenset:
    """Parameter groups optimised in ``stage``; the network does not matter."""
    if stage not in STAGE_GROUPS:
        raise ParameterError(f"stage must be 1, 2 or 3, got {stage}")
    return STAGE_GROUPS[stage]


def param_report(net: UNetLite) -> dict:
    counts = {g: 0 for g in GROUPS}
    for name, arr in net.params.items():
        counts[net.groups[name]] += int(arr.size)
    return counts


def trainable_count(net: UNetLite, stage: int) -> int:
    report = param_report(net)
    return sum(report[g] for g in trainable_mask(net, stage))
