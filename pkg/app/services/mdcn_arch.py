"""
Mixed-Dense Connection Network.

The network is head (two 3x3 convs + ReLU) -> n_blocks MDCBs -> tail
(3x3 conv to r*r*F channels, pixel shuffle, 3x3 conv to RGB). Each MDCB chains
dual-link units, each of which adds a residual to the last F channels and
appends K new channels, then fuses F + n*K channels back to F with a 1x1 conv
and a block-level skip.

Forward passes come in two flavours: plain (inference) and taped, where the
tape holds what the hand-written backward needs.
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from app.core.errors import DimensionError, UnsupportedFactorError
from app.models.schemas import NetConfig
from app.services.tensor_core import (
    ConvParams, Tensor, add, add_backward, as_tensor, concat_backward, concat_channels,
    conv2d, conv2d_backward, pixel_shuffle, pixel_shuffle_backward, relu, relu_backward,
    slice_backward, slice_channels,
)

logger = logging.getLogger(__name__)

# DIV2K RGB mean, used only when NetConfig.mean_shift is on
DIV2K_MEAN = np.array([0.4488, 0.4371, 0.4040])

RECURRENT_FACTORS = (2, 4, 8)


@dataclass(frozen=True)
class DualLinkUnitParams:
    conv: ConvParams


@dataclass(frozen=True)
class MDCBParams:
    units: Tuple[DualLinkUnitParams, ...]
    fusion: ConvParams

    @property
    def feat(self) -> int:
        return self.fusion.out_channels

    @property
    def growth(self) -> int:
        return self.units[0].conv.out_channels - self.feat


class ModelParams:
    """Named, ordered parameter tensors of one network plus its NetConfig"""

    def __init__(self, config: NetConfig, tensors: Dict[str, np.ndarray]):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> List[str]:
        return list(self.tensors)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def conv(self, prefix: str) -> ConvParams:
        return ConvParams(self.tensors[f"{prefix}.weight"], self.tensors[f"{prefix}.bias"])

    @property
    def head(self) -> Tuple[ConvParams, ConvParams]:
        return self.conv("head.0"), self.conv("head.1")

    @property
    def blocks(self) -> List[MDCBParams]:
        return [self.block(b) for b in range(self.config.n_blocks)]

    def block(self, b: int) -> MDCBParams:
        units = tuple(DualLinkUnitParams(self.conv(f"blocks.{b}.units.{u}"))
                      for u in range(self.config.n_units))
        return MDCBParams(units=units, fusion=self.conv(f"blocks.{b}.fusion"))

    @property
    def tail_expand(self) -> ConvParams:
        return self.conv("tail_expand")

    @property
    def tail_out(self) -> ConvParams:
        return self.conv("tail_out")

    @property
    def upscale(self) -> int:
        """Sub-pixel factor implied by the tail_expand width"""
        return math.isqrt(self.tail_expand.out_channels // self.config.feat)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config.model_copy(), {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config.model_copy(), {k: v.astype(dtype) for k, v in self.tensors.items()})

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def channel_schedule(cfg: NetConfig) -> List[int]:
    """Feature width entering unit 0..n-1 and, last, the width entering the fusion conv"""
    return [cfg.feat + i * cfg.growth for i in range(cfg.n_units + 1)]


def conv_layout(cfg: NetConfig, r: Optional[int] = None) -> List[Tuple[str, int, int, int]]:
    """(name, Cin, Cout, k) of every conv in deterministic order"""
    r = r or cfg.upscale
    f, k = cfg.feat, cfg.growth
    layout = [("head.0", cfg.in_channels, f, 3), ("head.1", f, f, 3)]
    widths = channel_schedule(cfg)
    for b in range(cfg.n_blocks):
        for u in range(cfg.n_units):
            layout.append((f"blocks.{b}.units.{u}", widths[u], f + k, 3))
        layout.append((f"blocks.{b}.fusion", widths[-1], f, 1))
    layout.append(("tail_expand", f, r * r * f, 3))
    layout.append(("tail_out", f, 3, 3))
    return layout


def _init_conv(rng: np.random.Generator, cin: int, cout: int, k: int, dtype) -> Tuple[np.ndarray, np.ndarray]:
    bound = math.sqrt(1.0 / (cin * k * k))
    weight = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    return weight, np.zeros(cout, dtype=dtype)


def build_model(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, fixed draw order"""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, cin, cout, k in conv_layout(cfg):
        weight, bias = _init_conv(rng, cin, cout, k, np.float64)
        tensors[f"{name}.weight"] = weight.astype(dtype)
        tensors[f"{name}.bias"] = bias.astype(dtype)
    params = ModelParams(cfg, tensors)
    _assert_channel_accounting(params)
    logger.info(f"🧱 Built MDCN F={cfg.feat} K={cfg.growth} blocks={cfg.n_blocks} units={cfg.n_units} "
                f"r={cfg.upscale} in={cfg.in_channels}: {count_params(params).total:,} parameters")
    return params


def _assert_channel_accounting(params: ModelParams):
    cfg = params.config
    widths = channel_schedule(cfg)
    for b, block in enumerate(params.blocks):
        for u, unit in enumerate(block.units):
            if unit.conv.in_channels != widths[u] or unit.conv.out_channels != cfg.feat + cfg.growth:
                raise DimensionError(f"blocks.{b}.units.{u} breaks the F + i*K schedule",
                                     unit.conv.weight.shape, (cfg.feat + cfg.growth, widths[u]))
        if block.fusion.in_channels != cfg.fused_width:
            raise DimensionError(f"blocks.{b}.fusion must read F + n*K = {cfg.fused_width} channels",
                                 block.fusion.weight.shape)


class ParamRow(NamedTuple):
    name: str
    shape: Tuple[int, ...]
    count: int


class ParamCount(NamedTuple):
    total: int
    rows: List[ParamRow]


def count_params(params: ModelParams) -> ParamCount:
    rows = [ParamRow(name, tuple(t.shape), int(t.size)) for name, t in params.items()]
    return ParamCount(sum(r.count for r in rows), rows)


# Dual-link unit

def _dual_link(x: Tensor, unit: DualLinkUnitParams, feat: int, growth: int):
    c = x.shape[1]
    if c < feat:
        raise DimensionError(f"dual-link unit needs at least F={feat} input channels", x.shape)
    if unit.conv.out_channels != feat + growth:
        raise DimensionError("dual-link conv must produce F + K channels", unit.conv.weight.shape)
    z = conv2d(x, unit.conv)
    y = relu(z)
    parts = []
    if c > feat:
        parts.append(slice_channels(x, 0, c - feat))
    parts.append(add(slice_channels(x, c - feat, c), slice_channels(y, 0, feat)))
    parts.append(slice_channels(y, feat, feat + growth))
    return concat_channels(parts), (x, z)


def dual_link_forward(x: Tensor, unit: DualLinkUnitParams, feat: int, growth: int) -> Tensor:
    """concat(x[:C-F], x[C-F:] + relu(conv(x))[:F], relu(conv(x))[F:])"""
    out, _ = _dual_link(x, unit, feat, growth)
    return out


def dual_link_backward(grad_out: Tensor, cache, unit: DualLinkUnitParams, feat: int, growth: int):
    """Returns (grad_input, grad_weight, grad_bias)"""
    x, z = cache
    c = x.shape[1]
    sizes = [c - feat, feat, growth] if c > feat else [feat, growth]
    pieces = concat_backward(grad_out, sizes)
    g_new = pieces[-1]
    g_x_tail, g_y_head = add_backward(pieces[-2])

    g_y = slice_backward(g_y_head, feat + growth, 0, feat) + slice_backward(g_new, feat + growth, feat, feat + growth)
    g_z = relu_backward(g_y, z)
    g_x, g_w, g_b = conv2d_backward(g_z, x, unit.conv)
    g_x = g_x + slice_backward(g_x_tail, c, c - feat, c)
    if c > feat:
        g_x = g_x + slice_backward(pieces[0], c, 0, c - feat)
    return g_x, g_w, g_b


# Mixed-dense connection block

def _mdcb(x: Tensor, block: MDCBParams):
    feat, growth = block.feat, block.growth
    if x.shape[1] != feat:
        raise DimensionError(f"MDCB input must have exactly F={feat} channels", x.shape)
    h = x
    caches = []
    for unit in block.units:
        h, cache = _dual_link(h, unit, feat, growth)
        caches.append(cache)
    expected = feat + len(block.units) * growth
    if h.shape[1] != expected:
        raise DimensionError(f"pre-fusion width must be F + n*K = {expected}", h.shape)
    # final 1x1 gate has no ReLU
    fused = conv2d(h, block.fusion)
    return add(x, fused), (caches, h)


def mdcb_forward(x: Tensor, block: MDCBParams) -> Tensor:
    out, _ = _mdcb(x, block)
    return out


def mdcb_backward(grad_out: Tensor, cache, block: MDCBParams):
    """Returns (grad_input, [(gw, gb) per unit], (gw, gb) of the fusion conv)"""
    caches, h = cache
    g_skip, g_fused = add_backward(grad_out)
    g_h, gw_f, gb_f = conv2d_backward(g_fused, h, block.fusion)
    unit_grads = []
    for unit, unit_cache in zip(reversed(block.units), reversed(caches)):
        g_h, gw, gb = dual_link_backward(g_h, unit_cache, unit, block.feat, block.growth)
        unit_grads.append((gw, gb))
    unit_grads.reverse()
    return g_skip + g_h, unit_grads, (gw_f, gb_f)


# Full network

def _mean(params: ModelParams, channels: int, dtype) -> np.ndarray:
    return np.tile(DIV2K_MEAN, channels // 3).astype(dtype)[None, :, None, None]


def _mdcn(img, params: ModelParams, r: Optional[int] = None):
    cfg = params.config
    x = as_tensor(img, dtype=params.dtype)
    if x.shape[1] != cfg.in_channels:
        raise DimensionError(f"network expects {cfg.in_channels} input channels", x.shape)
    tail_r = params.upscale
    if r is not None:
        if r not in (2, 3):
            raise UnsupportedFactorError(f"sub-pixel factor must be 2 or 3, got {r}")
        if r != tail_r:
            raise DimensionError(f"tail is built for r={tail_r}, not r={r}", params.tail_expand.weight.shape)
    if cfg.mean_shift:
        x = x - _mean(params, cfg.in_channels, x.dtype)

    head0, head1 = params.head
    z0 = conv2d(x, head0)
    h0 = relu(z0)
    z1 = conv2d(h0, head1)
    h1 = relu(z1)

    body = h1
    block_caches = []
    for block in params.blocks:
        body, cache = _mdcb(body, block)
        block_caches.append(cache)
    if cfg.global_skip:
        body = add(body, h1)

    expanded = conv2d(body, params.tail_expand)
    shuffled = pixel_shuffle(expanded, tail_r)
    out = conv2d(shuffled, params.tail_out)
    if cfg.mean_shift:
        out = out + _mean(params, 3, out.dtype)
    tape = {"x": x, "z0": z0, "h0": h0, "z1": z1, "blocks": block_caches,
            "body": body, "shuffled": shuffled}
    return out, tape


def mdcn_forward(img, params: ModelParams, r: Optional[int] = None) -> Tensor:
    """One pass: N x in_channels x H x W -> N x 3 x rH x rW, unclamped"""
    out, _ = _mdcn(img, params, r)
    return out


def mdcn_forward_train(img, params: ModelParams):
    return _mdcn(img, params)


def mdcn_backward(grad_out: Tensor, tape, params: ModelParams) -> Tuple[Dict[str, np.ndarray], Tensor]:
    """Exact parameter gradients and the gradient w.r.t. the network input"""
    grads = {}

    def put(prefix, gw, gb):
        grads[f"{prefix}.weight"] = gw
        grads[f"{prefix}.bias"] = gb

    g, gw, gb = conv2d_backward(grad_out, tape["shuffled"], params.tail_out)
    put("tail_out", gw, gb)
    g = pixel_shuffle_backward(g, params.upscale)
    g, gw, gb = conv2d_backward(g, tape["body"], params.tail_expand)
    put("tail_expand", gw, gb)

    g_head_skip = 0
    if params.config.global_skip:
        g, g_head_skip = add_backward(g)

    for b in reversed(range(params.config.n_blocks)):
        g, unit_grads, fusion_grads = mdcb_backward(g, tape["blocks"][b], params.block(b))
        for u, (gw, gb) in enumerate(unit_grads):
            put(f"blocks.{b}.units.{u}", gw, gb)
        put(f"blocks.{b}.fusion", *fusion_grads)

    g = g + g_head_skip
    head0, head1 = params.head
    g = relu_backward(g, tape["z1"])
    g, gw, gb = conv2d_backward(g, tape["h0"], head1)
    put("head.1", gw, gb)
    g = relu_backward(g, tape["z0"])
    g, gw, gb = conv2d_backward(g, tape["x"], head0)
    put("head.0", gw, gb)

    ordered = {name: grads[name] for name in params.names()}
    return ordered, g


# Scale recurrence

def supported_factors(cfg: NetConfig) -> Tuple[int, ...]:
    return (3,) if cfg.upscale == 3 else RECURRENT_FACTORS


def recurrent_passes(factor: int) -> int:
    if factor not in RECURRENT_FACTORS:
        raise UnsupportedFactorError(
            f"scale recurrence composes x2 passes only; factor {factor} is not one of {RECURRENT_FACTORS}")
    return int(math.log2(factor))


def _recurrent_input(out: Tensor, in_channels: int) -> Tensor:
    """A 15-channel head sees the previous pass output replicated five times"""
    if in_channels == 3:
        return out
    return np.tile(out, (1, in_channels // 3, 1, 1))


def _recurrent_input_backward(grad: Tensor, in_channels: int) -> Tensor:
    if in_channels == 3:
        return grad
    n, _, h, w = grad.shape
    return grad.reshape(n, in_channels // 3, 3, h, w).sum(axis=1)


def scale_recurrent_sr(img, params: ModelParams, factor: int) -> Tensor:
    """Apply the x2 network log2(factor) times with one parameter set"""
    passes = recurrent_passes(factor)
    if params.upscale != 2:
        raise UnsupportedFactorError(f"scale recurrence needs an r=2 tail, this model has r={params.upscale}")
    x = img
    out = None
    for step in range(passes):
        out = mdcn_forward(x, params)
        if step + 1 < passes:
            x = _recurrent_input(out, params.config.in_channels)
    return out


def scale_recurrent_forward_train(img, params: ModelParams, passes: int):
    tapes = []
    x = img
    out = None
    for step in range(passes):
        out, tape = mdcn_forward_train(x, params)
        tapes.append(tape)
        if step + 1 < passes:
            x = _recurrent_input(out, params.config.in_channels)
    return out, tapes


def scale_recurrent_backward(grad_out: Tensor, tapes: Sequence[dict], params: ModelParams):
    """Backpropagate through every pass; shared-weight gradients are summed"""
    total = None
    g = grad_out
    for step in reversed(range(len(tapes))):
        grads, g = mdcn_backward(g, tapes[step], params)
        if total is None:
            total = grads
        else:
            for name, value in grads.items():
                total[name] = total[name] + value
        if step > 0:
            g = _recurrent_input_backward(g, params.config.in_channels)
    return total, g


def super_resolve(img, params: ModelParams, factor: int) -> Tensor:
    """Dispatch to the r=3 tail or to scale recurrence"""
    if factor == 3:
        if params.upscale != 3:
            raise UnsupportedFactorError("x3 needs a model with the r=3 tail")
        return mdcn_forward(img, params, r=3)
    return scale_recurrent_sr(img, params, factor)


# Model surgery for fine-tuning

def with_tail(params: ModelParams, r: int, seed: int = 0) -> ModelParams:
    """Copy head and body, draw a fresh tail for sub-pixel factor r"""
    if r not in (2, 3):
        raise UnsupportedFactorError(f"tail factor must be 2 or 3, got {r}")
    cfg = params.config.model_copy(update={"scale": 3 if r == 3 else 2})
    fresh = build_model(cfg, seed=seed, dtype=params.dtype)
    tensors = {}
    for name in fresh.names():
        if name.startswith("tail_"):
            tensors[name] = fresh[name]
        else:
            tensors[name] = params[name].copy()
    return ModelParams(cfg, tensors)


def widen_head(params: ModelParams, in_channels: int = 15) -> ModelParams:
    """Video warm start: replicate the 3-channel first-layer weight, divided by the frame count"""
    if params.config.in_channels != 3 or in_channels % 3 != 0:
        raise DimensionError("widen_head starts from a 3-channel model", params["head.0.weight"].shape)
    frames = in_channels // 3
    tensors = {k: v.copy() for k, v in params.items()}
    tensors["head.0.weight"] = np.tile(params["head.0.weight"], (1, frames, 1, 1)) / frames
    cfg = params.config.model_copy(update={"in_channels": in_channels})
    logger.info(f"🎞️ Widened head to {in_channels} input channels")
    return ModelParams(cfg, tensors)
