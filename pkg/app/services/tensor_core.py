"""
Dense NCHW tensor primitives with hand-written backward passes.

Tensors are plain numpy arrays of rank 4 laid out (N, C, H, W) in C order, so
element (n, c, h, w) sits at flat offset ((n*C + c)*H + h)*W + w. Training and
inference run in float32; float64 is used for gradient checking only. Every
function here is pure: inputs are never written to.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.errors import DimensionError

logger = logging.getLogger(__name__)

Tensor = np.ndarray

KERNEL_SIZES = (1, 3)


def as_tensor(x, dtype=np.float32) -> Tensor:
    """Validate (or coerce) a 4-D NCHW array of the given precision"""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise DimensionError(f"expected a 4-D NCHW tensor, got rank {arr.ndim}", arr.shape)
    return arr


@dataclass(frozen=True)
class ConvParams:
    """Weight (Cout, Cin, k, k) and bias (Cout,) of one convolution"""
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w, b = self.weight, self.bias
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] not in KERNEL_SIZES:
            raise DimensionError("conv weight must be Cout x Cin x k x k with k in {1, 3}", w.shape)
        if b.shape != (w.shape[0],):
            raise DimensionError("conv bias length must equal Cout", b.shape, w.shape)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


def _same_padding(params: ConvParams, padding) -> int:
    if padding is None:
        return params.kernel // 2
    if padding < 0:
        raise ValueError("padding must be non-negative")
    return padding


def _pad(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant")


def _check_conv_input(x: Tensor, params: ConvParams):
    if x.ndim != 4 or x.shape[1] != params.in_channels:
        raise DimensionError("conv2d input channels do not match the weight", x.shape, params.weight.shape)


def conv2d_direct(x: Tensor, params: ConvParams, padding: int = None) -> Tensor:
    """Reference convolution: one channel contraction per kernel tap"""
    _check_conv_input(x, params)
    p = _same_padding(params, padding)
    k = params.kernel
    xp = _pad(x, p)
    n, _, hp, wp = xp.shape
    h_out, w_out = hp - k + 1, wp - k + 1
    out = np.zeros((n, params.out_channels, h_out, w_out), dtype=np.result_type(x, params.weight))
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + h_out, j:j + w_out]
            out += np.einsum("nchw,oc->nohw", patch, params.weight[:, :, i, j], optimize=True)
    out += params.bias[None, :, None, None]
    return out


def conv2d_im2col(x: Tensor, params: ConvParams, padding: int = None) -> Tensor:
    """Fast path: strided window view contracted against the flattened kernel"""
    _check_conv_input(x, params)
    p = _same_padding(params, padding)
    k = params.kernel
    xp = _pad(x, p)
    # cols: (N, Cin, H_out, W_out, k, k), a view with no copy
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.tensordot(cols, params.weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d(x: Tensor, params: ConvParams, padding: int = None, method: str = "im2col") -> Tensor:
    """
    Same-size 2-D convolution with zero padding.

    out(n, co, h, w) = bias(co) + sum_{ci,i,j} weight(co, ci, i, j) * xpad(n, ci, h+i, w+j)
    """
    if method == "im2col":
        return conv2d_im2col(x, params, padding)
    if method == "direct":
        return conv2d_direct(x, params, padding)
    raise ValueError(f"unknown conv method '{method}'")


def conv2d_backward(grad_out: Tensor, x: Tensor, params: ConvParams,
                    padding: int = None) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Gradients of the loss w.r.t. input, weight and bias"""
    _check_conv_input(x, params)
    p = _same_padding(params, padding)
    k = params.kernel
    n, _, h, w = x.shape
    expected = (n, params.out_channels, h + 2 * p - k + 1, w + 2 * p - k + 1)
    if grad_out.shape != expected:
        raise DimensionError("conv2d grad_out does not match the forward output", grad_out.shape, expected)

    xp = _pad(x, p)
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    grad_weight = np.tensordot(grad_out, cols, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad_out.sum(axis=(0, 2, 3))

    # Input gradient is a full correlation of grad_out with the flipped kernel
    q = k - 1 - p
    if q >= 0:
        gp = _pad(grad_out, q)
    else:
        gp = grad_out[:, :, -q:q, -q:q]
    flipped = params.weight[:, :, ::-1, ::-1]
    gcols = sliding_window_view(gp, (k, k), axis=(2, 3))
    grad_input = np.tensordot(gcols, flipped, axes=([1, 4, 5], [0, 2, 3]))
    grad_input = np.ascontiguousarray(grad_input.transpose(0, 3, 1, 2))
    return grad_input, grad_weight.astype(params.weight.dtype, copy=False), grad_bias.astype(params.bias.dtype, copy=False)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    """Upstream gradient masked by indicator(x > 0)"""
    return grad_out * (x > 0)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError("add requires identical shapes", a.shape, b.shape)
    return a + b


def add_backward(grad_out: Tensor) -> Tuple[Tensor, Tensor]:
    return grad_out, grad_out


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for t in parts[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise DimensionError("concat_channels requires identical N, H, W", ref, t.shape)
    return np.concatenate(parts, axis=1)


def concat_backward(grad_out: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    """Split grad_out back into per-argument channel ranges"""
    if sum(sizes) != grad_out.shape[1]:
        raise DimensionError("concat sizes do not add up to the gradient width", grad_out.shape, tuple(sizes))
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad_out, bounds, axis=1)]


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"invalid channel slice [{start}, {stop})", x.shape)
    return x[:, start:stop].copy()


def slice_backward(grad_out: Tensor, channels: int, start: int, stop: int) -> Tensor:
    """Scatter grad_out into a zero tensor of the sliced input's width"""
    if grad_out.shape[1] != stop - start:
        raise DimensionError("slice gradient width mismatch", grad_out.shape, (stop - start,))
    n, _, h, w = grad_out.shape
    grad = np.zeros((n, channels, h, w), dtype=grad_out.dtype)
    grad[:, start:stop] = grad_out
    return grad


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """
    Rearrange (N, r*r*C, H, W) into (N, C, r*H, r*W).

    out(n, c, h, w) = in(n, c*r*r + r*(h mod r) + (w mod r), h // r, w // r)
    Checkpoints depend on this channel order.
    """
    n, c, h, w = x.shape
    if r < 1 or c % (r * r) != 0:
        raise DimensionError(f"pixel_shuffle channels not divisible by r^2={r * r}", x.shape)
    out_c = c // (r * r)
    y = x.reshape(n, out_c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(n, out_c, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of pixel_shuffle"""
    n, c, h, w = x.shape
    if r < 1 or h % r != 0 or w % r != 0:
        raise DimensionError(f"pixel_unshuffle spatial size not divisible by r={r}", x.shape)
    y = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y.reshape(n, c * r * r, h // r, w // r))


def pixel_shuffle_backward(grad_out: Tensor, r: int) -> Tensor:
    return pixel_unshuffle(grad_out, r)
