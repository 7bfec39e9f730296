"""
Differentiable network operations: convolutions, recurrent cells, layer
normalization and dropout.

Feature maps are laid out [N, C, H, W] (a leading batch axis is optional for
the convolutions: [C, H, W] inputs are accepted and returned unbatched).
Convolution is cross-correlation without kernel flip.
"""

from typing import NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from shared.constants import PADDING_CHOICES, PADDING_SAME, PADDING_VALID
from shared.exceptions import ConfigurationError, ContractViolation
from substrate.rng import RngStream
from substrate.tensor import Tensor, as_tensor, concat


class GateWeights(NamedTuple):
    """Kernel and bias producing the four stacked gates (i, f, o, g) of an LSTM cell."""
    kernel: Tensor
    bias: Tensor


# ----------------------------------------------------------------------
# Convolution geometry and raw kernels
# ----------------------------------------------------------------------

def _same_geometry(size: int, k: int, stride: int) -> Tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv_geometry(
    height: int,
    width: int,
    kernel_hw: Tuple[int, int],
    stride: int,
    padding: str
) -> Tuple[int, int, Tuple[int, int, int, int]]:
    """
    Output extents and (top, bottom, left, right) padding of a conv2d configuration.

    Raises:
        ConfigurationError: If stride or padding mode is invalid
        ContractViolation: If the kernel is larger than the padded input
    """
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if padding not in PADDING_CHOICES:
        raise ConfigurationError(f"padding must be one of {PADDING_CHOICES}, got {padding!r}")
    kh, kw = kernel_hw
    if padding == PADDING_SAME:
        ho, top, bottom = _same_geometry(height, kh, stride)
        wo, left, right = _same_geometry(width, kw, stride)
        return ho, wo, (top, bottom, left, right)
    if kh > height:
        raise ContractViolation(f"conv2d: kernel height {kh} exceeds input height {height}")
    if kw > width:
        raise ContractViolation(f"conv2d: kernel width {kw} exceeds input width {width}")
    return (height - kh) // stride + 1, (width - kw) // stride + 1, (0, 0, 0, 0)


def _windows(padded: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    view = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _correlate(padded: np.ndarray, kernel: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    """[N,C,Hp,Wp] x [O,C,kh,kw] -> [N,O,ho,wo]."""
    win = _windows(padded, kernel.shape[2], kernel.shape[3], stride, ho, wo)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter(dout: np.ndarray, kernel: np.ndarray, stride: int, padded_hw: Tuple[int, int]) -> np.ndarray:
    """Adjoint of `_correlate` w.r.t. its padded input: [N,O,ho,wo] -> [N,C,Hp,Wp]."""
    n, _, ho, wo = dout.shape
    _, c, kh, kw = kernel.shape
    result = np.zeros((n, c) + tuple(padded_hw), dtype=np.result_type(dout, kernel))
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            contribution = np.tensordot(dout, kernel[:, :, i, j], axes=([1], [0]))
            result[:, :, i:i + row_span:stride, j:j + col_span:stride] += contribution.transpose(0, 3, 1, 2)
    return result


def _kernel_gradient(padded: np.ndarray, dout: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Gradient of `_correlate` w.r.t. its kernel: -> [O,C,kh,kw]."""
    ho, wo = dout.shape[2], dout.shape[3]
    win = _windows(padded, kh, kw, stride, ho, wo)
    return np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))


def _pad(x: np.ndarray, pads: Tuple[int, int, int, int]) -> np.ndarray:
    top, bottom, left, right = pads
    if not any(pads):
        return x
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))


def _batched(x: Tensor, op: str) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise ContractViolation(f"{op}: expected input of rank 3 or 4, got shape {x.shape}")
    return x, False


# ----------------------------------------------------------------------
# Differentiable operations
# ----------------------------------------------------------------------

def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = PADDING_SAME
) -> Tensor:
    """
    2-d cross-correlation.

    Args:
        x: Input [C_in,H,W] or [N,C_in,H,W]
        kernel: [C_out,C_in,kH,kW]
        bias: [C_out] or None
        stride: Step between output positions
        padding: 'same' (output ceil(H/stride)) or 'valid'

    Returns:
        [C_out,H',W'] (or batched)

    Raises:
        ContractViolation: On channel or extent mismatch
        ConfigurationError: On invalid stride or padding mode
    """
    x, squeeze = _batched(as_tensor(x), 'conv2d')
    n, c, h, w = x.shape
    if kernel.ndim != 4:
        raise ContractViolation(f"conv2d: kernel must have rank 4, got shape {kernel.shape}")
    o, ci, kh, kw = kernel.shape
    if ci != c:
        raise ContractViolation(f"conv2d: input channels {c} do not match kernel input channels {ci}")
    if bias is not None and bias.shape != (o,):
        raise ContractViolation(f"conv2d: bias shape {bias.shape} does not match output channels {o}")
    ho, wo, pads = conv_geometry(h, w, (kh, kw), stride, padding)
    padded = _pad(x.data, pads)
    out = _correlate(padded, kernel.data, stride, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    top, _, left, _ = pads

    def _backward(g):
        if x.requires_grad:
            full = _scatter(g, kernel.data, stride, padded.shape[2:])
            x.accumulate(full[:, :, top:top + h, left:left + w])
        if kernel.requires_grad:
            kernel.accumulate(_kernel_gradient(padded, g, kh, kw, stride))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))

    result = Tensor.from_op(out, (x, kernel, bias), 'conv2d', _backward)
    return result.reshape(result.shape[1:]) if squeeze else result


def transposed_conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = PADDING_SAME,
    output_size: Optional[Tuple[int, int]] = None
) -> Tensor:
    """
    Adjoint of conv2d: maps the output space of a conv2d configuration back to its input space.

    The kernel is laid out [C_in, C_out, kH, kW] where C_in is the channel count of `x`
    (the output channels of the matched conv2d). With 'same' padding the spatial extent
    is multiplied by `stride`; with 'valid' it becomes (H-1)*stride + kH.

    Args:
        x: Input [C_in,H,W] or [N,C_in,H,W]
        kernel: [C_in,C_out,kH,kW]
        bias: [C_out] or None
        stride: Stride of the matched conv2d
        padding: Padding mode of the matched conv2d
        output_size: Optional explicit (H'', W''); must map back to (H, W) under conv2d

    Raises:
        ConfigurationError: If the configuration is not the adjoint of a valid conv2d
        ContractViolation: On channel mismatch
    """
    x, squeeze = _batched(as_tensor(x), 'transposed_conv2d')
    n, c, h, w = x.shape
    if kernel.ndim != 4:
        raise ContractViolation(f"transposed_conv2d: kernel must have rank 4, got shape {kernel.shape}")
    ci, co, kh, kw = kernel.shape
    if ci != c:
        raise ContractViolation(f"transposed_conv2d: input channels {c} do not match kernel input channels {ci}")
    if bias is not None and bias.shape != (co,):
        raise ContractViolation(f"transposed_conv2d: bias shape {bias.shape} does not match output channels {co}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")

    if output_size is None:
        if padding == PADDING_SAME:
            output_size = (h * stride, w * stride)
        elif padding == PADDING_VALID:
            output_size = ((h - 1) * stride + kh, (w - 1) * stride + kw)
        else:
            raise ConfigurationError(f"padding must be one of {PADDING_CHOICES}, got {padding!r}")
    oh, ow = output_size
    try:
        ch, cw, pads = conv_geometry(oh, ow, (kh, kw), stride, padding)
    except ContractViolation as e:
        raise ConfigurationError(f"transposed_conv2d: no matching conv2d configuration ({str(e)})")
    if (ch, cw) != (h, w):
        raise ConfigurationError(
            f"transposed_conv2d: output size {output_size} maps to {(ch, cw)} under conv2d, not {(h, w)}"
        )
    top, bottom, left, right = pads
    padded_hw = (oh + top + bottom, ow + left + right)
    full = _scatter(x.data, kernel.data, stride, padded_hw)
    out = full[:, :, top:top + oh, left:left + ow]
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)

    def _backward(g):
        g_padded = _pad(g, pads)
        if x.requires_grad:
            x.accumulate(_correlate(g_padded, kernel.data, stride, h, w))
        if kernel.requires_grad:
            kernel.accumulate(_kernel_gradient(g_padded, x.data, kh, kw, stride))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))

    result = Tensor.from_op(out, (x, kernel, bias), 'transposed_conv2d', _backward)
    return result.reshape(result.shape[1:]) if squeeze else result


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ W + b for x [N,F_in], W [F_in,F_out]."""
    if x.ndim != 2:
        raise ContractViolation(f"linear: expected input [N,F], got shape {x.shape}")
    if weight.shape[0] != x.shape[1]:
        raise ContractViolation(f"linear: input features {x.shape[1]} do not match weight rows {weight.shape[0]}")
    out = x @ weight
    return out + bias if bias is not None else out


def _gates(z: Tensor, width: int, axis: int) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    def part(i):
        index = [slice(None)] * z.ndim
        index[axis] = slice(i * width, (i + 1) * width)
        return z[tuple(index)]
    return part(0).sigmoid(), part(1).sigmoid(), part(2).sigmoid(), part(3).tanh()


def lstm_step(x: Tensor, h: Tensor, c: Tensor, weights: GateWeights) -> Tuple[Tensor, Tensor]:
    """
    One fully connected LSTM update.

    i, f, o = sigmoid(affine([x; h])), g = tanh(affine([x; h])),
    c' = f*c + i*g, h' = o*tanh(c'). Inputs may be vectors or [N, .] batches.

    Raises:
        ContractViolation: If h and c differ in shape or weights do not fit
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    squeeze = h.ndim == 1
    if squeeze:
        x, h, c = x.reshape((1, -1)), h.reshape((1, -1)), c.reshape((1, -1))
    if h.shape != c.shape:
        raise ContractViolation(f"lstm_step: hidden shape {h.shape} differs from cell shape {c.shape}")
    d = h.shape[1]
    rows = x.shape[1] + d
    if weights.kernel.shape != (rows, 4 * d):
        raise ContractViolation(f"lstm_step: kernel shape {weights.kernel.shape}, expected {(rows, 4 * d)}")
    if weights.bias.shape != (4 * d,):
        raise ContractViolation(f"lstm_step: bias shape {weights.bias.shape}, expected {(4 * d,)}")
    z = concat([x, h], axis=1) @ weights.kernel + weights.bias
    i, f, o, g = _gates(z, d, axis=1)
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    if squeeze:
        return h_next.reshape((d,)), c_next.reshape((d,))
    return h_next, c_next


def convlstm_step(x: Tensor, h: Tensor, c: Tensor, weights: GateWeights) -> Tuple[Tensor, Tensor]:
    """
    One convolutional LSTM update (no peepholes).

    Gates come from a stride-1 same-padded convolution over the channel
    concatenation [x; h]; the cell update is elementwise. Spatial size is kept.

    Raises:
        ContractViolation: If x, h, c disagree on spatial extents or weights do not fit
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    squeeze = h.ndim == 3
    if squeeze:
        x, h, c = (t.reshape((1,) + t.shape) for t in (x, h, c))
    if h.shape != c.shape:
        raise ContractViolation(f"convlstm_step: hidden shape {h.shape} differs from cell shape {c.shape}")
    if x.shape[2:] != h.shape[2:]:
        raise ContractViolation(f"convlstm_step: input spatial extents {x.shape[2:]} differ from state {h.shape[2:]}")
    ch = h.shape[1]
    expected_in = x.shape[1] + ch
    if weights.kernel.shape[:2] != (4 * ch, expected_in):
        raise ContractViolation(
            f"convlstm_step: kernel shape {weights.kernel.shape}, expected leading {(4 * ch, expected_in)}"
        )
    z = conv2d(concat([x, h], axis=1), weights.kernel, weights.bias, stride=1, padding=PADDING_SAME)
    i, f, o, g = _gates(z, ch, axis=1)
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    if squeeze:
        return h_next.reshape(h_next.shape[1:]), c_next.reshape(c_next.shape[1:])
    return h_next, c_next


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-5) -> Tensor:
    """
    Normalize each sample over all of its features, then apply gain and bias.

    Axis 0 is the sample axis for inputs of rank >= 2; a rank-1 input is one sample.
    `gain` and `bias` broadcast against one sample (e.g. [C,1,1] for feature maps).

    Raises:
        ConfigurationError: If epsilon is not positive
    """
    if epsilon <= 0:
        raise ConfigurationError(f"layer_norm epsilon must be positive, got {epsilon}")
    x = as_tensor(x)
    axes = tuple(range(1, x.ndim)) if x.ndim >= 2 else (0,)
    count = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normalized = centered * inv_std
    out = normalized * gain.data + bias.data

    def _backward(g):
        if gain.requires_grad:
            gain.accumulate(g * normalized)
        if bias.requires_grad:
            bias.accumulate(g)
        if x.requires_grad:
            dn = g * gain.data
            mean_dn = dn.sum(axis=axes, keepdims=True) / count
            mean_dn_n = (dn * normalized).sum(axis=axes, keepdims=True) / count
            x.accumulate(inv_std * (dn - mean_dn - normalized * mean_dn_n))

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, gain, bias), 'layer_norm', _backward)


def dropout(x: Tensor, rate: float, rng: Optional[RngStream], training: bool) -> Tensor:
    """
    Inverted dropout: zero each element with probability `rate` and rescale survivors by 1/(1-rate).

    Identity when not training or when rate is 0.

    Raises:
        ConfigurationError: If rate is outside [0, 1)
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs an RngStream")
    keep = rng.uniform(x.shape) >= rate
    mask = keep.astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    return x * Tensor(mask)
