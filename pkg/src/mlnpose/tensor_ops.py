"""Dense tensor kernels: conv2d, relu, 2x2 max-pooling, channel concat.

Tensors are numpy arrays laid out (batch, channels, height, width),
stored float32. Convolutions accumulate in float64 and round once on
output, so results are reproducible against a naive reference to well
under 1e-5.
"""

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


def check_tensor(x, name="tensor"):
    """Validate the (B, C, H, W) layout; returns the array unchanged."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (B,C,H,W), got ndim={x.ndim}")
    return x


def conv_output_hw(h, w, kh, kw, stride, padding):
    """Spatial dims of a conv output: floor((X + 2p - k)/s) + 1."""
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    return oh, ow


def conv2d(x, weights, bias=None, stride=1, padding=0):
    """2-D cross-correlation over a (B,C,H,W) tensor.

    weights: (cout, cin, kh, kw); bias: (cout,) or None.
    Accumulates in float64, returns float32.
    """
    x = check_tensor(x, "input")
    weights = np.asarray(weights)
    if weights.ndim != 4:
        raise ShapeError(f"weights must be 4-D (cout,cin,kh,kw), got ndim={weights.ndim}")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weights.shape
    if wcin != cin:
        raise ShapeError(f"channel mismatch: input has {cin}, weights expect {wcin}")
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    oh, ow = conv_output_hw(h, w, kh, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"zero-sized output {oh}x{ow} for input {h}x{w} kernel {kh}x{kw}")

    xp = x.astype(np.float64)
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wt = weights.astype(np.float64)

    out = np.zeros((b, cout, oh, ow), dtype=np.float64)
    # One GEMM per kernel offset keeps memory bounded and is deterministic
    # for a fixed BLAS configuration.
    for ki in range(kh):
        for kj in range(kw):
            window = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
            out += np.tensordot(wt[:, :, ki, kj], window, axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (cout,):
            raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
        out += bias[None, :, None, None]
    return out.astype(np.float32)


def relu(x):
    """Elementwise max(0, x); shape and dtype preserved."""
    x = np.asarray(x)
    return np.maximum(x, 0)


def maxpool2(x):
    """2x2 window, stride-2 max; requires even spatial dims."""
    x = check_tensor(x, "input")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 requires even spatial dims, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def concat_channels(inputs):
    """Concatenate along the channel axis; batch/spatial dims must match."""
    if not inputs:
        raise ShapeError("concat_channels requires at least one input")
    arrays = [check_tensor(t, f"inputs[{i}]") for i, t in enumerate(inputs)]
    ref = arrays[0].shape
    for i, a in enumerate(arrays[1:], start=1):
        if a.shape[0] != ref[0] or a.shape[2:] != ref[2:]:
            raise ShapeError(
                f"inputs[{i}] shape {a.shape} incompatible with inputs[0] shape {ref}")
    return np.concatenate(arrays, axis=1)


LAYER_KINDS = ("conv", "relu", "maxpool2", "concat", "add", "input")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a computation graph; conv fields unused for other kinds."""
    name: str
    kind: str
    inputs: tuple = ()
    kernel: tuple = (0, 0)
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            kh, kw = self.kernel
            if kh < 1 or kw < 1:
                raise ValueError(f"conv kernel dims must be >= 1, got {self.kernel}")
            if self.stride < 1:
                raise ValueError(f"conv stride must be >= 1, got {self.stride}")
            if self.padding < 0:
                raise ValueError(f"conv padding must be >= 0, got {self.padding}")
        if self.kind == "concat" and len(self.inputs) < 2:
            raise ValueError("concat layer requires >= 2 inputs")


def layer_param_count(spec):
    """Learnable parameters of a layer; zero for everything but conv."""
    if spec.kind != "conv":
        return 0
    kh, kw = spec.kernel
    n = kh * kw * spec.in_channels * spec.out_channels
    if spec.has_bias:
        n += spec.out_channels
    return n


def layer_flop_count(spec, input_shape, macs_per_flop=2):
    """FLOPs of one conv layer applied to (H, W) input spatial dims.

    macs_per_flop=2 counts a multiply-accumulate as 2 FLOPs (default);
    macs_per_flop=1 counts it as 1. Bias adds count as one FLOP each
    under either convention. Non-conv layers report 0.
    """
    if macs_per_flop not in (1, 2):
        raise ValueError("macs_per_flop must be 1 or 2")
    if spec.kind != "conv":
        return 0
    h, w = input_shape
    kh, kw = spec.kernel
    oh, ow = conv_output_hw(h, w, kh, kw, spec.stride, spec.padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"zero-sized output for input {h}x{w}")
    flops = macs_per_flop * kh * kw * spec.in_channels * spec.out_channels * oh * ow
    if spec.has_bias:
        flops += spec.out_channels * oh * ow
    return flops
