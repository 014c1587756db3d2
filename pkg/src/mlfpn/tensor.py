"""Dense NCHW tensor operations.

Tensors are plain ``numpy.ndarray`` values of rank 4 laid out as
(batch, channel, row, col). Storage is float32; reductions (convolution,
pooling, dense layers) accumulate in float64 and round once on output.
Passing float64 inputs keeps the whole computation in float64, which is
what the gradient-verification path relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mlfpn.errors import ConfigError, ShapeError

STORAGE = np.float32
ACCUM = np.float64


def _out_dtype(*arrays: np.ndarray):
    return ACCUM if any(a.dtype == ACCUM for a in arrays) else STORAGE


def check_tensor4(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(t, np.ndarray) or t.ndim != 4:
        raise ShapeError(f"{name}: expected a rank-4 array, got shape {np.shape(t)}")
    if min(t.shape) < 1:
        raise ShapeError(f"{name}: all dimensions must be >= 1, got {t.shape}")
    return t


def tensor4(data, dtype=STORAGE) -> np.ndarray:
    """Build a validated rank-4 tensor from array-like ``data``."""
    t = np.ascontiguousarray(data, dtype=dtype)
    check_tensor4(t)
    if not np.all(np.isfinite(t)):
        raise ShapeError("tensor contains non-finite values")
    return t


@dataclass(frozen=True)
class ConvParams:
    """Weights (out_ch, in_ch, kh, kw), per-channel bias, stride and symmetric zero pad."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ConfigError(f"conv weight must be rank 4, got {self.weight.shape}")
        kh, kw = self.weight.shape[2:]
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"conv kernel must be odd and >= 1, got {kh}x{kw}")
        if self.stride < 1 or self.pad < 0:
            raise ConfigError(f"invalid stride/pad ({self.stride}, {self.pad})")
        if self.bias.shape != (self.weight.shape[0],):
            raise ConfigError(
                f"conv bias shape {self.bias.shape} does not match out_ch {self.weight.shape[0]}"
            )

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(x: np.ndarray, p: ConvParams, name: str = "conv2d") -> np.ndarray:
    """Cross-correlation with zero padding plus per-channel bias.

    The weighted sum for each output element is accumulated in float64,
    one kernel offset at a time in (ky, kx) order, and the bias is added
    last.
    """
    check_tensor4(x, name)
    n, c, h, w = x.shape
    co, ci, kh, kw = p.weight.shape
    if c != ci:
        raise ConfigError(f"{name}: input has {c} channels, weights expect {ci}")
    s, pad = p.stride, p.pad
    oh, ow = conv_out_size(h, kh, s, pad), conv_out_size(w, kw, s, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"{name}: output size {oh}x{ow} from input {h}x{w} "
            f"(kernel {kh}x{kw}, stride {s}, pad {pad}) is not positive"
        )
    out_dtype = _out_dtype(x, p.weight)

    xp = x.astype(ACCUM, copy=False)
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # (kh, kw, co, ci) so each kernel offset is a contiguous matrix for BLAS.
    wt = np.ascontiguousarray(p.weight.astype(ACCUM, copy=False).transpose(2, 3, 0, 1))

    acc = np.zeros((n, co, oh * ow), dtype=ACCUM)
    for ky in range(kh):
        for kx in range(kw):
            patch = xp[:, :, ky : ky + s * (oh - 1) + 1 : s, kx : kx + s * (ow - 1) + 1 : s]
            patch = np.ascontiguousarray(patch).reshape(n, ci, oh * ow)
            for b in range(n):
                acc[b] += wt[ky, kx] @ patch[b]
    acc += p.bias.astype(ACCUM)[None, :, None]
    return acc.reshape(n, co, oh, ow).astype(out_dtype)


def upsample_to(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize to an explicit, not-smaller target size."""
    check_tensor4(x, "upsample_to")
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ShapeError(f"upsample_to: cannot shrink {h}x{w} to {out_h}x{out_w}")
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return x[:, :, rows[:, None], cols[None, :]]


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat_channels: no parts given")
    for i, t in enumerate(parts):
        check_tensor4(t, f"concat_channels part {i}")
    ref = parts[0].shape
    if any(t.shape[0] != ref[0] or t.shape[2:] != ref[2:] for t in parts):
        shapes = ", ".join(str(t.shape) for t in parts)
        raise ShapeError(f"concat_channels: batch/spatial mismatch among parts {shapes}")
    return np.concatenate(parts, axis=1)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0).astype(t.dtype, copy=False)


def sigmoid(t: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    t = np.asarray(t)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def global_avg_pool(t: np.ndarray) -> np.ndarray:
    """Per-item, per-channel spatial mean; shape (n, c)."""
    check_tensor4(t, "global_avg_pool")
    return t.astype(ACCUM, copy=False).mean(axis=(2, 3)).astype(_out_dtype(t))


def dense(v: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``weight @ v + bias`` for a vector or a batch of row vectors."""
    v = np.asarray(v)
    if weight.ndim != 2 or v.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ConfigError(
            f"dense: input {v.shape}, weight {weight.shape}, bias {bias.shape} do not agree"
        )
    out = v.astype(ACCUM, copy=False) @ weight.astype(ACCUM, copy=False).T
    out += bias.astype(ACCUM, copy=False)
    return out.astype(_out_dtype(v, weight))
