"""Dense tensor kernels.

Tensors are C-contiguous numpy arrays (row-major flat data plus shape
metadata). Everything downstream — layers, losses, baselines — is built on
the handful of kernels here: creation, matrix product, valid 3x3-style
convolution, max-pooling with argmax maps, and reductions. All kernels are
deterministic for identical inputs; randomness only enters through an
explicitly passed generator.

Training code runs these kernels in float32; gradient-check tests
instantiate the exact same code paths in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericFault, ShapeError

DEFAULT_DTYPE = np.float32


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Reproducible generator for (seed, key...).

    The same seed and key path gives the same stream on every platform
    (PCG64 is specified bit-for-bit). Key integers let callers derive
    independent streams (per epoch, per worker) from one master seed.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)]))
    )


def _check_shape(shape) -> tuple:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ShapeError("tensor shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def constant(shape, value: float, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.full(_check_shape(shape), value, dtype=dtype)


def gaussian(shape, mean: float, std: float, rng: np.random.Generator,
             dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Normal-initialized tensor; consumes rng state deterministically."""
    return rng.normal(mean, std, size=_check_shape(shape)).astype(dtype)


def check_finite(x: np.ndarray, context: str = "tensor") -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericFault(f"{context} contains NaN/Inf")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a [m,k] and b [k,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def _as_batched(x: np.ndarray):
    """Promote (C,H,W) to (1,C,H,W); return (array, had_batch flag)."""
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected 3-D or 4-D input, got shape {x.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int):
    """(B,C,H,W) -> column matrix (B*Ho*Wo, C*kh*kw) plus (Ho, Wo)."""
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B,C,Ho,Wo,kh,kw)
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def conv2d_valid(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Valid (no padding) stride-1 cross-correlation.

    x: (Cin,H,W) or (B,Cin,H,W); kernels: (Cout,Cin,kh,kw).
    out[o,y,x] = sum_{c,u,v} in[c,y+u,x+v] * kernels[o,c,u,v]
    """
    xb, had_batch = _as_batched(x)
    cout, cin, kh, kw = kernels.shape
    b, c, h, w = xb.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels, kernels expect {cin}")
    if h < kh or w < kw:
        raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    cols, ho, wo = _im2col(xb, kh, kw)
    kflat = kernels.reshape(cout, cin * kh * kw)
    out = (cols @ kflat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out if had_batch else out[0]


def conv2d_valid_backward(x: np.ndarray, kernels: np.ndarray,
                          grad_out: np.ndarray):
    """Gradients of conv2d_valid w.r.t. input and kernels.

    Returns (grad_x, grad_kernels) shaped like x and kernels.
    """
    xb, had_batch = _as_batched(x)
    gb, _ = _as_batched(grad_out)
    cout, cin, kh, kw = kernels.shape
    b, c, h, w = xb.shape

    cols, ho, wo = _im2col(xb, kh, kw)
    g2 = gb.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
    grad_k = (g2.T @ cols).reshape(cout, cin, kh, kw)

    # grad w.r.t. input = full correlation of grad_out with flipped kernels
    gpad = np.zeros((b, cout, ho + 2 * (kh - 1), wo + 2 * (kw - 1)),
                    dtype=grad_out.dtype)
    gpad[:, :, kh - 1:kh - 1 + ho, kw - 1:kw - 1 + wo] = gb
    cols_g, gh, gw = _im2col(gpad, kh, kw)  # gh == h, gw == w
    kflip = kernels[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(
        cout * kh * kw, cin)
    grad_x = (cols_g @ kflip).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x if had_batch else grad_x[0]), grad_k


def maxpool2d(x: np.ndarray, window: int = 3, stride: int = 2):
    """Max-pool over window x window patches.

    Returns (out, argmax) where argmax holds, per output cell, the flat
    row-major index into that cell's HxW input plane. Ties go to the lowest
    flat index, so the map (and the backward pass) is deterministic.
    """
    xb, had_batch = _as_batched(x)
    b, c, h, w = xb.shape
    if h < window or w < window:
        raise ShapeError(f"pool window {window} exceeds input {h}x{w}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    views = sliding_window_view(xb, (window, window), axis=(2, 3))
    views = views[:, :, ::stride, ::stride]  # (B,C,Ho,Wo,window,window)
    ho, wo = views.shape[2], views.shape[3]
    flat = views.reshape(b, c, ho, wo, window * window)
    local = flat.argmax(axis=-1)  # first max = lowest in-window flat index
    out = np.ascontiguousarray(flat.max(axis=-1))
    rows = np.arange(ho)[:, None] * stride + local // window
    cols = np.arange(wo)[None, :] * stride + local % window
    argmax = rows * w + cols
    if not had_batch:
        return out[0], argmax[0]
    return out, argmax


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray,
                       input_shape) -> np.ndarray:
    """Route pooled gradients back to their argmax positions.

    Overlapping windows may select the same input cell, so contributions
    accumulate.
    """
    input_shape = tuple(input_shape)
    h, w = input_shape[-2], input_shape[-1]
    lead = int(np.prod(input_shape[:-2], dtype=np.int64))
    gx = np.zeros((lead, h * w), dtype=grad_out.dtype)
    g2 = grad_out.reshape(lead, -1)
    a2 = argmax.reshape(lead, -1)
    np.add.at(gx, (np.arange(lead)[:, None], a2), g2)
    return gx.reshape(input_shape)


_REDUCE_OPS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(x: np.ndarray, op: str, axes=None) -> np.ndarray:
    """Reduce x with op in {sum, mean, max} over axes (None = all)."""
    if op not in _REDUCE_OPS:
        raise ConfigError(f"unknown reduction '{op}'")
    if axes is not None:
        axes = tuple(int(a) for a in (axes if np.iterable(axes) else [axes]))
        for a in axes:
            if not -x.ndim <= a < x.ndim:
                raise ShapeError(f"axis {a} invalid for shape {x.shape}")
    return _REDUCE_OPS[op](x, axis=axes)
