"""Network layers with explicit forward and backward passes.

Each layer owns its parameter arrays and, after a training-mode forward,
the cached activations its backward pass needs. Backward methods consume
the incoming gradient, store parameter gradients on the layer (gw, gb,
ggamma, gbeta) and return the gradient w.r.t. their input.
"""

from __future__ import annotations

import numpy as np

from . import tensor
from .errors import ConfigError, ShapeError, UsageError


def init_std(fan_in: int, slope: float) -> float:
    """Fan-in-scaled He std with the gain for a leaky rectifier."""
    return float(np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in)))


class Conv2D:
    """3x3 valid convolution, stride 1, with bias."""

    def __init__(self, cin: int, cout: int, rng, slope: float,
                 dtype=np.float32, kernel: int = 3):
        self.w = tensor.gaussian((cout, cin, kernel, kernel), 0.0,
                                 init_std(cin * kernel * kernel, slope),
                                 rng, dtype)
        self.b = tensor.zeros((cout,), dtype)
        self._x = None
        self.gw = None
        self.gb = None

    def forward(self, x, train: bool):
        if train:
            self._x = x
        return tensor.conv2d_valid(x, self.w) + self.b[None, :, None, None]

    def backward(self, g):
        if self._x is None:
            raise UsageError("Conv2D.backward without a training forward")
        gx, self.gw = tensor.conv2d_valid_backward(self._x, self.w, g)
        self.gb = g.sum(axis=(0, 2, 3))
        return gx


class BatchNorm2D:
    """Per-channel batch normalization over batch and spatial dims."""

    def __init__(self, channels: int, dtype=np.float32,
                 eps: float = 1e-5, momentum: float = 0.99):
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self._cache = None
        self.ggamma = None
        self.gbeta = None

    def forward(self, x, train: bool):
        if train:
            if x.shape[0] < 2:
                raise ConfigError("batch norm needs batch size >= 2 in train mode")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
            xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
            m = x.dtype.type(self.momentum)
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
            self._cache = (xhat, inv_std)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + x.dtype.type(self.eps))
            xhat = (x - self.running_mean[None, :, None, None]) \
                * inv_std[None, :, None, None]
        return self.gamma[None, :, None, None] * xhat \
            + self.beta[None, :, None, None]

    def backward(self, g):
        if self._cache is None:
            raise UsageError("BatchNorm2D.backward without a training forward")
        xhat, inv_std = self._cache
        b, c, h, w = g.shape
        n = g.dtype.type(b * h * w)
        self.ggamma = (g * xhat).sum(axis=(0, 2, 3))
        self.gbeta = g.sum(axis=(0, 2, 3))
        sum_g = self.gbeta[None, :, None, None]
        sum_gx = self.ggamma[None, :, None, None]
        coef = (self.gamma * inv_std)[None, :, None, None]
        return coef / n * (n * g - sum_g - xhat * sum_gx)


class MaxPool2D:
    def __init__(self, window: int = 3, stride: int = 2):
        self.window = window
        self.stride = stride
        self._argmax = None
        self._in_shape = None

    def forward(self, x, train: bool):
        out, argmax = tensor.maxpool2d(x, window=self.window, stride=self.stride)
        if train:
            self._argmax = argmax
            self._in_shape = x.shape
        return out

    def backward(self, g):
        if self._argmax is None:
            raise UsageError("MaxPool2D.backward without a training forward")
        return tensor.maxpool2d_backward(g, self._argmax, self._in_shape)


class LeakyReLU:
    def __init__(self, slope: float = 0.2):
        if not 0.0 < slope < 1.0:
            raise ConfigError(f"leaky slope must be in (0,1), got {slope}")
        self.slope = slope
        self._pos = None

    def forward(self, x, train: bool):
        pos = x > 0
        if train:
            self._pos = pos
        return np.where(pos, x, x.dtype.type(self.slope) * x)

    def backward(self, g):
        if self._pos is None:
            raise UsageError("LeakyReLU.backward without a training forward")
        return np.where(self._pos, g, g.dtype.type(self.slope) * g)


class Dropout:
    """Inverted dropout: survivors scaled by 1/(1-p), inference is identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self._scaled_mask = None

    def forward(self, x, train: bool, rng=None):
        if not train or self.rate == 0.0:
            self._scaled_mask = 1.0 if train else None
            return x
        if rng is None:
            raise UsageError("Dropout needs an rng in train mode")
        keep = rng.random(x.shape) >= self.rate
        scale = x.dtype.type(1.0 / (1.0 - self.rate))
        self._scaled_mask = keep.astype(x.dtype) * scale
        return x * self._scaled_mask

    def backward(self, g):
        if self._scaled_mask is None:
            raise UsageError("Dropout.backward without a training forward")
        return g * self._scaled_mask


class Flatten:
    def __init__(self):
        self._in_shape = None

    def forward(self, x, train: bool):
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        if self._in_shape is None:
            raise UsageError("Flatten.backward without a training forward")
        return g.reshape(self._in_shape)


class Dense:
    """Affine map x @ w + b."""

    def __init__(self, fan_in: int, units: int, rng, slope: float,
                 dtype=np.float32):
        self.w = tensor.gaussian((fan_in, units), 0.0,
                                 init_std(fan_in, slope), rng, dtype)
        self.b = tensor.zeros((units,), dtype)
        self._x = None
        self.gw = None
        self.gb = None

    def forward(self, x, train: bool):
        if x.shape[1] != self.w.shape[0]:
            raise ShapeError(
                f"dense expects {self.w.shape[0]} features, got {x.shape[1]}")
        if train:
            self._x = x
        return x @ self.w + self.b

    def backward(self, g):
        if self._x is None:
            raise UsageError("Dense.backward without a training forward")
        self.gw = self._x.T @ g
        self.gb = g.sum(axis=0)
        return g @ self.w.T
