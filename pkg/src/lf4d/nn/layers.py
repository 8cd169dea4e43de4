"""Layer implementations for the numpy engine.

Every layer is stateless with respect to activations: ``forward`` returns the
output together with a cache object, and ``backward`` consumes that cache.
Tensors are ndarrays shaped ``(n, c, h, w)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def kaiming(rng, shape, fan_in, dtype):
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self, lr_multiplier=1.0):
        if not lr_multiplier > 0:
            raise ValueError(f"lr_multiplier must be positive, got {lr_multiplier}")
        self.lr_multiplier = float(lr_multiplier)
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def geometry(self):
        return []

    def pattern(self, cache):
        """Discrete state (ReLU masks, argmax picks) used to detect kinks."""
        return None

    def astype(self, dtype):
        for k, v in self.params.items():
            self.params[k] = v.astype(dtype)
        return self

    def __repr__(self):
        geo = ",".join(str(g) for g in self.geometry())
        return f"{self.kind}({geo})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None, dtype=np.float64, lr_multiplier=1.0):
        super().__init__(lr_multiplier)
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.pad = _pair(pad)
        kh, kw = self.kernel
        fan_in = self.in_channels * kh * kw
        self.params["weight"] = kaiming(rng, (self.out_channels, self.in_channels, kh, kw), fan_in, dtype)
        self.params["bias"] = np.zeros(self.out_channels, dtype=dtype)

    def geometry(self):
        return [self.in_channels, self.out_channels, *self.kernel, *self.stride, *self.pad]

    def output_shape(self, shape):
        n, c, h, w = shape
        if c != self.in_channels:
            raise ShapeMismatch(f"{self!r} expects {self.in_channels} input channels, got {c}")
        kh, kw = self.kernel
        (sh, sw), (ph, pw) = self.stride, self.pad
        ho, wo = (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{self!r} input {h}x{w} is smaller than the kernel")
        return (n, self.out_channels, ho, wo)

    def _windows(self, xp):
        kh, kw = self.kernel
        sh, sw = self.stride
        return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]

    def forward(self, x):
        self.output_shape(x.shape)
        ph, pw = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
        win = self._windows(xp)
        y = np.tensordot(win, self.params["weight"], axes=([1, 4, 5], [1, 2, 3]))
        y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
        y += self.params["bias"][:, None, None]
        return y, xp

    def backward(self, xp, dy):
        win = self._windows(xp)
        w = self.params["weight"]
        grads = {
            "weight": np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3])),
            "bias": dy.sum(axis=(0, 2, 3)),
        }
        dwin = np.tensordot(dy, w, axes=([1], [0]))  # n, ho, wo, c, kh, kw
        kh, kw = self.kernel
        sh, sw = self.stride
        ho, wo = dy.shape[2:]
        dxp = np.zeros(xp.shape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += dwin[..., i, j].transpose(0, 3, 1, 2)
        ph, pw = self.pad
        dx = dxp[:, :, ph : xp.shape[2] - ph, pw : xp.shape[3] - pw]
        return dx, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask

    def backward(self, mask, dy):
        return np.where(mask, dy, 0).astype(dy.dtype, copy=False), {}

    def pattern(self, mask):
        return mask


class MaxPool2D(Layer):
    """Max pooling, floor output size; ties go to the first row-major element."""

    kind = "maxpool"

    def __init__(self, kernel=2, stride=None):
        super().__init__()
        self.kernel = _pair(kernel)
        self.stride = _pair(stride if stride is not None else kernel)

    def geometry(self):
        return [*self.kernel, *self.stride]

    def output_shape(self, shape):
        n, c, h, w = shape
        (kh, kw), (sh, sw) = self.kernel, self.stride
        ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{self!r} input {h}x{w} is smaller than the pooling window")
        return (n, c, ho, wo)

    def forward(self, x):
        n, c, ho, wo = self.output_shape(x.shape)
        (kh, kw), (sh, sw) = self.kernel, self.stride
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        flat = win.reshape(n, c, ho, wo, kh * kw)
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, cache, dy):
        shape, idx = cache
        (kh, kw), (sh, sw) = self.kernel, self.stride
        ho, wo = dy.shape[2:]
        dx = np.zeros(shape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                hit = idx == i * kw + j
                dx[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += np.where(hit, dy, 0)
        return dx, {}

    def pattern(self, cache):
        return cache[1]


class FullyConnected(Layer):
    """Dense layer over a flattened ``(c, h, w)`` input; output is ``(n, out, 1, 1)``."""

    kind = "fully_connected"

    def __init__(self, in_shape, out_features, rng=None, dtype=np.float64, lr_multiplier=1.0):
        super().__init__(lr_multiplier)
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_features = int(out_features)
        fan_in = int(np.prod(self.in_shape))
        self.params["weight"] = kaiming(rng, (self.out_features, fan_in), fan_in, dtype)
        self.params["bias"] = np.zeros(self.out_features, dtype=dtype)

    def geometry(self):
        return [*self.in_shape, self.out_features]

    def output_shape(self, shape):
        if tuple(shape[1:]) != self.in_shape:
            raise ShapeMismatch(f"{self!r} expects input {self.in_shape}, got {tuple(shape[1:])}")
        return (shape[0], self.out_features, 1, 1)

    def forward(self, x):
        self.output_shape(x.shape)
        flat = x.reshape(x.shape[0], -1)
        y = flat @ self.params["weight"].T + self.params["bias"]
        return y[:, :, None, None], flat

    def backward(self, flat, dy):
        g = dy[:, :, 0, 0]
        grads = {"weight": g.T @ flat, "bias": g.sum(axis=0)}
        dx = (g @ self.params["weight"]).reshape((g.shape[0],) + self.in_shape)
        return dx, grads


def bilinear_kernel():
    k = np.array([0.25, 0.75, 0.75, 0.25])
    return np.outer(k, k)


def _edge_pad_backward(dxp):
    """Adjoint of a 1-pixel edge-replicate pad on the last two axes."""
    d = dxp.copy()
    d[..., 1, :] += d[..., 0, :]
    d[..., -2, :] += d[..., -1, :]
    d[..., :, 1] += d[..., :, 0]
    d[..., :, -2] += d[..., :, -1]
    return d[..., 1:-1, 1:-1]


class Upsample2x(Layer):
    """Learnable per-channel 2x deconvolution (kernel 4, stride 2).

    The input is edge-replicated by one pixel before the transposed
    convolution and the result cropped to exactly twice the input size, so
    the bilinear initialisation reproduces a constant input everywhere.
    """

    kind = "upsample2x"

    def __init__(self, channels, dtype=np.float64, lr_multiplier=1.0):
        super().__init__(lr_multiplier)
        self.channels = int(channels)
        self.params["weight"] = np.repeat(bilinear_kernel()[None], self.channels, axis=0).astype(dtype)
        self.params["bias"] = np.zeros(self.channels, dtype=dtype)

    def geometry(self):
        return [self.channels]

    def output_shape(self, shape):
        n, c, h, w = shape
        if c != self.channels:
            raise ShapeMismatch(f"{self!r} expects {self.channels} channels, got {c}")
        return (n, c, 2 * h, 2 * w)

    def forward(self, x):
        n, c, h, w = x.shape
        self.output_shape(x.shape)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        full = np.zeros((n, c, 2 * h + 6, 2 * w + 6), dtype=x.dtype)
        wt = self.params["weight"]
        for ty in range(4):
            for tx in range(4):
                full[:, :, ty : ty + 2 * (h + 2) : 2, tx : tx + 2 * (w + 2) : 2] += wt[None, :, ty, tx, None, None] * xp
        y = full[:, :, 3 : 3 + 2 * h, 3 : 3 + 2 * w] + self.params["bias"][:, None, None]
        return np.ascontiguousarray(y), xp

    def backward(self, xp, dy):
        n, c, hp, wp = xp.shape
        h, w = hp - 2, wp - 2
        full = np.zeros((n, c, 2 * h + 6, 2 * w + 6), dtype=dy.dtype)
        full[:, :, 3 : 3 + 2 * h, 3 : 3 + 2 * w] = dy
        wt = self.params["weight"]
        dxp = np.zeros(xp.shape, dtype=dy.dtype)
        dw = np.zeros(wt.shape, dtype=dy.dtype)
        for ty in range(4):
            for tx in range(4):
                tap = full[:, :, ty : ty + 2 * hp : 2, tx : tx + 2 * wp : 2]
                dxp += wt[None, :, ty, tx, None, None] * tap
                dw[:, ty, tx] = (tap * xp).sum(axis=(0, 2, 3))
        return _edge_pad_backward(dxp), {"weight": dw, "bias": dy.sum(axis=(0, 2, 3))}
