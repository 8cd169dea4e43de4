"""Finite-difference checks for every layer kind on several random shapes."""

import time

import numpy as np

from .lflayers import AngularFilter, angular_on_remap, interleave_decomposed4d, spatial_on_remap
from .nn import Conv2D, FullyConnected, MaxPool2D, Network, ReLU, Upsample2x, grad_check

TOL = 1e-4
H = 1e-5


def _conv(rng, n, c, h, w):
    return Conv2D(c, 4, 3, stride=1 + (h % 2), pad=1, rng=rng), (n, c, h, w)


def _fc(rng, n, c, h, w):
    return FullyConnected((c, h, w), 5, rng=rng), (n, c, h, w)


def _maxpool(rng, n, c, h, w):
    return MaxPool2D(2), (n, c, h, w)


def _relu_composite(rng, n, c, h, w):
    net = Network([Conv2D(c, 4, 3, pad=1, rng=rng), ReLU(), FullyConnected((4, h, w), 3, rng=rng)])
    return net, (n, c, h, w)


def _upsample(rng, n, c, h, w):
    up = Upsample2x(c)
    up.params["weight"] += 0.1 * rng.standard_normal(up.params["weight"].shape)
    return up, (n, c, h, w)


def _angular(rng, n, c, h, w, block):
    return AngularFilter(c, 4, block, rng=rng), (n, c, h * block[0], w * block[1])


def _spatial_remap(rng, n, c, h, w, block):
    return spatial_on_remap(c, 4, 3, block, pad=1, rng=rng), (n, c, h * block[0], w * block[1])


def _angular_remap(rng, n, c, h, w, block):
    return angular_on_remap(c, 4, 3, block, rng=rng), (n, c, h * block[0], w * block[1])


def _interleaved(rng, n, c, h, w, block):
    sp = [spatial_on_remap(c, 4, 3, block, rng=rng), spatial_on_remap(4, 4, 3, block, rng=rng)]
    an = [angular_on_remap(4, 4, 3, block, rng=rng), angular_on_remap(4, 4, 3, block, rng=rng)]
    names, layers = interleave_decomposed4d(sp, an)
    return Network(layers, names=names), (n, c, h * block[0], w * block[1])


SPATIAL_CASES = {
    "conv2d": _conv,
    "fully_connected": _fc,
    "maxpool": _maxpool,
    "relu_composite": _relu_composite,
    "upsample2x": _upsample,
}
REMAP_CASES = {
    "angular_filter": _angular,
    "spatial_on_remap": _spatial_remap,
    "angular_on_remap": _angular_remap,
    "decomposed4d_interleave": _interleaved,
}
SHAPES = [(2, 2, 6, 6), (1, 3, 5, 7), (3, 1, 8, 4)]
BLOCKS = [(3, 3), (3, 5), (5, 3)]
REMAP_SHAPES = [(2, 2, 5, 5), (1, 3, 5, 6), (2, 1, 6, 5)]

KINDS = tuple(SPATIAL_CASES) + tuple(REMAP_CASES)


def cases(seed=0, only=None):
    """Yield ``(kind, target, input)`` for three random shapes per layer kind."""
    if only is not None and only not in KINDS:
        raise ValueError(f"unknown layer kind {only!r}; choose from {', '.join(KINDS)}")
    for kind in KINDS:
        if only is not None and kind != only:
            continue
        for i in range(3):
            rng = np.random.default_rng([seed, KINDS.index(kind), i])
            if kind in SPATIAL_CASES:
                target, shape = SPATIAL_CASES[kind](rng, *SHAPES[i])
            else:
                target, shape = REMAP_CASES[kind](rng, *REMAP_SHAPES[i], BLOCKS[i])
            yield kind, target, rng.uniform(-1.0, 1.0, size=shape)


def run_suite(seed=0, only=None, h=H, tol=TOL):
    """Rows ``(kind, input shape, max relative error, passed)``."""
    rows = []
    for kind, target, x in cases(seed, only):
        report = grad_check(target, x, h=h, tol=tol, seed=seed)
        rows.append((kind, "x".join(map(str, x.shape)), report.max_error, report.passed))
    return rows


if __name__ == "__main__":
    t = time.time()
    for row in run_suite():
        print(*row)
    print(f"{time.time() - t:.1f}s")
