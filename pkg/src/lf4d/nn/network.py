"""Sequential network, softmax loss and SGD."""

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import BadLabel, ShapeMismatch, StaleCache

ADAPTERS = ("raw", "central2d", "average2d", "viewpool", "stack", "epi", "angular", "decomposed4d")


@dataclass
class Cache:
    network_id: int
    version: int
    input_shape: tuple
    layer_caches: list


class Network:
    """Ordered layer list plus the tag of the adapter that feeds it.

    ``meta`` carries build information (architecture, class count, patch
    and angular geometry) that checkpoints and the experiment code reuse.
    """

    def __init__(self, layers, input_adapter="raw", names=None, meta=None):
        if input_adapter not in ADAPTERS:
            raise ValueError(f"unknown input adapter {input_adapter!r}")
        self.layers = list(layers)
        self.names = list(names) if names is not None else [f"{l.kind}{i}" for i, l in enumerate(self.layers)]
        if len(self.names) != len(self.layers):
            raise ValueError("one name per layer required")
        self.input_adapter = input_adapter
        self.meta = dict(meta or {})
        self.version = 0

    def __repr__(self):
        body = ", ".join(f"{n}={l!r}" for n, l in zip(self.names, self.layers))
        return f"Network[{self.input_adapter}]({body})"

    def layer(self, name):
        return self.layers[self.names.index(name)]

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for key, arr in layer.params.items():
                yield i, key, arr

    def n_parameters(self):
        return sum(arr.size for _, _, arr in self.parameters())

    @property
    def dtype(self):
        for _, _, arr in self.parameters():
            return arr.dtype
        return np.dtype(np.float64)

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        self.version += 1
        return self

    def copy(self):
        return copy.deepcopy(self)

    def output_shape(self, shape):
        shape = tuple(shape)
        for name, layer in zip(self.names, self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeMismatch as exc:
                raise ShapeMismatch(f"layer '{name}': {exc}") from None
        return shape

    def forward(self, x):
        """Run the network; returns ``(scores, cache)``."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4:
            raise ShapeMismatch(f"network input must be (n, c, h, w), got {x.shape}")
        self.output_shape(x.shape)
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, Cache(id(self), self.version, x.shape, caches)

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dscores):
        """Reverse pass; returns ``(grads, dx)`` with one grad dict per layer."""
        if cache.network_id != id(self) or cache.version != self.version:
            raise StaleCache("cache was produced by a different network state; rerun forward")
        dy = np.asarray(dscores, dtype=self.dtype)
        if dy.shape != cache.input_shape:
            raise ShapeMismatch(f"upstream gradient shape {dy.shape} does not match output {cache.input_shape}")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, grads[i] = self.layers[i].backward(cache.layer_caches[i], dy)
        return grads, dy

    def patterns(self, cache):
        return [layer.pattern(c) for layer, c in zip(self.layers, cache.layer_caches)]


def forward(net, x):
    return net.forward(x)


def backward(net, cache, dscores):
    return net.backward(cache, dscores)


def softmax(scores):
    s = np.asarray(scores)
    s = s.reshape(s.shape[0], -1)
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss(scores, labels):
    """Mean of ``-log(exp(p_t) / sum_i exp(p_i))`` and its gradient w.r.t. the scores."""
    scores = np.asarray(scores)
    flat = scores.reshape(scores.shape[0], -1)
    n, k = flat.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise BadLabel(f"{labels.shape[0]} labels for {n} score rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise BadLabel(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = flat - flat.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.reshape(scores.shape)


def _check_grads(net, grads):
    if len(grads) != len(net.layers):
        raise ShapeMismatch(f"{len(grads)} gradient entries for {len(net.layers)} layers")
    for name, layer, g in zip(net.names, net.layers, grads):
        for key, p in layer.params.items():
            if key not in g or g[key].shape != p.shape:
                got = None if key not in g else g[key].shape
                raise ShapeMismatch(f"layer '{name}' {key}: gradient shape {got} != parameter shape {p.shape}")


def sgd_step(net, grads, base_lr):
    """Plain SGD: ``theta -= base_lr * lr_multiplier * grad`` per layer."""
    _check_grads(net, grads)
    for layer, g in zip(net.layers, grads):
        lr = base_lr * layer.lr_multiplier
        for key, p in layer.params.items():
            p -= (lr * g[key]).astype(p.dtype, copy=False)
    net.version += 1
    return net


class SGD:
    """SGD with optional heavy-ball momentum (0 reduces to :func:`sgd_step`)."""

    def __init__(self, base_lr, momentum=0.0):
        self.base_lr = base_lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, net, grads):
        if self.momentum == 0.0:
            return sgd_step(net, grads, self.base_lr)
        _check_grads(net, grads)
        for i, (layer, g) in enumerate(zip(net.layers, grads)):
            lr = self.base_lr * layer.lr_multiplier
            for key, p in layer.params.items():
                v = self.velocity.get((i, key))
                v = g[key].astype(p.dtype, copy=True) if v is None else self.momentum * v + g[key]
                self.velocity[(i, key)] = v
                p -= (lr * v).astype(p.dtype, copy=False)
        net.version += 1
        return net
