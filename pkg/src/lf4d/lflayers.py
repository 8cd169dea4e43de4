"""Light-field front-ends built on the numpy engine.

The remap-domain layers all work by rearranging the remap tensor so an
ordinary 2D layer can run on it:

* :class:`OnViews` splits a remap tensor into its sub-aperture views and runs
  the wrapped layer on each one.  Seen from the remap image the filter reads a
  single pixel per block, i.e. it strides in the input domain.
* :class:`BlockLocal` treats every angular block as its own tiny image, so the
  wrapped layer never reads across a block boundary.
* :class:`AngularFilter` collapses each block to one pixel with an
  ``h_a x w_a`` kernel applied at stride ``(h_a, w_a)``, followed by ReLU.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, GeometryConflict, KernelTooLarge, ShapeMismatch
from .lightfield import (
    LightField,
    EPIVolume,
    central_array,
    epi_stack_array,
    remap_array,
    stack_array,
    views_array,
)
from .nn.layers import Conv2D, FullyConnected, Layer, MaxPool2D, ReLU, Upsample2x, _pair, kaiming
from .nn.network import Network, softmax

ARCHITECTURES = ("central2d", "average2d", "viewpool", "stack", "epi", "angular", "decomposed4d")
ANGULAR_CHANNEL_CHOICES = (3, 16, 32, 64, 128, 147)


def _split_blocks(shape, block):
    n, c, H, W = shape
    bh, bw = block
    if H % bh or W % bw:
        raise DimensionMismatch(f"remap size {H}x{W} is not a multiple of the {bh}x{bw} block")
    return n, c, H // bh, W // bw


class AngularFilter(Layer):
    """Per-pixel filter over the full angular block, stride = block size.

    ``out[j, y, x] = g(sum_{i,v,u} w[j, i, v, u] * L[i, y, x, v, u] + b[j])``
    with ``g`` the ReLU (or identity when ``activation=None``).
    """

    kind = "angular_filter"

    def __init__(self, in_channels, out_channels, block, activation="relu", rng=None, dtype=np.float64, lr_multiplier=1.0):
        super().__init__(lr_multiplier)
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.block = _pair(block)
        if activation not in ("relu", None):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation
        bh, bw = self.block
        fan_in = self.in_channels * bh * bw
        self.params["weight"] = kaiming(rng, (self.out_channels, self.in_channels, bh, bw), fan_in, dtype)
        self.params["bias"] = np.zeros(self.out_channels, dtype=dtype)

    def geometry(self):
        return [self.in_channels, self.out_channels, *self.block, int(self.activation == "relu")]

    def output_shape(self, shape):
        n, c, hs, ws = _split_blocks(shape, self.block)
        if c != self.in_channels:
            raise ShapeMismatch(f"{self!r} expects {self.in_channels} input channels, got {c}")
        return (n, self.out_channels, hs, ws)

    def forward(self, x):
        n, c, hs, ws = _split_blocks(x.shape, self.block)
        if c != self.in_channels:
            raise ShapeMismatch(f"{self!r} expects {self.in_channels} input channels, got {c}")
        bh, bw = self.block
        blocks = x.reshape(n, c, hs, bh, ws, bw)
        pre = np.tensordot(blocks, self.params["weight"], axes=([1, 3, 5], [1, 2, 3]))
        pre = np.ascontiguousarray(pre.transpose(0, 3, 1, 2)) + self.params["bias"][:, None, None]
        if self.activation is None:
            return pre, (blocks, None)
        mask = pre > 0
        return np.where(mask, pre, 0).astype(pre.dtype, copy=False), (blocks, mask)

    def backward(self, cache, dy):
        blocks, mask = cache
        dpre = dy if mask is None else np.where(mask, dy, 0).astype(dy.dtype, copy=False)
        grads = {
            "weight": np.tensordot(dpre, blocks, axes=([0, 2, 3], [0, 2, 4])),
            "bias": dpre.sum(axis=(0, 2, 3)),
        }
        dblocks = np.tensordot(dpre, self.params["weight"], axes=([1], [0]))  # n, hs, ws, c, bh, bw
        n, hs, ws, c, bh, bw = dblocks.shape
        dx = dblocks.transpose(0, 3, 1, 4, 2, 5).reshape(n, c, hs * bh, ws * bw)
        return dx, grads

    def pattern(self, cache):
        return cache[1]


class _Wrapper(Layer):
    def __init__(self, inner, block):
        super().__init__(inner.lr_multiplier)
        self.inner = inner
        self.block = _pair(block)
        self.params = inner.params

    @property
    def kind(self):
        return f"{self.prefix}:{self.inner.kind}"

    def geometry(self):
        return [*self.block, *self.inner.geometry()]

    def astype(self, dtype):
        self.inner.astype(dtype)
        self.params = self.inner.params
        return self

    def pattern(self, cache):
        return self.inner.pattern(cache)


class OnViews(_Wrapper):
    """Run ``inner`` on every sub-aperture view of a remap tensor."""

    prefix = "spatial_on_remap"

    def _to_views(self, x):
        n, c, hs, ws = _split_blocks(x.shape, self.block)
        bh, bw = self.block
        v = x.reshape(n, c, hs, bh, ws, bw).transpose(0, 3, 5, 1, 2, 4)
        return np.ascontiguousarray(v).reshape(n * bh * bw, c, hs, ws)

    def _from_views(self, y, n):
        bh, bw = self.block
        _, c, h, w = y.shape
        r = y.reshape(n, bh, bw, c, h, w).transpose(0, 3, 4, 1, 5, 2)
        return np.ascontiguousarray(r).reshape(n, c, h * bh, w * bw)

    def output_shape(self, shape):
        n, c, hs, ws = _split_blocks(shape, self.block)
        bh, bw = self.block
        _, co, ho, wo = self.inner.output_shape((n * bh * bw, c, hs, ws))
        return (n, co, ho * bh, wo * bw)

    def forward(self, x):
        n = x.shape[0]
        y, cache = self.inner.forward(self._to_views(x))
        return self._from_views(y, n), cache

    def backward(self, cache, dy):
        n = dy.shape[0]
        dx, grads = self.inner.backward(cache, self._to_views(dy))
        return self._from_views(dx, n), grads


class BlockLocal(_Wrapper):
    """Run ``inner`` independently inside every angular block."""

    prefix = "angular_on_remap"

    def _to_blocks(self, x):
        n, c, hs, ws = _split_blocks(x.shape, self.block)
        bh, bw = self.block
        b = x.reshape(n, c, hs, bh, ws, bw).transpose(0, 2, 4, 1, 3, 5)
        return np.ascontiguousarray(b).reshape(n * hs * ws, c, bh, bw), (n, hs, ws)

    @staticmethod
    def _from_blocks(y, dims):
        n, hs, ws = dims
        _, c, bh, bw = y.shape
        r = y.reshape(n, hs, ws, c, bh, bw).transpose(0, 3, 1, 4, 2, 5)
        return np.ascontiguousarray(r).reshape(n, c, hs * bh, ws * bw)

    def out_block(self):
        bh, bw = self.block
        return tuple(self.inner.output_shape((1, getattr(self.inner, "in_channels", 1), bh, bw))[2:])

    def output_shape(self, shape):
        n, c, hs, ws = _split_blocks(shape, self.block)
        bh, bw = self.block
        _, co, ho, wo = self.inner.output_shape((n * hs * ws, c, bh, bw))
        return (n, co, hs * ho, ws * wo)

    def forward(self, x):
        b, dims = self._to_blocks(x)
        y, cache = self.inner.forward(b)
        return self._from_blocks(y, dims), (cache, dims)

    def backward(self, cache, dy):
        inner_cache, dims = cache
        n, hs, ws = dims
        _, c, H, W = dy.shape
        ob = (H // hs, W // ws)
        db = dy.reshape(n, c, hs, ob[0], ws, ob[1]).transpose(0, 2, 4, 1, 3, 5)
        db = np.ascontiguousarray(db).reshape(n * hs * ws, c, *ob)
        dx, grads = self.inner.backward(inner_cache, db)
        return self._from_blocks(dx, dims), grads

    def pattern(self, cache):
        return self.inner.pattern(cache[0])


class BlockPool(Layer):
    """Average each angular block down to one pixel."""

    kind = "block_pool"

    def __init__(self, block):
        super().__init__()
        self.block = _pair(block)

    def geometry(self):
        return list(self.block)

    def output_shape(self, shape):
        n, c, hs, ws = _split_blocks(shape, self.block)
        return (n, c, hs, ws)

    def forward(self, x):
        n, c, hs, ws = _split_blocks(x.shape, self.block)
        bh, bw = self.block
        return x.reshape(n, c, hs, bh, ws, bw).mean(axis=(3, 5)), x.shape

    def backward(self, shape, dy):
        bh, bw = self.block
        n, c, hs, ws = dy.shape
        dx = np.broadcast_to((dy / (bh * bw))[:, :, :, None, :, None], (n, c, hs, bh, ws, bw))
        return dx.reshape(shape), {}


class ViewMaxPool(Layer):
    """Elementwise max over the views of each sample.

    Input batch is ``n * n_views`` with the views of a sample contiguous.
    """

    kind = "view_maxpool"

    def __init__(self, n_views):
        super().__init__()
        self.n_views = int(n_views)

    def geometry(self):
        return [self.n_views]

    def output_shape(self, shape):
        if shape[0] % self.n_views:
            raise ShapeMismatch(f"batch {shape[0]} is not a multiple of {self.n_views} views")
        return (shape[0] // self.n_views,) + tuple(shape[1:])

    def forward(self, x):
        n = self.output_shape(x.shape)[0]
        grouped = x.reshape((n, self.n_views) + x.shape[1:])
        idx = grouped.argmax(axis=1)
        y = np.take_along_axis(grouped, idx[:, None], axis=1)[:, 0]
        return y, (x.shape, idx)

    def backward(self, cache, dy):
        shape, idx = cache
        n = dy.shape[0]
        dx = np.zeros((n, self.n_views) + dy.shape[1:], dtype=dy.dtype)
        np.put_along_axis(dx, idx[:, None], dy[:, None], axis=1)
        return dx.reshape(shape), {}

    def pattern(self, cache):
        return cache[1]


def spatial_on_remap(in_channels, out_channels, kernel, block, pad=0, stride=1, rng=None, dtype=np.float64, lr_multiplier=1.0):
    """Spatial filter on a remap image; ``pad`` is counted in whole blocks."""
    conv = Conv2D(in_channels, out_channels, kernel, stride=stride, pad=pad, rng=rng, dtype=dtype, lr_multiplier=lr_multiplier)
    return OnViews(conv, block)


def angular_on_remap(in_channels, out_channels, kernel, block, rng=None, dtype=np.float64, lr_multiplier=1.0, identity_init=False, noise=0.0):
    """Block-local filter, zero-padded inside the block so its size is kept."""
    kh, kw = _pair(kernel)
    bh, bw = _pair(block)
    if kh > bh or kw > bw:
        raise KernelTooLarge(f"{kh}x{kw} angular kernel does not fit in a {bh}x{bw} block")
    if kh % 2 == 0 or kw % 2 == 0:
        raise GeometryConflict(f"block-preserving angular kernels must be odd, got {kh}x{kw}")
    conv = Conv2D(in_channels, out_channels, (kh, kw), pad=(kh // 2, kw // 2), rng=None if identity_init else rng,
                  dtype=dtype, lr_multiplier=lr_multiplier)
    if identity_init:
        if in_channels != out_channels:
            raise GeometryConflict("identity initialisation needs equal in/out channels")
        w = conv.params["weight"]
        for ch in range(in_channels):
            w[ch, ch, kh // 2, kw // 2] = 1.0
        if noise and rng is not None:
            w += (noise * rng.standard_normal(w.shape)).astype(w.dtype)
    return BlockLocal(conv, (bh, bw))


def block_pool(block, kernel=None):
    """Pooling that stays inside blocks (``kernel`` given) or collapses them."""
    if kernel is None:
        return BlockPool(block)
    return BlockLocal(MaxPool2D(kernel), block)


def interleave_decomposed4d(spatial_layers, angular_layers, order="spatial_first"):
    """Alternate spatial-on-remap and angular-on-remap filters with ReLUs.

    Returns ``(names, layers)``.  Raises :class:`GeometryConflict` when the
    block sizes or channel counts do not chain.
    """
    if order not in ("spatial_first", "angular_first"):
        raise GeometryConflict(f"unknown interleave order {order!r}")
    if len(spatial_layers) != len(angular_layers) or not spatial_layers:
        raise GeometryConflict("need matching, non-empty lists of spatial and angular filters")
    seq = []
    for k, (sp, an) in enumerate(zip(spatial_layers, angular_layers), start=1):
        if not isinstance(sp, OnViews) or not isinstance(an, BlockLocal):
            raise GeometryConflict("spatial filters must be OnViews and angular filters BlockLocal")
        pair = [(f"sconv{k}", sp), (f"aconv{k}", an)]
        if order == "angular_first":
            pair.reverse()
        for name, layer in pair:
            seq.append((name, layer))
            seq.append((f"{name}_relu", ReLU()))
    block = seq[0][1].block
    channels = None
    for name, layer in seq[::2]:
        if layer.block != block:
            raise GeometryConflict(f"{name} uses block {layer.block}, expected {block}")
        if isinstance(layer, BlockLocal) and layer.out_block() != block:
            raise GeometryConflict(f"{name} changes the block size to {layer.out_block()}")
        cin = layer.inner.in_channels
        if channels is not None and cin != channels:
            raise GeometryConflict(f"{name} expects {cin} channels but receives {channels}")
        channels = layer.inner.out_channels
    return [n for n, _ in seq], [l for _, l in seq]


# --------------------------------------------------------------------------
# adapters


INPUT_OFFSET = 0.5  # networks see radiance shifted to roughly zero mean


def adapt(tag, arr, dtype=np.float64):
    """Turn a batch ``(n, 3, h_s, w_s, h_a, w_a)`` into the tensor a network of ``tag`` expects.

    Values are shifted by ``-INPUT_OFFSET`` so SGD starts from centred inputs.
    """
    arr = np.asarray(arr)
    if arr.ndim == 5:
        arr = arr[None]
    if tag in ("central2d", "average2d"):
        out = central_array(arr)
    elif tag == "viewpool":
        out = views_array(arr)
    elif tag == "stack":
        out = stack_array(arr)
    elif tag == "epi":
        out = epi_stack_array(arr)
    elif tag in ("angular", "decomposed4d"):
        out = remap_array(arr)
    else:
        raise ValueError(f"no light-field adapter for {tag!r}")
    out = np.array(out, dtype=dtype, order="C")
    out -= INPUT_OFFSET
    return out


def stack_views(lf: LightField):
    return stack_array(lf.data)


def epi_adapt(epis: EPIVolume):
    cube = epis.stacked()
    s, c, a, x = cube.shape
    return cube.reshape(s * c, a, x)


def angular_filter_forward(remap_tensor, layer: AngularFilter):
    return layer.forward(np.asarray(remap_tensor, dtype=layer.params["weight"].dtype))[0]


def spatial_on_remap_forward(remap_tensor, layer: OnViews):
    return layer.forward(np.asarray(remap_tensor, dtype=layer.params["weight"].dtype))[0]


def angular_on_remap_forward(remap_tensor, layer: BlockLocal):
    return layer.forward(np.asarray(remap_tensor, dtype=layer.params["weight"].dtype))[0]


def predict_proba(net: Network, arr, batch_size=64):
    """Class probabilities for a batch of light-field arrays, honouring the adapter."""
    arr = np.asarray(arr)
    if arr.ndim == 5:
        arr = arr[None]
    out = []
    for s in range(0, arr.shape[0], batch_size):
        chunk = arr[s : s + batch_size]
        if net.input_adapter == "average2d":
            out.append(_average_views(net, chunk))
        else:
            out.append(softmax(net.predict(adapt(net.input_adapter, chunk, net.dtype))))
    return np.concatenate(out, axis=0)


def _average_views(net, chunk):
    n = chunk.shape[0]
    probs = softmax(net.predict(adapt("viewpool", chunk, net.dtype)))
    return probs.reshape(n, -1, probs.shape[1]).mean(axis=1)


def average_view_predictions(net2d: Network, lf: LightField):
    """Softmax per sub-aperture view, then the mean over all views."""
    return _average_views(net2d, lf.data[None])[0]


@dataclass
class ViewPoolSpec:
    prefix: list  # shared per-view layers
    suffix: list
    prefix_names: list = field(default_factory=list)
    suffix_names: list = field(default_factory=list)

    def network(self, n_views):
        pn = self.prefix_names or [f"p{i}" for i in range(len(self.prefix))]
        sn = self.suffix_names or [f"s{i}" for i in range(len(self.suffix))]
        return Network(self.prefix + [ViewMaxPool(n_views)] + self.suffix, "viewpool", pn + ["viewpool"] + sn)


def viewpool_forward(lf: LightField, spec: ViewPoolSpec):
    net = spec.network(lf.h_a * lf.w_a)
    return net.predict(adapt("viewpool", lf.data, net.dtype))


# --------------------------------------------------------------------------
# network builders


@dataclass(frozen=True)
class TrunkSpec:
    """Desk-scale stand-in for VGG-16.

    conv3x3(w1)-relu-conv3x3(w1)-relu-maxpool2, conv3x3(w2)-relu-maxpool2,
    fc(fc)-relu-fc(K).  ``pad=0`` keeps the trunk exactly convolutionalisable.
    """

    widths: tuple = (32, 32, 64)
    fc: int = 128
    pad: int = 0


TRUNK_NAMES = ("conv1", "conv2", "conv3", "fc1", "fc2")


def _spatial_after(size, pad, convs):
    return size + 2 * pad * convs - 2 * convs


def _trunk_layers(in_channels, in_hw, n_classes, trunk, seed, dtype, mult, first_conv_mult=1.0, start=1,
                  conv1_weight=None):
    """Return (names, layers) of the trunk from conv ``start`` onwards, plus the head."""
    w1, w2, w3 = trunk.widths
    p = trunk.pad
    h, w = in_hw

    def rng(i):
        return np.random.default_rng([seed, 0, i])

    names, layers = [], []
    if start <= 1:
        c1 = Conv2D(in_channels, w1, 3, pad=p, rng=rng(1), dtype=dtype, lr_multiplier=first_conv_mult)
        if conv1_weight is not None:
            c1.params["weight"][...] = conv1_weight
        names += ["conv1", "relu1"]
        layers += [c1, ReLU()]
        in_channels = w1
        h, w = h + 2 * p - 2, w + 2 * p - 2
    if start <= 2:
        cm = first_conv_mult if start == 2 else 1.0
        names += ["conv2", "relu2"]
        layers += [Conv2D(in_channels, w1, 3, pad=p, rng=rng(2), dtype=dtype, lr_multiplier=cm), ReLU()]
        in_channels = w1
        h, w = h + 2 * p - 2, w + 2 * p - 2
    names += ["pool1"]
    layers += [MaxPool2D(2)]
    h, w = h // 2, w // 2
    cm = first_conv_mult if start == 3 else 1.0
    names += ["conv3", "relu3", "pool2"]
    layers += [Conv2D(in_channels, w2, 3, pad=p, rng=rng(3), dtype=dtype, lr_multiplier=cm), ReLU(), MaxPool2D(2)]
    h, w = (h + 2 * p - 2) // 2, (w + 2 * p - 2) // 2
    if h < 1 or w < 1:
        raise ShapeMismatch(f"input of {in_hw[0]}x{in_hw[1]} pixels is too small for the trunk")
    names += ["fc1", "relu4", "fc2"]
    layers += [
        FullyConnected((w2, h, w), trunk.fc, rng=rng(4), dtype=dtype),
        ReLU(),
        FullyConnected((trunk.fc, 1, 1), n_classes, rng=rng(5), dtype=dtype, lr_multiplier=mult),
    ]
    return names, layers


def _replicated_conv1(in_channels, trunk, seed, dtype):
    """3-channel kernel tiled over ``in_channels // 3`` groups and divided by the group count."""
    groups = in_channels // 3
    base = kaiming(np.random.default_rng([seed, 0, 1]), (trunk.widths[0], 3, 3, 3), 27, dtype)
    return np.tile(base, (1, groups, 1, 1)) / groups


def build_network(arch, n_classes, patch_size, h_a=7, w_a=7, trunk=TrunkSpec(), angular_channels=64,
                  angular_placement=0, interleave_depth=1, upsample=False, new_layer_lr_mult=10.0, seed=0,
                  dtype=np.float64, angular_noise=0.01, angular_kernel=3):
    """Build the network for one of :data:`ARCHITECTURES`.

    Trunk layers draw from per-layer random streams derived from ``seed`` so
    that architectures sharing a seed also share trunk initialisation
    wherever shapes agree.  Newly added or modified layers (front-end
    filters, the re-targeted classifier) get ``new_layer_lr_mult``.
    """
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")
    mult = float(new_layer_lr_mult)
    block = (h_a, w_a)
    n_views = h_a * w_a
    front_rng = np.random.default_rng([seed, 1])
    s = int(patch_size)
    names, layers = [], []
    meta = dict(arch=arch, n_classes=n_classes, patch_size=s, h_a=h_a, w_a=w_a, upsample=bool(upsample),
                angular_channels=angular_channels, angular_placement=angular_placement,
                interleave_depth=interleave_depth, trunk=dict(widths=list(trunk.widths), fc=trunk.fc, pad=trunk.pad))

    if arch in ("central2d", "average2d", "stack", "epi", "viewpool"):
        if arch == "stack":
            cin, hw = 3 * n_views, (s, s)
        elif arch == "epi":
            if h_a != w_a:
                raise GeometryConflict("EPI stacking needs a square angular grid")
            cin, hw = 6 * s, (h_a, s)
        else:
            cin, hw = 3, (s, s)
        if upsample:
            names.append("up")
            layers.append(Upsample2x(cin, dtype=dtype, lr_multiplier=mult))
            hw = (2 * hw[0], 2 * hw[1])
        conv1_weight = None
        first_mult = 1.0
        if arch in ("stack", "epi"):
            conv1_weight = _replicated_conv1(cin, trunk, seed, dtype)
            first_mult = mult
        tn, tl = _trunk_layers(cin, hw, n_classes, trunk, seed, dtype, mult, first_mult, conv1_weight=conv1_weight)
        if arch == "viewpool":
            cut = tn.index("fc1")
            tn = tn[:cut] + ["viewpool"] + tn[cut:]
            tl = tl[:cut] + [ViewMaxPool(n_views)] + tl[cut:]
        names += tn
        layers += tl
        return Network(layers, arch, names, meta)

    if arch == "angular":
        placement = int(angular_placement)
        if placement not in (0, 1, 2):
            raise GeometryConflict(f"angular filter placement must be 0, 1 or 2, got {placement}")
        C = int(angular_channels)
        hw = (s, s)
        cin = 3
        if upsample and placement > 0:
            names.append("up")
            layers.append(OnViews(Upsample2x(3, dtype=dtype, lr_multiplier=mult), block))
            hw = (2 * s, 2 * s)
        w1 = trunk.widths[0]
        for k in range(1, placement + 1):
            names += [f"conv{k}", f"relu{k}"]
            conv = Conv2D(cin, w1, 3, pad=trunk.pad, rng=np.random.default_rng([seed, 0, k]), dtype=dtype)
            layers += [OnViews(conv, block), ReLU()]
            cin = w1
            hw = (hw[0] + 2 * trunk.pad - 2, hw[1] + 2 * trunk.pad - 2)
        names.append("angular")
        layers.append(AngularFilter(cin, C, block, rng=front_rng, dtype=dtype, lr_multiplier=mult))
        if upsample and placement == 0:
            names.append("up")
            layers.append(Upsample2x(C, dtype=dtype, lr_multiplier=mult))
            hw = (2 * s, 2 * s)
        tn, tl = _trunk_layers(C, hw, n_classes, trunk, seed, dtype, mult, mult, start=placement + 1)
        return Network(layers + tl, arch, names + tn, meta)

    # decomposed4d
    depth = int(interleave_depth)
    if depth not in (1, 2):
        raise GeometryConflict(f"interleave depth must be 1 or 2, got {depth}")
    hw = (s, s)
    if upsample:
        names.append("up")
        layers.append(OnViews(Upsample2x(3, dtype=dtype, lr_multiplier=mult), block))
        hw = (2 * s, 2 * s)
    w1 = trunk.widths[0]
    spatial, angular = [], []
    cin = 3
    for k in range(1, depth + 1):
        conv = Conv2D(cin, w1, 3, pad=trunk.pad, rng=np.random.default_rng([seed, 0, k]), dtype=dtype)
        spatial.append(OnViews(conv, block))
        angular.append(angular_on_remap(w1, w1, angular_kernel if min(block) >= angular_kernel else 1, block,
                                        rng=front_rng, dtype=dtype, lr_multiplier=mult, identity_init=True,
                                        noise=angular_noise))
        cin = w1
        hw = (hw[0] + 2 * trunk.pad - 2, hw[1] + 2 * trunk.pad - 2)
    inames, ilayers = interleave_decomposed4d(spatial, angular)
    inames = [n.replace("sconv", "conv") for n in inames]
    names += inames + ["collapse"]
    layers += ilayers + [BlockPool(block)]
    tn, tl = _trunk_layers(w1, hw, n_classes, trunk, seed, dtype, mult, start=depth + 1)
    return Network(layers + tl, arch, names + tn, meta)


def copy_trunk(src: Network, dst: Network):
    """Copy trunk parameters by layer name wherever shapes agree; returns copied names."""
    copied = []
    for name in TRUNK_NAMES:
        if name in src.names and name in dst.names:
            sp, dp = src.layer(name).params, dst.layer(name).params
            if all(k in sp and sp[k].shape == dp[k].shape for k in dp):
                for k in dp:
                    dp[k][...] = sp[k]
                copied.append(name)
    dst.version += 1
    return copied
