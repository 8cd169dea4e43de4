"""Dense material maps from a trained patch classifier.

A patch network is rewritten as a fully convolutional one, slid over a whole
light field, optionally fused across scales, upsampled bilinearly and then
sharpened with a guided filter whose guide is the central view.
"""

import copy
import io
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import BadRadius, DimensionMismatch, GridMismatch, InputTooSmall, NonConvertibleLayer, ShapeMismatch
from .fileio import atomic_write_bytes, atomic_write_json
from .lflayers import AngularFilter, BlockLocal, BlockPool, OnViews, ViewMaxPool, adapt
from .lightfield import LightField, central_view, downsample_array
from .nn import Conv2D, FullyConnected, MaxPool2D, Network, ReLU, Upsample2x

# label colours for pred.png; index K is the background class
PALETTE = [
    (200, 200, 200), (230, 160, 40), (200, 60, 60), (80, 140, 230),
    (60, 60, 60), (120, 200, 90), (170, 90, 200), (240, 220, 70),
]


@dataclass
class ProbabilityMap:
    """Per-class probabilities ``(K, h, w)`` on a regular grid.

    Grid cell ``(i, j)`` sits at source pixel ``(offset + i*stride, offset + j*stride)``.
    """

    data: np.ndarray
    stride: float = 1.0
    offset: float = 0.0

    @property
    def n_classes(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]

    def argmax(self):
        return self.data.argmax(axis=0)


def _renormalize(p):
    p = np.clip(p, 0.0, None)
    s = p.sum(axis=0, keepdims=True)
    return p / np.where(s > 0, s, 1.0)


# --------------------------------------------------------------------------
# fully convolutional rewrite


def _convert(layer, name):
    if isinstance(layer, FullyConnected):
        c, h, w = layer.in_shape
        conv = Conv2D(c, layer.out_features, (h, w), dtype=layer.params["weight"].dtype,
                      lr_multiplier=layer.lr_multiplier)
        conv.params["weight"] = layer.params["weight"].reshape(layer.out_features, c, h, w).copy()
        conv.params["bias"] = layer.params["bias"].copy()
        return conv
    if isinstance(layer, (OnViews, BlockLocal)):
        if isinstance(layer.inner, FullyConnected):
            raise NonConvertibleLayer(f"layer '{name}': fully connected layer inside {layer.kind}")
        return copy.deepcopy(layer)
    if isinstance(layer, (Conv2D, ReLU, MaxPool2D, Upsample2x, AngularFilter, BlockPool, ViewMaxPool)):
        return copy.deepcopy(layer)
    raise NonConvertibleLayer(f"layer '{name}' of kind {layer.kind} has no convolutional form")


def convolutionalize(net: Network) -> Network:
    """Copy of ``net`` whose fully connected layers are convolutions.

    The first fc layer becomes a convolution as large as its input; the rest
    become 1x1.  The result slides the patch classifier over larger inputs.
    """
    if net.input_adapter == "epi":
        raise NonConvertibleLayer("EPI inputs mix every spatial row and column; no sliding form exists")
    layers = [_convert(l, n) for n, l in zip(net.names, net.layers)]
    meta = dict(net.meta, fcn=True)
    return Network(layers, net.input_adapter, list(net.names), meta)


def _layer_stride(layer):
    if isinstance(layer, (OnViews, BlockLocal)):
        return _layer_stride(layer.inner) if isinstance(layer, OnViews) else Fraction(1)
    if isinstance(layer, (Conv2D, MaxPool2D)):
        return Fraction(layer.stride[1])
    if isinstance(layer, Upsample2x):
        return Fraction(1, 2)
    return Fraction(1)


def fcn_stride(net: Network):
    """Output-to-input spatial ratio, in pixels of the network's own input."""
    s = Fraction(1)
    for layer in net.layers:
        s *= _layer_stride(layer)
    return s


def _transform(net, lf):
    arr = np.asarray(lf.data if isinstance(lf, LightField) else lf)[None]
    step = int(net.meta.get("angular_step", 1))
    sf = int(net.meta.get("spatial_factor", 1))
    if step > 1:
        arr = arr[..., ::step, ::step]
    if sf > 1:
        h, w = arr.shape[2] // sf * sf, arr.shape[3] // sf * sf
        arr = downsample_array(arr[:, :, :h, :w], sf)
    return arr


def dense_scores(fcn: Network, lf):
    """Raw class scores ``(n_views or 1, K, h, w)`` over the whole light field."""
    arr = _transform(fcn, lf)
    patch = int(fcn.meta.get("patch_size", 0))
    if min(arr.shape[2:4]) < patch:
        raise InputTooSmall(f"light field {arr.shape[2]}x{arr.shape[3]} is smaller than the {patch}-pixel patch")
    tag = "viewpool" if fcn.input_adapter == "average2d" else fcn.input_adapter
    x = adapt(tag, arr, fcn.dtype)
    try:
        return fcn.predict(x)
    except ShapeMismatch as exc:
        raise InputTooSmall(str(exc)) from None


def dense_predict(fcn: Network, lf) -> ProbabilityMap:
    """Softmax map of a convolutionalized network over a whole light field."""
    scores = dense_scores(fcn, lf)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    prob = (e / e.sum(axis=1, keepdims=True)).mean(axis=0)  # mean over views for average2d
    sf = int(fcn.meta.get("spatial_factor", 1))
    patch = int(fcn.meta.get("patch_size", 0))
    stride = float(fcn_stride(fcn)) * sf
    return ProbabilityMap(prob.astype(np.float64), stride, (patch // 2) * sf)


def patch_scores(net: Network, lf, top, left):
    """Scores of the patch network on the patch whose top-left is (top, left) in network pixels."""
    arr = _transform(net, lf)
    p = int(net.meta["patch_size"])
    window = arr[:, :, top : top + p, left : left + p]
    tag = "viewpool" if net.input_adapter == "average2d" else net.input_adapter
    scores = net.predict(adapt(tag, window, net.dtype))
    return scores[:, :, 0, 0]


# --------------------------------------------------------------------------
# resampling, fusion


def resample(pm: ProbabilityMap, height, width) -> ProbabilityMap:
    """Bilinear resample onto the full ``height x width`` pixel grid (clamped at the edges)."""
    ys = (np.arange(height) - pm.offset) / pm.stride
    xs = (np.arange(width) - pm.offset) / pm.stride
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack([ndimage.map_coordinates(ch, [yy, xx], order=1, mode="nearest") for ch in pm.data])
    return ProbabilityMap(_renormalize(out), 1.0, 0.0)


def fuse_scales(maps) -> ProbabilityMap:
    """Per-class mean of maps already on a common grid, renormalized."""
    maps = list(maps)
    if not maps:
        raise GridMismatch("no maps to fuse")
    ref = maps[0]
    for m in maps[1:]:
        if m.data.shape != ref.data.shape or m.stride != ref.stride or m.offset != ref.offset:
            raise GridMismatch(
                f"map {m.data.shape} stride {m.stride} offset {m.offset} does not match "
                f"{ref.data.shape} stride {ref.stride} offset {ref.offset}; resample first"
            )
    mean = np.mean([m.data for m in maps], axis=0)
    return ProbabilityMap(_renormalize(mean), ref.stride, ref.offset)


# --------------------------------------------------------------------------
# guided filter


def box_mean(img, r):
    """Mean over the ``(2r+1)^2`` window clipped to the image, via an integral image."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    sat = np.zeros((h + 1, w + 1))
    sat[1:, 1:] = img.cumsum(0).cumsum(1)
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    total = sat[y1][:, x1] - sat[y0][:, x1] - sat[y1][:, x0] + sat[y0][:, x0]
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return total / count


def guided_filter(p, guide, radius=8, eps=1e-3):
    """Edge-aware smoothing of ``p`` steered by the grayscale ``guide``."""
    if isinstance(radius, bool) or not isinstance(radius, (int, np.integer)) or radius < 1:
        raise BadRadius(f"radius must be a positive integer, got {radius!r}")
    p = np.asarray(p, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if p.shape != guide.shape:
        raise DimensionMismatch(f"input {p.shape} and guide {guide.shape} differ; upsample first")
    mean_i = box_mean(guide, radius)
    mean_p = box_mean(p, radius)
    cov_ip = box_mean(guide * p, radius) - mean_i * mean_p
    var_i = box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box_mean(a, radius) * guide + box_mean(b, radius)


def filter_probabilities(pm: ProbabilityMap, guide, radius=8, eps=1e-3) -> ProbabilityMap:
    """Guided-filter every class channel, then project back onto the simplex."""
    out = np.stack([guided_filter(ch, guide, radius, eps) for ch in pm.data])
    return ProbabilityMap(_renormalize(out), pm.stride, pm.offset)


def per_pixel_accuracy(pred, gt, ignore=None):
    """Fraction of pixels where ``pred == gt``; pixels with ``gt == ignore`` are left out."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    keep = np.ones(gt.shape, bool) if ignore is None else gt != ignore
    n = int(keep.sum())
    return float((pred[keep] == gt[keep]).sum() / n) if n else float("nan")


# --------------------------------------------------------------------------
# scene pipeline and outputs


@dataclass
class Segmentation:
    raw: ProbabilityMap  # fused, upsampled to full resolution
    filtered: ProbabilityMap

    @property
    def pred_pre(self):
        return self.raw.argmax()

    @property
    def pred_post(self):
        return self.filtered.argmax()


def segment_lightfield(fcns, lf: LightField, radius=8, eps=1e-3) -> Segmentation:
    """Dense-predict with every network, fuse at full resolution, then guided-filter."""
    maps = [resample(dense_predict(f, lf), lf.h_s, lf.w_s) for f in fcns]
    raw = fuse_scales(maps)
    guide = central_view(lf).gray()
    return Segmentation(raw, filter_probabilities(raw, guide, radius, eps))


def encode_prob(pm: ProbabilityMap) -> bytes:
    k, h, w = pm.data.shape
    return struct.pack("<iii", k, h, w) + np.ascontiguousarray(pm.data, dtype="<f4").tobytes()


def decode_prob(payload: bytes) -> np.ndarray:
    k, h, w = struct.unpack("<iii", payload[:12])
    return np.frombuffer(payload, dtype="<f4", offset=12).reshape(k, h, w)


def encode_pred_png(pred) -> bytes:
    pred = np.asarray(pred)
    img = PILImage.fromarray(pred.astype(np.uint8), mode="P")
    flat = [c for rgb in PALETTE for c in rgb]
    img.putpalette(flat + [0] * (768 - len(flat)))
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_segmentation(out_dir, seg: Segmentation, gt=None, ignore=None):
    """Write pred.png, prob.bin and (given ground truth) metrics.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / "pred.png", encode_pred_png(seg.pred_post))
    atomic_write_bytes(out / "prob.bin", encode_prob(seg.filtered))
    metrics = None
    if gt is not None:
        metrics = {
            "pre_filter_acc": per_pixel_accuracy(seg.pred_pre, gt, ignore),
            "post_filter_acc": per_pixel_accuracy(seg.pred_post, gt, ignore),
        }
        atomic_write_json(out / "metrics.json", metrics)
    return metrics


@dataclass
class SegmentationReport:
    pre_filter_acc: float
    post_filter_acc: float
    per_scene: list  # (image_id, pre, post)
    network: Network


def segmentation_task(config, n_scenes=60, seed=3, size=96, train_fraction=0.75, patches_per_image=8,
                      radius=8, eps=1e-3, progress=None):
    """Train a patch classifier on mixed-material scenes and score dense maps on held-out ones.

    Scenes are Voronoi mosaics over the default classes plus the background
    class; the last ``1 - train_fraction`` of the scenes are only segmented.
    """
    from .synth import default_classes, extract_patches, synth_dataset
    from .train import thin_patches, train

    specs = default_classes(background=True)
    scenes = synth_dataset(n_scenes, seed, h_s=size, w_s=size, specs=specs, layout="voronoi")
    n_train = int(round(train_fraction * n_scenes))
    if not 0 < n_train < n_scenes:
        raise ValueError(f"train_fraction {train_fraction} leaves no scenes on one side")
    ps = config.patch_size
    patches = [p for s in scenes[:n_train] for p in extract_patches(s, ps, min_spacing=ps // 2)]
    patches = thin_patches(patches, patches_per_image, seed)
    config = replace(config, n_classes=len(specs))
    net = train(config, patches, progress).network
    fcn = convolutionalize(net)
    rows = []
    for s in scenes[n_train:]:
        seg = segment_lightfield([fcn], s.lf, radius, eps)
        rows.append((s.image_id, per_pixel_accuracy(seg.pred_pre, s.labels), per_pixel_accuracy(seg.pred_post, s.labels)))
    pre = float(np.mean([r[1] for r in rows]))
    post = float(np.mean([r[2] for r in rows]))
    return SegmentationReport(pre, post, rows, net)
