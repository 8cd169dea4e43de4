"""Synthetic view-dependent material scenes and patch mining.

Four default classes are separable mainly through their angular behaviour:

* ``matte``  - band-limited texture, identical in every view.
* ``glossy`` - the same texture distribution plus a white specular lobe whose
  peak wanders across views; the central view carries no highlight, so matte
  and glossy are indistinguishable from the central view alone.
* ``depth``  - a finer texture sitting at non-zero disparity.
* ``sky``    - flat colour, identical in every view.

An optional ``other`` class (striped, view-constant) serves as the background
label for segmentation scenes.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadLayout, TooFewImages
from .lightfield import LightField, crop_patch

PALETTES = {
    "neutral": ((0.85, 0.85, 0.85), 0.12),
    "warm": ((1.0, 0.8, 0.6), 0.08),
    "sky": ((0.45, 0.65, 0.95), 0.05),
    "gray": ((0.7, 0.7, 0.7), 0.05),
}


@dataclass(frozen=True)
class MaterialClassSpec:
    id: int
    name: str
    texture: str = "bandlimited"  # bandlimited | flat | ramp | stripes
    band: tuple = (0.03, 0.15)  # radial pass band, cycles per pixel
    tex_mean: float = 0.55
    tex_std: float = 0.1
    palette: str = "neutral"
    angular_model: str = "constant"  # constant | specular_lobe | disparity_shift | flat_constant
    strength: float = 0.3
    lobe_sigma: float = 1.5  # in views
    lobe_range: float = 2.0  # max |u0|, |v0| of the lobe centre
    disparity: float = 1.0  # pixels per view
    noise_sigma: float = 0.01
    ramp_slope: tuple = (0.003, 0.002)

    def __post_init__(self):
        if self.texture not in ("bandlimited", "flat", "ramp", "stripes"):
            raise ValueError(f"unknown texture model {self.texture!r}")
        if self.angular_model not in ("constant", "specular_lobe", "disparity_shift", "flat_constant"):
            raise ValueError(f"unknown angular model {self.angular_model!r}")
        if not 0.0 <= self.strength <= 0.45:
            raise ValueError("specular strength must lie in [0, 0.45]")
        if self.palette not in PALETTES:
            raise ValueError(f"unknown palette {self.palette!r}")


def default_classes(background=False):
    specs = [
        MaterialClassSpec(0, "matte"),
        MaterialClassSpec(1, "glossy", angular_model="specular_lobe"),
        MaterialClassSpec(2, "depth", band=(0.15, 0.35), palette="warm", angular_model="disparity_shift"),
        MaterialClassSpec(3, "sky", texture="flat", palette="sky", angular_model="flat_constant"),
    ]
    if background:
        specs.append(MaterialClassSpec(4, "other", texture="stripes", palette="gray"))
    return specs


@dataclass(eq=False)
class SceneSample:
    lf: LightField
    labels: np.ndarray
    image_id: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (self.lf.h_s, self.lf.w_s):
            raise BadLayout(f"label map {self.labels.shape} does not match {self.lf.h_s}x{self.lf.w_s}")


@dataclass(eq=False)
class PatchSample:
    patch: LightField
    label: int
    image_id: int
    center: tuple


def scene_seed(seed, image_id):
    """Per-scene seed key, so scenes render independently of each other."""
    return (int(seed), int(image_id))


def _seed_key(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return [int(seed)]


# --------------------------------------------------------------------------
# textures


def bandlimited_noise(rng, h, w, band):
    """Zero-mean, unit-variance noise with energy only in ``band`` (cycles/pixel)."""
    white = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    lo, hi = band
    mask = (radius >= lo) & (radius <= hi)
    field_ = np.fft.ifft2(np.fft.fft2(white) * mask).real
    std = field_.std()
    return (field_ - field_.mean()) / (std if std > 0 else 1.0)


def _tint(rng, palette):
    base, jitter = PALETTES[palette]
    return np.clip(np.asarray(base) + jitter * rng.standard_normal(3), 0.2, 1.0)


def _texture(spec, rng, h, w):
    """Gray texture on an ``h x w`` canvas (before tinting)."""
    if spec.texture == "bandlimited":
        return spec.tex_mean + spec.tex_std * bandlimited_noise(rng, h, w, spec.band)
    if spec.texture == "flat":
        return np.full((h, w), spec.tex_mean)
    if spec.texture == "ramp":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        sx, sy = spec.ramp_slope
        return spec.tex_mean + sx * (xx - w / 2) + sy * (yy - h / 2)
    period = rng.uniform(5.0, 9.0)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phase = (xx * np.cos(theta) + yy * np.sin(theta)) * 2 * np.pi / period
    return spec.tex_mean + spec.tex_std * np.sign(np.sin(phase))


def lobe_offsets(u, v, u0, v0, sigma):
    """Highlight relative to the central view: ``G(u, v) - G(0, 0)``."""
    g = np.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2 * sigma**2))
    g0 = np.exp(-(u0**2 + v0**2) / (2 * sigma**2))
    return g - g0


def render_class(spec, rng, h, w, h_a, w_a, tint=True):
    """Full-frame noiseless light field ``(3, h, w, h_a, w_a)`` of one class."""
    vr, ur = (h_a - 1) // 2, (w_a - 1) // 2
    colour = _tint(rng, spec.palette) if tint else np.ones(3)
    out = np.empty((3, h, w, h_a, w_a))
    if spec.angular_model == "disparity_shift":
        margin = int(math.ceil(abs(spec.disparity) * max(ur, vr))) + 2
        canvas = _texture(spec, rng, h + 2 * margin, w + 2 * margin)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        for vi in range(h_a):
            for ui in range(w_a):
                v, u = vi - vr, ui - ur
                coords = np.array([yy + margin + spec.disparity * v, xx + margin + spec.disparity * u])
                view = ndimage.map_coordinates(canvas, coords, order=1, mode="nearest")
                out[:, :, :, vi, ui] = colour[:, None, None] * view
        return np.clip(out, 0.0, 1.0)

    tex = _texture(spec, rng, h, w)
    out[...] = (colour[:, None, None] * tex)[..., None, None]
    if spec.angular_model == "specular_lobe":
        u0 = np.clip(bandlimited_noise(rng, h, w, (0.0, 0.04)) * spec.lobe_range / 2, -spec.lobe_range, spec.lobe_range)
        v0 = np.clip(bandlimited_noise(rng, h, w, (0.0, 0.04)) * spec.lobe_range / 2, -spec.lobe_range, spec.lobe_range)
        u = (np.arange(w_a) - ur)[None, None, None, :]
        v = (np.arange(h_a) - vr)[None, None, :, None]
        hl = lobe_offsets(u, v, u0[:, :, None, None], v0[:, :, None, None], spec.lobe_sigma)
        out += spec.strength * hl[None]
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# scenes


def render_scene(specs, layout, seed, h_a=7, w_a=7, image_id=0, noise=True):
    """Render a labelled scene; ``layout`` is an (h, w) map of class ids.

    ``seed`` is an int or a tuple of ints.  Each class present draws from its
    own stream keyed by class id, the sensor noise from another.
    """
    layout = np.asarray(layout)
    by_id = {s.id: s for s in specs}
    if layout.ndim != 2 or min(layout.shape) < 1:
        raise BadLayout(f"layout must be a non-empty 2D label map, got shape {layout.shape}")
    if not np.issubdtype(layout.dtype, np.integer):
        raise BadLayout("layout must hold integer class ids")
    present = [int(c) for c in np.unique(layout)]
    unknown = [c for c in present if c not in by_id]
    if unknown:
        raise BadLayout(f"layout references unknown class ids {unknown}")
    if h_a % 2 == 0 or w_a % 2 == 0:
        raise BadLayout("angular extents must be odd")
    key = _seed_key(seed)
    h, w = layout.shape
    data = np.zeros((3, h, w, h_a, w_a))
    sigma = np.zeros((h, w))
    for cid in present:
        spec = by_id[cid]
        rng = np.random.default_rng(key + [cid, 17])
        mask = layout == cid
        data[:, mask] = render_class(spec, rng, h, w, h_a, w_a)[:, mask]
        sigma[mask] = spec.noise_sigma
    if noise:
        nrng = np.random.default_rng(key + [99991])
        data += nrng.standard_normal(data.shape) * sigma[None, :, :, None, None]
    data = np.clip(data, 0.0, 1.0).astype(np.float32)
    return SceneSample(LightField(data), layout.astype(np.int64), image_id)


def make_layout(kind, h, w, classes, rng, n_cells=4):
    """Region partition: ``uniform`` (one class) or ``voronoi`` (random cells)."""
    if kind == "uniform":
        return np.full((h, w), int(classes[0]), dtype=np.int64)
    if kind == "voronoi":
        pts = rng.uniform(0, 1, size=(n_cells, 2)) * (h, w)
        labels = rng.choice(classes, size=n_cells)
        yy, xx = np.mgrid[0:h, 0:w]
        d = (yy[None] - pts[:, 0, None, None]) ** 2 + (xx[None] - pts[:, 1, None, None]) ** 2
        return np.asarray(labels)[d.argmin(axis=0)].astype(np.int64)
    raise BadLayout(f"unknown layout kind {kind!r}")


def scene_for(index, seed, specs, h_s, w_s, h_a, w_a, layout="uniform"):
    key = scene_seed(seed, index)
    class_ids = [s.id for s in specs]
    if layout == "uniform":
        lay = make_layout("uniform", h_s, w_s, [class_ids[index % len(class_ids)]], None)
    else:
        lrng = np.random.default_rng(list(key) + [7])
        lay = make_layout(layout, h_s, w_s, class_ids, lrng)
    return render_scene(specs, lay, key, h_a, w_a, image_id=index)


def synth_dataset(n_scenes, seed, h_s=64, w_s=64, h_a=7, w_a=7, specs=None, layout="uniform"):
    """Scenes ``0..n_scenes-1``; with the uniform layout scene ``i`` is class ``i % K``."""
    specs = specs or default_classes()
    return [scene_for(i, seed, specs, h_s, w_s, h_a, w_a, layout) for i in range(n_scenes)]


# --------------------------------------------------------------------------
# patches


def patch_size_for(h, w, ratio=0.34):
    return int(round(ratio * min(h, w)))


def candidate_centers(h, w, patch_size, stride):
    half = patch_size // 2
    ys = range(half, h - patch_size + half + 1, stride)
    xs = range(half, w - patch_size + half + 1, stride)
    return [(y, x) for y in ys for x in xs]


def extract_patches(scene, patch_size, min_spacing=None, coverage=0.5):
    """Greedy scan over a grid of centres with stride ``min_spacing``.

    A candidate is kept when its majority class covers at least ``coverage``
    of the window and it lies at least ``min_spacing`` from every kept centre.
    """
    lf = scene.lf
    if patch_size > min(lf.h_s, lf.w_s):
        raise ValueError(f"patch size {patch_size} exceeds the {lf.h_s}x{lf.w_s} scene")
    spacing = int(min_spacing) if min_spacing else max(1, patch_size // 2)
    half = patch_size // 2
    kept, out = [], []
    for cy, cx in candidate_centers(lf.h_s, lf.w_s, patch_size, spacing):
        window = scene.labels[cy - half : cy - half + patch_size, cx - half : cx - half + patch_size]
        counts = np.bincount(window.ravel())
        label = int(counts.argmax())
        if counts[label] < coverage * window.size:
            continue
        if any((cy - ky) ** 2 + (cx - kx) ** 2 < spacing**2 for ky, kx in kept):
            continue
        kept.append((cy, cx))
        out.append(PatchSample(crop_patch(lf, cy, cx, patch_size), label, scene.image_id, (cy, cx)))
    return out


def split_by_image(samples, train_fraction, seed):
    """Random per-image split; every patch of an image lands on the same side."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ids = sorted({s.image_id for s in samples})
    n_train = int(round(train_fraction * len(ids)))
    if n_train == 0 or n_train == len(ids):
        raise TooFewImages(f"{len(ids)} images cannot be split {train_fraction:.2f}/{1 - train_fraction:.2f} with both sides non-empty")
    perm = np.random.default_rng(seed).permutation(len(ids))
    train_ids = {ids[i] for i in perm[:n_train]}
    train = [s for s in samples if s.image_id in train_ids]
    test = [s for s in samples if s.image_id not in train_ids]
    return train, test
