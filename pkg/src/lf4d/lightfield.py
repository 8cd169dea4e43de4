"""Light-field container and the exact transforms between its layouts.

Array layout of ``LightField.data`` is ``(color, y, x, v, u)`` with the
angular axes stored as indices ``v + v_r`` and ``u + u_r``, so index
``(v_r, u_r)`` is the central view.  The batch helpers at the bottom of the
module take arrays with arbitrary leading batch axes, ``(..., 3, h_s, w_s,
h_a, w_a)``, and are what the network adapters use.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadExtent, BadMeta, DimensionMismatch, MissingView, OutOfBounds
from .fileio import atomic_write_bytes, atomic_write_json, encode_png, from_unit, read_png, to_unit

META_KEYS = ("h_s", "w_s", "h_a", "w_a")
VIEW_RE = re.compile(r"^view_u(-?\d+)_v(-?\d+)\.png$")


def _freeze(arr):
    arr = np.asarray(arr)
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class LightField:
    """4D RGB light field, values in [0, 1].

    Angular extents are normally odd so that ``(u, v) = (0, 0)`` exists.
    Even extents are tolerated only for derived light fields (see
    :func:`angular_subsample`); operations that need a central view reject them.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 5 or data.shape[0] != 3:
            raise DimensionMismatch(f"light-field data must be (3, h_s, w_s, h_a, w_a), got {data.shape}")
        if min(data.shape) < 1:
            raise DimensionMismatch(f"empty light-field extent {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            raise TypeError(f"light-field data must be floating point, got {data.dtype}")
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 1.0 or not np.isfinite(lo + hi):
            raise ValueError(f"light-field values must lie in [0, 1], got [{lo}, {hi}]")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def h_s(self):
        return self.data.shape[1]

    @property
    def w_s(self):
        return self.data.shape[2]

    @property
    def h_a(self):
        return self.data.shape[3]

    @property
    def w_a(self):
        return self.data.shape[4]

    @property
    def v_r(self):
        return (self.h_a - 1) // 2

    @property
    def u_r(self):
        return (self.w_a - 1) // 2

    @property
    def odd_angular(self):
        return self.h_a % 2 == 1 and self.w_a % 2 == 1

    def view(self, u, v):
        """Sub-aperture view at signed angular offset (u, v), shape (3, h_s, w_s)."""
        self._require_odd()
        return self.data[:, :, :, v + self.v_r, u + self.u_r]

    def _require_odd(self):
        if not self.odd_angular:
            raise BadExtent(f"operation needs odd angular extents, got {self.h_a}x{self.w_a}")

    def __eq__(self, other):
        if not isinstance(other, LightField):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RemapImage:
    """Micro-lens layout: every spatial pixel expanded into a ``block_h x block_w`` block."""

    data: np.ndarray
    block_h: int
    block_w: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[0] != 3:
            raise DimensionMismatch(f"remap data must be (3, H, W), got {data.shape}")
        if data.shape[1] % self.block_h or data.shape[2] % self.block_w:
            raise DimensionMismatch(
                f"remap size {data.shape[1]}x{data.shape[2]} is not a multiple of the "
                f"{self.block_h}x{self.block_w} block"
            )
        object.__setattr__(self, "data", _freeze(data))


@dataclass(frozen=True)
class EPIVolume:
    """Horizontal and vertical epipolar-plane images.

    ``horizontal[y]`` is indexed ``(color, u + u_r, x)``; ``vertical[x]`` is
    indexed ``(color, v + v_r, y)``.  :meth:`stacked` concatenates all
    horizontal slices by ascending y followed by all vertical slices by
    ascending x.
    """

    horizontal: np.ndarray  # (h_s, 3, w_a, w_s)
    vertical: np.ndarray  # (w_s, 3, h_a, h_s)

    def stacked(self):
        if self.horizontal.shape[1:] != self.vertical.shape[1:]:
            raise DimensionMismatch(
                "horizontal and vertical EPIs differ in shape "
                f"{self.horizontal.shape[1:]} vs {self.vertical.shape[1:]}; stacking needs a square light field"
            )
        return np.concatenate([self.horizontal, self.vertical], axis=0)


@dataclass(frozen=True, eq=False)
class Image:
    data: np.ndarray  # (3, h, w)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionMismatch(f"image data must be (c, h, w) with positive extents, got {data.shape}")
        object.__setattr__(self, "data", _freeze(data))

    def gray(self):
        """Luma used as the guided-filter guide."""
        if self.data.shape[0] == 1:
            return np.asarray(self.data[0], dtype=np.float64)
        r, g, b = (np.asarray(c, dtype=np.float64) for c in self.data[:3])
        return 0.299 * r + 0.587 * g + 0.114 * b


# --------------------------------------------------------------------------
# batch-array helpers, leading axes are batch axes


def remap_array(arr):
    """(..., C, h_s, w_s, h_a, w_a) -> (..., C, h_s*h_a, w_s*w_a)."""
    *lead, c, hs, ws, ha, wa = arr.shape
    nl = len(lead)
    order = tuple(range(nl)) + (nl, nl + 1, nl + 3, nl + 2, nl + 4)
    return arr.transpose(order).reshape(*lead, c, hs * ha, ws * wa)


def unremap_array(arr, h_a, w_a):
    """Inverse of :func:`remap_array`."""
    *lead, c, H, W = arr.shape
    if H % h_a or W % w_a:
        raise DimensionMismatch(f"remap size {H}x{W} is not divisible by the {h_a}x{w_a} block")
    nl = len(lead)
    blocks = arr.reshape(*lead, c, H // h_a, h_a, W // w_a, w_a)
    order = tuple(range(nl)) + (nl, nl + 1, nl + 3, nl + 2, nl + 4)
    return blocks.transpose(order)


def central_array(arr):
    ha, wa = arr.shape[-2:]
    if ha % 2 == 0 or wa % 2 == 0:
        raise BadExtent(f"central view needs odd angular extents, got {ha}x{wa}")
    return arr[..., (ha - 1) // 2, (wa - 1) // 2]


def stack_array(arr):
    """(..., 3, h_s, w_s, h_a, w_a) -> (..., 3*h_a*w_a, h_s, w_s).

    Channel index is ``view_index * 3 + color`` with views enumerated
    row-major over (v, u) starting at (-v_r, -u_r).
    """
    *lead, c, hs, ws, ha, wa = arr.shape
    nl = len(lead)
    order = tuple(range(nl)) + (nl + 3, nl + 4, nl, nl + 1, nl + 2)
    return arr.transpose(order).reshape(*lead, ha * wa * c, hs, ws)


def unstack_array(arr, h_a, w_a):
    *lead, cv, hs, ws = arr.shape
    c = cv // (h_a * w_a)
    if c * h_a * w_a != cv:
        raise DimensionMismatch(f"{cv} channels cannot be split into {h_a}x{w_a} views")
    nl = len(lead)
    views = arr.reshape(*lead, h_a, w_a, c, hs, ws)
    order = tuple(range(nl)) + (nl + 2, nl + 3, nl + 4, nl, nl + 1)
    return views.transpose(order)


def views_array(arr):
    """(N, 3, h_s, w_s, h_a, w_a) -> (N*h_a*w_a, 3, h_s, w_s), views row-major over (v, u)."""
    n, c, hs, ws, ha, wa = arr.shape
    return arr.transpose(0, 4, 5, 1, 2, 3).reshape(n * ha * wa, c, hs, ws)


def epi_arrays(arr):
    """Horizontal (..., h_s, 3, w_a, w_s) and vertical (..., w_s, 3, h_a, h_s) EPIs."""
    ha, wa = arr.shape[-2:]
    if ha % 2 == 0 or wa % 2 == 0:
        raise BadExtent(f"EPI extraction needs odd angular extents, got {ha}x{wa}")
    nl = arr.ndim - 5
    lead = tuple(range(nl))
    horiz = arr[..., (ha - 1) // 2, :]  # (..., 3, h_s, w_s, w_a)
    vert = arr[..., :, (wa - 1) // 2]  # (..., 3, h_s, w_s, h_a)
    horiz = horiz.transpose(lead + (nl + 1, nl, nl + 3, nl + 2))
    vert = vert.transpose(lead + (nl + 2, nl, nl + 3, nl + 1))
    return horiz, vert


def epi_stack_array(arr):
    """(N, 3, h_s, w_s, h_a, w_a) -> (N, 3*(h_s+w_s), a, s) channel-stacked EPIs."""
    horiz, vert = epi_arrays(arr)
    if horiz.shape[-3:] != vert.shape[-3:]:
        raise DimensionMismatch(
            f"EPI stacking needs h_s == w_s and h_a == w_a, got slices {horiz.shape[-3:]} and {vert.shape[-3:]}"
        )
    both = np.concatenate([horiz, vert], axis=-4)
    *lead, s, c, a, x = both.shape
    return both.reshape(*lead, s * c, a, x)


# --------------------------------------------------------------------------
# single light-field operations


def to_remap(lf: LightField) -> RemapImage:
    return RemapImage(remap_array(lf.data), lf.h_a, lf.w_a)


def from_remap(remap: RemapImage, h_a: int, w_a: int) -> LightField:
    data = np.asarray(remap.data)
    if data.shape[1] % h_a or data.shape[2] % w_a:
        raise DimensionMismatch(f"remap size {data.shape[1]}x{data.shape[2]} is not divisible by {h_a}x{w_a}")
    return LightField(np.ascontiguousarray(unremap_array(data, h_a, w_a)))


def extract_epis(lf: LightField) -> EPIVolume:
    horiz, vert = epi_arrays(lf.data)
    return EPIVolume(_freeze(np.ascontiguousarray(horiz)), _freeze(np.ascontiguousarray(vert)))


def central_view(lf: LightField) -> Image:
    return Image(central_array(lf.data))


def angular_crop(lf: LightField, h_a: int, w_a: int) -> LightField:
    """Keep the centred ``h_a x w_a`` angular window."""
    if h_a % 2 == 0 or w_a % 2 == 0:
        raise BadExtent(f"cropped angular extent must be odd, got {h_a}x{w_a}")
    if h_a < 1 or w_a < 1 or h_a > lf.h_a or w_a > lf.w_a:
        raise BadExtent(f"cannot crop {lf.h_a}x{lf.w_a} views to {h_a}x{w_a}")
    lf._require_odd()
    v0 = lf.v_r - (h_a - 1) // 2
    u0 = lf.u_r - (w_a - 1) // 2
    return LightField(lf.data[..., v0 : v0 + h_a, u0 : u0 + w_a])


def angular_subsample(lf: LightField, step: int) -> LightField:
    """Keep every ``step``-th view along both angular axes, starting at the corner.

    With 7x7 views and step 2 this keeps offsets {-3, -1, 1, 3}: a 4x4 grid
    with no central view.
    """
    if step < 1:
        raise BadExtent(f"angular step must be positive, got {step}")
    return LightField(lf.data[..., ::step, ::step])


def spatial_downsample(lf: LightField, factor: int) -> LightField:
    """Block-mean each ``factor x factor`` spatial block, per view and channel."""
    if factor < 1 or lf.h_s % factor or lf.w_s % factor:
        raise DimensionMismatch(f"spatial size {lf.h_s}x{lf.w_s} is not divisible by factor {factor}")
    return LightField(downsample_array(lf.data, factor))


def downsample_array(arr, factor):
    *lead, c, hs, ws, ha, wa = arr.shape
    blocks = arr.reshape(*lead, c, hs // factor, factor, ws // factor, factor, ha, wa)
    nl = len(lead)
    out = blocks.mean(axis=(nl + 2, nl + 4))
    return np.clip(out, 0.0, 1.0)


def crop_patch(lf: LightField, cy: int, cx: int, size: int) -> LightField:
    """Spatial ``size x size`` window centred at (cy, cx), all views kept.

    For even sizes the window spans ``[c - size//2, c + size//2)``.
    """
    y0, x0 = cy - size // 2, cx - size // 2
    if size < 1 or y0 < 0 or x0 < 0 or y0 + size > lf.h_s or x0 + size > lf.w_s:
        raise OutOfBounds(f"{size}x{size} patch at ({cy}, {cx}) leaves the {lf.h_s}x{lf.w_s} light field")
    return LightField(lf.data[:, y0 : y0 + size, x0 : x0 + size])


# --------------------------------------------------------------------------
# on-disk directory format


def view_filename(u, v):
    return f"view_u{u}_v{v}.png"


def _read_meta(path: Path):
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise BadMeta(f"{meta_path}: meta.json not found")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise BadMeta(f"{meta_path}: invalid JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise BadMeta(f"{meta_path}: expected a JSON object")
    for key in META_KEYS:
        if key not in meta:
            raise BadMeta(f"{meta_path}: missing key '{key}'")
        val = meta[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise BadMeta(f"{meta_path}: key '{key}' must be a positive integer, got {val!r}")
    for key in ("h_a", "w_a"):
        if meta[key] % 2 == 0:
            raise BadMeta(f"{meta_path}: key '{key}' must be odd, got {meta[key]}")
    return meta


def load_lightfield(path) -> LightField:
    path = Path(path)
    meta = _read_meta(path)
    hs, ws, ha, wa = (meta[k] for k in META_KEYS)
    vr, ur = (ha - 1) // 2, (wa - 1) // 2
    data = np.empty((3, hs, ws, ha, wa), dtype=np.float32)
    for v in range(-vr, vr + 1):
        for u in range(-ur, ur + 1):
            name = view_filename(u, v)
            fp = path / name
            if not fp.is_file():
                raise MissingView(f"{path}: missing view file {name}")
            img = read_png(fp)
            if img.ndim == 2:
                raise DimensionMismatch(f"{name}: expected an RGB image, got single channel")
            if img.shape[:2] != (hs, ws):
                raise DimensionMismatch(f"{name}: size {img.shape[1]}x{img.shape[0]} does not match meta {ws}x{hs}")
            data[:, :, :, v + vr, u + ur] = to_unit(img).transpose(2, 0, 1)
    return LightField(data)


def save_lightfield(lf: LightField, path, bits=8, labels=None):
    """Write ``lf`` as meta.json plus one PNG per view; optionally labels.png."""
    lf._require_odd()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    atomic_write_json(path / "meta.json", {"h_s": lf.h_s, "w_s": lf.w_s, "h_a": lf.h_a, "w_a": lf.w_a})
    for v in range(-lf.v_r, lf.v_r + 1):
        for u in range(-lf.u_r, lf.u_r + 1):
            img = from_unit(np.asarray(lf.view(u, v)).transpose(1, 2, 0), bits)
            atomic_write_bytes(path / view_filename(u, v), encode_png(img))
    if labels is not None:
        save_labels(labels, path / "labels.png")


def save_labels(labels, path):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in 8 bits")
    atomic_write_bytes(path, encode_png(labels.astype(np.uint8)))


def load_labels(path):
    img = read_png(path)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DimensionMismatch(f"{path}: labels must be an 8-bit single-channel PNG")
    return img.astype(np.int64)
