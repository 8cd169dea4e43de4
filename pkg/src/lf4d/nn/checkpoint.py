"""Binary model checkpoints.

Layout (little-endian)::

    b"LF4D"  u32 version  u32 header_len  header (UTF-8 JSON)  float64 params

The JSON header holds the input adapter, the build metadata and the layer
table: name, kind, geometry, lr_multiplier and the shape of every parameter
array.  Parameters follow in layer order, each array flattened row-major.
"""

import json
import struct

import numpy as np

from ..errors import BadCheckpoint
from ..fileio import atomic_write_bytes
from .layers import Conv2D, FullyConnected, MaxPool2D, ReLU, Upsample2x
from .network import Network

MAGIC = b"LF4D"
VERSION = 1


def _layer_entry(name, layer):
    return {
        "name": name,
        "kind": layer.kind,
        "geometry": [int(g) for g in layer.geometry()],
        "lr_multiplier": layer.lr_multiplier,
        "params": [[key, list(arr.shape)] for key, arr in layer.params.items()],
    }


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, np.ndarray)):
        return list(obj)
    raise TypeError(f"cannot store {type(obj).__name__} in a checkpoint header")


def dumps(net: Network) -> bytes:
    header = {
        "input_adapter": net.input_adapter,
        "dtype": np.dtype(net.dtype).name,
        "meta": net.meta,
        "layers": [_layer_entry(n, l) for n, l in zip(net.names, net.layers)],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), default=_plain).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for _, _, arr in net.parameters():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save(net: Network, path):
    atomic_write_bytes(path, dumps(net))


def _build(kind, geo, mult):
    # local import: lflayers depends on this package
    from .. import lflayers as L

    if ":" in kind:
        prefix, inner_kind = kind.split(":", 1)
        wrappers = {"spatial_on_remap": L.OnViews, "angular_on_remap": L.BlockLocal}
        if prefix not in wrappers or len(geo) < 2:
            raise BadCheckpoint(f"unknown layer kind {kind!r}")
        return wrappers[prefix](_build(inner_kind, geo[2:], mult), geo[:2])
    try:
        if kind == "conv2d":
            cin, cout, kh, kw, sh, sw, ph, pw = geo
            return Conv2D(cin, cout, (kh, kw), (sh, sw), (ph, pw), lr_multiplier=mult)
        if kind == "relu":
            return ReLU()
        if kind == "maxpool":
            kh, kw, sh, sw = geo
            return MaxPool2D((kh, kw), (sh, sw))
        if kind == "fully_connected":
            *in_shape, out = geo
            return FullyConnected(in_shape, out, lr_multiplier=mult)
        if kind == "upsample2x":
            (channels,) = geo
            return Upsample2x(channels, lr_multiplier=mult)
        if kind == "angular_filter":
            cin, cout, bh, bw, relu = geo
            return L.AngularFilter(cin, cout, (bh, bw), "relu" if relu else None, lr_multiplier=mult)
        if kind == "block_pool":
            return L.BlockPool(geo)
        if kind == "view_maxpool":
            (n_views,) = geo
            return L.ViewMaxPool(n_views)
    except (TypeError, ValueError) as exc:
        raise BadCheckpoint(f"bad geometry {geo} for {kind}: {exc}") from None
    raise BadCheckpoint(f"unknown layer kind {kind!r}")


def loads(data: bytes, dtype=None) -> Network:
    """Rebuild a network; ``dtype`` defaults to the precision it was saved in."""
    if len(data) < 12 or data[:4] != MAGIC:
        raise BadCheckpoint("not an LF4D checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise BadCheckpoint(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12 : 12 + hlen].decode())
        table = header["layers"]
        adapter = header["input_adapter"]
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise BadCheckpoint(f"corrupt checkpoint header: {exc}") from None

    layers, names = [], []
    offset = 12 + hlen
    for entry in table:
        layer = _build(entry["kind"], entry["geometry"], entry["lr_multiplier"])
        for key, shape in entry["params"]:
            if key not in layer.params or tuple(layer.params[key].shape) != tuple(shape):
                raise BadCheckpoint(f"layer {entry['name']!r}: parameter {key} shape {shape} does not fit {entry['kind']}")
            size = int(np.prod(shape)) * 8
            if offset + size > len(data):
                raise BadCheckpoint("checkpoint truncated")
            layer.params[key][...] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=offset).reshape(shape)
            offset += size
        layers.append(layer)
        names.append(entry["name"])
    if offset != len(data):
        raise BadCheckpoint(f"{len(data) - offset} trailing bytes after parameters")
    try:
        net = Network(layers, adapter, names, header.get("meta"))
    except ValueError as exc:
        raise BadCheckpoint(str(exc)) from None
    return net.astype(np.dtype(dtype or header.get("dtype", "float64")))


def load(path, dtype=None) -> Network:
    with open(path, "rb") as fh:
        return loads(fh.read(), dtype)
