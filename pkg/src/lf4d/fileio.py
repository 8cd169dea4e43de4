"""Atomic file writing and PNG encode/decode helpers."""

import json
import os
import tempfile
from pathlib import Path

import cv2
import numpy as np


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def encode_png(img: np.ndarray) -> bytes:
    """Encode an (h, w) or (h, w, 3) RGB uint8/uint16 array as PNG bytes."""
    if img.ndim == 3:
        img = img[:, :, ::-1]  # cv2 stores BGR
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(img))
    if not ok:
        raise OSError("PNG encoding failed")
    return buf.tobytes()


def read_png(path) -> np.ndarray:
    """Read a PNG as uint8/uint16, returning (h, w) or RGB (h, w, 3)."""
    raw = np.fromfile(str(path), dtype=np.uint8)
    img = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot decode PNG {path}")
    if img.ndim == 3:
        img = img[:, :, 2::-1] if img.shape[2] >= 3 else img[:, :, 0]
    return img


def to_unit(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float32) / 65535.0
    raise ValueError(f"unsupported PNG depth {img.dtype}")


def from_unit(values: np.ndarray, bits: int = 8) -> np.ndarray:
    peak = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    return np.round(np.clip(values, 0.0, 1.0) * peak).astype(dtype)
