"""Image and flow-field file I/O for the command-line tools.

Images: 8-bit PNG / PGM / PPM, loaded into [0, 1] float64 and written back
with round(255 * clamp(v, 0, 1)).  Flow fields use the common binary .flo
layout: 4-byte magic 'PIEH' (the float 202021.25), int32 width and height,
then row-major float32 (u, v) pairs.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = ["load_image", "save_image", "read_flo", "write_flo", "quantize"]

FLO_MAGIC = b"PIEH"


def load_image(path):
    """Read a PNG/PGM/PPM file as float64 in [0, 1] ((H,W) or (H,W,3))."""
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I", "I;16"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize(img):
    """Map unit-range intensities to uint8 with round(255 * clamp(v, 0, 1))."""
    arr = np.asarray(img, dtype=np.float64)
    return np.floor(255.0 * np.clip(arr, 0.0, 1.0) + 0.5).astype(np.uint8)


def save_image(path, img):
    """Write an image as 8-bit PNG/PGM/PPM (picked from the extension)."""
    arr = quantize(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def write_flo(path, flow):
    """Write a flow field as .flo (magic, int32 dims, float32 u/v pairs)."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must have shape (H, W, 2)")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        np.array([w, h], dtype=np.int32).tofile(fh)
        flow.astype("<f4").tofile(fh)


def read_flo(path):
    """Read a .flo flow field as float64 (H, W, 2)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLO_MAGIC:
            raise ValueError("%s: bad flow-file magic %r" % (path, magic))
        w, h = np.fromfile(fh, dtype=np.int32, count=2)
        if w < 1 or h < 1:
            raise ValueError("%s: bad flow dimensions %dx%d" % (path, w, h))
        data = np.fromfile(fh, dtype="<f4", count=int(w) * int(h) * 2)
    if data.size != int(w) * int(h) * 2:
        raise ValueError("%s: truncated flow file" % path)
    return data.reshape(int(h), int(w), 2).astype(np.float64)
