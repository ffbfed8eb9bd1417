"""Image loading and content addressing for the fixture store.

Mirrors the consumer's conventions byte for byte: images decode as 8-bit
RGB scaled to float32 in [0, 1], and the content key is a sha256 over a
fixed header plus the 8-bit pixels, so tensors dumped here are found
again when the consumer loads the same file.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np
from PIL import Image

from .errors import ExportError


def load_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ExportError(f"cannot decode {path} ({exc})") from exc
    return (rgb.astype(np.float32) / 255.0).clip(0.0, 1.0)


def content_key(image: np.ndarray) -> str:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ExportError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    rgb = np.round(arr * 255.0).astype(np.uint8)
    digest = hashlib.sha256()
    digest.update(b"GEPCIMG")
    digest.update(struct.pack("<II", w, h))
    digest.update(rgb.tobytes(order="C"))
    return digest.hexdigest()
