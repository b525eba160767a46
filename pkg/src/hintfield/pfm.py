"""PFM image I/O (lossless linear radiance) and sRGB PNG previews.

Format: header ``PF\\n<width> <height>\\n-1.0\\n`` followed by little-endian
32-bit rgb triplets, rows bottom to top. Round-trips must be bit-exact.
"""

from __future__ import annotations

import numpy as np


def write_pfm(path, image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) rgb image")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"PF":
            raise ValueError(f"{path}: not a color PFM file")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(w * h * 3 * 4), dtype="<f4" if scale < 0 else ">f4")
        if data.size != w * h * 3:
            raise ValueError(f"{path}: truncated PFM payload")
    return data.reshape(h, w, 3)[::-1].astype(np.float32)


def write_png_preview(path, image, gamma=1.0 / 2.2):
    """Gamma-encoded 8-bit preview; never used for metrics."""
    from PIL import Image
    srgb = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** gamma
    Image.fromarray((srgb * 255.0 + 0.5).astype(np.uint8)).save(path)
