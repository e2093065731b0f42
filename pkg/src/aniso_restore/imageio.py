"""Grayscale image files: 8/16-bit PNG and plain (ASCII) PGM.

In memory an image is a float array with intensities in [0, 1].  Writing
clips to that range and quantizes with round-half-away-from-zero.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["ImageFormatError", "read_image", "write_image", "quantize"]


class ImageFormatError(ValueError):
    pass


def quantize(x, bits):
    if bits not in (8, 16):
        raise ValueError("bit depth must be 8 or 16")
    top = (1 << bits) - 1
    v = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * top
    # values are nonnegative here, so half-away-from-zero is floor(v + 1/2)
    return np.floor(v + 0.5).astype(np.uint16 if bits == 16 else np.uint8)


def _read_pgm_ascii(path):
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ImageFormatError(f"{path}: not a plain PGM (P2) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
        vals = np.array([int(t) for t in tokens[4:]], dtype=float)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM") from exc
    if not 0 < maxval < 65536 or vals.size != w * h:
        raise ImageFormatError(f"{path}: PGM header does not match data")
    return vals.reshape(h, w) / maxval


def _write_pgm_ascii(path, q, top):
    h, w = q.shape
    lines = ["P2", f"{w} {h}", str(top)]
    lines += [" ".join(str(int(v)) for v in row) for row in q]
    Path(path).write_text("\n".join(lines) + "\n")


def read_image(path):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic == b"P2":
            return _read_pgm_ascii(path)
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=float)
        top = 65535.0
    elif img.mode in ("L", "1", "P", "LA"):
        arr = np.asarray(img.convert("L"), dtype=float)
        top = 255.0
    else:
        raise ImageFormatError(f"{path}: only grayscale images are supported (mode {img.mode})")
    return arr / top


def write_image(path, x, bits=16):
    """Write ``x`` as PNG or plain PGM, chosen by the file suffix."""
    path = Path(path)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ImageFormatError("only 2-D grayscale images can be written")
    q = quantize(x, bits)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _write_pgm_ascii(path, q, (1 << bits) - 1)
    elif suffix == ".png":
        Image.fromarray(q).save(path, format="PNG")
    else:
        raise ImageFormatError(f"unsupported image suffix {suffix!r}; use .png or .pgm")
