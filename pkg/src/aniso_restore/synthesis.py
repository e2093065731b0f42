"""Seeded degradations and piecewise-constant test images."""

from __future__ import annotations

import numpy as np

from .grid_ops import GridOperator, ParameterError, as_image

__all__ = [
    "IMAGE_KINDS",
    "add_salt_pepper",
    "add_gaussian_noise",
    "make_test_image",
    "degrade",
]

IMAGE_KINDS = ("squares", "twocircles", "phantom-like", "geometry-like")


def add_salt_pepper(img, level, seed):
    """Replace each pixel with probability ``level`` by 0 or 1 (equal odds)."""
    if not 0.0 <= level <= 1.0:
        raise ParameterError(f"noise level must lie in [0, 1], got {level}")
    x = as_image(img)
    rng = np.random.default_rng(seed)
    hit = rng.random(x.shape) < level
    salt = rng.random(x.shape) < 0.5
    return np.where(hit, salt.astype(float), x)


def add_gaussian_noise(img, variance, seed):
    if not variance > 0:
        raise ParameterError(f"variance must be positive, got {variance}")
    x = as_image(img)
    rng = np.random.default_rng(seed)
    return x + np.sqrt(variance) * rng.standard_normal(x.shape)


def _grid(dims):
    h, w = dims
    # pixel centers in [0, 1]^2, y downwards
    y = (np.arange(h) + 0.5) / h
    x = (np.arange(w) + 0.5) / w
    return np.meshgrid(y, x, indexing="ij")


def _ellipse(Y, X, cy, cx, ry, rx, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = Y - cy, X - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def make_test_image(kind, dims=(64, 64)):
    """Deterministic piecewise-constant image with intensities in [0, 1].

    ``squares``: 2 levels.  ``twocircles``: background plus two disks.
    ``phantom-like``: 6 phases including two tiny ones.  ``geometry-like``:
    5 phases of decreasing area.
    """
    h, w = dims
    if h < 16 or w < 16:
        raise ParameterError("test images need at least 16 x 16 pixels")
    Y, X = _grid(dims)
    img = np.zeros(dims)
    if kind == "squares":
        img[(abs(Y - 0.3) < 0.15) & (abs(X - 0.3) < 0.15)] = 1.0
        img[(abs(Y - 0.7) < 0.2) & (abs(X - 0.65) < 0.2)] = 1.0
        img[(abs(Y - 0.25) < 0.08) & (abs(X - 0.75) < 0.08)] = 1.0
        return img
    if kind == "twocircles":
        img[_ellipse(Y, X, 0.4, 0.35, 0.15, 0.15)] = 0.5
        img[_ellipse(Y, X, 0.62, 0.68, 0.1, 0.1)] = 1.0
        return img
    if kind == "phantom-like":
        img[_ellipse(Y, X, 0.5, 0.5, 0.44, 0.34)] = 0.8
        img[_ellipse(Y, X, 0.5, 0.5, 0.40, 0.30)] = 0.4
        img[_ellipse(Y, X, 0.45, 0.38, 0.16, 0.07, 0.3)] = 0.1
        img[_ellipse(Y, X, 0.45, 0.62, 0.16, 0.07, -0.3)] = 0.1
        img[_ellipse(Y, X, 0.3, 0.5, 0.045, 0.045)] = 1.0
        img[_ellipse(Y, X, 0.85, 0.42, 0.035, 0.035)] = 0.25
        return img
    if kind == "geometry-like":
        img[:] = 0.1
        img[(Y > 0.08) & (Y < 0.48) & (X > 0.06) & (X < 0.52)] = 0.3
        img[_ellipse(Y, X, 0.7, 0.7, 0.24, 0.24)] = 0.5
        tri = (Y > 0.58) & (Y < 0.95) & (X > 0.06) & (np.abs(X - 0.26) < (Y - 0.58) * 0.6)
        img[tri] = 0.7
        img[(Y > 0.12) & (Y < 0.42) & (X > 0.62) & (X < 0.92)] = 0.9
        return img
    raise ParameterError(f"unknown test image kind {kind!r}")


def degrade(truth, op: GridOperator, noise="salt_pepper", level=0.3, seed=0):
    """Blur ``truth`` with ``op`` and corrupt the result with seeded noise."""
    b = op.apply(truth)
    if noise == "salt_pepper":
        return add_salt_pepper(np.clip(b, 0.0, 1.0), level, seed)
    if noise == "gaussian":
        return add_gaussian_noise(b, level, seed)
    if noise == "none":
        return b
    raise ParameterError(f"unknown noise model {noise!r}")
