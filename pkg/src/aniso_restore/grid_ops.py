"""Periodic convolution operators and the anisotropic difference system.

Images are 2-D float arrays of shape ``(height, width)``; the flattened
optimization vector is their row-major ravel.  Difference coefficients live
in an array of shape ``(2, height, width)`` where plane 0 holds horizontal
differences and plane 1 vertical ones, so the coefficient index ``i`` in
``J = {0, ..., 2N-1}`` is ``ravel_multi_index((d, r, c))``.

All operators use periodic boundaries and are therefore diagonalized by the
2-D DFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "Kernel",
    "GridOperator",
    "ShapeError",
    "ParameterError",
    "as_image",
    "make_kernel",
    "kernel_spectrum",
    "apply_convolution",
    "apply_gradient",
    "gradient_adjoint",
    "gradient_spectra",
    "gram_spectrum",
    "identity_operator",
    "joint_spectrum_min",
]

KERNEL_KINDS = ("average", "gaussian", "disk", "custom")
DISK_SUPERSAMPLING = 16


class ShapeError(ValueError):
    """Raised when image or operator dimensions do not agree."""


class ParameterError(ValueError):
    """Raised for invalid kernel, noise or model parameters."""


def as_image(img, name="image"):
    arr = np.asarray(img, dtype=float)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Kernel:
    taps: np.ndarray
    kind: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 2 or taps.size == 0:
            raise ParameterError("kernel taps must be a non-empty 2-D array")
        if self.kind not in KERNEL_KINDS:
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def center(self):
        return self.taps.shape[0] // 2, self.taps.shape[1] // 2

    def describe(self):
        return {"kind": self.kind, **self.params}


def _positive(name, value):
    if not np.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be positive, got {value}")


def _disk_coverage(radius, supersample=DISK_SUPERSAMPLING):
    """Fraction of each grid cell covered by the disk of the given radius."""
    half = int(np.ceil(radius - 0.5))
    centers = np.arange(-half, half + 1, dtype=float)
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    sub = (centers[:, None] + offsets[None, :]).ravel()
    inside = (sub[:, None] ** 2 + sub[None, :] ** 2) <= radius**2
    n = centers.size
    return inside.reshape(n, supersample, n, supersample).mean(axis=(1, 3))


def make_kernel(kind, **params):
    """Build a blur kernel.

    ``average``: ``size`` (int or pair); ``gaussian``: ``size`` and ``sigma``;
    ``disk``: ``radius``; ``custom``: ``taps``.  Named kinds are normalized to
    unit mass.
    """
    if kind == "average":
        size = params.get("size", 3)
        h, w = (size, size) if np.isscalar(size) else tuple(size)
        _positive("size", h)
        _positive("size", w)
        taps = np.full((int(h), int(w)), 1.0 / (int(h) * int(w)))
        return Kernel(taps, "average", {"size": [int(h), int(w)]})
    if kind == "gaussian":
        size = params.get("size", 3)
        sigma = params.get("sigma", 0.5)
        h, w = (size, size) if np.isscalar(size) else tuple(size)
        _positive("size", h)
        _positive("size", w)
        _positive("sigma", sigma)
        y = np.arange(int(h)) - (int(h) - 1) / 2.0
        x = np.arange(int(w)) - (int(w) - 1) / 2.0
        g = np.exp(-(y[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma**2))
        return Kernel(g / g.sum(), "gaussian", {"size": [int(h), int(w)], "sigma": float(sigma)})
    if kind == "disk":
        radius = params.get("radius", 5)
        _positive("radius", radius)
        cov = _disk_coverage(float(radius))
        return Kernel(cov / cov.sum(), "disk", {"radius": float(radius)})
    if kind == "custom":
        taps = np.asarray(params["taps"], dtype=float)
        return Kernel(taps, "custom", {})
    raise ParameterError(f"unknown kernel kind {kind!r}")


def kernel_spectrum(kernel, dims):
    """DFT eigenvalues of the circulant matrix of ``kernel`` on a grid ``dims``."""
    taps = kernel.taps if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=float)
    h, w = dims
    kh, kw = taps.shape
    if kh > h or kw > w:
        raise ShapeError(f"kernel {taps.shape} larger than grid {dims}")
    psf = np.zeros((h, w))
    psf[:kh, :kw] = taps
    psf = np.roll(psf, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(psf)


class GridOperator:
    """Circulant operator on a fixed grid, with its cached spectrum.

    Instances are immutable; build a new one for a different grid.
    """

    def __init__(self, kernel, dims):
        if not isinstance(kernel, Kernel):
            kernel = Kernel(np.asarray(kernel, dtype=float))
        self.kernel = kernel
        self.dims = (int(dims[0]), int(dims[1]))
        _positive("height", self.dims[0])
        _positive("width", self.dims[1])
        self.spectrum = kernel_spectrum(kernel, self.dims)
        self.spectrum.setflags(write=False)
        self.abs2 = np.abs(self.spectrum) ** 2
        self.abs2.setflags(write=False)

    def __repr__(self):
        return f"GridOperator(kind={self.kernel.kind!r}, dims={self.dims})"

    def _check(self, img):
        img = as_image(img)
        if img.shape != self.dims:
            raise ShapeError(f"image shape {img.shape} does not match operator dims {self.dims}")
        return img

    def apply(self, img):
        img = self._check(img)
        return np.real(np.fft.ifft2(np.fft.fft2(img) * self.spectrum))

    def adjoint(self, img):
        img = self._check(img)
        return np.real(np.fft.ifft2(np.fft.fft2(img) * np.conj(self.spectrum)))

    def apply_spatial(self, img):
        """Direct periodic convolution by shifted sums; reference path for tests."""
        img = self._check(img)
        out = np.zeros_like(img)
        ch, cw = self.kernel.center
        for (a, b), t in np.ndenumerate(self.kernel.taps):
            if t != 0.0:
                out += t * np.roll(img, (a - ch, b - cw), axis=(0, 1))
        return out

    def dense(self):
        """Explicit N x N matrix, for desk-scale oracles only."""
        h, w = self.dims
        n = h * w
        cols = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            cols[:, j] = self.apply(e.reshape(h, w)).ravel()
            e[j] = 0.0
        return cols


def identity_operator(dims):
    return GridOperator(Kernel(np.ones((1, 1)), "custom", {"identity": True}), dims)


def apply_convolution(img, op):
    return op.apply(img)


def apply_gradient(img):
    """Forward periodic differences, shape ``(2, h, w)``."""
    x = as_image(img)
    out = np.empty((2,) + x.shape)
    out[0] = np.roll(x, -1, axis=1) - x
    out[1] = np.roll(x, -1, axis=0) - x
    return out


def gradient_adjoint(coeffs):
    y = np.asarray(coeffs, dtype=float)
    if y.ndim != 3 or y.shape[0] != 2:
        raise ShapeError(f"coefficient field must have shape (2, h, w), got {y.shape}")
    return (np.roll(y[0], 1, axis=1) - y[0]) + (np.roll(y[1], 1, axis=0) - y[1])


def gradient_spectra(dims):
    """Spectra of the horizontal and vertical difference stencils."""
    h, w = dims
    # convolution kernels k with (k * x)[r, c] = x[r, c+1] - x[r, c] (resp. r+1)
    ph = np.zeros((h, w))
    ph[0, 0] += -1.0
    ph[0, (w - 1) % w] += 1.0
    pv = np.zeros((h, w))
    pv[0, 0] += -1.0
    pv[(h - 1) % h, 0] += 1.0
    return np.fft.fft2(ph), np.fft.fft2(pv)


def gram_spectrum(dims):
    """Eigenvalues of sum_i G_i G_i^T per DFT frequency."""
    sh, sv = gradient_spectra(dims)
    return np.abs(sh) ** 2 + np.abs(sv) ** 2


def joint_spectrum_min(op):
    """Smallest eigenvalue of A^T A + sum_i G_i G_i^T; positive iff ker A and ker G^T meet only at 0."""
    return float(np.min(op.abs2 + gram_spectrum(op.dims)))
