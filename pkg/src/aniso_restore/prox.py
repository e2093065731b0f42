"""Scalar proximal maps, vectorized over numpy arrays."""

import numpy as np

__all__ = ["soft_threshold", "power_prox"]

_BISECT_STEPS = 1100  # enough to exhaust double precision from any start


def soft_threshold(c, lam):
    """Minimizer of ``lam |w| + (w - c)**2 / 2``."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be nonnegative")
    c = np.asarray(c, dtype=float)
    out = np.sign(c) * np.maximum(np.abs(c) - lam, 0.0)
    return out if out.ndim else float(out)


def _magnitude(a, lam, q):
    # root of m + lam*q*m**(q-1) = a on [0, a]; the left side is increasing in m
    lo = np.zeros_like(a)
    hi = a.copy()
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        # the equation is steep near m = 0 when q is close to 1, so an absolute
        # tolerance is not enough; stop once the bracket cannot shrink further
        if np.all((mid == lo) | (mid == hi)):
            break
        g = mid + lam * q * mid ** (q - 1.0) - a
        pos = g > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return 0.5 * (lo + hi)


def power_prox(c, lam, q):
    """Minimizer of ``lam |v|**q + (v - c)**2 / 2`` for ``q >= 1``."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lam must be nonnegative")
    c = np.asarray(c, dtype=float)
    if q == 1:
        return soft_threshold(c, lam)
    if q == 2:
        out = c / (1.0 + 2.0 * np.asarray(lam, dtype=float))
        return out if out.ndim else float(out)
    a = np.abs(c)
    lam_b = np.broadcast_to(np.asarray(lam, dtype=float), a.shape).astype(float)
    m = _magnitude(a, lam_b, q)
    out = np.sign(c) * m
    return out if out.ndim else float(out)
