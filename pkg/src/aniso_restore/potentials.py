"""Concave potentials applied to each difference magnitude.

Both shipped families, ``t**p`` and ``log(1 + t**p)`` with ``0 < p < 1``, are
continuous, concave and coercive on ``[0, inf)``, vanish at zero, and have a
derivative that blows up at ``0+``.  The derivative is only ever evaluated at
strictly positive arguments (indices inside the tau-support).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = ["Potential", "DomainError", "check_potential"]

DEFAULT_P = 0.5


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Potential:
    kind: str = "power"
    p: float = DEFAULT_P
    # user-supplied pair for kind="custom"; conformance is then the caller's problem
    func: Optional[Callable] = None
    deriv: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("power", "logpower", "custom"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom":
            if self.func is None or self.deriv is None:
                raise ValueError("custom potential needs both func and deriv")
        elif not 0.0 < self.p < 1.0:
            raise ValueError(f"exponent p must lie in (0, 1), got {self.p}")

    def __call__(self, t):
        return self.phi(t)

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("potential is defined on [0, inf)")
        if self.kind == "power":
            out = np.power(t, self.p)
        elif self.kind == "logpower":
            out = np.log1p(np.power(t, self.p))
        else:
            out = np.asarray(self.func(t), dtype=float)
        return out if out.ndim else float(out)

    def dphi(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("potential derivative is only evaluated at t > 0")
        if self.kind == "power":
            out = self.p * np.power(t, self.p - 1.0)
        elif self.kind == "logpower":
            tp = np.power(t, self.p)
            out = self.p * np.power(t, self.p - 1.0) / (1.0 + tp)
        else:
            out = np.asarray(self.deriv(t), dtype=float)
        return out if out.ndim else float(out)

    def describe(self):
        return {"kind": self.kind, "p": self.p}


def check_potential(pot, n=100, seed=0, alpha=0.01, t_max=10.0):
    """Empirical checks of the structural assumptions on ``pot``.

    Returns a dict of named booleans plus the observed Lipschitz estimate of
    the derivative on ``[alpha, t_max]``.
    """
    rng = np.random.default_rng(seed)
    t1 = rng.uniform(0.0, t_max, n)
    t2 = t1 + rng.uniform(1e-3, t_max, n)
    mid_ok = pot.phi(0.5 * (t1 + t2)) >= 0.5 * (pot.phi(t1) + pot.phi(t2)) - 1e-12

    t = rng.uniform(0.0, t_max, n)
    tbar = rng.uniform(1e-3, t_max, n)
    tangent_ok = pot.phi(t) <= pot.phi(tbar) + pot.dphi(tbar) * (t - tbar) + 1e-12

    grid = np.linspace(alpha, t_max, 2001)
    d = pot.dphi(grid)
    lip = float(np.max(np.abs(np.diff(d)) / np.diff(grid)))

    return {
        "phi_zero": float(pot.phi(0.0)) == 0.0,
        "concave_midpoint": bool(np.all(mid_ok)),
        "tangent_majorizes": bool(np.all(tangent_ok)),
        "derivative_positive": bool(np.all(d > 0)),
        "derivative_blows_up": bool(pot.dphi(1e-12) > 1e5),
        "lipschitz_estimate": lip,
        "lipschitz_finite": bool(np.isfinite(lip)),
    }
