"""The restoration objective and the parameter records shared by the solvers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .grid_ops import GridOperator, ShapeError, apply_gradient, as_image
from .potentials import Potential

__all__ = [
    "RestorationModel",
    "SolverConfig",
    "Objective",
    "objective_value",
    "fidelity_value",
    "regularizer_value",
    "tau_support",
    "support_indices",
    "coercivity_probe",
]


@dataclass(frozen=True)
class RestorationModel:
    """``sum_i phi(|G_i^T x|) + (beta/q) ||A x - b||_q^q`` on a periodic grid."""

    A: GridOperator
    b: np.ndarray
    beta: float
    q: float = 1.0
    potential: Potential = field(default_factory=Potential)

    def __post_init__(self):
        b = as_image(self.b, "observation")
        if b.shape != self.A.dims:
            raise ShapeError(f"observation shape {b.shape} does not match operator dims {self.A.dims}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.q >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        object.__setattr__(self, "b", b)

    @property
    def dims(self):
        return self.A.dims

    @property
    def n_coeffs(self):
        return 2 * self.A.dims[0] * self.A.dims[1]

    def with_beta(self, beta):
        return RestorationModel(self.A, self.b, beta, self.q, self.potential)


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1e-10
    tau: float = 1e-7
    eps_outer: float = 1e-3
    max_outer: int = 25
    r_v: float = 3e5
    r_w: float = 200.0
    eps_inner: float = 1e-5
    max_inner: int = 500
    init_r_v: float = 3e3
    init_r_w: float = 200.0
    # theoretical inexactness level, used only by the decrease diagnostic
    inexact_eps: float = 0.99
    # extra inner rounds allowed when an outer step fails to decrease F
    refine_rounds: int = 4

    def __post_init__(self):
        for name in ("rho", "r_v", "r_w", "eps_inner", "init_r_v", "init_r_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if not 0 < self.eps_outer < 1:
            raise ValueError("eps_outer must lie in (0, 1)")
        if not 0 <= self.inexact_eps < 1:
            raise ValueError("inexact_eps must lie in [0, 1)")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be positive")
        if self.refine_rounds < 0:
            raise ValueError("refine_rounds must be nonnegative")

    def replace(self, **changes):
        return SolverConfig(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)


class Objective(NamedTuple):
    reg: float
    fid: float

    @property
    def total(self):
        return self.reg + self.fid


def regularizer_value(x, potential):
    d = np.abs(apply_gradient(x))
    nz = d[d != 0]
    return float(np.sum(potential.phi(nz))) if nz.size else 0.0


def fidelity_value(x, model):
    r = model.A.apply(x) - model.b
    return float(model.beta / model.q * np.sum(np.abs(r) ** model.q))


def objective_value(x, model):
    x = as_image(x)
    return Objective(regularizer_value(x, model.potential), fidelity_value(x, model))


def tau_support(x, tau=0.0):
    """Boolean mask of shape ``(2, h, w)``: ``|G_i^T x| > tau``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return np.abs(apply_gradient(x)) > tau


def support_indices(mask):
    return np.flatnonzero(np.asarray(mask).ravel())


def coercivity_probe(model, directions, scales=(1.0, 10.0, 100.0, 1000.0)):
    """Evaluate ``F(t d)`` along rays; a ray passes if the tail strictly increases."""
    rows = []
    for d in directions:
        d = as_image(d, "direction")
        if not np.any(d):
            raise ValueError("probe directions must be nonzero")
        vals = [objective_value(t * d, model).total for t in scales]
        rows.append({"values": vals, "increasing_tail": bool(vals[-1] > vals[-2] > vals[0])})
    return {"scales": list(scales), "rays": rows, "passed": all(r["increasing_tail"] for r in rows)}
