"""ADMM for the strongly convex reweighted subproblem.

For a prox center ``x_k``, a support mask ``T`` and positive weights ``c_i``
on ``T``, the subproblem is

    min_u  sum_{i in T} c_i |G_i^T u| + (beta/q) ||A u - b||_q^q + (rho/2) ||u - x_k||^2
    s.t.   G_i^T u = 0  for i not in T

(plus a constant offset carried along so the value matches the linearized
objective).  For ``q != 2`` the fidelity residual is split as ``v = A u - b``;
for ``q == 2`` it stays inside the u-update.  Differences are split as
``w_i = G_i^T u`` on ``T`` and ``w_i = 0`` off ``T``.  The u-update is a
single per-frequency division because every operator involved is circulant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .grid_ops import apply_gradient, gradient_adjoint, gram_spectrum
from .model import RestorationModel, SolverConfig
from .prox import power_prox, soft_threshold

__all__ = [
    "SubproblemSpec",
    "AdmmState",
    "InnerStats",
    "DivergenceError",
    "SingularSystemError",
    "build_spec",
    "subproblem_objective",
    "u_update",
    "w_update",
    "v_update",
    "multiplier_update",
    "project_feasible",
    "solve_subproblem",
]


class DivergenceError(RuntimeError):
    pass


class SingularSystemError(ArithmeticError):
    pass


@dataclass
class SubproblemSpec:
    x_k: np.ndarray
    weights: np.ndarray  # shape (2, h, w); only entries on the support are used
    support: np.ndarray  # bool mask, shape (2, h, w)
    model: RestorationModel
    rho: float
    r_v: float
    r_w: float
    eps_inner: float = 1e-5
    max_inner: int = 500
    offset: float = 0.0

    def __post_init__(self):
        self.x_k = np.asarray(self.x_k, dtype=float)
        self.support = np.asarray(self.support, dtype=bool)
        self.weights = np.where(self.support, np.asarray(self.weights, dtype=float), 0.0)
        shape = (2,) + self.model.dims
        if self.support.shape != shape or self.weights.shape != shape:
            raise ValueError(f"support and weights must have shape {shape}")
        if self.x_k.shape != self.model.dims:
            raise ValueError("prox center does not match model dims")
        w = self.weights[self.support]
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights on the support must be positive and finite")
        if self.rho < 0 or self.r_v < 0 or self.r_w < 0:
            raise ValueError("rho, r_v and r_w must be nonnegative")

    @property
    def split_fidelity(self):
        return self.model.q != 2


def build_spec(x_k, model: RestorationModel, config: SolverConfig):
    """Linearize the potential at ``x_k`` over its tau-support."""
    g = np.abs(apply_gradient(x_k))
    support = g > config.tau
    weights = np.zeros_like(g)
    offset = 0.0
    if np.any(support):
        gs = g[support]
        ws = model.potential.dphi(gs)
        weights[support] = ws
        offset = float(np.sum(model.potential.phi(gs) - ws * gs))
    return SubproblemSpec(
        x_k=x_k,
        weights=weights,
        support=support,
        model=model,
        rho=config.rho,
        r_v=config.r_v,
        r_w=config.r_w,
        eps_inner=config.eps_inner,
        max_inner=config.max_inner,
        offset=offset,
    )


@dataclass
class AdmmState:
    u: np.ndarray
    v: Optional[np.ndarray]
    w: np.ndarray
    lam_v: Optional[np.ndarray]
    lam_w: np.ndarray
    iter: int = 0

    @classmethod
    def start(cls, spec: SubproblemSpec):
        dims = spec.model.dims
        split = spec.split_fidelity
        return cls(
            u=spec.x_k.copy(),
            v=np.zeros(dims) if split else None,
            w=np.zeros((2,) + dims),
            lam_v=np.zeros(dims) if split else None,
            lam_w=np.zeros((2,) + dims),
        )


@dataclass
class InnerStats:
    iterations: int
    rel_change: float
    fidelity_residual: float
    offsupport_before: float
    offsupport_after: float
    projection_shift: float
    dual_residual: float
    converged: bool
    polished: bool = False
    objective_history: list = field(default_factory=list)
    state: Optional[AdmmState] = None

    def summary(self):
        return {k: v for k, v in self.__dict__.items() if k not in ("state", "objective_history")}


def subproblem_objective(u, spec: SubproblemSpec):
    """Value of the linearized objective at ``u`` (feasibility not checked)."""
    m = spec.model
    g = np.abs(apply_gradient(u))
    reg = float(np.sum(spec.weights[spec.support] * g[spec.support])) + spec.offset
    r = m.A.apply(u) - m.b
    fid = m.beta / m.q * float(np.sum(np.abs(r) ** m.q))
    prox = 0.5 * spec.rho * float(np.sum((u - spec.x_k) ** 2))
    return reg + fid + prox


class _Spectra:
    """Frequency-domain pieces of the u-update normal equation."""

    def __init__(self, spec: SubproblemSpec):
        m = spec.model
        self.A_hat = m.A.spectrum
        self.xk_hat = np.fft.fft2(spec.x_k)
        fid_coef = m.beta if not spec.split_fidelity else spec.r_v
        self.denom = spec.rho + fid_coef * m.A.abs2 + spec.r_w * gram_spectrum(m.dims)
        if spec.split_fidelity:
            self.const = spec.rho * self.xk_hat
        else:
            self.const = spec.rho * self.xk_hat + m.beta * np.conj(self.A_hat) * np.fft.fft2(m.b)
        if np.min(np.abs(self.denom)) <= 0:
            raise SingularSystemError(
                "u-update system is singular: rho = 0 and A, G share a null direction"
            )


def _solve_u(state: AdmmState, spec: SubproblemSpec, sp: _Spectra):
    rhs = sp.const + np.fft.fft2(gradient_adjoint(spec.r_w * state.w - state.lam_w))
    if spec.split_fidelity:
        tail = spec.r_v * (spec.model.b + state.v) - state.lam_v
        rhs = rhs + np.conj(sp.A_hat) * np.fft.fft2(tail)
    u_hat = rhs / sp.denom
    return np.real(np.fft.ifft2(u_hat)), u_hat


def u_update(state: AdmmState, spec: SubproblemSpec):
    """Exact minimization of the augmented Lagrangian in ``u``."""
    return _solve_u(state, spec, _Spectra(spec))[0]


def w_update(state: AdmmState, spec: SubproblemSpec, grad_u=None):
    if grad_u is None:
        grad_u = apply_gradient(state.u)
    if spec.r_w == 0:
        raise ValueError("w-update needs r_w > 0")
    c = grad_u + state.lam_w / spec.r_w
    return np.where(spec.support, soft_threshold(c, spec.weights / spec.r_w), 0.0)


def v_update(state: AdmmState, spec: SubproblemSpec, Au=None):
    m = spec.model
    if not spec.split_fidelity:
        raise ValueError("q = 2 has no fidelity split")
    if Au is None:
        Au = m.A.apply(state.u)
    c = Au - m.b + state.lam_v / spec.r_v
    return power_prox(c, m.beta / (m.q * spec.r_v), m.q)


def multiplier_update(state: AdmmState, spec: SubproblemSpec, Au=None, grad_u=None):
    """Returns ``(lam_v, lam_w)`` after one ascent step at the current iterate."""
    if grad_u is None:
        grad_u = apply_gradient(state.u)
    lam_w = state.lam_w + spec.r_w * (grad_u - state.w)
    lam_v = None
    if spec.split_fidelity:
        if Au is None:
            Au = spec.model.A.apply(state.u)
        lam_v = state.lam_v + spec.r_v * (Au - spec.model.b - state.v)
    return lam_v, lam_w


def project_feasible(u, support):
    """Euclidean projection onto ``{x : G_i^T x = 0 for i outside support}``.

    For the difference system the feasible set holds the images that are
    constant on each connected component of the graph whose edges are the
    off-support differences, so the projection replaces every pixel by its
    component mean.  Off-support differences of the result are exactly zero.
    """
    u = np.asarray(u, dtype=float)
    h, w = u.shape
    n = h * w
    idx = np.arange(n).reshape(h, w)
    off = ~np.asarray(support, dtype=bool)
    src = np.concatenate([idx[off[0]], idx[off[1]]])
    dst = np.concatenate([np.roll(idx, -1, axis=1)[off[0]], np.roll(idx, -1, axis=0)[off[1]]])
    graph = coo_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    sums = np.bincount(labels, weights=u.ravel(), minlength=ncomp)
    counts = np.bincount(labels, minlength=ncomp)
    return (sums / counts)[labels].reshape(h, w)


def solve_subproblem(spec: SubproblemSpec, state: Optional[AdmmState] = None,
                     max_iter=None, eps=None, record_objective=False, polish=True):
    """Run ADMM until the relative change of ``u`` drops below ``eps``.

    Passing a previous ``state`` resumes the iteration (used to refine an
    insufficiently accurate step).  Returns the projected iterate and stats;
    ``stats.state`` holds the unprojected ADMM state.

    With ``polish`` the iterate is additionally projected onto the sparsity
    pattern of the split variable ``w`` and that candidate is kept when it
    does not increase the subproblem objective.
    """
    if spec.r_w <= 0 or (spec.split_fidelity and spec.r_v <= 0):
        raise ValueError("ADMM penalties r_v and r_w must be positive")
    max_iter = spec.max_inner if max_iter is None else max_iter
    eps = spec.eps_inner if eps is None else eps
    m = spec.model
    sp = _Spectra(spec)
    st = AdmmState.start(spec) if state is None else state
    split = spec.split_fidelity

    u_hat = np.fft.fft2(st.u)
    Au = np.real(np.fft.ifft2(u_hat * sp.A_hat))
    grad_u = apply_gradient(st.u)
    history = []
    rel = np.inf
    converged = False
    w_prev = st.w
    v_prev = st.v
    for _ in range(max_iter):
        w_prev, v_prev = st.w, st.v
        st.w = w_update(st, spec, grad_u)
        if split:
            st.v = v_update(st, spec, Au)
        u_new, u_hat = _solve_u(st, spec, sp)
        if not np.all(np.isfinite(u_new)):
            raise DivergenceError(
                f"ADMM produced non-finite values (r_v={spec.r_v:g}, r_w={spec.r_w:g})"
            )
        Au = np.real(np.fft.ifft2(u_hat * sp.A_hat))
        grad_u = apply_gradient(u_new)
        diff = np.linalg.norm(u_new - st.u)
        unorm = np.linalg.norm(u_new)
        rel = diff / unorm if unorm > 0 else diff
        st.u = u_new
        st.lam_v, st.lam_w = multiplier_update(st, spec, Au, grad_u)
        st.iter += 1
        if record_objective:
            history.append(subproblem_objective(st.u, spec))
        if rel <= eps:
            converged = True
            break

    dual = spec.r_w * gradient_adjoint(st.w - w_prev)
    if split:
        dual = dual + spec.r_v * m.A.adjoint(st.v - v_prev)
        fid_res = float(np.linalg.norm(Au - m.b - st.v))
    else:
        fid_res = 0.0
    off = ~spec.support
    before = float(np.max(np.abs(grad_u[off]), initial=0.0))
    u = project_feasible(st.u, spec.support)
    polished = False
    if polish:
        # the split variable w is exactly sparse; zeroing the matching differences
        # stays inside the feasible set because w vanishes off the support
        pattern = spec.support & (st.w != 0)
        if not np.array_equal(pattern, spec.support):
            cand = project_feasible(st.u, pattern)
            if subproblem_objective(cand, spec) <= subproblem_objective(u, spec):
                u, polished = cand, True
    after = float(np.max(np.abs(apply_gradient(u)[off]), initial=0.0))
    stats = InnerStats(
        iterations=st.iter,
        rel_change=float(rel),
        fidelity_residual=fid_res,
        offsupport_before=before,
        offsupport_after=after,
        projection_shift=float(np.linalg.norm(u - st.u)),
        dual_residual=float(np.linalg.norm(dual)),
        converged=converged,
        polished=polished,
        objective_history=history,
        state=st,
    )
    return u, stats
