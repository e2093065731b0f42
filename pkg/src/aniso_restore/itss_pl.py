"""Outer iterative thresholding and support shrinking loop.

Each outer step linearizes the potential at the current iterate over its
tau-support ``T^k``, freezes every difference outside ``T^k`` to zero, adds a
proximal term, and solves the resulting convex problem inexactly with ADMM.
Supports are therefore nested and the objective decreases; both facts are
recorded in the trace and checked by :func:`verify_decrease` and
:func:`verify_support_nesting`.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .admm_inner import (
    SubproblemSpec,
    build_spec,
    project_feasible,
    solve_subproblem,
    subproblem_objective,
)
from .grid_ops import apply_gradient, joint_spectrum_min
from .model import RestorationModel, SolverConfig, objective_value

log = logging.getLogger(__name__)

__all__ = [
    "TraceRow",
    "IterationTrace",
    "AssumptionError",
    "MonotonicityError",
    "initialize",
    "run",
    "verify_decrease",
    "verify_support_nesting",
    "TRACE_HEADER",
]

TRACE_HEADER = ["k", "F", "F_reg", "F_fid", "S_size", "T_size", "step_norm", "inner_iters", "ms"]


class AssumptionError(ValueError):
    """A and the difference system share a nonzero null vector."""


class MonotonicityError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class TraceRow:
    k: int
    F_reg: float
    F_fid: float
    S_size: int
    T_size: int
    min_support_diff: float  # min over S^k of |G_i^T x^k|, inf if S^k is empty
    step_norm: Optional[float] = None  # ||x^{k+1} - x^k||, None on the last row
    inner_iters: Optional[int] = None
    refinements: int = 0
    fallback: bool = False
    ms: Optional[float] = None

    @property
    def F(self):
        return self.F_reg + self.F_fid


@dataclass
class IterationTrace:
    n_coeffs: int
    rows: list = field(default_factory=list)
    supports: list = field(default_factory=list)  # (S mask, T mask) per row
    init: dict = field(default_factory=dict)
    stop_reason: str = ""
    start: Optional[np.ndarray] = None  # x^0, the starting iterate

    @property
    def F(self):
        return np.array([r.F for r in self.rows])

    def to_csv(self, include_timing=False):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRACE_HEADER)
        for r in self.rows:
            wr.writerow([
                r.k, repr(r.F), repr(r.F_reg), repr(r.F_fid), r.S_size, r.T_size,
                "" if r.step_norm is None else repr(r.step_norm),
                "" if r.inner_iters is None else r.inner_iters,
                "" if (r.ms is None or not include_timing) else f"{r.ms:.3f}",
            ])
        return buf.getvalue()

    @staticmethod
    def read_csv(text):
        """Parse a trace CSV into a dict of column arrays (blank cells become nan)."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != TRACE_HEADER:
            raise ValueError("not a trace CSV: header mismatch")
        body = rows[1:]
        if not body:
            raise ValueError("trace CSV has no rows")
        cols = {}
        for j, name in enumerate(TRACE_HEADER):
            try:
                cols[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in body])
            except (IndexError, ValueError) as exc:
                raise ValueError(f"malformed trace CSV in column {name!r}") from exc
        return cols


def _check_assumption(model):
    if joint_spectrum_min(model.A) <= 1e-14:
        raise AssumptionError("ker A and ker G^T intersect nontrivially; the model is not coercive")


def _initializer_spec(model, config, x_start):
    dims = model.dims
    return SubproblemSpec(
        x_k=x_start,
        weights=np.ones((2,) + dims),
        support=np.ones((2,) + dims, dtype=bool),
        model=model,
        rho=0.0,
        r_v=config.init_r_v,
        r_w=config.init_r_w,
        eps_inner=config.eps_inner,
        max_inner=config.max_inner,
    )


def initialize(model: RestorationModel, config: SolverConfig, return_stats=False):
    """Solution of the convex anisotropic TV model (unit weights, no prox term).

    ADMM is started from the observation.
    """
    _check_assumption(model)
    x0, stats = solve_subproblem(_initializer_spec(model, config, model.b))
    if return_stats:
        return x0, stats
    return x0


def _row(k, x, model, tau):
    obj = objective_value(x, model)
    g = np.abs(apply_gradient(x))
    S = g != 0
    T = g > tau
    mn = float(g[S].min()) if np.any(S) else np.inf
    return TraceRow(k, obj.reg, obj.fid, int(S.sum()), int(T.sum()), mn), S, T


def run(model: RestorationModel, config: SolverConfig = SolverConfig(), x0=None, strict=True):
    """Inexact ITSS-PL.  Returns ``(x, trace)``.

    The outer loop stops after ``config.max_outer`` steps or once the relative
    step ``||x^{k+1} - x^k|| / ||x^k||`` is at most ``config.eps_outer``.
    If a step increases the objective beyond round-off slack, the inner solve
    is resumed with a tenfold tighter tolerance up to ``config.refine_rounds``
    times; a remaining increase raises :class:`MonotonicityError` when
    ``strict``.
    """
    _check_assumption(model)
    trace = IterationTrace(n_coeffs=model.n_coeffs)
    if x0 is None:
        t0 = time.perf_counter()
        x0, st = initialize(model, config, return_stats=True)
        trace.init = {"path": "p=1 convex initializer", "rho": 0.0, "r_v": config.init_r_v,
                      "r_w": config.init_r_w, **st.summary(),
                      "ms": 1e3 * (time.perf_counter() - t0)}
    else:
        x0 = np.array(x0, dtype=float)
        trace.init = {"path": "user supplied"}

    trace.start = x0
    x = x0
    row, S, T = _row(0, x, model, config.tau)
    slack = 1e-9 * (1.0 + row.F)
    for k in range(config.max_outer):
        t0 = time.perf_counter()
        spec = build_spec(x, model, config)
        u, st = solve_subproblem(spec)
        F_new = objective_value(u, model).total
        rounds = 0
        eps = config.eps_inner
        while F_new > row.F + slack and rounds < config.refine_rounds:
            rounds += 1
            eps /= 10.0
            u, st = solve_subproblem(spec, state=st.state, eps=eps)
            F_new = objective_value(u, model).total
        fallback = False
        if F_new > row.F + slack:
            # the feasible projection of x^k is itself an approximate minimizer
            cand = project_feasible(x, spec.support)
            if subproblem_objective(cand, spec) < subproblem_objective(u, spec):
                u, fallback = cand, True
                F_new = objective_value(u, model).total
        row.step_norm = float(np.linalg.norm(u - x))
        row.inner_iters = st.iterations
        row.refinements = rounds
        row.fallback = fallback
        row.ms = 1e3 * (time.perf_counter() - t0)
        trace.rows.append(row)
        trace.supports.append((S, T))
        if F_new > row.F + slack:
            msg = f"objective increased at step {k}: {row.F!r} -> {F_new!r}"
            if strict:
                nxt, S, T = _row(k + 1, u, model, config.tau)
                trace.rows.append(nxt)
                trace.supports.append((S, T))
                trace.stop_reason = "monotonicity violation"
                raise MonotonicityError(msg, trace)
            log.warning(msg)
        xnorm = np.linalg.norm(x)
        rel = row.step_norm / xnorm if xnorm > 0 else row.step_norm
        x = u
        row, S, T = _row(k + 1, x, model, config.tau)
        log.debug("step %d: F=%.10g |S|=%d |T|=%d rel=%.3g", k, row.F, row.S_size, row.T_size, rel)
        if not T.any():
            trace.stop_reason = "empty tau-support"
            break
        # differences in (0, tau] still pending removal mean the support has not settled
        if rel <= config.eps_outer and np.array_equal(S, T):
            trace.stop_reason = "relative step below tolerance"
            break
    else:
        trace.stop_reason = "max_outer reached"
    trace.rows.append(row)
    trace.supports.append((S, T))
    return x, trace


def verify_decrease(trace: IterationTrace, config: SolverConfig, eps=None):
    """Check ``(1-eps)(rho/2)||dx||^2 <= F(x^k) - F(x^{k+1})`` at every step.

    ``eps`` defaults to ``config.inexact_eps``.  An additive slack of
    ``1e-9 (1 + F(x^0))`` absorbs round-off.  Plain monotonicity is reported
    separately because with tiny ``rho`` the quantified bound is weak.
    """
    eps = config.inexact_eps if eps is None else eps
    F = trace.F
    if F.size == 0:
        return {"passed": True, "violations": [], "monotone_violations": [], "min_margin": None}
    slack = 1e-9 * (1.0 + F[0])
    violations, mono = [], []
    margins = []
    for k in range(len(F) - 1):
        step = trace.rows[k].step_norm
        drop = F[k] - F[k + 1]
        bound = (1.0 - eps) * config.rho / 2.0 * (step or 0.0) ** 2
        margins.append(drop - bound)
        if bound > drop + slack:
            violations.append({"k": k, "decrease": float(drop), "bound": float(bound)})
        if drop < -slack:
            mono.append({"k": k, "increase": float(-drop)})
    return {
        "passed": not violations and not mono,
        "violations": violations,
        "monotone_violations": mono,
        "min_margin": float(min(margins)) if margins else None,
        "total_decrease": float(F[0] - F[-1]),
        "slack": float(slack),
    }


def _subset(a, b):
    return not np.any(a & ~b)


def verify_support_nesting(trace: IterationTrace):
    """Check ``T^{k+1} <= S^{k+1} <= T^k <= S^k`` and locate stabilization."""
    violations = []
    sup = trace.supports
    for k, (S, T) in enumerate(sup):
        if not _subset(T, S):
            violations.append({"k": k, "relation": "T^k <= S^k"})
        if k + 1 < len(sup) and not _subset(sup[k + 1][0], T):
            violations.append({"k": k, "relation": "S^{k+1} <= T^k"})
    K = None
    if sup:
        last_S = sup[-1][0]
        for k in range(len(sup) - 1, -1, -1):
            S, T = sup[k]
            if np.array_equal(S, T) and np.array_equal(S, last_S):
                K = k
            else:
                break
    return {
        "passed": not violations,
        "violations": violations,
        "stabilized_at": K,
        "S_sizes": [int(s.sum()) for s, _ in sup],
        "T_sizes": [int(t.sum()) for _, t in sup],
    }
