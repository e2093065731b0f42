import numpy as np
import pytest

from aniso_restore import itss_pl
from aniso_restore.grid_ops import GridOperator, make_kernel
from aniso_restore.itss_pl import (
    TRACE_HEADER,
    AssumptionError,
    IterationTrace,
    MonotonicityError,
    TraceRow,
    initialize,
    run,
    verify_decrease,
    verify_support_nesting,
)
from aniso_restore.model import RestorationModel, SolverConfig
from aniso_restore.synthesis import degrade, make_test_image

CFG = SolverConfig()


def blurred(kind="twocircles", dims=(32, 32), q=1.0, beta=15.0, seed=0):
    x = make_test_image(kind, dims)
    op = GridOperator(make_kernel("average", size=5), dims)
    if q == 1:
        b = degrade(x, op, "salt_pepper", 0.3, seed)
    else:
        b = degrade(x, op, "gaussian", 1e-6, seed)
    return x, RestorationModel(op, b, beta=beta, q=q)


@pytest.fixture(scope="module")
def circles_run():
    x, m = blurred("twocircles", (64, 64), q=1.0, beta=15.0)
    xs, trace = run(m, CFG)
    return m, xs, trace


# ---------------------------------------------------------------- initializer


def test_initializer_recovers_constant():
    op = GridOperator(make_kernel("gaussian", size=5, sigma=1.0), (16, 16))
    m = RestorationModel(op, op.apply(np.full((16, 16), 0.6)), beta=1e4, q=2.0)
    x0 = initialize(m, CFG)
    assert np.max(np.abs(x0 - 0.6)) <= 1e-3


def test_initializer_tiny_beta_is_flat():
    _, m = blurred(dims=(16, 16), beta=1e-6)
    x0 = initialize(m, CFG)
    assert np.ptp(x0) <= 1e-3 * max(1.0, np.abs(x0).max())


def test_trace_records_initializer_path(circles_run):
    _, _, trace = circles_run
    assert trace.init["path"].startswith("p=1")
    assert trace.init["rho"] == 0.0 and trace.init["r_v"] == CFG.init_r_v
    _, m = blurred(dims=(16, 16))
    _, t2 = run(m, CFG, x0=np.full((16, 16), 0.5))
    assert t2.init["path"] == "user supplied"


def test_assumption_violation():
    op = GridOperator(make_kernel("custom", taps=[[0.0]]), (8, 8))
    with pytest.raises(AssumptionError):
        run(RestorationModel(op, np.zeros((8, 8)), beta=1.0), CFG)


# ---------------------------------------------------------------- outer loop


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0])
def test_constant_truth_converges_fast(q):
    op = GridOperator(make_kernel("average", size=3), (16, 16))
    m = RestorationModel(op, op.apply(np.full((16, 16), 0.3)), beta=50.0 if q < 2 else 1e4, q=q)
    xs, trace = run(m, CFG)
    assert len(trace.rows) - 1 <= 3
    assert trace.rows[-1].S_size == 0
    assert np.max(np.abs(xs - 0.3)) <= 1e-3


def test_circles_run_shape(circles_run):
    m, xs, trace = circles_run
    F = trace.F
    assert np.all(np.diff(F) <= 1e-9 * (1 + F[0]))
    ratio = np.array([r.T_size for r in trace.rows]) / m.n_coeffs
    assert np.all(np.diff(ratio) <= 0)
    assert ratio[-1] == ratio[-2]  # flat tail
    assert trace.stop_reason != "monotonicity violation"


def test_trace_invariants(circles_run):
    m, xs, trace = circles_run
    for r in trace.rows:
        assert r.T_size <= r.S_size
    for a, b in zip(trace.rows, trace.rows[1:]):
        assert b.S_size <= a.T_size
    dec = verify_decrease(trace, CFG)
    nest = verify_support_nesting(trace)
    assert dec["passed"] and nest["passed"]
    K = nest["stabilized_at"]
    assert K is not None and K <= CFG.max_outer
    for r in trace.rows[K:]:
        assert r.min_support_diff > CFG.tau


def test_steps_vanish(circles_run):
    _, _, trace = circles_run
    steps = [r.step_norm for r in trace.rows if r.step_norm is not None]
    assert steps[-1] <= np.median(steps[:3])


def test_tighter_inner_tolerance_is_stable():
    _, m = blurred(dims=(32, 32))
    F1 = run(m, CFG)[1].F[-1]
    F2 = run(m, CFG.replace(eps_inner=CFG.eps_inner / 10))[1].F[-1]
    assert abs(F1 - F2) / F1 < 1e-3


def test_tau_zero_makes_supports_equal():
    _, m = blurred(dims=(32, 32))
    _, trace = run(m, CFG.replace(tau=0.0))
    for S, T in trace.supports:
        assert np.array_equal(S, T)


def test_q2_run_passes_checks():
    _, m = blurred("squares", (32, 32), q=2.0, beta=1e4)
    _, trace = run(m, CFG)
    assert verify_decrease(trace, CFG)["passed"]
    assert verify_support_nesting(trace)["passed"]


def test_runs_are_deterministic():
    _, m = blurred(dims=(32, 32))
    assert run(m, CFG)[1].to_csv() == run(m, CFG)[1].to_csv()


def test_monotonicity_failure_raises_with_partial_trace(monkeypatch):
    _, m = blurred(dims=(16, 16))

    def bad_solve(spec, **kw):
        u, stats = solve(spec, **kw)
        return u + 5.0, stats

    solve = itss_pl.solve_subproblem
    monkeypatch.setattr(itss_pl, "solve_subproblem", bad_solve)
    monkeypatch.setattr(itss_pl, "project_feasible", lambda x, s: x + 5.0)
    with pytest.raises(MonotonicityError) as err:
        run(m, CFG)
    tr = err.value.trace
    assert tr.stop_reason == "monotonicity violation"
    assert len(tr.rows) == 2 and tr.rows[1].F > tr.rows[0].F
    # non-strict mode keeps going and reports
    _, tr2 = run(m, CFG.replace(max_outer=2), strict=False)
    assert not verify_decrease(tr2, CFG)["passed"]


# ---------------------------------------------------------------- verification on hand-built traces


def hand_trace(F, steps, supports):
    rows = [TraceRow(k, f, 0.0, int(S.sum()), int(T.sum()), 1.0, step_norm=s)
            for k, (f, s, (S, T)) in enumerate(zip(F, steps, supports))]
    return IterationTrace(n_coeffs=8, rows=rows, supports=supports)


def masks(*bits):
    return [(np.array(s, bool), np.array(t, bool)) for s, t in bits]


def test_verify_decrease_hand_traces():
    sup = masks(([1, 1, 0], [1, 0, 0]), ([1, 0, 0], [1, 0, 0]), ([1, 0, 0], [1, 0, 0]))
    ok = hand_trace([3.0, 2.0, 1.5], [0.1, 0.1, None], sup)
    assert verify_decrease(ok, CFG)["passed"]
    bad = hand_trace([3.0, 3.5, 1.5], [0.1, 0.1, None], sup)
    rep = verify_decrease(bad, CFG)
    assert not rep["passed"]
    assert [v["k"] for v in rep["monotone_violations"]] == [0]
    # the quantified bound bites when rho is large
    strong = SolverConfig(rho=100.0)
    rep = verify_decrease(hand_trace([3.0, 2.99, 2.98], [1.0, 1.0, None], sup), strong, eps=0.5)
    assert [v["k"] for v in rep["violations"]] == [0, 1]


def test_verify_support_nesting_hand_traces():
    good = hand_trace([3, 2, 1], [1, 1, None],
                      masks(([1, 1, 1], [1, 1, 0]), ([1, 1, 0], [1, 0, 0]), ([1, 0, 0], [1, 0, 0])))
    rep = verify_support_nesting(good)
    assert rep["passed"] and rep["stabilized_at"] == 2
    grow = hand_trace([3, 2, 1], [1, 1, None],
                      masks(([1, 1, 0], [1, 0, 0]), ([1, 1, 0], [1, 1, 0]), ([1, 1, 0], [1, 1, 0])))
    rep = verify_support_nesting(grow)
    assert not rep["passed"]
    assert {"k": 0, "relation": "S^{k+1} <= T^k"} in rep["violations"]
    inner = hand_trace([1], [None], masks(([1, 0, 0], [1, 1, 0])))
    assert not verify_support_nesting(inner)["passed"]


# ---------------------------------------------------------------- CSV


def test_trace_csv_roundtrip(circles_run):
    _, _, trace = circles_run
    text = trace.to_csv()
    assert text.splitlines()[0] == ",".join(TRACE_HEADER)
    cols = IterationTrace.read_csv(text)
    np.testing.assert_array_equal(cols["F"], trace.F)
    assert np.isnan(cols["ms"]).all()
    assert np.isnan(cols["step_norm"][-1])
    timed = IterationTrace.read_csv(trace.to_csv(include_timing=True))
    assert np.all(timed["ms"][:-1] >= 0)


@pytest.mark.parametrize("text", ["", "a,b\n1,2\n", ",".join(TRACE_HEADER) + "\n",
                                  ",".join(TRACE_HEADER) + "\n0,x,1,1,1,1,,,\n"])
def test_trace_csv_rejects_malformed(text):
    with pytest.raises(ValueError):
        IterationTrace.read_csv(text)
