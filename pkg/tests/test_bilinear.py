import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physfilter.errors import BoxMissing, ConfigError, DimensionMismatch
from physfilter.solvers import (BilinearProgram, BilinearTerms, McCormickOptions, SolverOptions,
                                dump_bilinear, relaxation_bound, solve_bilinear)


def substitution_example():
    # min (x - 1)^2  s.t.  x*y = 0.5, y = 0.5
    return BilinearProgram(c=[-2.0, 0.0], c0=1.0, Q=np.diag([2.0, 0.0]),
                           A_eq=[[0.0, 0.0], [0.0, 1.0]], b_eq=[0.5, 0.5],
                           eq_terms=[(0, 1, 1.0, 0)], lo=[0, 0], hi=[2, 2])


def hyperbola_example():
    # min x + y  s.t.  x*y >= 1
    return BilinearProgram(c=[1.0, 1.0], A_in=[[0.0, 0.0]], b_in=[-1.0],
                           in_terms=[(0, 1, -1.0, 0)], lo=[0.1, 0.1], hi=[10, 10])


@pytest.mark.parametrize("mode", ["AltMin", "McCormickBB"])
def test_substitution(mode):
    s = solve_bilinear(substitution_example(), mode)
    assert s.x[0] == pytest.approx(1.0, abs=1e-5)
    assert s.objective == pytest.approx(0.0, abs=1e-8)


def test_hyperbola_global():
    s = solve_bilinear(hyperbola_example(), "McCormickBB")
    assert s.status == "Optimal"
    x = np.linspace(0.1, 10.0, 9901)
    X, Y = x[:, None], x[None, :]
    grid = np.min(np.where(X * Y >= 1, X + Y, np.inf))
    assert s.objective == pytest.approx(grid, abs=1e-2)
    assert s.objective == pytest.approx(2.0, abs=1e-3)
    np.testing.assert_allclose(s.x, [1, 1], atol=0.05)
    assert s.gap <= 1e-4


def test_hyperbola_local():
    s = solve_bilinear(hyperbola_example(), "AltMin")
    assert s.status in ("LocalOptimum", "Optimal")
    assert s.x[0] * s.x[1] >= 1 - 1e-6


def test_interval_infeasible():
    bp = BilinearProgram(c=[0.0, 0.0], A_eq=[[0.0, 0.0]], b_eq=[5.0],
                         eq_terms=[(0, 1, 1.0, 0)], lo=[0, 0], hi=[1, 1])
    s = solve_bilinear(bp, "McCormickBB")
    assert s.status == "Infeasible"
    assert s.certificate is not None
    assert relaxation_bound(bp) == np.inf


def test_box_missing():
    bp = BilinearProgram(c=[1.0, 1.0], A_in=[[0.0, 0.0]], b_in=[-1.0],
                         in_terms=[(0, 1, -1.0, 0)], lo=[0.1, 0.1], hi=[np.inf, 10])
    with pytest.raises(BoxMissing):
        solve_bilinear(bp, "McCormickBB")


def test_term_limit():
    opts = SolverOptions(mccormick=McCormickOptions(max_bilinear_terms=0))
    with pytest.raises(ValueError):
        solve_bilinear(hyperbola_example(), "McCormickBB", opts)


def test_unknown_mode():
    with pytest.raises(ValueError):
        solve_bilinear(hyperbola_example(), "Newton")


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-1, 0, 2)
    hi = lo + rng.uniform(0.5, 1.5, 2)
    a = rng.choice([-1.0, 1.0])
    lin = rng.standard_normal(2)
    mid = 0.5 * (lo + hi)
    # the box midpoint is feasible by construction
    b = a * mid[0] * mid[1] + lin @ mid + rng.uniform(0, 0.3)
    bp = BilinearProgram(c=rng.standard_normal(2), A_in=[lin], b_in=[b],
                         in_terms=[(0, 1, a, 0)], lo=lo, hi=hi)
    return bp, (a, lin, b)


def _grid_opt(bp, con, step):
    a, lin, b = con
    xs, ys = (np.linspace(bp.lo[k], bp.hi[k], int(np.ceil((bp.hi[k] - bp.lo[k]) / step)) + 1)
              for k in (0, 1))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    ok = a * X * Y + lin[0] * X + lin[1] * Y <= b
    return np.min(np.where(ok, bp.c[0] * X + bp.c[1] * Y, np.inf))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relaxation_never_exceeds_optimum(seed):
    bp, con = _random_instance(seed)
    assert relaxation_bound(bp) <= _grid_opt(bp, con, 1e-2) + 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_branch_and_bound_matches_grid(seed):
    bp, con = _random_instance(seed)
    s = solve_bilinear(bp, "McCormickBB")
    assert s.status == "Optimal"
    assert s.objective == pytest.approx(_grid_opt(bp, con, 1e-3), abs=1e-2)
    assert bp.max_violation(s.x) <= 1e-6


def test_terms_helpers():
    t = BilinearTerms.from_list([(0, 1, 2.0, 0), (1, 2, -1.0, 1)])
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(t.evaluate(x, 2), [4.0, -6.0])
    J = t.jacobian(x, 2, 3)
    np.testing.assert_allclose(J, [[4.0, 2.0, 0.0], [0.0, -3.0, -2.0]])
    free = np.array([True, False, False])
    Jl, k = t.linearized(x, free, 2, 3)
    np.testing.assert_allclose(Jl @ x + k, t.evaluate(x, 2))


def test_program_validation():
    with pytest.raises(DimensionMismatch):
        BilinearProgram(c=[1.0], A_eq=[[1.0]], b_eq=[1.0], eq_terms=[(0, 1, 1.0, 0)])
    with pytest.raises(DimensionMismatch):
        BilinearProgram(c=[1.0], lo=[1.0], hi=[0.0])


def test_options_roundtrip():
    opts = SolverOptions.from_dict({"penalty_init": 2.0, "mccormick": {"gap": 1e-5}})
    assert opts.mccormick.gap == 1e-5
    assert SolverOptions.from_dict(opts.to_dict()) == opts
    with pytest.raises(ConfigError):
        SolverOptions.from_dict({"nope": 1})
    with pytest.raises(ConfigError):
        SolverOptions.from_dict({"mccormick": {"nope": 1}})
    with pytest.raises(ConfigError):
        SolverOptions(penalty_growth=1.0)


def test_dump_format():
    text = dump_bilinear(substitution_example()).splitlines()
    assert text[0] == "BLP n=2 m_eq=2 m_in=0 terms=1"
    assert "BE 0 0 1 1" in text and "c0 1" in text and "Q 0 0 2" in text
    assert "B 1 0 2" in text
