import itertools

import numpy as np
import pytest

from physfilter.errors import DimensionMismatch, SplitRequiresEqualDepths, UnboundedInnerProblem
from physfilter.filtering import (FilterProblem, assemble_robust_counterpart,
                                  assemble_single_level, counterpart_residual, dual_certificate,
                                  solve_filter, verify_consistency)
from physfilter.predictor import (PredictionRequest, Predictor, PredictorConfig, kkt_matrix_schur,
                                  kkt_matrix_schur_split, split_rhs)
from physfilter.rules import PhysicalRule, Polyhedron, bidding_consistency, temperature_consistency
from physfilter.sim import LtiSystem, NoiseSpec, generate_dataset, make_positive_gain_system
from physfilter.solvers import SolverOptions
from physfilter.trajectory import Trajectory, build_hankel_system

from conftest import U_MAX, scalar_hankel


def tiny_problem(h=0.0):
    """Four-sample scalar instance small enough for the exact solver."""
    sys = LtiSystem([[0.8]], [[0.5]], [[1.0]])
    tr = generate_dataset(sys, T=4, noise=NoiseSpec(0.1), seed=5, u_max=1.0)
    H = build_hankel_system(tr, 1, 1)
    base = bidding_consistency(H, 1.0)
    rule = PhysicalRule(Polyhedron(base.Y.H, [h]), base.Y_init, base.U, base.U_init)
    return FilterProblem(H, PredictorConfig(1, 1, 1e-2), rule)


def vertex_worst_case(w, rule):
    """max w'z over Y_init x U_init x U with singleton initial sets and a box U."""
    ny0, nu0 = rule.Y_init.dim, rule.U_init.dim
    wu = w[ny0 + nu0:]
    best = -np.inf
    for corner in itertools.product(*zip(rule.U.lo, rule.U.hi)):
        best = max(best, wu @ np.array(corner))
    return best


# -- assembly ---------------------------------------------------------------------------

def test_frozen_data_gives_predictor_system(noisy_fixture):
    _, H, cfg = noisy_fixture
    p = FilterProblem(H, cfg, temperature_consistency(H, U_MAX))
    st = assemble_single_level(p)
    y = H.y_data.ravel()
    np.testing.assert_array_equal(st.matrix(y), kkt_matrix_schur(H, cfg))


def test_split_assembly_matches_split_matrix(noisy_fixture, rng):
    _, H, cfg = noisy_fixture
    p = FilterProblem(H, cfg, temperature_consistency(H, U_MAX, 2), segments=2)
    st = assemble_single_level(p)
    y = H.y_data.ravel()
    M = st.matrix(y)
    np.testing.assert_array_equal(M, kkt_matrix_schur_split(H, cfg, 2))
    np.testing.assert_array_equal(M != 0, kkt_matrix_schur_split(H, cfg, 2) != 0)
    z = rng.standard_normal(st.n_z)
    req = PredictionRequest(z[4:8], z[:4], z[8:])
    np.testing.assert_array_equal(st.rhs(z), split_rhs(req, H, 2))


def test_rhs_does_not_depend_on_data(noisy_fixture, rng):
    _, H, cfg = noisy_fixture
    p = FilterProblem(H, cfg, temperature_consistency(H, U_MAX))
    st = assemble_single_level(p)
    z = rng.standard_normal(st.n_z)
    # the right-hand side is P z with a constant 0/1 matrix P
    assert set(np.unique(st.P)) <= {0.0, 1.0}
    p2 = FilterProblem(H.with_outputs(H.y_data + 1.0), cfg, p.rule)
    np.testing.assert_array_equal(assemble_single_level(p2).rhs(z), st.rhs(z))


def _third_difference(f, x, d, h=0.5):
    return f(x + 3 * h * d) - 3 * f(x + 2 * h * d) + 3 * f(x + h * d) - f(x)


@pytest.mark.parametrize("segments", [1, 2])
def test_degree_audit(noisy_fixture, rng, segments):
    """Third finite differences of a polynomial of degree <= 2 vanish identically."""
    _, H, cfg = noisy_fixture
    p = FilterProblem(H, cfg, temperature_consistency(H, U_MAX, segments), segments=segments)
    st = assemble_single_level(p)
    z = rng.standard_normal(st.n_z)
    bp = st.to_bilinear(z)
    rc = assemble_robust_counterpart(p).program
    for prog in (bp, rc):
        def residuals(x, prog=prog):
            return np.concatenate([prog.eq_residual(x), prog.in_residual(x)])
        for _ in range(3):
            x = rng.standard_normal(prog.n)
            d = rng.standard_normal(prog.n)
            scale = 1 + np.abs(residuals(x)).max()
            assert np.abs(_third_difference(residuals, x, d)).max() <= 1e-9 * scale * 100
            # and the second difference is not zero: the products are really there
        assert prog.n_bilinear > 0


def test_one_dual_pair_per_rule_row(noisy_fixture):
    _, H, cfg = noisy_fixture
    rc = assemble_robust_counterpart(FilterProblem(H, cfg, bidding_consistency(H, U_MAX)))
    assert len(rc.lam_slices) == len(rc.nu_slices) == 1
    rc = assemble_robust_counterpart(FilterProblem(H, cfg, temperature_consistency(H, U_MAX)))
    assert len(rc.lam_slices) == H.n_h


def test_unbounded_inner_problem(noisy_fixture):
    _, H, cfg = noisy_fixture
    base = temperature_consistency(H, U_MAX)
    open_u = Polyhedron(-np.eye(4), np.zeros(4))
    rule = PhysicalRule(base.Y, base.Y_init, open_u, base.U_init)
    with pytest.raises(UnboundedInnerProblem):
        assemble_robust_counterpart(FilterProblem(H, cfg, rule))


def test_problem_validation(noisy_fixture):
    _, H, cfg = noisy_fixture
    with pytest.raises(DimensionMismatch):
        FilterProblem(H, cfg, temperature_consistency(H, U_MAX, 2))
    _, H53 = scalar_hankel(depth=4)
    tr = Trajectory.from_arrays(np.arange(20.0)[:, None] % 3, np.ones((20, 1)))
    H32 = build_hankel_system(tr, 3, 2)
    with pytest.raises(SplitRequiresEqualDepths):
        FilterProblem(H32, PredictorConfig(3, 2), temperature_consistency(H32, 1.0, 2), 2)
    with pytest.raises(ValueError):
        FilterProblem(H, cfg, temperature_consistency(H, U_MAX), norm="Linf")


# -- duality at fixed data --------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_dual_bound_equals_vertex_enumeration(seed):
    _, H = scalar_hankel(noise=0.05, T=40, seed=seed)
    cfg = PredictorConfig(4, 4, 1e-4)
    for rule in (temperature_consistency(H, U_MAX), bidding_consistency(H, U_MAX)):
        p = FilterProblem(H, cfg, rule)
        cert = dual_certificate(p)
        F = Predictor(H, cfg).prediction_map()
        for r in range(rule.Y.n_rows):
            w = F.T @ rule.Y.H[r]
            assert cert.bound[r] == pytest.approx(vertex_worst_case(w, rule), abs=1e-6)


def test_fixed_data_counterpart_feasibility(noisy_fixture):
    _, H, cfg = noisy_fixture
    p = FilterProblem(H, cfg, temperature_consistency(H, U_MAX))
    rc = assemble_robust_counterpart(p)
    for y in (H.y_data.ravel(), solve_filter(p, n_samples=0).y_filtered.ravel()):
        cert = dual_certificate(p, y)
        feasible = counterpart_residual(rc, y, list(cert.lam), list(cert.nu)) <= 1e-7
        report = verify_consistency(H.with_outputs(y), cfg, p.rule, n_samples=0)
        assert feasible == bool(np.all(cert.bound <= p.rule.Y.h + 1e-7)) == report.passed


# -- verification -----------------------------------------------------------------------

def test_consistent_data_verifies(clean_fixture):
    _, H, cfg = clean_fixture
    rep = verify_consistency(H, cfg, temperature_consistency(H, U_MAX), n_samples=100, seed=1)
    assert rep.certified_max <= 1e-8 and rep.sampled_worst <= 1e-8 and rep.passed


def test_negated_data_fails(clean_fixture):
    _, H, cfg = clean_fixture
    bad = H.with_outputs(-H.y_data)
    rep = verify_consistency(bad, cfg, temperature_consistency(H, U_MAX), n_samples=20)
    assert rep.certified_max > 1e-3 and not rep.passed


@pytest.mark.parametrize("noise", [0.0, 0.05, 0.2])
def test_sampling_never_beats_certificate(noise):
    _, H = scalar_hankel(noise=noise)
    cfg = PredictorConfig(4, 4, 1e-4)
    for rule in (temperature_consistency(H, U_MAX), bidding_consistency(H, U_MAX)):
        rep = verify_consistency(H, cfg, rule, n_samples=100, seed=2)
        assert rep.sampled_worst <= rep.certified_max + 1e-8


# -- solving ---------------------------------------------------------------------------

def test_consistent_data_is_left_alone():
    sys = make_positive_gain_system(seed=4)
    tr = generate_dataset(sys, T=40, seed=1, u_max=U_MAX)
    H = build_hankel_system(tr, 3, 3)
    cfg = PredictorConfig(3, 3, 1e-4)
    res = solve_filter(FilterProblem(H, cfg, temperature_consistency(H, U_MAX)))
    assert res.objective <= 1e-6
    np.testing.assert_array_equal(res.y_filtered, H.y_data)
    assert res.status == "Optimal"


def test_noisy_fixture_is_repaired(noisy_fixture):
    _, H, cfg = noisy_fixture
    rule = temperature_consistency(H, U_MAX)
    assert not verify_consistency(H, cfg, rule, n_samples=0).passed
    res = solve_filter(FilterProblem(H, cfg, rule))
    assert res.status == "LocalOptimum"
    assert res.verification.certified_max <= 1e-6 and res.verification.passed
    assert res.objective > 0
    assert res.objective == pytest.approx(np.sum((res.y_filtered - H.y_data) ** 2))
    assert res.certificate["counterpart_residual"] <= 1e-6


def test_bidding_negative_pole_is_noop():
    # y+ = -0.5 y + u: sum over two steps of a^i b = 0.5 >= 0
    sys = LtiSystem([[-0.5]], [[1.0]], [[1.0]])
    tr = generate_dataset(sys, T=30, seed=0, u_max=1.0)
    H = build_hankel_system(tr, 2, 2)
    p = FilterProblem(H, PredictorConfig(2, 2, 1e-6), bidding_consistency(H, 1.0))
    res = solve_filter(p)
    assert res.objective <= 1e-6 and res.verification.passed


def test_idempotence(noisy_fixture):
    _, H, cfg = noisy_fixture
    rule = temperature_consistency(H, U_MAX)
    first = solve_filter(FilterProblem(H, cfg, rule), n_samples=0)
    again = solve_filter(FilterProblem(H.with_outputs(first.y_filtered), cfg, rule), n_samples=0)
    assert again.objective <= 1e-6


def test_split_filter(noisy_fixture):
    _, H, cfg = noisy_fixture
    rule = temperature_consistency(H, U_MAX, 2)
    res = solve_filter(FilterProblem(H, cfg, rule, segments=2), n_samples=20)
    assert res.status == "LocalOptimum" and res.verification.passed


def test_l1_norm(noisy_fixture):
    _, H, cfg = noisy_fixture
    res = solve_filter(FilterProblem(H, cfg, temperature_consistency(H, U_MAX), norm="L1"),
                       n_samples=0)
    assert res.verification.passed
    assert res.objective == pytest.approx(np.sum(np.abs(res.y_filtered - H.y_data)))


def test_mimo():
    sys = make_positive_gain_system(seed=1, n_x=2, n_u=2, n_y=2)
    tr = generate_dataset(sys, T=80, noise=NoiseSpec(0.05), seed=2, u_max=U_MAX)
    H = build_hankel_system(tr, 3, 3)
    res = solve_filter(FilterProblem(H, PredictorConfig(3, 3, 1e-4),
                                     temperature_consistency(H, U_MAX)), n_samples=20)
    assert res.status == "LocalOptimum" and res.verification.passed


def test_exact_solver_agrees_with_local():
    p = tiny_problem()
    assert not verify_consistency(p.H, p.cfg, p.rule, n_samples=0).passed
    local = solve_filter(p, n_samples=0)
    exact = solve_filter(p, method="McCormickBB", n_samples=0)
    assert exact.status == "Optimal" and exact.verification.passed
    assert exact.certificate["gap"] <= 1e-4
    assert exact.objective <= local.objective + 1e-6
    assert exact.objective == pytest.approx(local.objective, rel=1e-2)


def test_relaxing_the_rule_never_costs_more():
    objs = [solve_filter(tiny_problem(h), method="McCormickBB", n_samples=0).objective
            for h in (0.0, 0.01, 0.03, 1.0)]
    assert all(b <= a + 1e-6 for a, b in zip(objs, objs[1:]))
    assert objs[-1] <= 1e-6


def test_summary_and_outputs(noisy_fixture):
    traj, H, cfg = noisy_fixture
    res = solve_filter(FilterProblem(H, cfg, temperature_consistency(H, U_MAX)), n_samples=0)
    text = res.summary_json()
    assert '"status": "LocalOptimum"' in text
    out = res.trajectory(traj)
    np.testing.assert_array_equal(out.inputs, traj.inputs)
    np.testing.assert_array_equal(out.outputs, res.y_filtered)


def test_solver_options_respected(noisy_fixture):
    _, H, cfg = noisy_fixture
    res = solve_filter(FilterProblem(H, cfg, temperature_consistency(H, U_MAX)),
                       SolverOptions(max_outer=1, max_inner=1), n_samples=0)
    assert res.status in ("IterationLimit", "LocalOptimum")
    if res.status == "LocalOptimum":
        assert res.verification.passed


def test_unknown_method(noisy_fixture):
    _, H, cfg = noisy_fixture
    with pytest.raises(ValueError):
        solve_filter(FilterProblem(H, cfg, temperature_consistency(H, U_MAX)), method="SLSQP")
