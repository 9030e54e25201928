import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physfilter.errors import DimensionMismatch, SingularKkt, SplitRequiresEqualDepths
from physfilter.predictor import (PredictionRequest, Predictor, PredictorConfig, kkt_matrix,
                                  kkt_matrix_schur, kkt_matrix_schur_split, predict,
                                  predict_split, schur_rhs, solve_split_stacked, split_rhs)
from physfilter.sim import LtiSystem, generate_dataset, random_system, simulate
from physfilter.trajectory import Trajectory, build_hankel_system

HALF = LtiSystem([[0.5]], [[1.0]], [[1.0]])


def _hankel(sys, t_init, n_h, T=80, seed=0, reg=1e-8):
    tr = generate_dataset(sys, T=T, seed=seed, excitation="uniform", u_max=1.0)
    return build_hankel_system(tr, t_init, n_h), PredictorConfig(t_init, n_h, reg)


def _random_request(sys, t_init, n_h, rng, k=1):
    """Request that is consistent with ``sys`` plus the true continuation."""
    u = rng.uniform(0, 1, (t_init + k * n_h, sys.n_u))
    x0 = rng.standard_normal(sys.n_x)
    y = simulate(sys, x0, u)
    req = PredictionRequest(u[:t_init].ravel(), y[:t_init].ravel(), u[t_init:].ravel())
    return req, y[t_init:].ravel()


def _random_hankel(rng, t_init=3, n_h=2, T=20):
    tr = Trajectory.from_arrays(rng.standard_normal((T, 1)), rng.standard_normal((T, 1)))
    return build_hankel_system(tr, t_init, n_h)


def test_defaults():
    cfg = PredictorConfig()
    assert (cfg.t_init, cfg.n_h) == (6, 6)


def test_kkt_matrix_shape_and_blocks(rng):
    H = _random_hankel(rng, 2, 1, T=5)
    assert H.n_cols == 3
    cfg = PredictorConfig(2, 1, 1.0)
    M = kkt_matrix(H, cfg)
    assert M.shape == (3 + 3, 3 + 3)
    np.testing.assert_array_equal(M, M.T)
    assert np.linalg.eigvalsh(M[:3, :3])[0] > 0


def test_kkt_zero_output_block():
    tr = Trajectory.from_arrays(np.random.default_rng(0).standard_normal((8, 1)), np.zeros((8, 1)))
    H = build_hankel_system(tr, 2, 2)
    cfg = PredictorConfig(2, 2, 0.3)
    M = kkt_matrix(H, cfg)
    np.testing.assert_array_equal(M[:H.n_cols, :H.n_cols], 0.3 * np.eye(H.n_cols))
    S = kkt_matrix_schur(H, cfg)
    ns = H.Hy_init.shape[0]
    assert not np.any(S[:ns, ns:]) and not np.any(S[ns:, :ns])


def test_kkt_matrix_is_lagrangian_jacobian(rng):
    H = _random_hankel(rng)
    cfg = PredictorConfig(3, 2, 0.1)
    y0 = rng.standard_normal(H.Hy_init.shape[0])
    Hyi, Hu, E = H.Hy_init, H.Hu, cfg.E(H.n_cols)

    def kkt_map(v):
        g, kap = v[:H.n_cols], v[H.n_cols:]
        grad = Hyi.T @ (Hyi @ g - y0) + E @ g + Hu.T @ kap
        return np.concatenate([grad, Hu @ g])

    v = rng.standard_normal(H.n_cols + Hu.shape[0])
    h = 1e-6
    J = np.column_stack([(kkt_map(v + h * e) - kkt_map(v - h * e)) / (2 * h)
                         for e in np.eye(v.size)])
    np.testing.assert_allclose(J, kkt_matrix(H, cfg), atol=1e-7)


def test_schur_elimination_recovers_kkt(rng):
    H = _random_hankel(rng)
    cfg = PredictorConfig(3, 2, 0.2)
    S = kkt_matrix_schur(H, cfg)
    ns = H.Hy_init.shape[0]
    # sigma = Hy_init g - y_init; substituting the first block row eliminates sigma
    A, B, C, D = S[:ns, :ns], S[:ns, ns:], S[ns:, :ns], S[ns:, ns:]
    np.testing.assert_allclose(D - C @ np.linalg.solve(A, B), kkt_matrix(H, cfg), atol=1e-12)


def test_schur_and_kkt_solves_agree(rng):
    H = _random_hankel(rng)
    cfg = PredictorConfig(3, 2, 0.2)
    req = PredictionRequest(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(2))
    res = Predictor(H, cfg).solve(req)
    rhs = np.concatenate([H.Hy_init.T @ req.y_init, req.u_init, req.u_pred])
    x = np.linalg.solve(kkt_matrix(H, cfg), rhs)
    np.testing.assert_allclose(res.g, x[:H.n_cols], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(res.kappa, x[H.n_cols:], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(res.sigma, H.Hy_init @ res.g - req.y_init, atol=1e-12)
    ms = kkt_matrix_schur(H, cfg)
    np.testing.assert_allclose(ms @ np.concatenate([res.sigma, res.g, res.kappa]),
                               schur_rhs(req, H.n_cols), atol=1e-10)


def test_noiseless_prediction_exact(rng):
    H, cfg = _hankel(HALF, 3, 5)
    for _ in range(5):
        req, truth = _random_request(HALF, 3, 5, rng)
        assert np.max(np.abs(predict(H, cfg, req).y_pred - truth)) <= 1e-5


def test_zero_request_gives_zero(rng):
    H, cfg = _hankel(HALF, 3, 5)
    res = predict(H, cfg, PredictionRequest.zeros(H))
    assert not np.any(res.g) and not np.any(res.y_pred)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_superposition(alpha, beta, seed):
    r = np.random.default_rng(seed)
    H = _random_hankel(r)
    cfg = PredictorConfig(3, 2, 0.05)
    pred = Predictor(H, cfg)
    a = [r.standard_normal(n) for n in (3, 3, 2)]
    b = [r.standard_normal(n) for n in (3, 3, 2)]
    lhs = pred.solve(PredictionRequest(*[alpha * x + beta * y for x, y in zip(a, b)])).y_pred
    rhs = alpha * pred.solve(PredictionRequest(*a)).y_pred + beta * pred.solve(
        PredictionRequest(*b)).y_pred
    np.testing.assert_allclose(lhs, rhs, atol=1e-8 * (1 + np.abs(rhs).max()))


def test_request_size_checked(rng):
    H = _random_hankel(rng)
    with pytest.raises(DimensionMismatch):
        predict(H, PredictorConfig(3, 2, 0.1), PredictionRequest(np.zeros(3), np.zeros(3),
                                                                 np.zeros(3)))


def test_config_mismatch(rng):
    H = _random_hankel(rng)
    with pytest.raises(DimensionMismatch):
        kkt_matrix(H, PredictorConfig(2, 2))


def test_singular_kkt():
    tr = Trajectory.from_arrays(np.ones((12, 1)), np.ones((12, 1)))
    H = build_hankel_system(tr, 2, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(SingularKkt):
            Predictor(H, PredictorConfig(2, 2, 1e-4))


def test_pe_warning():
    tr = Trajectory.from_arrays(np.ones((12, 1)), np.ones((12, 1)))
    H = build_hankel_system(tr, 2, 2)
    with pytest.warns(RuntimeWarning), pytest.raises(SingularKkt):
        Predictor(H, PredictorConfig(2, 2, 1e-4))


def test_matrix_regularizer_validation():
    with pytest.raises(ValueError):
        PredictorConfig(2, 2, -1.0)
    with pytest.raises(ValueError):
        PredictorConfig(2, 2, np.array([[1.0, 2.0], [0.0, 1.0]]))
    cfg = PredictorConfig(2, 2, np.diag([1.0, 2.0]))
    with pytest.raises(DimensionMismatch):
        cfg.E(3)


# -- splitting -------------------------------------------------------------------------

def test_split_k1_is_predict(rng):
    H, cfg = _hankel(HALF, 4, 4)
    req, _ = _random_request(HALF, 4, 4, rng)
    a, b = predict(H, cfg, req), predict_split(H, cfg, req)
    np.testing.assert_array_equal(a.y_pred, b.y_pred)
    np.testing.assert_array_equal(kkt_matrix_schur_split(H, cfg, 1), kkt_matrix_schur(H, cfg))


def test_split_equals_manual_chaining(rng):
    H, cfg = _hankel(HALF, 4, 4)
    req, _ = _random_request(HALF, 4, 4, rng, k=2)
    first = predict(H, cfg, PredictionRequest(req.u_init, req.y_init, req.u_pred[:4]))
    second = predict(H, cfg, PredictionRequest(req.u_pred[:4], first.y_pred, req.u_pred[4:]))
    got = predict_split(H, cfg, req)
    np.testing.assert_array_equal(got.y_pred, np.concatenate([first.y_pred, second.y_pred]))


def test_split_matches_simulation(rng):
    sys = random_system(2, 1, 1, seed=3)
    H, cfg = _hankel(sys, 4, 4, T=120)
    req, truth = _random_request(sys, 4, 4, rng, k=2)
    assert np.max(np.abs(predict_split(H, cfg, req).y_pred - truth)) <= 1e-4


def test_stacked_split_matrix(rng):
    H, cfg = _hankel(HALF, 3, 3, reg=1e-3)
    M = kkt_matrix_schur_split(H, cfg, 3)
    b = kkt_matrix_schur(H, cfg).shape[0]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.any(M[i * b:(i + 1) * b, j * b:(j + 1) * b])
    req, _ = _random_request(HALF, 3, 3, rng, k=3)
    seq, stk = predict_split(H, cfg, req), solve_split_stacked(H, cfg, req)
    np.testing.assert_allclose(stk.y_pred, seq.y_pred, rtol=1e-10, atol=1e-10)
    x = np.concatenate([np.concatenate([stk.sigma[j * 3:(j + 1) * 3],
                                        stk.g[j * H.n_cols:(j + 1) * H.n_cols],
                                        stk.kappa[j * 6:(j + 1) * 6]]) for j in range(3)])
    np.testing.assert_allclose(M @ x, split_rhs(req, H, 3), atol=1e-9)


def test_split_requires_equal_depths(rng):
    H, cfg = _hankel(HALF, 3, 2)
    with pytest.raises(SplitRequiresEqualDepths):
        kkt_matrix_schur_split(H, cfg, 2)
    with pytest.raises(SplitRequiresEqualDepths):
        predict_split(H, cfg, PredictionRequest(np.zeros(3), np.zeros(3), np.zeros(4)))


def test_prediction_map_matches_solves(rng):
    H, cfg = _hankel(HALF, 3, 3, reg=1e-3)
    pred = Predictor(H, cfg)
    F = pred.prediction_map(2)
    req, _ = _random_request(HALF, 3, 3, rng, k=2)
    z = np.concatenate([req.y_init, req.u_init, req.u_pred])
    np.testing.assert_allclose(F @ z, predict_split(H, cfg, req).y_pred, atol=1e-10)
