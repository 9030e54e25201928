"""Convex quadratic programs: equality-constrained KKT solve and a dense
primal-dual interior-point method for inequality constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, NumericalFailure, SingularKkt, SingularMatrix
from .linalg import SINGULAR_RCOND, SymmetricFactor
from .lp import LinearProgram, solve_lp


def solve_eq_qp(Q, c, A, b, rcond_tol: float = SINGULAR_RCOND):
    """Minimize ``0.5 x'Qx + c'x`` subject to ``Ax = b``.

    Solves ``[[Q, A'], [A, 0]] [x; y] = [-c; b]``, so the multipliers satisfy
    ``Qx + c + A'y = 0``.

    Returns:
        Tuple ``(x, y)``.

    Raises:
        SingularKkt: If the KKT matrix is singular to working precision.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    if Q.shape != (n, n) or A.shape[1] != n or A.shape[0] != b.size:
        raise DimensionMismatch("inconsistent QP dimensions")
    m = A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    try:
        sol = SymmetricFactor(0.5 * (K + K.T), rcond_tol).solve(np.concatenate([-c, b]))
    except SingularMatrix as exc:
        raise SingularKkt(str(exc)) from None
    return sol[:n], sol[n:]


@dataclass
class QpSolution:
    status: str
    x: np.ndarray
    y: np.ndarray  # equality multipliers, Qx + c + A'y + G'z = 0
    z: np.ndarray  # inequality multipliers, z >= 0
    objective: float
    iterations: int


def solve_qp(Q, c, A=None, b=None, G=None, h=None, tol: float = 1e-9,
             max_iter: int = 100, check_feasibility: bool = False) -> QpSolution:
    """Minimize ``0.5 x'Qx + c'x`` s.t. ``Ax = b``, ``Gx <= h`` (``Q`` PSD).

    Mehrotra predictor-corrector on the slack form ``Gx + s = h``. With
    ``check_feasibility`` the constraint set is first tested by simplex
    phase 1 and ``Infeasible`` is returned without running the IPM.

    Returns:
        :class:`QpSolution` with status ``Optimal``, ``Infeasible`` or
        ``IterationLimit``.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    Q = np.zeros((n, n)) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float)).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
    if Q.shape != (n, n) or A.shape[0] != b.size or G.shape[0] != h.size:
        raise DimensionMismatch("inconsistent QP dimensions")
    me, mi = A.shape[0], G.shape[0]

    if check_feasibility:
        feas = solve_lp(LinearProgram(np.zeros(n), A, b, G, h, lo=np.full(n, -np.inf)))
        if feas.status == "Infeasible":
            return QpSolution("Infeasible", np.full(n, np.nan), np.zeros(me), np.zeros(mi),
                              np.nan, 0)

    if mi == 0:
        try:
            x, y = solve_eq_qp(Q, c, A, b)
        except SingularKkt:
            reg = 1e-10 * max(1.0, np.max(np.abs(Q)) if Q.size else 1.0)
            K = np.block([[Q + reg * np.eye(n), A.T], [A, -reg * np.eye(me)]])
            sol = np.linalg.lstsq(K, np.concatenate([-c, b]), rcond=None)[0]
            x, y = sol[:n], sol[n:]
        return QpSolution("Optimal", x, y, np.zeros(0), float(0.5 * x @ Q @ x + c @ x), 0)

    scale = max(1.0, np.max(np.abs(Q)) if Q.size else 0.0, np.max(np.abs(G)),
                np.max(np.abs(A)) if A.size else 0.0)
    reg_p, reg_d = 1e-11 * scale, 1e-11 * scale

    def kkt_solve(W, rx, ry):
        H = Q + G.T @ (W[:, None] * G) + reg_p * np.eye(n)
        K = np.block([[H, A.T], [A, -reg_d * np.eye(me)]])
        try:
            sol = np.linalg.solve(K, np.concatenate([rx, ry]))
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, np.concatenate([rx, ry]), rcond=None)[0]
        return sol[:n], sol[n:]

    # initial point from the regularized equality problem
    x, y = kkt_solve(np.ones(mi), -c + G.T @ h, b)
    s = h - G @ x
    z = np.ones(mi)
    alpha_p = -np.min(s)
    s = s + max(0.0, alpha_p) + 1.0 if alpha_p >= 0 else s
    z = z * max(1.0, np.sqrt(np.mean(s ** 2)) / 10)

    nc, nb, nh = 1 + np.max(np.abs(c)), 1 + (np.max(np.abs(b)) if me else 0), 1 + np.max(np.abs(h))
    best = None
    for it in range(1, max_iter + 1):
        rx = Q @ x + c + A.T @ y + G.T @ z
        ry = A @ x - b
        rz = G @ x + s - h
        mu = s @ z / mi
        pobj = 0.5 * x @ Q @ x + c @ x
        res = max(np.max(np.abs(rx)) / nc, (np.max(np.abs(ry)) if me else 0.0) / nb,
                  np.max(np.abs(rz)) / nh)
        if res <= tol and mu <= tol * (1 + abs(pobj)):
            return QpSolution("Optimal", x, y, z, float(pobj), it)
        if best is None or max(res, mu) < best[0]:
            best = (max(res, mu), x.copy(), y.copy(), z.copy())
        W = z / s

        def direction(rsz):
            # S dz + Z ds = -rsz, G dx + ds = -rz
            t = (z * rz - rsz) / s
            dx, dy = kkt_solve(W, -rx - G.T @ t, -ry)
            dz = W * (G @ dx) + t
            ds = -rz - G @ dx
            return dx, dy, dz, ds

        def step(v, dv):
            neg = dv < 0
            return min(1.0, np.min(-v[neg] / dv[neg])) if np.any(neg) else 1.0

        dx, dy, dz, ds = direction(s * z)
        a_aff = min(step(s, ds), step(z, dz))
        mu_aff = (s + a_aff * ds) @ (z + a_aff * dz) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, dz, ds = direction(s * z + ds * dz - sigma * mu)
        a = 0.99 * min(step(s, ds), step(z, dz))
        x, y, z, s = x + a * dx, y + a * dy, z + a * dz, s + a * ds
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise NumericalFailure("interior-point iterates diverged")
        if np.max(np.abs(x)) > 1e12 or np.max(z) > 1e14:
            return QpSolution("Infeasible", x, y, z, np.nan, it)
    _, x, y, z = best
    return QpSolution("IterationLimit", x, y, z, float(0.5 * x @ Q @ x + c @ x), max_iter)
