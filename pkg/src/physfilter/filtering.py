"""Physics-based filtering of recorded output data.

The filter perturbs the recorded outputs ``y_d`` as little as possible so
that, for every admissible input sequence and initial window, the Hankel
predictor built from the perturbed data ``y~`` satisfies an affine rule.

Everything is expressed through the Schur-form predictor system
``M(y~) s = P z`` where ``s`` stacks ``(sigma, g, kappa)`` of every segment
and ``z = (y_init, u_init, u_pred)``. ``M`` is affine in ``y~`` (Hankel
blocks are linear views of the data) and ``P`` is a constant 0/1 matrix.
Rule row ``r`` reads ``c_r(y~)' s <= h_r`` with ``c_r`` linear in ``y~``.
Its worst case over the polytope ``Z = {H_aug z <= h_aug}`` is the LP

    max_z  w_r' z,    w_r = P' M^{-T} c_r,

whose dual ``min h_aug' nu  s.t.  H_aug' nu = w_r, nu >= 0`` yields the
robust counterpart with multipliers ``lambda_r = M^{-T} c_r``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (DimensionMismatch, SingularMatrix, SplitRequiresEqualDepths,
                     UnboundedInnerProblem)
from .predictor import Predictor, PredictionRequest, PredictorConfig
from .rules import PhysicalRule
from .serialize import dumps
from .solvers.bilinear import (MCCORMICK, BilinearProgram, BilinearTerms, SolverOptions,
                               solve_bilinear)
from .solvers.linalg import GeneralFactor
from .solvers.lp import LinearProgram, solve_lp
from .solvers.qp import solve_qp
from .trajectory import HankelSystem, Trajectory, trajectory_to_csv

NORMS = ("L2", "L1")
OPTIMAL, LOCAL, INFEASIBLE, ITERLIMIT = "Optimal", "LocalOptimum", "Infeasible", "IterationLimit"


@dataclass(frozen=True)
class FilterProblem:
    """Filter instance; the raw outputs ``y_d`` are ``H.y_data``."""

    H: HankelSystem
    cfg: PredictorConfig
    rule: PhysicalRule
    segments: int = 1
    norm: str = "L2"

    def __post_init__(self):
        if (self.H.t_init, self.H.n_h) != (self.cfg.t_init, self.cfg.n_h):
            raise DimensionMismatch("Hankel depths do not match the predictor config")
        if self.segments < 1:
            raise ValueError("segments must be at least 1")
        if self.segments > 1 and self.H.t_init != self.H.n_h:
            raise SplitRequiresEqualDepths("horizon splitting needs t_init == n_h")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        self.rule.check_dimensions(self.H, self.segments)

    @property
    def y_data(self) -> np.ndarray:
        return self.H.y_data


# -- structure of M(y~), P and c_r(y~) --------------------------------------------

@dataclass(frozen=True)
class SingleLevelProblem:
    """The lower level of the filter written as ``M(y~) s = P z``.

    ``M(y~) = M0 + sum_e alpha_e * y~[var_e] * E(row_e, col_e)`` and the rule
    rows are ``H_Y y_pred <= h_Y`` with ``y_pred`` segment ``j`` equal to
    ``Hy_pred(y~) g_j``. ``pred_*`` arrays describe ``Hy_pred`` entries placed
    at their ``g`` position in ``s``: entry ``(pred_yrow, pred_spos)`` of the
    map ``s -> y_pred`` equals ``y~[pred_var]``.
    """

    problem: FilterProblem
    M0: np.ndarray
    dep_row: np.ndarray
    dep_col: np.ndarray
    dep_var: np.ndarray
    dep_coef: np.ndarray
    P: np.ndarray
    pred_yrow: np.ndarray
    pred_spos: np.ndarray
    pred_var: np.ndarray
    block: int
    n_sigma: int
    n_cols: int

    @property
    def n_data(self) -> int:
        return self.problem.H.y_data.size

    @property
    def n_s(self) -> int:
        return self.M0.shape[0]

    @property
    def n_z(self) -> int:
        return self.P.shape[1]

    @property
    def n_bilinear_entries(self) -> int:
        return self.dep_row.size

    def matrix(self, y) -> np.ndarray:
        M = self.M0.copy()
        np.add.at(M, (self.dep_row, self.dep_col), self.dep_coef * y[self.dep_var])
        return M

    def rhs(self, z) -> np.ndarray:
        return self.P @ z

    def output_map(self, y) -> np.ndarray:
        """Matrix ``Phi(y~)`` with ``y_pred = Phi s``."""
        Phi = np.zeros((self.problem.rule.Y.dim, self.n_s))
        np.add.at(Phi, (self.pred_yrow, self.pred_spos), y[self.pred_var])
        return Phi

    def rule_vectors(self, y) -> np.ndarray:
        """Columns ``c_r(y~) = Phi(y~)' H_Y[r]``, shape (n_s, R)."""
        return self.output_map(y).T @ self.problem.rule.Y.H.T

    def to_bilinear(self, z) -> BilinearProgram:
        """Non-robust single-level program for one fixed ``z``.

        Variables ``(y~, s)``; equality rows ``M(y~) s = P z`` and rule rows
        ``H_Y Phi(y~) s <= h_Y`` carry all products ``y~ * s``.
        """
        p = self.problem
        N, ns = self.n_data, self.n_s
        n = N + ns
        yd = p.y_data.ravel()
        A_eq = np.zeros((ns, n))
        A_eq[:, N:] = self.M0
        eq_terms = BilinearTerms(self.dep_var, N + self.dep_col, self.dep_coef, self.dep_row)
        HY = p.rule.Y.H
        R = HY.shape[0]
        rows = np.repeat(np.arange(R), self.pred_var.size)
        in_terms = BilinearTerms(np.tile(self.pred_var, R), np.tile(N + self.pred_spos, R),
                                 HY[:, self.pred_yrow].ravel(), rows)
        Q = np.zeros((n, n))
        Q[:N, :N] = 2 * np.eye(N)
        c = np.concatenate([-2 * yd, np.zeros(ns)])
        return BilinearProgram(c, A_eq, self.rhs(z), np.zeros((R, n)), p.rule.Y.h,
                               eq_terms, in_terms, Q=Q, c0=float(yd @ yd),
                               blocks=np.concatenate([np.zeros(N, int), np.ones(ns, int)]),
                               names={"y": slice(0, N), "s": slice(N, n)})


def _hankel_entries(T, L, n_y, rows):
    """(row, col, var) of the output Hankel entries for the block rows ``rows``."""
    n_cols = T - L + 1
    i, c, j = np.meshgrid(np.asarray(rows), np.arange(n_y), np.arange(n_cols), indexing="ij")
    i, c, j = i.ravel(), c.ravel(), j.ravel()
    return (i - rows[0]) * n_y + c, j, (i + j) * n_y + c


def assemble_single_level(p: FilterProblem) -> SingleLevelProblem:
    """Schur-form lower level with explicit dependence on the output data.

    With the data frozen the system is exactly the predictor's Schur KKT
    system (``k = 1``) or its block lower-triangular split version.
    """
    H, cfg, k = p.H, p.cfg, p.segments
    n_y, n_u, t_init, n_h, L = H.n_y, H.n_u, H.t_init, H.n_h, H.L
    ns, nc, nk = t_init * n_y, H.n_cols, L * n_u
    b = ns + nc + nk
    M1 = np.zeros((b, b))
    M1[:ns, :ns] = -np.eye(ns)
    M1[ns:ns + nc, ns:ns + nc] = cfg.E(nc)
    M1[ns:ns + nc, ns + nc:] = H.Hu.T
    M1[ns + nc:, ns:ns + nc] = H.Hu
    M0 = np.zeros((k * b, k * b))
    for j in range(k):
        M0[j * b:(j + 1) * b, j * b:(j + 1) * b] = M1

    ir, jc, vi = _hankel_entries(H.T, L, n_y, np.arange(t_init))
    ip, jp, vp = _hankel_entries(H.T, L, n_y, np.arange(t_init, L))
    rows, cols, var, coef = [], [], [], []
    for j in range(k):
        o = j * b
        rows += [o + ir, o + ns + jc]
        cols += [o + ns + jc, o + ir]
        var += [vi, vi]
        coef += [np.ones(ir.size), np.ones(ir.size)]
        if j > 0:
            rows.append(o + ip)
            cols.append((j - 1) * b + ns + jp)
            var.append(vp)
            coef.append(-np.ones(ip.size))

    Z = ns + t_init * n_u + k * n_h * n_u
    P = np.zeros((k * b, Z))
    P[:ns, :ns] = np.eye(ns)
    P[ns + nc:ns + nc + nk, ns:ns + nk] = np.eye(nk)
    seg = n_h * n_u
    for j in range(1, k):
        o = j * b + ns + nc
        start = ns + t_init * n_u + (j - 1) * seg
        P[o:o + 2 * seg, start:start + 2 * seg] = np.eye(2 * seg)

    nhy = n_h * n_y
    pred_yrow = np.concatenate([j * nhy + ip for j in range(k)])
    pred_spos = np.concatenate([j * b + ns + jp for j in range(k)])
    pred_var = np.tile(vp, k)
    return SingleLevelProblem(p, M0, np.concatenate(rows), np.concatenate(cols),
                              np.concatenate(var), np.concatenate(coef), P,
                              pred_yrow, pred_spos, pred_var, b, ns, nc)


def _aug_polytope(rule: PhysicalRule):
    sets = (rule.Y_init, rule.U_init, rule.U)
    for name, S in zip(("Y_init", "U_init", "U"), sets):
        if not S.has_box:
            raise UnboundedInnerProblem(
                f"rule set {name} needs box bounds for a bounded worst case")
    dims = [S.dim for S in sets]
    m = [S.n_rows for S in sets]
    H_aug = np.zeros((sum(m), sum(dims)))
    r = c = 0
    for S in sets:
        H_aug[r:r + S.n_rows, c:c + S.dim] = S.H
        r, c = r + S.n_rows, c + S.dim
    return H_aug, np.concatenate([S.h for S in sets])


# -- robust counterpart as a bilinear program --------------------------------------

@dataclass(frozen=True)
class RobustCounterpart:
    """Bilinear program of the filter plus the variable layout."""

    program: BilinearProgram
    structure: SingleLevelProblem
    H_aug: np.ndarray
    h_aug: np.ndarray
    y_slice: slice
    lam_slices: tuple
    nu_slices: tuple

    def split(self, x):
        return (x[self.y_slice], [x[s] for s in self.lam_slices], [x[s] for s in self.nu_slices])


def assemble_robust_counterpart(p: FilterProblem, opts: SolverOptions | None = None,
                                box_radius: float | None = None,
                                dual_bound: float | None = None) -> RobustCounterpart:
    """One dual pair ``(lambda_r, nu_r)`` per rule row.

    Constraints: ``M(y~)' lambda_r = c_r(y~)`` (bilinear in ``y~`` and
    ``lambda_r``), ``P' lambda_r = H_aug' nu_r``, ``h_aug' nu_r <= h_r`` and
    ``nu_r >= 0``. Variable boxes for McCormick bounding are
    ``y_d +- box_radius`` for the data and ``+-dual_bound`` for the duals;
    unset values fall back to ``opts.mccormick`` and then to 1 and 100.

    Raises:
        UnboundedInnerProblem: If a robustified set carries no box.
    """
    opts = opts or SolverOptions()
    st = assemble_single_level(p)
    H_aug, h_aug = _aug_polytope(p.rule)
    HY, hY = p.rule.Y.H, p.rule.Y.h
    R = HY.shape[0]
    N, ns, Z, m = st.n_data, st.n_s, st.n_z, H_aug.shape[0]
    l1 = p.norm == "L1"
    n_e = N if l1 else 0
    lam0 = N + n_e
    nu0 = lam0 + R * ns
    n = nu0 + R * m
    yd = p.y_data.ravel()

    A_eq = np.zeros((R * (ns + Z), n))
    b_eq = np.zeros(R * (ns + Z))
    A_in = [np.zeros((R, n))]
    b_in = [hY.astype(float)]
    ti, tj, tc, tr = [], [], [], []
    for r in range(R):
        rs = r * (ns + Z)
        lam = slice(lam0 + r * ns, lam0 + (r + 1) * ns)
        nu = slice(nu0 + r * m, nu0 + (r + 1) * m)
        # M0' lambda + sum terms - c_r(y) = 0
        A_eq[rs:rs + ns, lam] = st.M0.T
        np.add.at(A_eq, (rs + st.pred_spos, st.pred_var), -HY[r, st.pred_yrow])
        ti.append(st.dep_var)
        tj.append(lam.start + st.dep_row)
        tc.append(st.dep_coef)
        tr.append(rs + st.dep_col)
        # -P' lambda + H_aug' nu = 0
        A_eq[rs + ns:rs + ns + Z, lam] = -st.P.T
        A_eq[rs + ns:rs + ns + Z, nu] = H_aug.T
        A_in[0][r, nu] = h_aug
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    rad = next(v for v in (box_radius, opts.mccormick.box_radius, 1.0) if v is not None)
    db = next(v for v in (dual_bound, opts.mccormick.dual_bound, 100.0) if v is not None)
    lo[:N], hi[:N] = yd - rad, yd + rad
    lo[lam0:nu0], hi[lam0:nu0] = -db, db
    lo[nu0:], hi[nu0:] = 0.0, db
    c = np.zeros(n)
    Q = None
    c0 = 0.0
    if l1:
        lo[N:N + N], hi[N:N + N] = 0.0, rad
        c[N:N + N] = 1.0
        E = np.zeros((2 * N, n))
        E[:N, :N], E[:N, N:2 * N] = np.eye(N), -np.eye(N)
        E[N:, :N], E[N:, N:2 * N] = -np.eye(N), -np.eye(N)
        A_in.append(E)
        b_in.append(np.concatenate([yd, -yd]))
    else:
        Q = np.zeros((n, n))
        Q[:N, :N] = 2 * np.eye(N)
        c[:N] = -2 * yd
        c0 = float(yd @ yd)
    blocks = np.ones(n, dtype=int)
    blocks[:N] = 0
    if l1:
        blocks[N:2 * N] = 0
    terms = BilinearTerms(np.concatenate(ti), np.concatenate(tj), np.concatenate(tc),
                          np.concatenate(tr))
    bp = BilinearProgram(c, A_eq, b_eq, np.vstack(A_in), np.concatenate(b_in), terms,
                         lo=lo, hi=hi, Q=Q, c0=c0, blocks=blocks,
                         names={"y": slice(0, N), "lambda": slice(lam0, nu0),
                                "nu": slice(nu0, n)})
    lam_sl = tuple(slice(lam0 + r * ns, lam0 + (r + 1) * ns) for r in range(R))
    nu_sl = tuple(slice(nu0 + r * m, nu0 + (r + 1) * m) for r in range(R))
    return RobustCounterpart(bp, st, H_aug, h_aug, slice(0, N), lam_sl, nu_sl)


def counterpart_residual(rc: RobustCounterpart, y, lams, nus) -> float:
    """Largest violation of the counterpart constraints at ``(y~, lambda, nu)``."""
    st = rc.structure
    M = st.matrix(y)
    C = st.rule_vectors(y)
    hY = st.problem.rule.Y.h
    worst = 0.0
    for r, (lam, nu) in enumerate(zip(lams, nus)):
        worst = max(worst, np.max(np.abs(M.T @ lam - C[:, r])),
                    np.max(np.abs(st.P.T @ lam - rc.H_aug.T @ nu)),
                    float(rc.h_aug @ nu - hY[r]), float(np.max(-nu, initial=0.0)))
    return float(worst)


# -- evaluation at fixed data --------------------------------------------------------

@dataclass
class _Eval:
    y: np.ndarray
    S: np.ndarray  # M^{-1} P, columns s_l
    lam: np.ndarray  # M^{-T} C, columns lambda_r
    W: np.ndarray  # P' lam, columns w_r
    bound: np.ndarray  # worst-case value of each rule row
    nu: np.ndarray  # LP duals, shape (R, m)
    viol: np.ndarray  # bound - h_r


class _Engine:
    """Exact solves at fixed data and the derivative of ``w_r`` in the data."""

    def __init__(self, p: FilterProblem):
        self.p = p
        self.st = assemble_single_level(p)
        self.H_aug, self.h_aug = _aug_polytope(p.rule)
        st = self.st
        E = st.dep_row.size
        self.D_m = sparse.csr_matrix((st.dep_coef, (st.dep_var, np.arange(E))),
                                     shape=(st.n_data, E))
        Ep = st.pred_var.size
        self.D_c = sparse.csr_matrix((np.ones(Ep), (st.pred_var, np.arange(Ep))),
                                     shape=(st.n_data, Ep))
        self.HY = p.rule.Y.H
        self.hY = p.rule.Y.h

    def evaluate(self, y) -> _Eval:
        st = self.st
        F = GeneralFactor(st.matrix(y))
        S = F.solve(st.P)
        C = st.rule_vectors(y)
        lam = F.solve(C, trans=1)
        W = st.P.T @ lam
        R = W.shape[1]
        bound = np.empty(R)
        nu = np.zeros((R, self.H_aug.shape[0]))
        for r in range(R):
            sol = solve_lp(LinearProgram(W[:, r], A_ineq=self.H_aug, b_ineq=self.h_aug,
                                         maximize=True))
            if sol.status != "Optimal":
                raise UnboundedInnerProblem(f"worst case of rule row {r} is {sol.status}")
            bound[r] = sol.objective
            nu[r] = np.maximum(sol.duals_ineq, 0.0)
        return _Eval(y, S, lam, W, bound, nu, bound - self.hY)

    def jacobians(self, ev: _Eval) -> np.ndarray:
        """``J[r]`` (Z x N): derivative of ``w_r`` with respect to the data."""
        st = self.st
        R, Z = ev.lam.shape[1], ev.S.shape[1]
        # d(c_r' s_l): c_r[spos] = sum HY[r, yrow] * y[var]
        vals_c = self.HY[:, st.pred_yrow].T[:, :, None] * ev.S[st.pred_spos][:, None, :]
        Gc = self.D_c @ vals_c.reshape(vals_c.shape[0], R * Z)
        # d(lambda_r' M s_l)
        vals_m = ev.lam[st.dep_row][:, :, None] * ev.S[st.dep_col][:, None, :]
        Gm = self.D_m @ vals_m.reshape(vals_m.shape[0], R * Z)
        G = np.asarray(Gc - Gm).reshape(st.n_data, R, Z)
        return np.transpose(G, (1, 2, 0))


@dataclass
class DualCertificate:
    """Dual route at fixed data: ``bound[r] = h_aug' nu_r`` with ``M' lambda_r = c_r``."""

    bound: np.ndarray
    lam: np.ndarray  # (R, n_s)
    nu: np.ndarray  # (R, m)
    H_aug: np.ndarray
    h_aug: np.ndarray


def dual_certificate(p: FilterProblem, y=None) -> DualCertificate:
    """Worst-case bound of every rule row, certified by LP duality, at data ``y``.

    ``lambda_r`` comes from the adjoint solve and ``nu_r`` from the dual of
    the inner maximization. The returned bound is the dual objective
    ``h_aug' nu_r``; weak duality makes it an upper bound on the rule row
    for every admissible request.
    """
    eng = _Engine(p)
    y = p.y_data.ravel() if y is None else np.asarray(y, dtype=float).ravel()
    ev = eng.evaluate(y)
    return DualCertificate(ev.nu @ eng.h_aug, ev.lam.T.copy(), ev.nu.copy(), eng.H_aug,
                           eng.h_aug)


# -- verification -------------------------------------------------------------------

@dataclass
class ConsistencyReport:
    n_samples: int
    sampled_worst: float
    certified: np.ndarray
    tol: float = 1e-6

    @property
    def certified_max(self) -> float:
        return float(np.max(self.certified)) if self.certified.size else -np.inf

    @property
    def passed(self) -> bool:
        return self.certified_max <= self.tol

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "sampled_worst": float(self.sampled_worst),
                "certified": [float(v) for v in self.certified],
                "certified_max": self.certified_max, "tol": self.tol, "passed": self.passed}


def _draw(S, n, rng):
    if S.has_box and np.any(S.hi > S.lo):
        return S.sample(n, rng)
    return np.zeros((n, S.dim)) if not S.has_box else np.tile(S.lo, (n, 1))


def verify_consistency(H: HankelSystem, cfg: PredictorConfig, rule: PhysicalRule,
                       segments: int = 1, n_samples: int = 200, seed=0,
                       tol: float = 1e-6) -> ConsistencyReport:
    """Check the rule on the predictor built from ``H``.

    The sampling check draws inputs (and initial windows) from the rule sets
    and evaluates the predicted outputs. The exact check maximizes each rule
    row over the whole polytope by LP on the linear prediction map.
    """
    rule.check_dimensions(H, segments)
    pred = Predictor(H, cfg, warn_pe=False)
    F = pred.prediction_map(segments)
    HY, hY = rule.Y.H, rule.Y.h
    H_aug, h_aug = _aug_polytope(rule)
    certified = np.empty(HY.shape[0])
    for r in range(HY.shape[0]):
        sol = solve_lp(LinearProgram(F.T @ HY[r], A_ineq=H_aug, b_ineq=h_aug, maximize=True))
        if sol.status != "Optimal":
            raise UnboundedInnerProblem(f"worst case of rule row {r} is {sol.status}")
        certified[r] = sol.objective - hY[r]
    rng = np.random.default_rng(seed)
    worst = -np.inf
    if n_samples > 0:
        zs = np.hstack([_draw(rule.Y_init, n_samples, rng), _draw(rule.U_init, n_samples, rng),
                        _draw(rule.U, n_samples, rng)])
        ny0, nu0 = rule.Y_init.dim, rule.U_init.dim
        for z in zs:
            req = PredictionRequest(z[ny0:ny0 + nu0], z[:ny0], z[ny0 + nu0:])
            if segments == 1:
                y = pred.solve(req).y_pred
            else:
                y = np.concatenate([res.y_pred for res in pred.solve_split(req)])
            worst = max(worst, float(np.max(HY @ y - hY)))
    return ConsistencyReport(n_samples, worst, certified, tol)


# -- the solver -----------------------------------------------------------------------

@dataclass
class FilterResult:
    y_filtered: np.ndarray
    objective: float
    status: str
    certificate: dict
    verification: ConsistencyReport
    iterations: int = 0
    method: str = "AltMin"
    penalty: float = np.nan
    elapsed: float = field(default=0.0, compare=False)

    def summary(self) -> dict:
        return {"status": self.status, "objective": float(self.objective),
                "iterations": self.iterations, "method": self.method,
                "penalty": None if not np.isfinite(self.penalty) else float(self.penalty),
                "max_abs_change": float(self.certificate.get("max_abs_change", 0.0)),
                "verification": self.verification.to_dict(),
                "certificate": {k: v for k, v in self.certificate.items()
                                if k in ("bound", "nu", "counterpart_residual")}}

    def summary_json(self) -> str:
        return dumps(self.summary())

    def trajectory(self, raw: Trajectory) -> Trajectory:
        return raw.with_outputs(self.y_filtered)

    def trajectory_csv(self, raw: Trajectory) -> str:
        return trajectory_to_csv(self.trajectory(raw))


def _perturbation(norm, d) -> float:
    return float(d @ d) if norm == "L2" else float(np.sum(np.abs(d)))


def _certificate(engine: _Engine, ev: _Eval, y) -> dict:
    st = engine.st
    M = st.matrix(y)
    C = st.rule_vectors(y)
    res = 0.0
    for r in range(ev.lam.shape[1]):
        res = max(res, np.max(np.abs(M.T @ ev.lam[:, r] - C[:, r])),
                  np.max(np.abs(st.P.T @ ev.lam[:, r] - engine.H_aug.T @ ev.nu[r])))
    return {"lambda": ev.lam.T.tolist(), "nu": ev.nu.tolist(), "bound": ev.bound.tolist(),
            "counterpart_residual": float(res)}


def solve_filter(p: FilterProblem, opts: SolverOptions | None = None,
                 method: str = "AltMin", n_samples: int = 200, seed=0) -> FilterResult:
    """Filter the recorded outputs of ``p``.

    ``method="AltMin"`` alternates exact linear solves at fixed data (the
    predictor system, its adjoint for the multipliers ``lambda_r`` and the
    worst-case LP for ``nu_r``) with a penalized least-squares update of the
    data on the linearized counterpart, inside a trust region. The penalty
    starts at ``opts.penalty_init`` and grows by ``opts.penalty_growth``
    whenever a round ends infeasible. ``method="McCormickBB"`` solves the
    bilinear counterpart globally (tiny instances only).

    Every returned point is re-verified by the exact LP check; a local
    solution failing it is reported as ``IterationLimit``.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    if method == MCCORMICK:
        res = _solve_mccormick(p, opts)
    elif method == "AltMin":
        res = _solve_altmin(p, opts)
    else:
        raise ValueError(f"unknown filter method {method!r}")
    y = res.y_filtered
    report = verify_consistency(p.H.with_outputs(y), p.cfg, p.rule, p.segments, n_samples,
                                seed, tol=opts.tol_residual)
    res.verification = report
    if res.status in (OPTIMAL, LOCAL) and not report.passed:
        res.status = ITERLIMIT
    res.elapsed = time.perf_counter() - t0
    return res


def _solve_mccormick(p: FilterProblem, opts: SolverOptions) -> FilterResult:
    mc = opts.mccormick
    if not mc.enabled:
        raise ValueError("the exact solver is disabled in the options")
    yd = p.y_data.ravel()
    # a local solution gives an incumbent; any better point lies within its
    # perturbation norm of y_d, which makes that norm a valid data box
    local = _solve_altmin(p, opts)
    if local.status == OPTIMAL:
        local.method = MCCORMICK
        local.certificate["gap"] = 0.0
        return local
    f_loc = local.objective if local.status == LOCAL else np.inf
    rad = mc.box_radius
    if rad is None:
        rad = (np.sqrt(f_loc) if p.norm == "L2" else f_loc) * (1 + 1e-6) + 1e-9
        if not np.isfinite(rad):
            rad = 1.0
    db = mc.dual_bound
    if db is None:
        lam = np.abs(np.asarray(local.certificate.get("lambda", [[0.0]])))
        nu = np.abs(np.asarray(local.certificate.get("nu", [[0.0]])))
        db = 2.0 * max(1.0, float(lam.max(initial=0.0)), float(nu.max(initial=0.0)))
    rc = assemble_robust_counterpart(p, opts, rad, db)
    if rc.program.n_bilinear > mc.max_bilinear_terms:
        raise ValueError(f"exact solver limited to {mc.max_bilinear_terms} bilinear terms "
                         f"(instance has {rc.program.n_bilinear})")
    x0 = None
    if local.status == LOCAL:
        x0 = _pack(rc, local.y_filtered.ravel(), local.certificate, p.norm)
    sol = solve_bilinear(rc.program, MCCORMICK, opts, x0=x0)
    empty = ConsistencyReport(0, np.nan, np.zeros(0))
    if sol.x is None:
        return FilterResult(p.y_data.copy(), np.nan, sol.status, sol.certificate or {}, empty,
                            sol.nodes, MCCORMICK)
    y, lams, nus = rc.split(sol.x)
    cert = {"lambda": [v.tolist() for v in lams], "nu": [v.tolist() for v in nus],
            "counterpart_residual": counterpart_residual(rc, y, lams, nus), "gap": sol.gap,
            "box_radius": float(rad), "dual_bound": float(db)}
    d = y - yd
    cert["max_abs_change"] = float(np.max(np.abs(d)))
    return FilterResult(y.reshape(p.y_data.shape), _perturbation(p.norm, d), sol.status, cert,
                        empty, sol.nodes, MCCORMICK)


def _pack(rc: RobustCounterpart, y, cert, norm) -> np.ndarray:
    x = np.zeros(rc.program.n)
    x[rc.y_slice] = y
    if norm == "L1":
        n = y.size
        x[n:2 * n] = np.abs(y - rc.structure.problem.y_data.ravel())
    for sl, lam in zip(rc.lam_slices, cert["lambda"]):
        x[sl] = lam
    for sl, nu in zip(rc.nu_slices, cert["nu"]):
        x[sl] = nu
    return x


def _solve_altmin(p: FilterProblem, opts: SolverOptions) -> FilterResult:
    engine = _Engine(p)
    yd = p.y_data.ravel().astype(float)
    N = yd.size
    tol = opts.tol_residual
    empty = ConsistencyReport(0, np.nan, np.zeros(0))

    ev = engine.evaluate(yd)
    if np.max(ev.viol) <= tol:
        cert = _certificate(engine, ev, yd)
        cert["max_abs_change"] = 0.0
        return FilterResult(p.y_data.copy(), 0.0, OPTIMAL, cert, empty, 0, "AltMin")

    l1 = p.norm == "L1"
    R, Z = ev.W.shape[1], ev.W.shape[0]
    m = engine.H_aug.shape[0]
    H_aug, h_aug, hY = engine.H_aug, engine.h_aug, engine.hY
    margin = 1e-2 * tol
    scale = max(1.0, float(np.max(np.abs(yd))))

    def f(y):
        d = y - yd
        return 0.5 * float(d @ d) if not l1 else float(np.sum(np.abs(d)))

    def merit(e, rho):
        return f(e.y) + rho * float(np.sum(np.maximum(e.viol, 0.0)))

    rho = opts.penalty_init
    radius = 0.05 * scale
    it = 0
    best = None
    nvar = N + R * m + R + (N if l1 else 0)
    inu, it0 = N, N + R * m
    ie = it0 + R
    for outer in range(opts.max_outer):
        stalled = False
        for _ in range(opts.max_inner):
            it += 1
            y = ev.y
            J = engine.jacobians(ev)
            Q = np.zeros((nvar, nvar))
            c = np.zeros(nvar)
            Q[inu:it0, inu:it0] = 1e-9 * np.eye(R * m)
            if l1:
                Q[:N, :N] = 1e-6 * np.eye(N)
                c[ie:] = 1.0
            else:
                Q[:N, :N] = np.eye(N)
                c[:N] = y - yd
            c[it0:ie] = rho
            A = np.zeros((R * Z, nvar))
            b = np.zeros(R * Z)
            for r in range(R):
                A[r * Z:(r + 1) * Z, :N] = -J[r]
                A[r * Z:(r + 1) * Z, inu + r * m:inu + (r + 1) * m] = H_aug.T
                b[r * Z:(r + 1) * Z] = ev.W[:, r]
            G = [np.zeros((R, nvar))]
            h = [hY - margin]
            for r in range(R):
                G[0][r, inu + r * m:inu + (r + 1) * m] = h_aug
                G[0][r, it0 + r] = -1.0
            neg = np.zeros((R * m + R, nvar))
            neg[:, inu:ie] = -np.eye(R * m + R)
            G.append(neg)
            h.append(np.zeros(R * m + R))
            box = np.zeros((2 * N, nvar))
            box[:N, :N], box[N:, :N] = np.eye(N), -np.eye(N)
            G.append(box)
            h.append(np.full(2 * N, radius))
            if l1:
                E = np.zeros((2 * N, nvar))
                E[:N, :N], E[:N, ie:] = np.eye(N), -np.eye(N)
                E[N:, :N], E[N:, ie:] = -np.eye(N), -np.eye(N)
                G.append(E)
                h.append(np.concatenate([yd - y, y - yd]))
            qp = solve_qp(Q, c, A, b, np.vstack(G), np.concatenate(h))
            delta = qp.x[:N]
            t_sum = float(np.sum(np.maximum(qp.x[it0:ie], 0.0)))
            model = f(y + delta) + rho * t_sum
            phi = merit(ev, rho)
            pred = phi - model
            viol_now = float(np.sum(np.maximum(ev.viol, 0.0)))
            if pred <= opts.tol_objective * max(1.0, phi):
                stalled = True
                break
            try:
                trial = engine.evaluate(y + delta)
            except (SingularMatrix, UnboundedInnerProblem):
                radius *= 0.25
                continue
            ared = phi - merit(trial, rho)
            ratio = ared / pred
            step = float(np.max(np.abs(delta)))
            if ratio >= 0.1:
                ev = trial
                if ratio > 0.75 and step >= 0.99 * radius:
                    radius *= 2.0
            else:
                radius = 0.25 * step
            if np.max(ev.viol) <= tol and (best is None or f(ev.y) < f(best.y)):
                best = ev
            if t_sum > 0.5 * viol_now and viol_now > tol:
                rho *= opts.penalty_growth
            if radius <= 1e-14 * scale:
                stalled = True
                break
            if ratio >= 0.1 and np.max(ev.viol) <= tol and step <= 1e-9 * scale:
                stalled = True
                break
        if np.max(ev.viol) <= tol and stalled:
            break
        if np.max(ev.viol) > tol:
            rho *= opts.penalty_growth
            radius = max(radius, 1e-3 * scale)
        elif not stalled:
            continue
        if rho > 1e12:
            break
    final = ev if np.max(ev.viol) <= tol else best
    status = LOCAL
    if final is None:
        final = ev
        status = ITERLIMIT
    elif outer == opts.max_outer - 1 and not stalled:
        status = ITERLIMIT if np.max(final.viol) > tol else LOCAL
    y = final.y
    cert = _certificate(engine, final, y)
    cert["max_abs_change"] = float(np.max(np.abs(y - yd)))
    return FilterResult(y.reshape(p.y_data.shape), _perturbation(p.norm, y - yd), status, cert,
                        empty, it, "AltMin", rho)
