"""Dense two-phase simplex with dual (shadow-price) extraction.

Problems are stated as::

    min (or max)  c'x
    s.t.          A_eq x = b_eq
                  A_ineq x <= b_ineq
                  lo <= x <= hi          (entries may be +-inf)

and internally rewritten in standard form ``A w = b, w >= 0``. Pricing is
Dantzig's rule with lowest-index tie breaking; after ``10 * m`` consecutive
degenerate pivots the solver switches to Bland's rule for good.

All duals are shadow prices ``d(optimal objective) / d(rhs)`` in the sense of
the stated problem, so for a maximization a binding ``<=`` row has a
non-negative dual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, NumericalFailure

OPTIMAL, INFEASIBLE, UNBOUNDED = "Optimal", "Infeasible", "Unbounded"


def _vec(v, n, fill):
    if v is None:
        return np.full(n, fill, dtype=float)
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 1 and n != 1:
        v = np.full(n, float(v[0]))
    if v.size != n:
        raise DimensionMismatch(f"expected {n} entries, got {v.size}")
    return v


def _mat(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n))
    if A.shape[1] != n:
        raise DimensionMismatch(f"constraint matrix has {A.shape[1]} columns, expected {n}")
    return A


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = _mat(self.A_eq, n)
        self.b_eq = _vec(self.b_eq, self.A_eq.shape[0], 0.0) if self.A_eq.shape[0] else np.zeros(0)
        self.A_ineq = _mat(self.A_ineq, n)
        self.b_ineq = (_vec(self.b_ineq, self.A_ineq.shape[0], 0.0)
                       if self.A_ineq.shape[0] else np.zeros(0))
        self.lo = _vec(self.lo, n, -np.inf)
        self.hi = _vec(self.hi, n, np.inf)
        if np.any(self.lo > self.hi):
            raise DimensionMismatch("lower bound above upper bound")
        if np.any(self.lo == np.inf) or np.any(self.hi == -np.inf):
            raise DimensionMismatch("bounds must not exclude every real value")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    duals_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_lo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_hi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ray: np.ndarray | None = None
    farkas_eq: np.ndarray | None = None
    farkas_ineq: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Standard:
    """Bookkeeping for the map between the user LP and standard form."""

    def __init__(self, lp: LinearProgram):
        n = lp.n
        cols = []  # (var index, sign) per structural column
        x0 = np.zeros(n)
        ub_rows = []  # (var, column, width) for doubly bounded vars
        for i in range(n):
            lo, hi = lp.lo[i], lp.hi[i]
            if np.isfinite(lo):
                x0[i] = lo
                cols.append((i, 1.0))
                if np.isfinite(hi):
                    ub_rows.append((i, len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                x0[i] = hi
                cols.append((i, -1.0))
            else:
                cols.append((i, 1.0))
                cols.append((i, -1.0))
        nv = len(cols)
        T = np.zeros((n, nv))
        for k, (i, s) in enumerate(cols):
            T[i, k] = s
        m_eq, m_in, m_ub = lp.A_eq.shape[0], lp.A_ineq.shape[0], len(ub_rows)
        m = m_eq + m_in + m_ub
        n_slack = m_in + m_ub
        A = np.zeros((m, nv + n_slack))
        b = np.zeros(m)
        A[:m_eq, :nv] = lp.A_eq @ T
        b[:m_eq] = lp.b_eq - lp.A_eq @ x0
        A[m_eq:m_eq + m_in, :nv] = lp.A_ineq @ T
        b[m_eq:m_eq + m_in] = lp.b_ineq - lp.A_ineq @ x0
        for k, (i, col, width) in enumerate(ub_rows):
            A[m_eq + m_in + k, col] = 1.0
            b[m_eq + m_in + k] = width
        A[m_eq:, nv:] = np.eye(n_slack)
        sign = np.where(b < 0, -1.0, 1.0)
        A *= sign[:, None]
        b *= sign
        scale = np.max(np.abs(A), axis=1)
        scale[scale == 0] = 1.0
        A /= scale[:, None]
        b /= scale
        direction = -1.0 if lp.maximize else 1.0
        c = np.concatenate([T.T @ (direction * lp.c), np.zeros(n_slack)])
        self.lp, self.T, self.x0 = lp, T, x0
        self.A, self.b, self.c = A, b, c
        self.row_factor = sign / scale  # d(std rhs)/d(user rhs) per row
        self.ub_rows = ub_rows
        self.m_eq, self.m_in, self.m_ub = m_eq, m_in, m_ub
        self.nv = nv
        self.direction = direction

    def x_of(self, w):
        return self.x0 + self.T @ w[: self.nv]


class _Tableau:
    def __init__(self, A, b, basis, tol):
        self.A = A.copy()
        self.b = b.copy()
        self.basis = list(basis)
        self.tol = tol

    def pivot(self, r, j):
        A, b = self.A, self.b
        p = A[r, j]
        A[r] /= p
        b[r] /= p
        col = A[:, j].copy()
        col[r] = 0.0
        nz = np.nonzero(np.abs(col) > 0)[0]
        if nz.size:
            A[nz] -= np.outer(col[nz], A[r])
            b[nz] -= col[nz] * b[r]
        A[r, j] = 1.0
        self.basis[r] = j


def _run(tab: _Tableau, c, allowed, max_iter, counter):
    """Minimize c'w over the current tableau. Returns (status, entering column)."""
    m = len(tab.basis)
    tol = tab.tol
    bland = False
    degenerate = 0
    for _ in range(max_iter):
        cb = c[tab.basis]
        d = c - cb @ tab.A
        d[~allowed] = 0.0
        d[tab.basis] = 0.0
        cand = np.nonzero(d < -tol)[0]
        if cand.size == 0:
            return OPTIMAL, None
        j = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
        col = tab.A[:, j]
        pos = np.nonzero(col > tol)[0]
        if pos.size == 0:
            return UNBOUNDED, j
        ratios = tab.b[pos] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: tab.basis[i]))
        if best <= tol:
            degenerate += 1
            if degenerate >= 10 * max(m, 1):
                bland = True
        else:
            degenerate = 0
        tab.pivot(r, j)
        counter[0] += 1
    raise NumericalFailure("simplex iteration limit reached")


def solve_lp(lp: LinearProgram, tol: float = 1e-9, max_iter: int | None = None) -> LpSolution:
    """Solve a dense LP by the two-phase simplex method.

    Returns an :class:`LpSolution` whose status is ``Optimal``,
    ``Infeasible`` (with a Farkas certificate in ``farkas_eq`` /
    ``farkas_ineq``) or ``Unbounded`` (with an improving primal ray in
    ``ray``).

    The Farkas pair ``(y_eq, y_in)`` has ``y_in <= 0`` and
    ``y_eq'b_eq + y_in'b_ineq > 0``; for variables bounded below by zero
    the combination ``y_eq'A_eq + y_in'A_ineq`` is also ``<= 0``, which
    rules out every feasible point.

    Raises:
        NumericalFailure: If the iteration limit is reached.
    """
    std = _Standard(lp)
    A, b = std.A, std.b
    m, nw = A.shape
    max_iter = max_iter or 50 * (m + nw + 10)
    counter = [0]

    if m == 0:
        # only sign constraints: optimal at w = 0 unless some cost is negative
        neg = np.nonzero(std.c < -tol)[0]
        if neg.size:
            ray_w = np.zeros(nw)
            ray_w[neg[0]] = 1.0
            return LpSolution(UNBOUNDED, ray=std.T @ ray_w[: std.nv])
        x = std.x_of(np.zeros(nw))
        return _finish(std, x, np.zeros(0), 0)

    # phase 1 with one artificial per row
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(nw), np.ones(m)])
    tab = _Tableau(A1, b, range(nw, nw + m), tol)
    allowed = np.ones(nw + m, dtype=bool)
    _run(tab, c1, allowed, max_iter, counter)
    infeas = float(np.sum(tab.b[np.array(tab.basis) >= nw]))
    if infeas > 1e3 * tol * (1.0 + np.max(np.abs(b))):
        y = _duals(A1, c1, tab.basis)
        return _infeasible(std, y, counter[0])

    # drive zero-level artificials out of the basis; drop redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] >= nw:
            row = tab.A[r, :nw]
            nz = np.nonzero(np.abs(row) > 1e-9)[0]
            if nz.size:
                tab.pivot(r, int(nz[np.argmax(np.abs(row[nz]))]))
            else:
                keep[r] = False
    rows = np.nonzero(keep)[0]
    tab2 = _Tableau(tab.A[rows][:, :nw], tab.b[rows], [tab.basis[r] for r in rows], tol)
    allowed = np.ones(nw, dtype=bool)
    status, j = _run(tab2, std.c, allowed, max_iter, counter)
    if status == UNBOUNDED:
        ray_w = np.zeros(nw)
        ray_w[j] = 1.0
        for r, bv in enumerate(tab2.basis):
            ray_w[bv] = -tab2.A[r, j]
        return LpSolution(UNBOUNDED, ray=std.T @ ray_w[: std.nv], iterations=counter[0])

    # recompute the vertex and duals from the original columns for accuracy
    basis = tab2.basis
    B = A[np.ix_(rows, basis)]
    try:
        wB = np.linalg.solve(B, b[rows])
        y_rows = np.linalg.solve(B.T, std.c[basis])
    except np.linalg.LinAlgError:
        raise NumericalFailure("singular final basis") from None
    w = np.zeros(nw)
    w[basis] = np.maximum(wB, 0.0)
    y = np.zeros(m)
    y[rows] = y_rows
    return _finish(std, std.x_of(w), y, counter[0])


def _duals(A, c, basis):
    B = A[:, basis]
    return np.linalg.lstsq(B.T, c[basis], rcond=None)[0]


def _finish(std: _Standard, x, y_std, iterations) -> LpSolution:
    lp = std.lp
    # shadow prices in the user's sense: d obj / d rhs
    y_user = std.direction * y_std * std.row_factor if y_std.size else y_std
    m_eq, m_in = std.m_eq, std.m_in
    duals_eq = y_user[:m_eq] if y_user.size else np.zeros(0)
    duals_ineq = y_user[m_eq:m_eq + m_in] if y_user.size else np.zeros(0)
    duals_hi = np.zeros(lp.n)
    for k, (i, _, _) in enumerate(std.ub_rows):
        duals_hi[i] = y_user[m_eq + m_in + k]
    reduced = lp.c - lp.A_eq.T @ duals_eq - lp.A_ineq.T @ duals_ineq
    duals_lo = np.zeros(lp.n)
    for i in range(lp.n):
        lo_f, hi_f = np.isfinite(lp.lo[i]), np.isfinite(lp.hi[i])
        if lo_f:
            duals_lo[i] = reduced[i] - duals_hi[i]
        elif hi_f:
            duals_hi[i] = reduced[i]
    return LpSolution(OPTIMAL, x=x, objective=float(lp.c @ x), duals_eq=duals_eq,
                      duals_ineq=duals_ineq, duals_lo=duals_lo, duals_hi=duals_hi,
                      iterations=iterations)


def _infeasible(std: _Standard, y_std, iterations) -> LpSolution:
    # phase-1 duals give y with y'A <= 0 on standard columns and y'b > 0
    y_user = y_std * std.row_factor
    return LpSolution(INFEASIBLE, farkas_eq=y_user[: std.m_eq],
                      farkas_ineq=y_user[std.m_eq:std.m_eq + std.m_in], iterations=iterations)
