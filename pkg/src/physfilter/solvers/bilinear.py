"""Bilinear programs: normal form, augmented-Lagrangian alternation and
McCormick spatial branch-and-bound."""

from __future__ import annotations

import heapq
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import BoxMissing, ConfigError, DimensionMismatch
from .lp import LinearProgram, solve_lp
from .qp import solve_qp

ALTMIN, MCCORMICK = "AltMin", "McCormickBB"
OPTIMAL, LOCAL, INFEASIBLE, ITERLIMIT = "Optimal", "LocalOptimum", "Infeasible", "IterationLimit"


@dataclass
class McCormickOptions:
    """Settings of the exact branch-and-bound solver.

    ``box_radius`` and ``dual_bound`` are only used by the filter to box the
    data perturbation and the dual variables of its robust counterpart;
    ``None`` lets the filter derive them from a local solution.
    """

    enabled: bool = True
    max_bilinear_terms: int = 200
    gap: float = 1e-4
    node_limit: int = 20000
    box_radius: float | None = None
    dual_bound: float | None = None


@dataclass
class SolverOptions:
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    max_outer: int = 200
    tol_residual: float = 1e-6
    tol_objective: float = 1e-9
    max_inner: int = 50
    mccormick: McCormickOptions = field(default_factory=McCormickOptions)

    def __post_init__(self):
        if isinstance(self.mccormick, dict):
            self.mccormick = _from_dict(McCormickOptions, self.mccormick, "mccormick")
        if self.penalty_init <= 0 or self.penalty_growth <= 1:
            raise ConfigError("penalty_init must be > 0 and penalty_growth > 1")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration caps must be positive")
        if self.tol_residual <= 0 or self.tol_objective <= 0:
            raise ConfigError("tolerances must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverOptions":
        return _from_dict(cls, d or {}, "solver options")

    def to_dict(self) -> dict:
        return asdict(self)


def _from_dict(cls, d, what):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a mapping")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown {what} keys: {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class BilinearTerms:
    """Products ``coef * x[i] * x[j]`` added to constraint ``row``."""

    i: np.ndarray
    j: np.ndarray
    coef: np.ndarray
    row: np.ndarray

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=int).ravel()
        self.j = np.asarray(self.j, dtype=int).ravel()
        self.coef = np.asarray(self.coef, dtype=float).ravel()
        self.row = np.asarray(self.row, dtype=int).ravel()
        if not (self.i.size == self.j.size == self.coef.size == self.row.size):
            raise DimensionMismatch("bilinear term arrays must have equal length")

    @classmethod
    def empty(cls) -> "BilinearTerms":
        return cls([], [], [], [])

    @classmethod
    def from_list(cls, terms) -> "BilinearTerms":
        terms = list(terms)
        if not terms:
            return cls.empty()
        i, j, coef, row = zip(*terms)
        return cls(i, j, coef, row)

    def __len__(self) -> int:
        return self.i.size

    def evaluate(self, x, m) -> np.ndarray:
        return np.bincount(self.row, self.coef * x[self.i] * x[self.j], minlength=m)[:m]

    def jacobian(self, x, m, n) -> np.ndarray:
        J = np.zeros((m, n))
        np.add.at(J, (self.row, self.i), self.coef * x[self.j])
        np.add.at(J, (self.row, self.j), self.coef * x[self.i])
        return J

    def linearized(self, x, free, m, n) -> tuple[np.ndarray, np.ndarray]:
        """Exact affine form of the terms when every non-``free`` variable is fixed.

        Requires that no term multiplies two free variables. Returns
        ``(J, const)`` with terms = ``J x_free + const``.
        """
        J = np.zeros((m, n))
        const = np.zeros(m)
        fi, fj = free[self.i], free[self.j]
        if np.any(fi & fj):
            raise ValueError("a bilinear term couples two free variables")
        sel = fi
        np.add.at(J, (self.row[sel], self.i[sel]), self.coef[sel] * x[self.j[sel]])
        sel = fj
        np.add.at(J, (self.row[sel], self.j[sel]), self.coef[sel] * x[self.i[sel]])
        sel = ~fi & ~fj
        np.add.at(const, self.row[sel], self.coef[sel] * x[self.i[sel]] * x[self.j[sel]])
        return J, const


@dataclass
class BilinearProgram:
    """``min 0.5 x'Qx + c'x + c0`` subject to

    ``A_eq x + B_eq(x) = b_eq``, ``A_in x + B_in(x) <= b_in``, ``lo <= x <= hi``

    where ``B_eq`` / ``B_in`` collect the bilinear terms. ``blocks`` optionally
    assigns every variable to block 0 or 1 for the alternating solver; each
    bilinear term must couple variables of different blocks.
    """

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    eq_terms: BilinearTerms = field(default_factory=BilinearTerms.empty)
    in_terms: BilinearTerms = field(default_factory=BilinearTerms.empty)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    Q: np.ndarray | None = None
    c0: float = 0.0
    blocks: np.ndarray | None = None
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, float).reshape(-1, n)
        self.A_in = np.zeros((0, n)) if self.A_in is None else np.asarray(self.A_in, float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        self.b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, float).ravel()
        if self.A_eq.shape[0] != self.b_eq.size or self.A_in.shape[0] != self.b_in.size:
            raise DimensionMismatch("constraint rows and right-hand sides differ in length")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, float).ravel().copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, float).ravel().copy()
        if self.lo.size != n or self.hi.size != n or np.any(self.lo > self.hi):
            raise DimensionMismatch("invalid variable bounds")
        if isinstance(self.eq_terms, (list, tuple)):
            self.eq_terms = BilinearTerms.from_list(self.eq_terms)
        if isinstance(self.in_terms, (list, tuple)):
            self.in_terms = BilinearTerms.from_list(self.in_terms)
        for t, m in ((self.eq_terms, self.A_eq.shape[0]), (self.in_terms, self.A_in.shape[0])):
            if len(t) and (t.i.min() < 0 or t.j.min() < 0 or max(t.i.max(), t.j.max()) >= n
                           or t.row.min() < 0 or t.row.max() >= m):
                raise DimensionMismatch("bilinear term references an out-of-range index")
        if self.Q is not None:
            self.Q = np.asarray(self.Q, float)
            if self.Q.shape != (n, n):
                raise DimensionMismatch("Q must be n x n")
        if self.blocks is not None:
            self.blocks = np.asarray(self.blocks, dtype=int).ravel()
            if self.blocks.size != n:
                raise DimensionMismatch("blocks must label every variable")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_bilinear(self) -> int:
        return len(self.eq_terms) + len(self.in_terms)

    def objective(self, x) -> float:
        val = self.c @ x + self.c0
        if self.Q is not None:
            val += 0.5 * x @ self.Q @ x
        return float(val)

    def eq_residual(self, x) -> np.ndarray:
        m = self.A_eq.shape[0]
        return self.A_eq @ x + self.eq_terms.evaluate(x, m) - self.b_eq

    def in_residual(self, x) -> np.ndarray:
        m = self.A_in.shape[0]
        return self.A_in @ x + self.in_terms.evaluate(x, m) - self.b_in

    def max_violation(self, x) -> float:
        """Largest violation of equality, inequality and bound constraints."""
        parts = [0.0]
        if self.A_eq.shape[0]:
            parts.append(np.max(np.abs(self.eq_residual(x))))
        if self.A_in.shape[0]:
            parts.append(np.max(self.in_residual(x)))
        parts.append(np.max(self.lo - x, initial=0.0))
        parts.append(np.max(x - self.hi, initial=0.0))
        return float(max(parts))

    def term_variables(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        for t in (self.eq_terms, self.in_terms):
            mask[t.i] = True
            mask[t.j] = True
        return mask

    def coloring(self) -> np.ndarray:
        """Two-coloring of the bilinear interaction graph (blocks for AltMin).

        Variables outside every term get label -1. Raises ValueError for
        squares or odd cycles, which admit no biconvex split.
        """
        if self.blocks is not None:
            lab = self.blocks.copy()
            lab[~self.term_variables()] = -1
            for t in (self.eq_terms, self.in_terms):
                if np.any(lab[t.i] == lab[t.j]):
                    raise ValueError("a bilinear term couples variables of the same block")
            return lab
        adj = [[] for _ in range(self.n)]
        for t in (self.eq_terms, self.in_terms):
            for a, b in zip(t.i, t.j):
                if a == b:
                    raise ValueError("square terms admit no biconvex split")
                adj[a].append(b)
                adj[b].append(a)
        lab = np.full(self.n, -1)
        for s in range(self.n):
            if lab[s] != -1 or not adj[s]:
                continue
            lab[s] = 0
            stack = [s]
            while stack:
                v = stack.pop()
                for w in adj[v]:
                    if lab[w] == -1:
                        lab[w] = 1 - lab[v]
                        stack.append(w)
                    elif lab[w] == lab[v]:
                        raise ValueError("bilinear interaction graph is not bipartite")
        return lab


@dataclass
class BilinearSolution:
    x: np.ndarray | None
    objective: float
    status: str
    gap: float = np.nan
    iterations: int = 0
    nodes: int = 0
    residual: float = np.nan
    certificate: dict | None = None


def solve_bilinear(bp: BilinearProgram, mode: str = ALTMIN,
                   opts: SolverOptions | None = None, x0=None) -> BilinearSolution:
    """Solve a bilinear program.

    ``AltMin`` is a local method: augmented-Lagrangian penalty on the rows
    that contain bilinear terms, minimized by alternating convex QPs over the
    two blocks of a bipartition. ``McCormickBB`` is a global spatial
    branch-and-bound over McCormick envelopes and needs finite boxes on every
    variable that occurs in a bilinear term. ``x0`` is a starting point for
    ``AltMin`` and a candidate incumbent for ``McCormickBB``.

    Raises:
        BoxMissing: ``McCormickBB`` with an infinite box on a term variable.
        ValueError: Unknown mode, or too many bilinear terms for ``McCormickBB``.
    """
    opts = opts or SolverOptions()
    x0 = None if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x0 is not None and x0.size != bp.n:
        raise DimensionMismatch(f"x0 has {x0.size} entries, program has {bp.n} variables")
    if mode == ALTMIN:
        return _altmin(bp, opts, x0)
    if mode == MCCORMICK:
        return _branch_and_bound(bp, opts, x0)
    raise ValueError(f"unknown mode {mode!r}; use {ALTMIN!r} or {MCCORMICK!r}")


# -- convex subproblems ----------------------------------------------------------

def _convex_solve(Q, c, A_eq, b_eq, A_in, b_in, lo, hi, check=True):
    """Solve a convex QP/LP with bounds; returns (status, x)."""
    n = c.size
    if Q is None or not np.any(Q):
        sol = solve_lp(LinearProgram(c, A_eq, b_eq, A_in, b_in, lo, hi))
        return sol.status, sol.x, sol
    G, h = [A_in], [b_in]
    fin_hi, fin_lo = np.isfinite(hi), np.isfinite(lo)
    if fin_hi.any():
        G.append(np.eye(n)[fin_hi])
        h.append(hi[fin_hi])
    if fin_lo.any():
        G.append(-np.eye(n)[fin_lo])
        h.append(-lo[fin_lo])
    sol = solve_qp(Q, c, A_eq, b_eq, np.vstack(G), np.concatenate(h), check_feasibility=check)
    status = sol.status if sol.status != "IterationLimit" else "Optimal"
    return status, sol.x, sol


def _project_start(bp: BilinearProgram, A_eq, b_eq, A_in, b_in):
    ref = np.where(np.isfinite(bp.lo) & np.isfinite(bp.hi), 0.5 * (bp.lo + bp.hi),
                   np.clip(0.0, bp.lo, bp.hi))
    status, x, _ = _convex_solve(np.eye(bp.n), -ref, A_eq, b_eq, A_in, b_in, bp.lo, bp.hi)
    return status, x


# -- AltMin ------------------------------------------------------------------------

def _altmin(bp: BilinearProgram, opts: SolverOptions, x0=None) -> BilinearSolution:
    n = bp.n
    lab = bp.coloring()
    eq_c = np.zeros(bp.A_eq.shape[0], dtype=bool)
    eq_c[bp.eq_terms.row] = True
    in_c = np.zeros(bp.A_in.shape[0], dtype=bool)
    in_c[bp.in_terms.row] = True
    n_s = int(in_c.sum())
    N = n + n_s  # slacks turn coupled inequalities into equalities

    # coupled rows as equalities over (x, s)
    A_c = np.zeros((int(eq_c.sum()) + n_s, N))
    A_c[: eq_c.sum(), :n] = bp.A_eq[eq_c]
    A_c[eq_c.sum():, :n] = bp.A_in[in_c]
    A_c[eq_c.sum():, n:] = np.eye(n_s)
    b_c = np.concatenate([bp.b_eq[eq_c], bp.b_in[in_c]])
    eq_map = -np.ones(bp.A_eq.shape[0], dtype=int)
    eq_map[eq_c] = np.arange(eq_c.sum())
    in_map = -np.ones(bp.A_in.shape[0], dtype=int)
    in_map[in_c] = eq_c.sum() + np.arange(n_s)
    terms = BilinearTerms(
        np.concatenate([bp.eq_terms.i, bp.in_terms.i]),
        np.concatenate([bp.eq_terms.j, bp.in_terms.j]),
        np.concatenate([bp.eq_terms.coef, bp.in_terms.coef]),
        np.concatenate([eq_map[bp.eq_terms.row], in_map[bp.in_terms.row]]))
    m_c = A_c.shape[0]

    pad = lambda A: np.hstack([A, np.zeros((A.shape[0], n_s))])  # noqa: E731
    H_eq, hb_eq = pad(bp.A_eq[~eq_c]), bp.b_eq[~eq_c]
    H_in, hb_in = pad(bp.A_in[~in_c]), bp.b_in[~in_c]
    lo = np.concatenate([bp.lo, np.zeros(n_s)])
    hi = np.concatenate([bp.hi, np.full(n_s, np.inf)])
    Q0 = np.zeros((N, N))
    if bp.Q is not None:
        Q0[:n, :n] = bp.Q
    c0 = np.concatenate([bp.c, np.zeros(n_s)])

    status, x = _project_start(
        BilinearProgram(c0, lo=lo, hi=hi), H_eq, hb_eq, H_in, hb_in)
    if status != "Optimal":
        return BilinearSolution(None, np.nan, INFEASIBLE, certificate={"linear_rows": "infeasible"})
    if x0 is not None:
        x[:n] = np.clip(x0, bp.lo, bp.hi)
    if n_s:
        r0 = bp.A_in[in_c] @ x[:n] + bp.in_terms.evaluate(x[:n], bp.A_in.shape[0])[in_c] - bp.b_in[in_c]
        x[n:] = np.maximum(-r0, 0.0)
    lab_full = np.concatenate([lab, -np.ones(n_s, dtype=int)])

    def coupled(xv):
        return A_c @ xv + terms.evaluate(xv, m_c) - b_c

    mu = np.zeros(m_c)
    rho = opts.penalty_init
    total = 0
    best = (np.inf, x.copy())
    for outer in range(1, opts.max_outer + 1):
        prev = None
        for _ in range(opts.max_inner):
            for color in (0, 1):
                free = lab_full != 1 - color
                J, const = terms.linearized(x, free, m_c, N)
                Ak = (A_c + J)[:, free]
                rk = const - b_c + A_c[:, ~free] @ x[~free]  # residual = Ak xf + rk
                Qf = Q0[np.ix_(free, free)] + rho * Ak.T @ Ak
                cf = c0[free] + Q0[np.ix_(free, ~free)] @ x[~free] + Ak.T @ (mu + rho * rk)
                st, xf, _ = _convex_solve(
                    Qf, cf, H_eq[:, free], hb_eq - H_eq[:, ~free] @ x[~free],
                    H_in[:, free], hb_in - H_in[:, ~free] @ x[~free],
                    lo[free], hi[free], check=False)
                total += 1
                if st == "Optimal" and np.all(np.isfinite(xf)):
                    x = x.copy()
                    x[free] = xf
            if prev is not None and np.max(np.abs(x - prev)) <= 1e-10 * (1 + np.max(np.abs(x))):
                break
            prev = x.copy()
        r = coupled(x)
        res = max(float(np.max(np.abs(r), initial=0.0)), bp.max_violation(x[:n]))
        if res < best[0]:
            best = (res, x.copy())
        if res <= opts.tol_residual:
            return BilinearSolution(x[:n], bp.objective(x[:n]), LOCAL, iterations=total,
                                    residual=res)
        mu = mu + rho * r
        rho *= opts.penalty_growth
        rho = min(rho, 1e12)
    res, xb = best
    return BilinearSolution(xb[:n], bp.objective(xb[:n]), ITERLIMIT, iterations=total,
                            residual=res)


# -- McCormick branch-and-bound -------------------------------------------------------

class _Relaxation:
    """McCormick relaxation of ``bp`` in variables (x, w), one w per distinct product."""

    def __init__(self, bp: BilinearProgram):
        self.bp = bp
        n = bp.n
        pairs = {}
        for t in (bp.eq_terms, bp.in_terms):
            for a, b in zip(t.i, t.j):
                key = (min(a, b), max(a, b))
                pairs.setdefault(key, len(pairs))
        self.pairs = sorted(pairs, key=pairs.get)
        self.pi = np.array([p[0] for p in self.pairs], dtype=int)
        self.pj = np.array([p[1] for p in self.pairs], dtype=int)
        P = len(self.pairs)
        self.P = P

        def lifted(A, terms):
            W = np.zeros((A.shape[0], P))
            for a, b, cf, r in zip(terms.i, terms.j, terms.coef, terms.row):
                W[r, pairs[(min(a, b), max(a, b))]] += cf
            return np.hstack([A, W])

        self.A_eq = lifted(bp.A_eq, bp.eq_terms)
        self.A_in = lifted(bp.A_in, bp.in_terms)
        self.c = np.concatenate([bp.c, np.zeros(P)])
        self.Q = None
        if bp.Q is not None and np.any(bp.Q):
            self.Q = np.zeros((n + P, n + P))
            self.Q[:n, :n] = bp.Q

    def envelope(self, lo, hi):
        n, P = self.bp.n, self.P
        G = np.zeros((4 * P, n + P))
        h = np.zeros(4 * P)
        for k, (i, j) in enumerate(self.pairs):
            li, ui, lj, uj = lo[i], hi[i], lo[j], hi[j]
            rows = (
                # w >= li xj + lj xi - li lj ; w >= ui xj + uj xi - ui uj
                ((i, lj), (j, li), -1.0, li * lj),
                ((i, uj), (j, ui), -1.0, ui * uj),
                # w <= ui xj + lj xi - ui lj ; w <= li xj + uj xi - li uj
                ((i, -lj), (j, -ui), 1.0, -ui * lj),
                ((i, -uj), (j, -li), 1.0, -li * uj),
            )
            for q, ((vi, ci), (vj, cj), cw, rhs) in enumerate(rows):
                r = 4 * k + q
                G[r, vi] += ci
                G[r, vj] += cj
                G[r, n + k] += cw
                h[r] = rhs
        return G, h

    def solve(self, lo, hi):
        P = self.P
        G, h = self.envelope(lo, hi)
        w_lo = np.full(P, -np.inf)
        w_hi = np.full(P, np.inf)
        A_in = np.vstack([self.A_in, G])
        b_in = np.concatenate([self.bp.b_in, h])
        lo_all = np.concatenate([lo, w_lo])
        hi_all = np.concatenate([hi, w_hi])
        status, z, sol = _convex_solve(self.Q, self.c, self.A_eq, self.bp.b_eq, A_in, b_in,
                                       lo_all, hi_all)
        if status != "Optimal":
            return status, None, np.inf, sol
        obj = float(self.c @ z + (0.5 * z @ self.Q @ z if self.Q is not None else 0.0)
                    + self.bp.c0)
        return status, z, obj, sol


def relaxation_bound(bp: BilinearProgram, lo=None, hi=None) -> float:
    """Optimal value of the McCormick relaxation over the box ``[lo, hi]``.

    Defaults to the program's own bounds. Returns ``inf`` when the
    relaxation is infeasible, which proves the program infeasible on the box.
    """
    lo = bp.lo if lo is None else np.asarray(lo, dtype=float)
    hi = bp.hi if hi is None else np.asarray(hi, dtype=float)
    tv = bp.term_variables()
    if np.any(~np.isfinite(lo[tv])) or np.any(~np.isfinite(hi[tv])):
        raise BoxMissing("McCormick bounding needs finite boxes on all bilinear variables")
    status, _, obj, _ = _Relaxation(bp).solve(lo, hi)
    if status == "Infeasible":
        return np.inf
    if status != "Optimal":
        return -np.inf
    return obj


def _polish(bp: BilinearProgram, x0, lab):
    """Fix one color of term variables, solve the remaining convex problem, then swap."""
    best = None
    x = x0.copy()
    for color in (1, 0, 1):
        free = lab != color
        J_eq, k_eq = bp.eq_terms.linearized(x, free, bp.A_eq.shape[0], bp.n)
        J_in, k_in = bp.in_terms.linearized(x, free, bp.A_in.shape[0], bp.n)
        A_eq, A_in = (bp.A_eq + J_eq), (bp.A_in + J_in)
        fixed = ~free
        lo, hi = bp.lo.copy(), bp.hi.copy()
        lo[fixed] = hi[fixed] = x[fixed]
        Q = bp.Q
        st, xn, _ = _convex_solve(Q, bp.c, A_eq, bp.b_eq - k_eq, A_in, bp.b_in - k_in, lo, hi)
        if st != "Optimal" or xn is None:
            continue
        x = xn
        if bp.max_violation(x) <= 1e-7:
            if best is None or bp.objective(x) < bp.objective(best):
                best = x.copy()
    return best


def _branch_and_bound(bp: BilinearProgram, opts: SolverOptions, x0=None) -> BilinearSolution:
    mc = opts.mccormick
    if bp.n_bilinear > mc.max_bilinear_terms:
        raise ValueError(f"{bp.n_bilinear} bilinear terms exceed the exact-solver limit "
                         f"of {mc.max_bilinear_terms}")
    tv = bp.term_variables()
    if np.any(~np.isfinite(bp.lo[tv])) or np.any(~np.isfinite(bp.hi[tv])) \
            or np.any(np.abs(bp.lo[tv]) >= 1e17) or np.any(np.abs(bp.hi[tv]) >= 1e17):
        raise BoxMissing("McCormick bounding needs finite boxes on all bilinear variables")
    try:
        lab = bp.coloring()
    except ValueError:
        lab = None
    feas_tol = opts.tol_residual
    relax = _Relaxation(bp)

    ub, incumbent = np.inf, None

    def offer(x):
        nonlocal ub, incumbent
        if x is not None and bp.max_violation(x) <= feas_tol:
            val = bp.objective(x)
            if val < ub:
                ub, incumbent = val, x.copy()

    if x0 is not None:
        offer(x0)
    counter = 0
    heap = []
    st, z, lb, sol = relax.solve(bp.lo, bp.hi)
    if st != "Optimal":
        cert = {"kind": "mccormick-root", "status": st}
        if getattr(sol, "farkas_ineq", None) is not None:
            cert["farkas_eq"] = sol.farkas_eq.tolist()
            cert["farkas_ineq"] = sol.farkas_ineq.tolist()
        return BilinearSolution(None, np.nan, INFEASIBLE, nodes=1, certificate=cert)
    heapq.heappush(heap, (lb, counter, bp.lo.copy(), bp.hi.copy(), z))
    nodes = 0
    global_lb = lb

    def gap_of(lbv):
        if not np.isfinite(ub):
            return np.inf
        return max(0.0, ub - lbv) / max(1.0, abs(ub))

    while heap:
        lb, nid, lo, hi, z = heapq.heappop(heap)
        global_lb = lb
        if gap_of(lb) <= mc.gap:
            heap.append((lb, nid, lo, hi, z))
            break
        nodes += 1
        if nodes > mc.node_limit:
            heap.append((lb, nid, lo, hi, z))
            break
        x = z[: bp.n]
        offer(x)
        if lab is not None and incumbent is None or (lab is not None and nodes % 10 == 1):
            offer(_polish(bp, np.clip(x, lo, hi), lab))
        if gap_of(lb) <= mc.gap:
            continue
        w = z[bp.n:]
        viol = np.abs(w - x[relax.pi] * x[relax.pj])
        k = int(np.argmax(viol))
        i, j = relax.pi[k], relax.pj[k]
        # of the two factors, split the one whose width weighs most violation
        score = np.zeros(bp.n)
        np.add.at(score, relax.pi, viol)
        np.add.at(score, relax.pj, viol)
        score *= hi - lo
        v = i if score[i] >= score[j] else j
        width = hi[v] - lo[v]
        if width <= 1e-12:
            continue
        split = x[v] if lo[v] + 0.1 * width <= x[v] <= hi[v] - 0.1 * width \
            else 0.5 * (lo[v] + hi[v])
        for side in (0, 1):
            clo, chi = lo.copy(), hi.copy()
            if side == 0:
                chi[v] = split
            else:
                clo[v] = split
            cst, cz, clb, _ = relax.solve(clo, chi)
            if cst != "Optimal" or clb >= ub - mc.gap * max(1.0, abs(ub)):
                continue
            counter += 1
            heapq.heappush(heap, (max(clb, lb), counter, clo, chi, cz))
    if heap:
        global_lb = min(item[0] for item in heap)
    elif incumbent is not None:
        global_lb = ub
    if incumbent is None:
        if heap:
            return BilinearSolution(None, np.nan, ITERLIMIT, nodes=nodes, gap=np.inf)
        return BilinearSolution(None, np.nan, INFEASIBLE, nodes=nodes,
                                certificate={"kind": "mccormick-tree", "nodes": nodes})
    gap = gap_of(global_lb)
    status = OPTIMAL if gap <= mc.gap else ITERLIMIT
    return BilinearSolution(incumbent, ub, status, gap=gap, nodes=nodes,
                            residual=bp.max_violation(incumbent))


# -- plain-text dump ------------------------------------------------------------------

def dump_bilinear(bp: BilinearProgram) -> str:
    """Plain-text dump of a bilinear program (see docs/formats.md)."""
    out = [f"BLP n={bp.n} m_eq={bp.A_eq.shape[0]} m_in={bp.A_in.shape[0]} "
           f"terms={bp.n_bilinear}"]
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    out.append("c " + " ".join(fmt(v) for v in bp.c))
    out.append(f"c0 {fmt(bp.c0)}")
    if bp.Q is not None:
        for r, cidx in zip(*np.nonzero(bp.Q)):
            out.append(f"Q {r} {cidx} {fmt(bp.Q[r, cidx])}")
    for tag, A, b in (("E", bp.A_eq, bp.b_eq), ("I", bp.A_in, bp.b_in)):
        for r in range(A.shape[0]):
            nz = np.nonzero(A[r])[0]
            out.append(f"{tag} {r} {fmt(b[r])} " + " ".join(f"{k}:{fmt(A[r, k])}" for k in nz))
    for tag, t in (("BE", bp.eq_terms), ("BI", bp.in_terms)):
        for a, b_, cf, r in zip(t.i, t.j, t.coef, t.row):
            out.append(f"{tag} {r} {a} {b_} {fmt(cf)}")
    for k in range(bp.n):
        out.append(f"B {k} {fmt(bp.lo[k])} {fmt(bp.hi[k])}")
    return "\n".join(out) + "\n"


def dump_lp(lp: LinearProgram) -> str:
    """Plain-text dump of a linear program in the same line format."""
    bp = BilinearProgram(-lp.c if lp.maximize else lp.c, lp.A_eq, lp.b_eq, lp.A_ineq,
                         lp.b_ineq, lo=lp.lo, hi=lp.hi)
    return dump_bilinear(bp).replace("BLP", "LP" + (" max" if lp.maximize else ""), 1)
