"""Regularized Hankel-matrix predictor solved through its KKT system.

The predictor picks the Hankel-column combination ``g`` minimizing

    0.5 * ||sigma||^2 + 0.5 * g' E_g g
    s.t.  Hy_init g = y_init + sigma,  Hu_init g = u_init,  Hu_pred g = u_pred

and predicts ``y_pred = Hy_pred g``. Substituting ``sigma`` as an explicit
unknown gives the Schur-form system used everywhere in this package::

    [ -I        Hy_init   0   ] [sigma]   [y_init]
    [ Hy_init'  E_g       Hu' ] [g    ] = [0     ]
    [ 0         Hu        0   ] [kappa]   [u_init; u_pred]

whose matrix is linear in the output data and whose right-hand side does not
depend on it at all.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularKkt, SingularMatrix, SplitRequiresEqualDepths
from .solvers.linalg import SINGULAR_RCOND, GeneralFactor, SymmetricFactor
from .trajectory import HankelSystem, RANK_TOL, numerical_rank

DEFAULT_REGULARIZER = 1e-4


@dataclass(frozen=True)
class PredictorConfig:
    """Depths and the positive-definite penalty ``E_g`` on ``g``.

    ``regularizer`` is either a scalar ``eps`` (meaning ``eps * I``) or a full
    symmetric positive-definite matrix of size ``n_cols``.
    """

    t_init: int = 6
    n_h: int = 6
    regularizer: float | np.ndarray = DEFAULT_REGULARIZER

    def __post_init__(self):
        if self.t_init < 1 or self.n_h < 1:
            raise ValueError("t_init and n_h must be positive")
        reg = self.regularizer
        if np.ndim(reg) == 0:
            if not float(reg) > 0:
                raise ValueError("scalar regularizer must be positive")
            object.__setattr__(self, "regularizer", float(reg))
        else:
            E = np.array(reg, dtype=float)
            if E.ndim != 2 or E.shape[0] != E.shape[1]:
                raise DimensionMismatch("regularizer matrix must be square")
            if not np.allclose(E, E.T, atol=1e-12 * max(1.0, np.abs(E).max())):
                raise ValueError("regularizer matrix must be symmetric")
            if np.linalg.eigvalsh(E)[0] <= 0:
                raise ValueError("regularizer matrix must be positive definite")
            E.setflags(write=False)
            object.__setattr__(self, "regularizer", E)

    @property
    def L(self) -> int:
        return self.t_init + self.n_h

    def E(self, n_cols: int) -> np.ndarray:
        if np.ndim(self.regularizer) == 0:
            return self.regularizer * np.eye(n_cols)
        if self.regularizer.shape[0] != n_cols:
            raise DimensionMismatch(
                f"regularizer is {self.regularizer.shape[0]}x{self.regularizer.shape[0]}, "
                f"Hankel system has {n_cols} columns")
        return np.array(self.regularizer)


@dataclass(frozen=True)
class PredictionRequest:
    """Initial window and future inputs, each flattened time-major."""

    u_init: np.ndarray
    y_init: np.ndarray
    u_pred: np.ndarray

    def __post_init__(self):
        for name in ("u_init", "y_init", "u_pred"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())

    @classmethod
    def zeros(cls, H: HankelSystem, segments: int = 1) -> "PredictionRequest":
        return cls(np.zeros(H.t_init * H.n_u), np.zeros(H.t_init * H.n_y),
                   np.zeros(segments * H.n_h * H.n_u))


@dataclass(frozen=True)
class PredictionResult:
    y_pred: np.ndarray
    g: np.ndarray
    sigma: np.ndarray
    kappa: np.ndarray


def _check(H: HankelSystem, cfg: PredictorConfig) -> None:
    if (H.t_init, H.n_h) != (cfg.t_init, cfg.n_h):
        raise DimensionMismatch(
            f"Hankel system depths (t_init={H.t_init}, n_h={H.n_h}) do not match the "
            f"predictor config (t_init={cfg.t_init}, n_h={cfg.n_h})")


def _check_request(H: HankelSystem, req: PredictionRequest, segments: int = 1) -> None:
    want = (H.t_init * H.n_u, H.t_init * H.n_y, segments * H.n_h * H.n_u)
    got = (req.u_init.size, req.y_init.size, req.u_pred.size)
    if got != want:
        raise DimensionMismatch(f"request sizes (u_init, y_init, u_pred)={got}, expected {want}")


def kkt_matrix(H: HankelSystem, cfg: PredictorConfig) -> np.ndarray:
    """KKT matrix with the slack eliminated: [[Hy_init'Hy_init + E_g, Hu'], [Hu, 0]]."""
    _check(H, cfg)
    Hu, Hyi = H.Hu, H.Hy_init
    m = Hu.shape[0]
    top = np.hstack([Hyi.T @ Hyi + cfg.E(H.n_cols), Hu.T])
    bottom = np.hstack([Hu, np.zeros((m, m))])
    return np.vstack([top, bottom])


def kkt_matrix_schur(H: HankelSystem, cfg: PredictorConfig) -> np.ndarray:
    """Schur-form KKT matrix, unknowns ordered (sigma, g, kappa)."""
    _check(H, cfg)
    Hu, Hyi = H.Hu, H.Hy_init
    ns, nc, nk = Hyi.shape[0], H.n_cols, Hu.shape[0]
    M = np.zeros((ns + nc + nk, ns + nc + nk))
    M[:ns, :ns] = -np.eye(ns)
    M[:ns, ns:ns + nc] = Hyi
    M[ns:ns + nc, :ns] = Hyi.T
    M[ns:ns + nc, ns:ns + nc] = cfg.E(nc)
    M[ns:ns + nc, ns + nc:] = Hu.T
    M[ns + nc:, ns:ns + nc] = Hu
    return M


def schur_rhs(req: PredictionRequest, n_cols: int) -> np.ndarray:
    """Right-hand side (y_init, 0, u_init, u_pred) of the Schur-form system."""
    return np.concatenate([req.y_init, np.zeros(n_cols), req.u_init, req.u_pred])


def kkt_matrix_schur_split(H: HankelSystem, cfg: PredictorConfig, k: int) -> np.ndarray:
    """Block lower-triangular Schur matrix for ``k`` chained segments.

    Diagonal blocks are copies of :func:`kkt_matrix_schur`; each sub-diagonal
    block carries ``-Hy_pred`` in the (sigma_j, g_{j-1}) position so that the
    previous segment's prediction initializes the next one.
    """
    if H.t_init != H.n_h:
        raise SplitRequiresEqualDepths("horizon splitting needs t_init == n_h")
    if k < 1:
        raise ValueError("k must be at least 1")
    M1 = kkt_matrix_schur(H, cfg)
    b = M1.shape[0]
    ns, nc = H.Hy_init.shape[0], H.n_cols
    M = np.zeros((k * b, k * b))
    for j in range(k):
        M[j * b:(j + 1) * b, j * b:(j + 1) * b] = M1
        if j > 0:
            r0 = j * b
            c0 = (j - 1) * b + ns
            M[r0:r0 + ns, c0:c0 + nc] = -H.Hy_pred
    return M


def split_rhs(req: PredictionRequest, H: HankelSystem, k: int) -> np.ndarray:
    """Stacked right-hand side for :func:`kkt_matrix_schur_split`."""
    seg = H.n_h * H.n_u
    nc = H.n_cols
    parts = [req.y_init, np.zeros(nc), req.u_init, req.u_pred[:seg]]
    for j in range(1, k):
        parts += [np.zeros(H.t_init * H.n_y), np.zeros(nc),
                  req.u_pred[(j - 1) * seg:j * seg], req.u_pred[j * seg:(j + 1) * seg]]
    return np.concatenate(parts)


class Predictor:
    """Factor the Schur KKT matrix once and answer many prediction requests.

    The factorization is owned by the instance and never mutated after
    construction, so an instance can be shared between threads.
    """

    def __init__(self, H: HankelSystem, cfg: PredictorConfig,
                 rcond_tol: float = SINGULAR_RCOND, warn_pe: bool = True):
        _check(H, cfg)
        self.H, self.cfg = H, cfg
        if warn_pe and numerical_rank(H.Hu, RANK_TOL) < H.Hu.shape[0]:
            warnings.warn("input Hankel matrix is rank deficient; predictions may be "
                          "unreliable (persistent excitation fails)", RuntimeWarning,
                          stacklevel=2)
        try:
            self._factor = SymmetricFactor(kkt_matrix_schur(H, cfg), rcond_tol)
        except SingularMatrix as exc:
            raise SingularKkt(str(exc)) from None
        self._ns = H.Hy_init.shape[0]
        self._nc = H.n_cols

    def solve(self, req: PredictionRequest) -> PredictionResult:
        _check_request(self.H, req)
        x = self._factor.solve(schur_rhs(req, self._nc))
        ns, nc = self._ns, self._nc
        sigma, g, kappa = x[:ns], x[ns:ns + nc], x[ns + nc:]
        return PredictionResult(y_pred=self.H.Hy_pred @ g, g=g, sigma=sigma, kappa=kappa)

    def solve_split(self, req: PredictionRequest) -> list[PredictionResult]:
        H = self.H
        if H.t_init != H.n_h:
            raise SplitRequiresEqualDepths("horizon splitting needs t_init == n_h")
        seg = H.n_h * H.n_u
        if req.u_pred.size % seg or req.u_pred.size == 0:
            raise DimensionMismatch(
                f"u_pred has {req.u_pred.size} entries, not a multiple of n_h*n_u={seg}")
        k = req.u_pred.size // seg
        results = []
        u_init, y_init = req.u_init, req.y_init
        for j in range(k):
            u_seg = req.u_pred[j * seg:(j + 1) * seg]
            res = self.solve(PredictionRequest(u_init, y_init, u_seg))
            results.append(res)
            u_init, y_init = u_seg, res.y_pred
        return results

    def prediction_map(self, segments: int = 1) -> np.ndarray:
        """Matrix ``F`` with ``y_pred = F @ concat(y_init, u_init, u_pred)``.

        The predictor is linear in the request, so ``F`` is exact.
        """
        H = self.H
        n = H.t_init * H.n_y + H.t_init * H.n_u + segments * H.n_h * H.n_u
        ny0, nu0 = H.t_init * H.n_y, H.t_init * H.n_u
        F = np.empty((segments * H.n_h * H.n_y, n))
        for i in range(n):
            z = np.zeros(n)
            z[i] = 1.0
            req = PredictionRequest(z[ny0:ny0 + nu0], z[:ny0], z[ny0 + nu0:])
            if segments == 1:
                F[:, i] = self.solve(req).y_pred
            else:
                F[:, i] = np.concatenate([r.y_pred for r in self.solve_split(req)])
        return F


def predict(H: HankelSystem, cfg: PredictorConfig, req: PredictionRequest) -> PredictionResult:
    """Predict ``n_h`` output steps for the given initial window and inputs.

    Raises:
        SingularKkt: If the Schur KKT matrix is numerically singular.
    """
    return Predictor(H, cfg).solve(req)


def predict_split(H: HankelSystem, cfg: PredictorConfig,
                  req: PredictionRequest) -> PredictionResult:
    """Chain ``k = len(u_pred) / (n_h n_u)`` predictions, each segment seeding the next.

    Requires ``t_init == n_h``. The returned ``g``, ``sigma`` and ``kappa``
    are the per-segment vectors concatenated.
    """
    if H.t_init != H.n_h:
        raise SplitRequiresEqualDepths("horizon splitting needs t_init == n_h")
    parts = Predictor(H, cfg).solve_split(req)
    return PredictionResult(
        y_pred=np.concatenate([p.y_pred for p in parts]),
        g=np.concatenate([p.g for p in parts]),
        sigma=np.concatenate([p.sigma for p in parts]),
        kappa=np.concatenate([p.kappa for p in parts]),
    )


def solve_split_stacked(H: HankelSystem, cfg: PredictorConfig,
                        req: PredictionRequest) -> PredictionResult:
    """Same as :func:`predict_split` but through one solve of the stacked split matrix."""
    seg = H.n_h * H.n_u
    k = req.u_pred.size // seg
    M = kkt_matrix_schur_split(H, cfg, k)
    try:
        x = GeneralFactor(M).solve(split_rhs(req, H, k))
    except SingularMatrix as exc:
        raise SingularKkt(str(exc)) from None
    ns, nc = H.Hy_init.shape[0], H.n_cols
    b = ns + nc + H.Hu.shape[0]
    blocks = [x[j * b:(j + 1) * b] for j in range(k)]
    gs = [blk[ns:ns + nc] for blk in blocks]
    return PredictionResult(
        y_pred=np.concatenate([H.Hy_pred @ g for g in gs]),
        g=np.concatenate(gs),
        sigma=np.concatenate([blk[:ns] for blk in blocks]),
        kappa=np.concatenate([blk[ns + nc:] for blk in blocks]),
    )
