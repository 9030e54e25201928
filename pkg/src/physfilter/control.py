"""Tracking MPC and scenario-based flexibility bidding on top of the predictor.

Both controllers use the fact that the prediction is affine in the request:
``y_pred = a + G u_pred`` with ``a`` fixed by the initial window.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear

from .errors import ConfigError, DimensionMismatch, NumericalFailure
from .filtering import ConsistencyReport, verify_consistency
from .predictor import Predictor, PredictionRequest, PredictorConfig
from .rules import PhysicalRule
from .serialize import dumps, fmt as _fmt
from .sim import LtiSystem, NoiseSpec
from .solvers.lp import LinearProgram, solve_lp
from .trajectory import HankelSystem, Trajectory

DEFAULT_U_MAX = 6.0
DEFAULT_SOFT_PENALTY = 1e4
FEASIBLE, SOFT, UNBOUNDED = "Feasible", "SoftRelaxed", "Unbounded"


def last_window(H: HankelSystem) -> PredictionRequest:
    """Initial window made of the last ``t_init`` recorded samples."""
    t = H.t_init
    return PredictionRequest(H.u_data[-t:].ravel(), H.y_data[-t:].ravel(),
                             np.zeros(H.n_h * H.n_u))


def affine_prediction(H: HankelSystem, cfg: PredictorConfig, init: PredictionRequest,
                      segments: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Offset ``a`` and gain ``G`` with ``y_pred = a + G u_pred`` over ``segments * n_h`` steps."""
    pred = Predictor(H, cfg, warn_pe=False)
    F = pred.prediction_map(segments)
    ny0, nu0 = H.t_init * H.n_y, H.t_init * H.n_u
    if init.y_init.size != ny0 or init.u_init.size != nu0:
        raise DimensionMismatch(f"initial window must hold {ny0} outputs and {nu0} inputs")
    a = F[:, :ny0] @ init.y_init + F[:, ny0:ny0 + nu0] @ init.u_init
    return a, F[:, ny0 + nu0:]


# -- MPC ------------------------------------------------------------------------------

@dataclass(frozen=True)
class MpcSpec:
    """Reference over the horizon (``segments * n_h`` steps, time-major) and input box."""

    reference: np.ndarray
    u_max: float = DEFAULT_U_MAX
    segments: int = 1

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=float).ravel()
        if not np.all(np.isfinite(ref)):
            raise ValueError("reference must be finite")
        if not (np.isfinite(self.u_max) and self.u_max > 0):
            raise ValueError("u_max must be positive and finite")
        if self.segments < 1:
            raise ValueError("segments must be at least 1")
        ref.setflags(write=False)
        object.__setattr__(self, "reference", ref)


@dataclass
class MpcPlan:
    u_pred: np.ndarray
    y_pred: np.ndarray
    cost: float
    kkt_residual: float
    consistency: ConsistencyReport | None = None

    def to_csv(self, n_u: int, n_y: int) -> str:
        u = self.u_pred.reshape(-1, n_u)
        y = self.y_pred.reshape(-1, n_y)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + [f"u{i + 1}" for i in range(n_u)] + [f"y{i + 1}" for i in range(n_y)])
        for k, (ui, yi) in enumerate(zip(u, y)):
            w.writerow([k] + [_fmt(v) for v in ui] + [_fmt(v) for v in yi])
        return buf.getvalue()


def _box_ls_kkt(G, r, u, u_max) -> float:
    """Projected-gradient residual of ``min ||G u - r||^2`` over ``[0, u_max]``."""
    grad = 2 * G.T @ (G @ u - r)
    proj = np.clip(u - grad, 0.0, u_max) - u
    return float(np.max(np.abs(proj), initial=0.0))


def mpc_open_loop(H: HankelSystem, cfg: PredictorConfig, rule: PhysicalRule | None,
                  spec: MpcSpec, init: PredictionRequest | None = None) -> MpcPlan:
    """Minimize ``||y_pred - ref||^2`` over ``u_pred`` in ``[0, u_max]``.

    The predictor is affine in ``u_pred``, so this is a box-constrained
    linear least-squares problem and its global optimum is returned. When a
    rule is passed, the plan also carries the rule's consistency report for
    the predictor in use.

    Raises:
        SingularKkt: If the predictor matrix is singular.
    """
    init = init or last_window(H)
    a, G = affine_prediction(H, cfg, init, spec.segments)
    ref = spec.reference
    if ref.size != a.size:
        raise DimensionMismatch(f"reference has {ref.size} entries, horizon needs {a.size}")
    r = ref - a
    sol = lsq_linear(G, r, bounds=(0.0, spec.u_max), method="bvls", tol=1e-14,
                     lsmr_tol=None, max_iter=None)
    if sol.status < 0:
        raise NumericalFailure(f"box least squares failed: {sol.message}")
    u = np.clip(sol.x, 0.0, spec.u_max)
    y = a + G @ u
    report = None
    if rule is not None:
        report = verify_consistency(H, cfg, rule, spec.segments, n_samples=0)
    return MpcPlan(u, y, float(np.sum((y - ref) ** 2)), _box_ls_kkt(G, r, u, spec.u_max), report)


def mpc_closed_loop(plant: LtiSystem, steps: int, spec: MpcSpec, H: HankelSystem,
                    cfg: PredictorConfig, x0=None, noise: NoiseSpec | None = None,
                    seed: int = 0, sample_time: float = 1.0) -> Trajectory:
    """Receding-horizon loop: plan, apply the first input, measure, repeat.

    The plant starts at ``x0`` and is first run for ``t_init`` steps at zero
    input to fill the initial window; those samples are part of the log.
    """
    if plant.n_u != H.n_u or plant.n_y != H.n_y:
        raise DimensionMismatch("plant and data have different channel counts")
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(seed)
    x = np.zeros(plant.n_x) if x0 is None else np.asarray(x0, dtype=float).ravel()
    us, ys = [], []

    def advance(u):
        nonlocal x
        y = plant.C @ x + plant.D @ u + noise.sample(plant.n_y, rng)
        x = plant.A @ x + plant.B @ u
        us.append(u)
        ys.append(y)

    for _ in range(H.t_init):
        advance(np.zeros(plant.n_u))
    for _ in range(steps):
        init = PredictionRequest(np.concatenate(us[-H.t_init:]), np.concatenate(ys[-H.t_init:]),
                                 np.zeros(H.n_h * H.n_u))
        plan = mpc_open_loop(H, cfg, None, spec, init)
        advance(plan.u_pred[:H.n_u])
    return Trajectory.from_arrays(np.array(us), np.array(ys), sample_time)


# -- bidding --------------------------------------------------------------------------

@dataclass(frozen=True)
class BidSpec:
    """Bid problem data.

    ``agc`` has shape (horizon, N_scen): one column per scenario; the horizon
    is ``segments * n_h`` steps and every input channel follows
    ``P_baseline + gamma * AGC``.
    """

    agc: np.ndarray
    y_min: float
    y_max: float
    u_max: float = DEFAULT_U_MAX
    rho: float = DEFAULT_SOFT_PENALTY
    segments: int = 1
    baseline: str = "scalar"

    def __post_init__(self):
        agc = np.asarray(self.agc, dtype=float)
        if agc.ndim == 1:
            agc = agc[:, None]
        if agc.ndim != 2 or agc.shape[1] < 1 or agc.shape[0] < 1:
            raise ValueError("agc must have shape (horizon, N_scen) with N_scen >= 1")
        if not np.all(np.isfinite(agc)):
            raise ValueError("agc must be finite")
        if not self.y_min < self.y_max:
            raise ValueError("comfort band needs y_min < y_max")
        if not (np.isfinite(self.u_max) and self.u_max > 0) or not self.rho > 0:
            raise ValueError("u_max and rho must be positive")
        if self.baseline not in ("scalar", "vector"):
            raise ValueError("baseline must be 'scalar' or 'vector'")
        agc.setflags(write=False)
        object.__setattr__(self, "agc", agc)

    @property
    def n_scen(self) -> int:
        return self.agc.shape[1]


@dataclass
class BidResult:
    gamma: float
    baseline: np.ndarray
    status: str
    y_pred: np.ndarray  # (N_scen, horizon * n_y)
    u_pred: np.ndarray  # (N_scen, horizon * n_u)
    violation: float = 0.0
    message: str = ""
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {"gamma": self.gamma,
                "baseline": [float(v) for v in np.atleast_1d(self.baseline)],
                "status": self.status, "violations": float(self.violation),
                "message": self.message}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def scenarios_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.y_pred.shape[0] if self.y_pred.size else 0
        w.writerow(["k"] + [f"y_scen{i + 1}" for i in range(n)] + [f"u_scen{i + 1}" for i in range(n)])
        if n:
            for k in range(self.y_pred.shape[1]):
                ku = min(k, self.u_pred.shape[1] - 1)
                w.writerow([k] + [_fmt(v) for v in self.y_pred[:, k]]
                           + [_fmt(v) for v in self.u_pred[:, ku]])
        return buf.getvalue()


def solve_bid(H: HankelSystem, cfg: PredictorConfig, spec: BidSpec,
              init: PredictionRequest | None = None) -> BidResult:
    """Maximize the flexibility margin ``gamma`` over all AGC scenarios.

    Every scenario input ``P_baseline + gamma * AGC_i`` must stay in
    ``[0, u_max]`` and its predicted output inside ``[y_min, y_max]``. If the
    band cannot be met, the band is softened with L1 slack weighted by
    ``rho`` and the result is marked ``SoftRelaxed``. ``gamma`` is kept
    non-negative. If no scenario ever moves the input, ``gamma`` is
    unconstrained and the result is ``Unbounded``.
    """
    init = init or last_window(H)
    a, G = affine_prediction(H, cfg, init, spec.segments)
    n_u, n_y = H.n_u, H.n_y
    horizon = spec.segments * H.n_h
    if spec.agc.shape[0] != horizon:
        raise DimensionMismatch(f"AGC scenarios have {spec.agc.shape[0]} steps, "
                                f"horizon is {horizon}")
    S = spec.n_scen
    nU = horizon * n_u
    nY = horizon * n_y
    nb = 1 if spec.baseline == "scalar" else nU
    # u_i = B p + gamma * agc_i (broadcast over input channels)
    B = np.ones((nU, 1)) if nb == 1 else np.eye(nU)
    agc_u = [np.repeat(spec.agc[:, i], n_u) for i in range(S)]

    def build(soft: bool):
        n = 1 + nb + (2 * S * nY if soft else 0)
        rows, rhs = [], []
        for i in range(S):
            Ui = np.zeros((nU, n))
            Ui[:, 0] = agc_u[i]
            Ui[:, 1:1 + nb] = B
            rows += [Ui, -Ui]
            rhs += [np.full(nU, spec.u_max), np.zeros(nU)]
            Yi = G @ Ui
            if soft:
                lo_s = 1 + nb + 2 * i * nY
                Yh, Yl = Yi.copy(), -Yi
                Yh[:, lo_s + nY:lo_s + 2 * nY] = -np.eye(nY)
                Yl[:, lo_s:lo_s + nY] = -np.eye(nY)
                rows += [Yh, Yl]
            else:
                rows += [Yi, -Yi]
            rhs += [spec.y_max - a, a - spec.y_min]
        c = np.zeros(n)
        c[0] = -1.0
        lo = np.full(n, -np.inf)
        lo[0] = 0.0
        if soft:
            c[1 + nb:] = spec.rho
            lo[1 + nb:] = 0.0
        return LinearProgram(c, A_ineq=np.vstack(rows), b_ineq=np.concatenate(rhs), lo=lo)

    def unpack(x):
        gamma, p = x[0], x[1:1 + nb]
        u = np.array([B @ p + gamma * agc_u[i] for i in range(S)])
        y = np.array([a + G @ ui for ui in u])
        return gamma, p, u, y

    sol = solve_lp(build(False))
    if sol.status == "Optimal":
        gamma, p, u, y = unpack(sol.x)
        return BidResult(float(gamma), p, FEASIBLE, y, u)
    if sol.status == "Unbounded":
        return _unbounded(nb)
    soft = solve_lp(build(True))
    if soft.status == "Unbounded":
        return _unbounded(nb)
    if soft.status != "Optimal":
        raise NumericalFailure("soft-relaxed bid problem is infeasible; the input box "
                               "admits no baseline")
    gamma, p, u, y = unpack(soft.x)
    slack = soft.x[1 + nb:]
    return BidResult(float(gamma), p, SOFT, y, u, float(np.sum(slack)),
                     "comfort band infeasible; slack penalized at rho", slack)


def _unbounded(nb) -> BidResult:
    return BidResult(np.inf, np.zeros(nb), UNBOUNDED, np.zeros((0, 0)), np.zeros((0, 0)),
                     message="gamma is unconstrained: every AGC scenario is zero on all "
                             "active constraints")


def parse_agc_csv(text: str) -> np.ndarray:
    """AGC scenarios: one column per scenario, one row per step, optional header."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ConfigError("empty AGC file")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric AGC entry: {exc}") from None
    if data.ndim != 2 or data.size == 0:
        raise ConfigError("AGC file must be a non-empty rectangular table")
    return data


def read_agc_csv(path) -> np.ndarray:
    return parse_agc_csv(Path(path).read_text(encoding="utf-8"))


def agc_to_csv(agc) -> str:
    agc = np.asarray(agc, dtype=float)
    if agc.ndim == 1:
        agc = agc[:, None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"scen{i + 1}" for i in range(agc.shape[1])])
    for r in agc:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()
