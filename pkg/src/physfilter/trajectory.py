"""Input/output records, Hankel matrices and persistent excitation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, MalformedTrajectory, SequenceTooShort

RANK_TOL = 1e-9
_GRID_RTOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_sequence(s) -> np.ndarray:
    """Coerce a scalar or vector sequence into a (T, n_s) array."""
    a = np.asarray(s, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a sequence of vectors, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Trajectory:
    """A uniformly sampled input/output record.

    Exogenous disturbances (outdoor temperature, irradiation, ...) are stored
    as additional input channels.

    Attributes:
        timestamps: Sample times in seconds, shape (T,).
        inputs: Input samples, shape (T, n_u).
        outputs: Output samples, shape (T, n_y).
        sample_time: Grid spacing in seconds.
    """

    timestamps: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    sample_time: float

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).ravel()
        u = _as_sequence(self.inputs)
        y = _as_sequence(self.outputs)
        if len(u) != len(y) or len(t) != len(u):
            raise MalformedTrajectory(
                f"length mismatch: {len(t)} timestamps, {len(u)} inputs, {len(y)} outputs")
        if len(u) < 1:
            raise MalformedTrajectory("trajectory must hold at least one sample")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise MalformedTrajectory("missing or non-finite samples are not allowed")
        dt = float(self.sample_time)
        if not dt > 0:
            raise MalformedTrajectory("sample_time must be positive")
        if len(t) > 1:
            steps = np.diff(t)
            if np.any(np.abs(steps - dt) > _GRID_RTOL * max(dt, np.max(np.abs(t)))):
                raise MalformedTrajectory(
                    "timestamps must be strictly increasing with constant spacing "
                    "equal to sample_time")
        object.__setattr__(self, "timestamps", _frozen(t))
        object.__setattr__(self, "inputs", _frozen(u))
        object.__setattr__(self, "outputs", _frozen(y))
        object.__setattr__(self, "sample_time", dt)

    @classmethod
    def from_arrays(cls, inputs, outputs, sample_time: float = 1.0, t0: float = 0.0):
        u = _as_sequence(inputs)
        return cls(t0 + sample_time * np.arange(len(u)), u, outputs, sample_time)

    @property
    def T(self) -> int:
        return len(self.inputs)

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_y(self) -> int:
        return self.outputs.shape[1]

    def with_outputs(self, outputs) -> "Trajectory":
        return Trajectory(self.timestamps, self.inputs, outputs, self.sample_time)


def build_hankel(s, L: int) -> np.ndarray:
    """Hankel matrix of depth ``L`` of a vector sequence.

    Column ``j`` is the window ``(s_j, ..., s_{j+L-1})`` stacked into a single
    vector, so block ``(i, j)`` equals ``s_{i+j}`` (zero-based).

    Args:
        s: Sequence of shape (T,) or (T, n_s).
        L: Depth (number of block rows).

    Returns:
        Array of shape (L * n_s, T - L + 1).

    Raises:
        SequenceTooShort: If T < L.
    """
    s = _as_sequence(s)
    T, n_s = s.shape
    if L < 1:
        raise ValueError("depth L must be at least 1")
    if T < L:
        raise SequenceTooShort(f"sequence of length {T} is shorter than depth {L}")
    n_cols = T - L + 1
    windows = np.lib.stride_tricks.sliding_window_view(s, (L, n_s))[:, 0]
    return np.ascontiguousarray(windows.reshape(n_cols, L * n_s).T)


@dataclass(frozen=True)
class HankelSystem:
    """Row-partitioned input and output Hankel matrices of depth L = t_init + n_h.

    ``u_data`` and ``y_data`` keep the source sequences so the output blocks
    can be rebuilt from perturbed data (see :meth:`with_outputs`).
    """

    t_init: int
    n_h: int
    Hu_init: np.ndarray
    Hu_pred: np.ndarray
    Hy_init: np.ndarray
    Hy_pred: np.ndarray
    n_u: int
    n_y: int
    u_data: np.ndarray = field(repr=False)
    y_data: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return self.t_init + self.n_h

    @property
    def n_cols(self) -> int:
        return self.Hu_init.shape[1]

    @property
    def T(self) -> int:
        return len(self.u_data)

    @property
    def Hu(self) -> np.ndarray:
        return np.vstack([self.Hu_init, self.Hu_pred])

    @property
    def Hy(self) -> np.ndarray:
        return np.vstack([self.Hy_init, self.Hy_pred])

    def with_outputs(self, y) -> "HankelSystem":
        """Same input data, output blocks rebuilt from ``y``."""
        y = _as_sequence(y)
        if y.shape != self.y_data.shape:
            raise DimensionMismatch(
                f"replacement outputs have shape {y.shape}, expected {self.y_data.shape}")
        return _partition(self.u_data, y, self.t_init, self.n_h)


def _partition(u, y, t_init, n_h) -> HankelSystem:
    L = t_init + n_h
    Hu = build_hankel(u, L)
    Hy = build_hankel(y, L)
    n_u, n_y = u.shape[1], y.shape[1]
    return HankelSystem(
        t_init=t_init,
        n_h=n_h,
        Hu_init=_frozen(Hu[: t_init * n_u]),
        Hu_pred=_frozen(Hu[t_init * n_u:]),
        Hy_init=_frozen(Hy[: t_init * n_y]),
        Hy_pred=_frozen(Hy[t_init * n_y:]),
        n_u=n_u,
        n_y=n_y,
        u_data=_frozen(u),
        y_data=_frozen(y),
    )


def build_hankel_system(traj: Trajectory, t_init: int, n_h: int) -> HankelSystem:
    """Build the four Hankel blocks of depth ``t_init + n_h`` from a trajectory."""
    if t_init < 1 or n_h < 1:
        raise ValueError("t_init and n_h must both be at least 1")
    if traj.T < t_init + n_h:
        raise SequenceTooShort(
            f"trajectory of length {traj.T} is shorter than t_init + n_h = {t_init + n_h}")
    return _partition(traj.inputs, traj.outputs, t_init, n_h)


@dataclass(frozen=True)
class PEReport:
    satisfied: bool
    rank: int
    required: int

    def to_dict(self) -> dict:
        return {"satisfied": self.satisfied, "rank": self.rank, "required": self.required}


def numerical_rank(H: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    if H.size == 0:
        return 0
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))


def check_persistent_excitation(u, order: int, rank_tol: float = RANK_TOL) -> PEReport:
    """Test whether ``u`` is persistently exciting of the given order.

    The input Hankel matrix of depth ``order`` must have full row rank
    ``order * n_u``; singular values below ``rank_tol * sigma_max`` count as
    zero.
    """
    u = _as_sequence(u)
    H = build_hankel(u, order)
    rank = numerical_rank(H, rank_tol)
    required = order * u.shape[1]
    return PEReport(satisfied=rank == required, rank=rank, required=required)


# -- CSV ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"u{i + 1}" for i in range(traj.n_u)]
               + [f"y{i + 1}" for i in range(traj.n_y)])
    for t, u, y in zip(traj.timestamps, traj.inputs, traj.outputs):
        w.writerow([_fmt(t)] + [_fmt(v) for v in u] + [_fmt(v) for v in y])
    return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, path) -> None:
    Path(path).write_text(trajectory_to_csv(traj), encoding="utf-8")


def parse_trajectory_csv(text: str, sample_time: float | None = None) -> Trajectory:
    """Parse the ``t,u1..u{n_u},y1..y{n_y}`` CSV format.

    The sample time is inferred from the first two timestamps unless given.
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise MalformedTrajectory("empty trajectory file")
    header = [c.strip() for c in rows[0]]
    if not header or header[0] != "t":
        raise MalformedTrajectory("first column must be 't'")
    u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
    y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not u_cols or not y_cols:
        raise MalformedTrajectory("header must name at least one u and one y column")
    expected = ["t"] + [f"u{i + 1}" for i in range(len(u_cols))] + \
        [f"y{i + 1}" for i in range(len(y_cols))]
    if header != expected:
        raise MalformedTrajectory(f"header {header} does not match {expected}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise MalformedTrajectory(f"non-numeric entry: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(header):
        raise MalformedTrajectory("ragged or empty data rows")
    t = data[:, 0]
    if sample_time is None:
        sample_time = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return Trajectory(t, data[:, u_cols], data[:, y_cols], sample_time)


def read_trajectory_csv(path, sample_time: float | None = None) -> Trajectory:
    return parse_trajectory_csv(Path(path).read_text(encoding="utf-8"), sample_time)
