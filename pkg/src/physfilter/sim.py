"""Ground-truth LTI simulation and synthetic dataset generation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, ExcitationFailed, GenerationFailed
from .trajectory import Trajectory, check_persistent_excitation

EXCITATIONS = ("prbs", "uniform", "closed-loop-dither")


def _mat(a, rows=None, cols=None, name="matrix") -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and a.shape[0] != rows or cols is not None and a.shape[1] != cols:
        raise DimensionMismatch(f"{name} has shape {a.shape}, expected ({rows}, {cols})")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time state-space model x+ = A x + B u, y = C x + D u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        A = _mat(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B = _mat(self.B, rows=n, name="B")
        C = _mat(self.C, cols=n, name="C")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else self.D
        D = _mat(D, rows=C.shape[0], cols=B.shape[1], name="D")
        for name, val in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, val)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0

    def controllability_matrix(self) -> np.ndarray:
        blocks, AkB = [], self.B
        for _ in range(self.n_x):
            blocks.append(AkB)
            AkB = self.A @ AkB
        return np.hstack(blocks)

    def observability_matrix(self) -> np.ndarray:
        blocks, CAk = [], self.C
        for _ in range(self.n_x):
            blocks.append(CAk)
            CAk = CAk @ self.A
        return np.vstack(blocks)

    @property
    def controllable(self) -> bool:
        return np.linalg.matrix_rank(self.controllability_matrix()) == self.n_x

    @property
    def observable(self) -> bool:
        return np.linalg.matrix_rank(self.observability_matrix()) == self.n_x

    def impulse_response(self, horizon: int) -> np.ndarray:
        """Markov parameters D, CB, CAB, ... as an array (horizon, n_y, n_u)."""
        out = np.empty((horizon, self.n_y, self.n_u))
        out[0] = self.D
        AkB = self.B
        for k in range(1, horizon):
            out[k] = self.C @ AkB
            AkB = self.A @ AkB
        return out

    def to_dict(self) -> dict:
        return {"n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y,
                "A": self.A.tolist(), "B": self.B.tolist(),
                "C": self.C.tolist(), "D": self.D.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LtiSystem":
        try:
            n_x, n_u, n_y = int(d["n_x"]), int(d["n_u"]), int(d["n_y"])
            A = np.array(d["A"], dtype=float).reshape(n_x, n_x)
            B = np.array(d["B"], dtype=float).reshape(n_x, n_u)
            C = np.array(d["C"], dtype=float).reshape(n_y, n_x)
            D = np.array(d.get("D", np.zeros((n_y, n_u))), dtype=float).reshape(n_y, n_u)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"malformed system spec: {exc}") from None
        return cls(A, B, C, D)

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def load_system(path) -> LtiSystem:
    return LtiSystem.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive i.i.d. output noise; inputs stay exact."""

    std: float = 0.0
    distribution: str = "gaussian"
    seed: int | None = None

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("noise std must be non-negative")
        if self.distribution not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.std == 0:
            return np.zeros(shape)
        if self.distribution == "gaussian":
            return self.std * rng.standard_normal(shape)
        half = np.sqrt(3.0) * self.std
        return rng.uniform(-half, half, shape)


def simulate(sys: LtiSystem, x0, u) -> np.ndarray:
    """Run the state recursion and return outputs of shape (N, n_y)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != sys.n_u:
        raise DimensionMismatch(f"input has {u.shape[1]} channels, system has {sys.n_u}")
    x = np.zeros(sys.n_x) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x.size != sys.n_x:
        raise DimensionMismatch(f"x0 has {x.size} entries, system has {sys.n_x} states")
    y = np.empty((len(u), sys.n_y))
    for i, ui in enumerate(u):
        y[i] = sys.C @ x + sys.D @ ui
        x = sys.A @ x + sys.B @ ui
    return y


def _draw_inputs(kind, T, n_u, u_max, rng):
    if kind == "prbs":
        return u_max * rng.integers(0, 2, size=(T, n_u)).astype(float)
    if kind == "uniform":
        return rng.uniform(0.0, u_max, size=(T, n_u))
    raise ValueError(f"unknown excitation {kind!r}")


def _closed_loop(sys, T, u_max, noise, rng, x0):
    # proportional loop around a piecewise-constant random setpoint, plus dither
    dc = sys.C @ np.linalg.solve(np.eye(sys.n_x) - sys.A, sys.B) + sys.D
    gain = np.linalg.pinv(dc) if np.all(np.isfinite(dc)) else np.zeros((sys.n_u, sys.n_y))
    x = np.zeros(sys.n_x) if x0 is None else np.asarray(x0, dtype=float)
    hold = max(5, T // 8)
    ref = None
    u = np.empty((T, sys.n_u))
    y = np.empty((T, sys.n_y))
    for i in range(T):
        if i % hold == 0:
            ref = dc @ rng.uniform(0.2 * u_max, 0.8 * u_max, sys.n_u)
        ym = sys.C @ x + noise.sample(sys.n_y, rng)
        u_ff = gain @ ref
        ui = u_ff + 0.5 * gain @ (ref - ym) + rng.uniform(-0.2, 0.2, sys.n_u) * u_max
        u[i] = np.clip(ui, 0.0, u_max)
        y[i] = sys.C @ x + sys.D @ u[i]
        x = sys.A @ x + sys.B @ u[i]
    return u, y


def generate_dataset(sys: LtiSystem, T: int = 384, excitation: str = "prbs",
                     noise: NoiseSpec | None = None, seed: int = 0, L: int | None = None,
                     u_max: float = 1.0, sample_time: float = 1.0, x0=None,
                     max_redraws: int = 10) -> Trajectory:
    """Excite ``sys`` and record a (noisy) trajectory.

    Inputs are drawn inside ``[0, u_max]``. When ``L`` is given, the input must
    be persistently exciting of order ``L + n_x``; failing draws are repeated
    up to ``max_redraws`` times.

    Raises:
        ExcitationFailed: If no draw satisfies the excitation condition.
    """
    noise = noise or NoiseSpec()
    if excitation not in EXCITATIONS:
        raise ValueError(f"unknown excitation {excitation!r}; choose from {EXCITATIONS}")
    rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng(noise.seed if noise.seed is not None else (seed, 1))
    order = None if L is None else L + sys.n_x
    if order is not None and T < order:
        raise ExcitationFailed(f"T={T} is shorter than the excitation order {order}")
    for _ in range(max_redraws):
        if excitation == "closed-loop-dither":
            u, y_clean = _closed_loop(sys, T, u_max, noise, rng, x0)
        else:
            u = _draw_inputs(excitation, T, sys.n_u, u_max, rng)
            y_clean = simulate(sys, x0, u)
        if order is None or check_persistent_excitation(u, order).satisfied:
            y = y_clean + noise.sample(y_clean.shape, noise_rng)
            return Trajectory.from_arrays(u, y, sample_time)
    raise ExcitationFailed(f"no persistently exciting draw of order {order} "
                           f"in {max_redraws} attempts")


def make_positive_gain_system(seed: int = 0, n_x: int = 1, n_u: int = 1, n_y: int = 1,
                              horizon: int = 20, max_draws: int = 100) -> LtiSystem:
    """Random stable system whose impulse response is elementwise non-negative.

    Non-negative A, B, C make every Markov parameter non-negative, so the
    step response never decreases; the property is still checked by
    simulation over ``horizon`` steps.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        if n_x == 1:
            A = np.array([[rng.uniform(0.05, 0.95)]])
        else:
            A = rng.uniform(0.0, 1.0, (n_x, n_x))
            A *= rng.uniform(0.4, 0.9) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
        B = rng.uniform(0.1, 1.0, (n_x, n_u))
        C = rng.uniform(0.1, 1.0, (n_y, n_x))
        sys = LtiSystem(A, B, C, np.zeros((n_y, n_u)))
        if not (sys.stable and sys.controllable):
            continue
        if np.all(sys.impulse_response(horizon) >= 0):
            return sys
    raise GenerationFailed(f"no positive-gain system found in {max_draws} draws")


def random_system(n_x: int, n_u: int, n_y: int, seed: int = 0,
                  radius: tuple[float, float] = (0.3, 0.9), max_draws: int = 100) -> LtiSystem:
    """Random stable, controllable and observable system."""
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        A = rng.standard_normal((n_x, n_x))
        A *= rng.uniform(*radius) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
        sys = LtiSystem(A, rng.standard_normal((n_x, n_u)), rng.standard_normal((n_y, n_x)),
                        rng.standard_normal((n_y, n_u)))
        if sys.stable and sys.controllable and sys.observable:
            return sys
    raise GenerationFailed(f"no stable controllable/observable system in {max_draws} draws")
