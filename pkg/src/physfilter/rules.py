"""Affine physical rules: polyhedra in half-space form and the two stock rules."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, SamplingStarved
from .trajectory import HankelSystem

MEMBERSHIP_TOL = 1e-8
MIN_ACCEPTANCE = 1e-4


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Polyhedron:
    """The set ``{x : H x <= h}``.

    ``lo`` / ``hi`` are an optional box supplied by the caller as an outer
    bound (used for sampling and McCormick bounding). They are checked for
    finiteness only; the box is not required to contain the polyhedron.
    """

    H: np.ndarray
    h: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape[0] != h.size:
            raise DimensionMismatch(f"H has {H.shape[0]} rows but h has {h.size} entries")
        object.__setattr__(self, "H", _ro(H))
        object.__setattr__(self, "h", _ro(h))
        d = H.shape[1]
        for name in ("lo", "hi"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.size == 1:
                    v = np.full(d, float(v[0]))
                if v.size != d:
                    raise DimensionMismatch(f"{name} has {v.size} entries, expected {d}")
                if not np.all(np.isfinite(v)):
                    raise ValueError(f"box bound {name} must be finite")
                object.__setattr__(self, name, _ro(v))
        if (self.lo is None) != (self.hi is None):
            raise ValueError("give both lo and hi or neither")
        if self.lo is not None and np.any(self.lo > self.hi):
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    @property
    def has_box(self) -> bool:
        return self.lo is not None

    @classmethod
    def box(cls, lo, hi) -> "Polyhedron":
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        d = lo.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([hi, -lo]), lo, hi)

    @classmethod
    def singleton_zero(cls, d: int) -> "Polyhedron":
        """``{0}`` written as the paired inequalities ``x <= 0`` and ``-x <= 0``."""
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.zeros(2 * d),
                   np.zeros(d), np.zeros(d))

    def membership(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise DimensionMismatch(f"point has {x.size} entries, polyhedron lives in R^{self.dim}")
        return bool(np.all(self.H @ x <= self.h + tol))

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Draw ``n`` points by rejection sampling over the box.

        Raises:
            ValueError: If no box is attached.
            SamplingStarved: If fewer than one in 10^4 proposals is accepted.
        """
        if not self.has_box:
            raise ValueError("sampling needs box bounds")
        rng = np.random.default_rng(seed)
        out = np.empty((0, self.dim))
        drawn = 0
        batch = max(64, 4 * n)
        while len(out) < n:
            prop = rng.uniform(self.lo, self.hi, size=(batch, self.dim))
            ok = np.all(prop @ self.H.T <= self.h + MEMBERSHIP_TOL, axis=1)
            out = np.vstack([out, prop[ok]])
            drawn += batch
            if drawn >= 1.0 / MIN_ACCEPTANCE and len(out) < MIN_ACCEPTANCE * drawn:
                raise SamplingStarved(
                    f"accepted {len(out)} of {drawn} proposals (rate below {MIN_ACCEPTANCE:g})")
        return out[:n]

    def to_dict(self) -> dict:
        d = {"H": self.H.tolist(), "h": self.h.tolist()}
        if self.has_box:
            d["lo"], d["hi"] = self.lo.tolist(), self.hi.tolist()
        return d


def membership(P: Polyhedron, x, tol: float = MEMBERSHIP_TOL) -> bool:
    return P.membership(x, tol)


def sample(P: Polyhedron, n: int, seed=None) -> np.ndarray:
    return P.sample(n, seed)


@dataclass(frozen=True)
class PhysicalRule:
    """Output set ``Y`` that must hold for every input in ``U`` and every
    initial window in ``Y_init`` x ``U_init``.

    ``Y`` and ``U`` live on the full (possibly split) prediction horizon,
    ``Y_init`` and ``U_init`` on the initialization window.
    """

    Y: Polyhedron
    Y_init: Polyhedron
    U: Polyhedron
    U_init: Polyhedron
    name: str = "custom"

    def check_dimensions(self, H: HankelSystem, segments: int = 1) -> None:
        want = {
            "Y": segments * H.n_h * H.n_y, "Y_init": H.t_init * H.n_y,
            "U": segments * H.n_h * H.n_u, "U_init": H.t_init * H.n_u,
        }
        for key, d in want.items():
            got = getattr(self, key).dim
            if got != d:
                raise DimensionMismatch(f"rule set {key} has dimension {got}, expected {d}")

    def to_dict(self) -> dict:
        return {"name": self.name, "Y": self.Y.to_dict(), "Y_init": self.Y_init.to_dict(),
                "U": self.U.to_dict(), "U_init": self.U_init.to_dict()}


def _check_umax(u_max):
    if not (np.isfinite(u_max) and u_max > 0):
        raise ValueError("u_max must be positive and finite")


def _stock_sets(H: HankelSystem, u_max: float, segments: int):
    d_u = segments * H.n_h * H.n_u
    return (Polyhedron.singleton_zero(H.t_init * H.n_y),
            Polyhedron.box(np.zeros(d_u), np.full(d_u, float(u_max))),
            Polyhedron.singleton_zero(H.t_init * H.n_u))


def temperature_consistency(H: HankelSystem, u_max: float, segments: int = 1) -> PhysicalRule:
    """Non-negative inputs from a zero initial window give non-negative outputs.

    ``Y = {y >= 0}``; ``U = [0, u_max]``; the initial sets are ``{0}``.
    """
    _check_umax(u_max)
    d_y = segments * H.n_h * H.n_y
    Y_init, U, U_init = _stock_sets(H, u_max, segments)
    return PhysicalRule(Polyhedron(-np.eye(d_y), np.zeros(d_y)), Y_init, U, U_init,
                        name="temperature")


def bidding_consistency(H: HankelSystem, u_max: float, segments: int = 1) -> PhysicalRule:
    """Non-negative inputs give a non-negative accumulated output, ``1'y >= 0``."""
    _check_umax(u_max)
    d_y = segments * H.n_h * H.n_y
    Y_init, U, U_init = _stock_sets(H, u_max, segments)
    return PhysicalRule(Polyhedron(-np.ones((1, d_y)), np.zeros(1)), Y_init, U, U_init,
                        name="bidding")


_RULE_KEYS = {"type", "u_max", "segments", "custom"}
_CUSTOM_KEYS = {"Hy", "hy", "Hy_init", "hy_init", "Hu", "hu", "u_lo", "u_hi",
                "Hu_init", "hu_init"}


def rule_from_config(cfg: dict, H: HankelSystem, segments: int | None = None) -> PhysicalRule:
    """Build a rule from ``{type, u_max, custom}``.

    ``custom`` supplies at least ``Hy``/``hy``; the remaining sets default to
    the stock choices (zero initial window, ``U = [0, u_max]``). A custom
    ``U`` must carry a box through ``u_lo``/``u_hi``.

    Raises:
        ConfigError: On unknown keys, unknown types or malformed matrices.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("rule config must be a mapping")
    extra = set(cfg) - _RULE_KEYS
    if extra:
        raise ConfigError(f"unknown rule keys: {sorted(extra)}")
    kind = cfg.get("type")
    k = int(segments if segments is not None else cfg.get("segments", 1))
    try:
        u_max = float(cfg["u_max"])
        _check_umax(u_max)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"rule needs a positive u_max: {exc}") from None
    if kind == "temperature":
        return temperature_consistency(H, u_max, k)
    if kind == "bidding":
        return bidding_consistency(H, u_max, k)
    if kind != "custom":
        raise ConfigError(f"unknown rule type {kind!r}")
    c = cfg.get("custom")
    if not isinstance(c, dict) or "Hy" not in c or "hy" not in c:
        raise ConfigError("custom rule needs custom.Hy and custom.hy")
    extra = set(c) - _CUSTOM_KEYS
    if extra:
        raise ConfigError(f"unknown custom rule keys: {sorted(extra)}")
    Y_init, U, U_init = _stock_sets(H, u_max, k)
    try:
        Y = Polyhedron(c["Hy"], c["hy"])
        if "Hy_init" in c:
            Y_init = Polyhedron(c["Hy_init"], c["hy_init"])
        if "Hu_init" in c:
            U_init = Polyhedron(c["Hu_init"], c["hu_init"])
        if "Hu" in c:
            U = Polyhedron(c["Hu"], c["hu"], c.get("u_lo"), c.get("u_hi"))
        rule = PhysicalRule(Y, Y_init, U, U_init, name="custom")
        rule.check_dimensions(H, k)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed custom rule: {exc}") from None
    return rule


def load_rule(path, H: HankelSystem, segments: int | None = None) -> PhysicalRule:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"rule file is not valid JSON: {exc}") from None
    return rule_from_config(cfg, H, segments)
