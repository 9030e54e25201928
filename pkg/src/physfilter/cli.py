"""Command-line entry point.

Every command reads one JSON run config (``--config``) and writes its
artifacts into ``--out``. Exit codes: 0 success, 2 input or config error,
3 modeled infeasibility or unboundedness, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .control import (UNBOUNDED, BidSpec, MpcSpec, last_window, mpc_closed_loop,
                      mpc_open_loop, read_agc_csv, solve_bid)
from .errors import (ConfigError, IterationLimit, NumericalFailure, PhysFilterError,
                     SamplingStarved, SingularMatrix)
from .filtering import FilterProblem, solve_filter, verify_consistency
from .predictor import PredictionRequest, Predictor, PredictorConfig
from .rules import rule_from_config
from .serialize import dumps, fmt
from .sim import EXCITATIONS, LtiSystem, NoiseSpec, generate_dataset
from .solvers.bilinear import SolverOptions
from .trajectory import (build_hankel_system, check_persistent_excitation,
                         read_trajectory_csv, trajectory_to_csv)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_SOLVER = 0, 2, 3, 4

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "paths": _obj({"data": {"type": "string"}, "system": {"type": "string"},
                   "agc": {"type": "string"}}),
    "system": _obj({"n_x": _POS_INT, "n_u": _POS_INT, "n_y": _POS_INT, "A": _MATRIX,
                    "B": _MATRIX, "C": _MATRIX, "D": _MATRIX}, ["A", "B", "C"]),
    "dataset": _obj({"T": _POS_INT, "excitation": {"enum": list(EXCITATIONS)},
                     "u_max": {"type": "number", "exclusiveMinimum": 0},
                     "noise_std": {"type": "number", "minimum": 0},
                     "noise_distribution": {"enum": ["gaussian", "uniform"]},
                     "sample_time": {"type": "number", "exclusiveMinimum": 0},
                     "L": _POS_INT, "x0": {"type": "array", "items": _NUM}}),
    "predictor": _obj({"t_init": _POS_INT, "n_h": _POS_INT,
                       "regularizer": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                                                 _MATRIX]}}),
    "pe": _obj({"order": _POS_INT, "n_x": {"type": "integer", "minimum": 0}}),
    "request": _obj({"u_init": {"type": "array", "items": _NUM},
                     "y_init": {"type": "array", "items": _NUM},
                     "u_pred": {"type": "array", "items": _NUM},
                     "segments": _POS_INT}),
    "rule": {"type": "object"},
    "solver": {"type": "object"},
    "filter": _obj({"norm": {"enum": ["L2", "L1"]},
                    "method": {"enum": ["AltMin", "McCormickBB"]},
                    "segments": _POS_INT, "n_samples": {"type": "integer", "minimum": 0}}),
    "mpc": _obj({"reference": {"oneOf": [_NUM, {"type": "array", "items": _NUM}]},
                 "u_max": {"type": "number", "exclusiveMinimum": 0},
                 "segments": _POS_INT,
                 "closed_loop_steps": {"type": "integer", "minimum": 0},
                 "x0": {"type": "array", "items": _NUM}}, ["reference"]),
    "bid": _obj({"y_min": _NUM, "y_max": _NUM,
                 "u_max": {"type": "number", "exclusiveMinimum": 0},
                 "rho": {"type": "number", "exclusiveMinimum": 0},
                 "segments": _POS_INT, "baseline": {"enum": ["scalar", "vector"]},
                 "agc": _MATRIX}, ["y_min", "y_max"]),
}, ["schema_version"])


class RunConfig:
    """Validated run config; relative paths resolve against the config file."""

    def __init__(self, data: dict, base: Path = Path(".")):
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {loc}: {exc.message}") from None
        self.data = data
        self.base = base

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls(data, path.parent)

    def section(self, key: str) -> dict:
        return dict(self.data.get(key, {}))

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    def path(self, key: str, override=None) -> Path | None:
        if override is not None:
            return Path(override)
        p = self.section("paths").get(key)
        return None if p is None else self.base / p

    def system(self) -> LtiSystem:
        if "system" in self.data:
            d = self.section("system")
            if "D" not in d:
                d["D"] = np.zeros((len(d["C"]), len(d["B"][0]))).tolist()
            A, B, C = (np.array(d[k], dtype=float) for k in "ABC")
            d.setdefault("n_x", A.shape[0])
            d.setdefault("n_u", B.shape[1] if B.ndim == 2 else 1)
            d.setdefault("n_y", C.shape[0])
            return LtiSystem.from_dict(d)
        p = self.path("system")
        if p is None:
            raise ConfigError("config needs 'system' or 'paths.system'")
        try:
            return LtiSystem.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"system file is not valid JSON: {exc}") from None

    def predictor(self) -> PredictorConfig:
        d = self.section("predictor")
        reg = d.get("regularizer", PredictorConfig.regularizer)
        return PredictorConfig(d.get("t_init", PredictorConfig.t_init),
                               d.get("n_h", PredictorConfig.n_h),
                               np.array(reg, dtype=float) if isinstance(reg, list) else reg)

    def solver(self) -> SolverOptions:
        return SolverOptions.from_dict(self.section("solver"))


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _load_data(cfg: RunConfig, args):
    p = cfg.path("data", args.data)
    if p is None:
        raise ConfigError("no data file: pass --data or set paths.data")
    return read_trajectory_csv(p)


def _hankel(cfg: RunConfig, args, pcfg: PredictorConfig):
    traj = _load_data(cfg, args)
    return traj, build_hankel_system(traj, pcfg.t_init, pcfg.n_h)


# -- commands -------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> int:
    sysm = cfg.system()
    d = cfg.section("dataset")
    noise = NoiseSpec(d.get("noise_std", 0.0), d.get("noise_distribution", "gaussian"))
    traj = generate_dataset(sysm, T=d.get("T", 384), excitation=d.get("excitation", "prbs"),
                            noise=noise, seed=cfg.seed, L=d.get("L"),
                            u_max=d.get("u_max", 1.0), sample_time=d.get("sample_time", 1.0),
                            x0=d.get("x0"))
    meta = {"seed": cfg.seed, "system_sha256": sysm.digest(), "T": traj.T,
            "excitation": d.get("excitation", "prbs"), "noise_std": noise.std,
            "noise_distribution": noise.distribution, "schema_version": SCHEMA_VERSION}
    if d.get("L") is not None:
        meta["pe"] = check_persistent_excitation(traj.inputs, d["L"] + sysm.n_x).to_dict()
    _write(args.out, "dataset.csv", trajectory_to_csv(traj))
    _write(args.out, "dataset.json", dumps(meta))
    return EXIT_OK


def cmd_check_pe(cfg: RunConfig, args) -> int:
    traj = _load_data(cfg, args)
    order = args.order or cfg.section("pe").get("order")
    if order is None:
        pe = cfg.section("pe")
        if "n_x" not in pe:
            raise ConfigError("PE order needs --order, pe.order or pe.n_x")
        order = cfg.predictor().L + int(pe["n_x"])
    rep = check_persistent_excitation(traj.inputs, int(order))
    _write(args.out, "pe.json", dumps({**rep.to_dict(), "order": int(order)}))
    return EXIT_OK


def _request(cfg: RunConfig, H, segments: int) -> PredictionRequest:
    d = cfg.section("request")
    base = last_window(H)
    u_pred = d.get("u_pred", np.zeros(segments * H.n_h * H.n_u))
    return PredictionRequest(d.get("u_init", base.u_init), d.get("y_init", base.y_init), u_pred)


def _rows_csv(y: np.ndarray, u: np.ndarray, n_u: int, n_y: int) -> str:
    u = u.reshape(-1, n_u)
    y = y.reshape(-1, n_y)
    lines = [",".join(["k"] + [f"u{i + 1}" for i in range(n_u)]
                      + [f"y{i + 1}" for i in range(n_y)])]
    for k, (ui, yi) in enumerate(zip(u, y)):
        lines.append(",".join([str(k)] + [fmt(v) for v in ui] + [fmt(v) for v in yi]))
    return "\n".join(lines) + "\n"


def cmd_predict(cfg: RunConfig, args) -> int:
    pcfg = cfg.predictor()
    _, H = _hankel(cfg, args, pcfg)
    k = args.split or cfg.section("request").get("segments", 1)
    req = _request(cfg, H, k)
    pred = Predictor(H, pcfg)
    if k == 1:
        y = pred.solve(req).y_pred
    else:
        y = np.concatenate([r.y_pred for r in pred.solve_split(req)])
    _write(args.out, "prediction.csv", _rows_csv(y, req.u_pred, H.n_u, H.n_y))
    return EXIT_OK


def _rule(cfg: RunConfig, H, segments: int):
    if "rule" not in cfg.data:
        raise ConfigError("config needs a 'rule' section")
    return rule_from_config(cfg.section("rule"), H, segments)


def cmd_filter(cfg: RunConfig, args) -> int:
    pcfg = cfg.predictor()
    traj, H = _hankel(cfg, args, pcfg)
    f = cfg.section("filter")
    k = args.split or f.get("segments", 1)
    rule = _rule(cfg, H, k)
    n_samples = f.get("n_samples", 200)
    pre = verify_consistency(H, pcfg, rule, k, n_samples=n_samples, seed=cfg.seed)
    problem = FilterProblem(H, pcfg, rule, segments=k, norm=f.get("norm", "L2"))
    res = solve_filter(problem, cfg.solver(), method=f.get("method", "AltMin"),
                       n_samples=n_samples, seed=cfg.seed)
    report = res.summary()
    report["pre_verification"] = pre.to_dict()
    report["post_verification"] = report.pop("verification")
    report["segments"] = k
    report["norm"] = problem.norm
    _write(args.out, "filtered.csv", res.trajectory_csv(traj))
    _write(args.out, "filter_report.json", dumps(report))
    if res.status == "Infeasible":
        return EXIT_MODEL
    if res.status == "IterationLimit":
        return EXIT_SOLVER
    return EXIT_OK


def cmd_mpc(cfg: RunConfig, args) -> int:
    pcfg = cfg.predictor()
    _, H = _hankel(cfg, args, pcfg)
    m = cfg.section("mpc")
    k = m.get("segments", 1)
    ref = np.atleast_1d(np.asarray(m["reference"], dtype=float))
    n = k * H.n_h * H.n_y
    if ref.size == 1:
        ref = np.full(n, ref[0])
    spec = MpcSpec(ref, m.get("u_max", 6.0), k)
    rule = _rule(cfg, H, k) if "rule" in cfg.data else None
    plan = mpc_open_loop(H, pcfg, rule, spec)
    _write(args.out, "mpc_plan.csv", plan.to_csv(H.n_u, H.n_y))
    meta = {"cost": plan.cost, "kkt_residual": plan.kkt_residual,
            "consistency": None if plan.consistency is None else plan.consistency.to_dict()}
    _write(args.out, "mpc_report.json", dumps(meta))
    steps = args.closed_loop if args.closed_loop is not None else m.get("closed_loop_steps", 0)
    if steps:
        plant = cfg.system()
        noise = NoiseSpec(cfg.section("dataset").get("noise_std", 0.0),
                          cfg.section("dataset").get("noise_distribution", "gaussian"))
        log = mpc_closed_loop(plant, steps, spec, H, pcfg, x0=m.get("x0"), noise=noise,
                              seed=cfg.seed)
        _write(args.out, "closed_loop.csv", trajectory_to_csv(log))
    return EXIT_OK


def cmd_bid(cfg: RunConfig, args) -> int:
    pcfg = cfg.predictor()
    _, H = _hankel(cfg, args, pcfg)
    b = cfg.section("bid")
    if "agc" in b:
        agc = np.array(b["agc"], dtype=float)
    else:
        p = cfg.path("agc", args.agc)
        if p is None:
            raise ConfigError("AGC scenarios missing: set bid.agc, paths.agc or --agc")
        agc = read_agc_csv(p)
    spec = BidSpec(agc, b["y_min"], b["y_max"], b.get("u_max", 6.0), b.get("rho", 1e4),
                   b.get("segments", 1), b.get("baseline", "scalar"))
    res = solve_bid(H, pcfg, spec)
    _write(args.out, "bid.json", res.to_json())
    _write(args.out, "bid_scenarios.csv", res.scenarios_csv())
    return EXIT_MODEL if res.status == UNBOUNDED else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "check-pe": cmd_check_pe, "predict": cmd_predict,
            "filter": cmd_filter, "mpc": cmd_mpc, "bid": cmd_bid}

_HELP = {
    "simulate": "generate a synthetic dataset (dataset.csv, dataset.json)",
    "check-pe": "test persistent excitation of the recorded input (pe.json)",
    "predict": "predict outputs for a request (prediction.csv)",
    "filter": "filter recorded outputs against a rule (filtered.csv, filter_report.json)",
    "mpc": "open-loop tracking plan (mpc_plan.csv) and optional closed loop",
    "bid": "flexibility bid over AGC scenarios (bid.json, bid_scenarios.csv)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="physfilter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, text in _HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, type=Path, help="JSON run config")
        p.add_argument("--out", type=Path, default=Path("."),
                       help="output directory (default: current directory)")
        if name != "simulate":
            p.add_argument("--data", type=Path, help="trajectory CSV (overrides paths.data)")
        if name == "check-pe":
            p.add_argument("--order", type=int,
                           help="excitation order (default: t_init + n_h + pe.n_x)")
        if name in ("predict", "filter"):
            p.add_argument("--split", type=int, metavar="K",
                           help="number of horizon segments (default 1)")
        if name == "mpc":
            p.add_argument("--closed-loop", type=int, metavar="N",
                           help="also run N receding-horizon steps on the configured system")
        if name == "bid":
            p.add_argument("--agc", type=Path, help="AGC scenario CSV (overrides paths.agc)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for flag in ("order", "split", "closed_loop"):
        v = getattr(args, flag, None)
        if v is not None and v < (0 if flag == "closed_loop" else 1):
            print(f"error: --{flag.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_INPUT
    try:
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except (IterationLimit, NumericalFailure, SingularMatrix, SamplingStarved) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (PhysFilterError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
