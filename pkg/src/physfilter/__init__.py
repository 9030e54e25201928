"""Data-driven output prediction with physics-consistent data filtering."""

__version__ = "0.1.0"

from .errors import PhysFilterError  # noqa: E402
from .trajectory import Trajectory, HankelSystem, build_hankel_system, check_persistent_excitation  # noqa: E402
from .predictor import Predictor, PredictorConfig, PredictionRequest, predict, predict_split  # noqa: E402
from .rules import Polyhedron, PhysicalRule, temperature_consistency, bidding_consistency  # noqa: E402
from .filtering import FilterProblem, FilterResult, solve_filter, verify_consistency  # noqa: E402
from .control import MpcSpec, BidSpec, mpc_open_loop, mpc_closed_loop, solve_bid  # noqa: E402
from .sim import LtiSystem, NoiseSpec, generate_dataset, simulate  # noqa: E402

__all__ = [
    "PhysFilterError", "Trajectory", "HankelSystem", "build_hankel_system",
    "check_persistent_excitation", "Predictor", "PredictorConfig", "PredictionRequest",
    "predict", "predict_split", "Polyhedron", "PhysicalRule", "temperature_consistency",
    "bidding_consistency", "FilterProblem", "FilterResult", "solve_filter",
    "verify_consistency", "MpcSpec", "BidSpec", "mpc_open_loop", "mpc_closed_loop",
    "solve_bid", "LtiSystem", "NoiseSpec", "generate_dataset", "simulate",
]
