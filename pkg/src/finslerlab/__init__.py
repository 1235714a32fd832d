"""Cartan connection of a Finsler metric and its beta-conformal change,
computed with truncated Taylor jets and checked against independent oracles."""
from .catalog import ChangeSpec, FieldSpec, MetricSpec, PointState, make_point, sample_points
from .change import ChangeFrame, evaluate_change
from .errors import FinslerError
from .geometry import UnbarredFrame, compute_frame, frame_for
from .jets import Jet, JetContext
from .verify import RunConfig, VerificationReport, run, run_suite

__all__ = [
    "ChangeFrame", "ChangeSpec", "FieldSpec", "FinslerError", "Jet", "JetContext",
    "MetricSpec", "PointState", "RunConfig", "UnbarredFrame", "VerificationReport",
    "compute_frame", "evaluate_change", "frame_for", "make_point", "run", "run_suite",
    "sample_points",
]
__version__ = "0.1.0"
