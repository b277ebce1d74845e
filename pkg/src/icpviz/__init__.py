"""Open-loop visualisation of ICP objective functions along an interpolated transformation path."""

from icpviz._accel import HAVE_NUMBA, default_backend
from icpviz.cloud import PointCloud, build_nn_index, estimate_normals
from icpviz.geometry import RigidTransform, interpolate, lerp, make_path, slerp
from icpviz.sweep import (
    ArtificialBlindSpot,
    ClosestPoint,
    EgoBlindSpot,
    Objective,
    Ocf,
    PipelineConfig,
    Reciprocal,
    SweepCurve,
    run_sweep,
    run_sweep_suite,
)

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA",
    "ArtificialBlindSpot",
    "ClosestPoint",
    "EgoBlindSpot",
    "Objective",
    "Ocf",
    "PipelineConfig",
    "PointCloud",
    "Reciprocal",
    "RigidTransform",
    "SweepCurve",
    "build_nn_index",
    "default_backend",
    "estimate_normals",
    "interpolate",
    "lerp",
    "make_path",
    "run_sweep",
    "run_sweep_suite",
    "slerp",
]
