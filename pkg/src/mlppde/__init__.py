"""Multilevel Picard Monte Carlo for high-dimensional semilinear heat equations."""

import platform

import numpy as np

from .mlp import (
    EstimateRecord,
    MlpLevel,
    NonFiniteEstimate,
    mlp_estimate,
    mlp_estimate_batch,
    mlp_estimate_parallel,
    predict_cost,
    theorem_schedule,
)
from .model import (
    CostLedger,
    GeometricBm,
    InitialValue,
    Nonlinearity,
    ScaledHeat,
    SemilinearProblem,
    evaluate_f,
    evaluate_g,
    sample_transition,
)
from .streams import StreamKey, derive, gaussian_vector, uniform01

__version__ = "0.1.0"


def build_id() -> str:
    return f"mlppde-{__version__} numpy-{np.__version__} python-{platform.python_version()}"


__all__ = [
    "CostLedger",
    "EstimateRecord",
    "GeometricBm",
    "InitialValue",
    "MlpLevel",
    "NonFiniteEstimate",
    "Nonlinearity",
    "ScaledHeat",
    "SemilinearProblem",
    "StreamKey",
    "build_id",
    "derive",
    "evaluate_f",
    "evaluate_g",
    "gaussian_vector",
    "mlp_estimate",
    "mlp_estimate_batch",
    "mlp_estimate_parallel",
    "predict_cost",
    "sample_transition",
    "theorem_schedule",
    "uniform01",
]
