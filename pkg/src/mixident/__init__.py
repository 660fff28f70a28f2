"""Identifiability and convergence-rate tools for finite mixture models."""

__version__ = "0.1.0"

from .measures import (  # noqa: F401
    MixingMeasure,
    ParamPoint,
    Schema,
    TransportPlan,
    ground_distance,
    wasserstein,
)
