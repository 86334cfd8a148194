"""Coupled multilocus Wright-Fisher models: chain, diffusion and stationary law."""

from . import errors
from .model import (
    CouplingBlock,
    FrequencyState,
    LocusSpec,
    ModelSpec,
    OccupancyState,
    ValidatedModel,
    build_coupling_matrix,
    graph_to_couplings,
    interaction_graph,
    load_model,
    occupancy_to_frequency,
    validate_model,
)

__version__ = "0.1.0"
