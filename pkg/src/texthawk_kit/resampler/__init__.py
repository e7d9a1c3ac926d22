from .model import (
    ROUTING_TABLES,
    Resampler,
    ResamplerConfig,
    ResamplerOutput,
    RoutingTable,
    cross_attend_layer,
    rearrange_tokens,
    resample_and_rearrange,
)
from .qpn import QpnConfig, QueryProposalNetwork, propose_queries
from .spe import AntipodalEndpointsError, SpePair, axis_fraction, spe_for_position, spe_interpolate

__all__ = [
    "ROUTING_TABLES",
    "AntipodalEndpointsError",
    "QpnConfig",
    "QueryProposalNetwork",
    "Resampler",
    "ResamplerConfig",
    "ResamplerOutput",
    "RoutingTable",
    "SpePair",
    "axis_fraction",
    "cross_attend_layer",
    "propose_queries",
    "rearrange_tokens",
    "resample_and_rearrange",
    "spe_for_position",
    "spe_interpolate",
]
