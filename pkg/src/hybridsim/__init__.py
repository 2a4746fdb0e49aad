"""Hybrid jump-diffusion simulation of stochastic reaction networks."""

from importlib import resources

from .errors import (
    BatchFailure,
    HybridSimError,
    ImpossibleEventError,
    IntensityBoundExceeded,
    NetworkSyntaxError,
    NetworkValidationError,
    StateSpaceError,
)
from .exact import cme_distribution, ssa_simulate, ssa_step
from .hybrid import HybridConfig, hybrid_simulate
from .network import (
    Partition,
    Reaction,
    ReactionNetwork,
    Species,
    State,
    apply_stoichiometry,
    combinatorial_weight,
    diffusion_validity,
    load_network,
    parse_network,
    partition_reactions,
    propensity,
    serialize_network,
)
from .streams import HybridStreams
from .trajectory import Diagnostics, Trajectory

__version__ = "0.1.0"


def bundled_network_path(name: str = "gene_burst.rxn"):
    return resources.files(__package__).joinpath("examples", name)


def gene_burst_network() -> ReactionNetwork:
    return parse_network(bundled_network_path().read_text(encoding="utf-8"))
