"""Peeling-decoder analysis and simulation for multi-edge-type LDPC
ensembles on the binary erasure channel."""

from .ensemble import (
    CheckNodeTerm,
    EnsembleError,
    EnsembleParseError,
    EnsembleSpec,
    SocketBalanceError,
    VariableNodeTerm,
    derived,
    eval_lambda,
    eval_rho,
    load_ensemble,
    parse_ensemble,
)
from .evolution import (
    EvolutionPoint,
    ExhaustedTypeError,
    edge_fractions,
    erasure_vector,
    evolution_point,
    expected_edges_deleted,
    mu1_by_counting,
    mu1_closed_form,
    mu_closed_form,
    nu_closed_form,
    transition_rates,
)

__version__ = "0.1.0"
