"""Constraint-based learning of essential graphs from categorical data."""
from .citest import CiLedger, audit_closure, chi2_quantile, g_statistic, raw_decision
from .data import CallMeter, ContingencyTable, Dataset, counts, load_table, load_wam, marginalize
from .graph import (
    MixedGraph,
    consistent_extension,
    d_separated,
    essential_graph_of,
    immoralities,
    markov_equivalent,
    validate_essential,
    vee_structures,
)
from .learner import LearnConfig, run_m3pc, run_mmpc

__all__ = [
    "CallMeter", "CiLedger", "ContingencyTable", "Dataset", "LearnConfig", "MixedGraph",
    "audit_closure", "chi2_quantile", "consistent_extension", "counts", "d_separated",
    "essential_graph_of", "g_statistic", "immoralities", "load_table", "load_wam",
    "markov_equivalent", "marginalize", "raw_decision", "run_m3pc", "run_mmpc",
    "validate_essential", "vee_structures",
]
__version__ = "0.1.0"
