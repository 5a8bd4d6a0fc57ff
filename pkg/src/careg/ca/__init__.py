"""Cellular-automata engine: CNN evolution, GA rule search, MACA classification."""

from .cnn import (
    CAState, Evolution, Gene, cnn_step, decay_gene, edge_gene, evolve_to_segmentation, identity_gene,
    majority_gene,
)
from .ga import GAParams, GAResult, f1_overlap, inverse_evolve_ga
from .maca import MACAConfig, design_maca, find_pef_positions, maca_classify, run_to_attractor, step
from .ruledb import RuleDBError, RuleEntry, ShapeRuleDB, rule_db_lookup, rule_db_store

__all__ = [
    "CAState", "Evolution", "Gene", "cnn_step", "decay_gene", "edge_gene", "evolve_to_segmentation",
    "identity_gene", "majority_gene", "GAParams", "GAResult", "f1_overlap", "inverse_evolve_ga", "MACAConfig",
    "design_maca", "find_pef_positions", "maca_classify", "run_to_attractor", "step",
    "RuleDBError", "RuleEntry", "ShapeRuleDB", "rule_db_lookup", "rule_db_store",
]
