"""Tensor-network message passing (BP and SP) for random k-SAT."""

from .bp import (BpConfig, BpReport, ContradictionError, ZeroMessageError, bethe_free_entropy,
                 bethe_free_entropy_from_marginals, bond_marginal, local_marginals,
                 prepare_vectorized, region_marginal, run_bp, run_bp_vectorized, run_sat_bp,
                 variable_marginal, vectorized_sweep)
from .cnf import (CONTRADICTION, CnfInstance, DimacsError, energy, parse_dimacs, random_ksat,
                  simplify, unit_propagate, write_dimacs)
from .graph import (TensorFactorGraph, build_sp_tfg, build_tfg, classify_neighborhoods,
                    lattice_network, random_loopy_network, random_regular_network,
                    random_tree_network)
from .oracle import (ExactSummary, OracleLimitError, enumerate_assignments, exact_contract,
                     exact_log_contract, exact_marginal, exact_marginals, marginal_distance)
from .solver import DecimationConfig, SolveResult, decimate, solve_pipeline, walksat
from .sp import (BiasVector, SpState, bp_biases, run_sp, sp_biases, sp_update_direct,
                 sp_update_tensor)
from .tensor import StackedTensorBatch, Tensor, contract, delta_tensor, stack_by_degree

__version__ = "0.1.0"
