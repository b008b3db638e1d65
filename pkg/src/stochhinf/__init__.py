"""Stochastic H-infinity control of linear Ito systems.

Model-based SPU/Newton iteration on the generalized algebraic Riccati
equation, off-policy learning of the same solution from simulated data, and
a harness for injecting evaluation errors into the policy iteration.
"""

from .datamat import DataMatrices, IntervalSpec, assemble, estimate_stats, exact_stats, rank_check, solve_ls
from .errors import (
    BlockSingular,
    ConfigError,
    NonConvergence,
    PathDiverged,
    RankDeficient,
    SingularOperator,
    StepUnstable,
)
from .gare import (
    PolicyPair,
    SpuTrace,
    SystemModel,
    closed_loop,
    frechet_apply,
    gains_from_P,
    gare_residual,
    is_stabilizing,
    quadratic_rate_check,
    run_alg1,
    spu_step,
)
from .offpolicy import LearnConfig, LearnTrace, behavior_probe, run_learning
from .robust import BlockM, ErrorSchedule, m_of_p, r_op, robust_spu_step, run_alg4
from .sde import ExplorationSpec, SimConfig, TrajectoryBatch, ms_decay_probe, simulate_batch
from .symlin import LyapPencil, build_hrep, hcal_matrix, is_ms_stable, lyap_apply, ms_spectrum, solve_gle, vecs, vecs_inv, xtilde

__all__ = [
    "assemble",
    "behavior_probe",
    "BlockM",
    "BlockSingular",
    "build_hrep",
    "closed_loop",
    "ConfigError",
    "DataMatrices",
    "ErrorSchedule",
    "estimate_stats",
    "exact_stats",
    "ExplorationSpec",
    "frechet_apply",
    "gains_from_P",
    "gare_residual",
    "hcal_matrix",
    "IntervalSpec",
    "is_ms_stable",
    "is_stabilizing",
    "LearnConfig",
    "LearnTrace",
    "lyap_apply",
    "LyapPencil",
    "m_of_p",
    "ms_decay_probe",
    "ms_spectrum",
    "NonConvergence",
    "PathDiverged",
    "PolicyPair",
    "quadratic_rate_check",
    "r_op",
    "rank_check",
    "RankDeficient",
    "robust_spu_step",
    "run_alg1",
    "run_alg4",
    "run_learning",
    "SimConfig",
    "simulate_batch",
    "SingularOperator",
    "solve_gle",
    "solve_ls",
    "spu_step",
    "SpuTrace",
    "StepUnstable",
    "SystemModel",
    "TrajectoryBatch",
    "vecs",
    "vecs_inv",
    "xtilde",
]

__version__ = "0.1.0"
