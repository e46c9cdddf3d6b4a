"""facrpca: robust PCA with rank and cardinality regularization under
matrix factorization, solved by joint-alternating proximal gradient methods.

The observed matrix is decomposed as X Y^T + S with a column-count penalty
on the factors (a rank surrogate), an entry-count penalty on S, ball/box
constraints, and an equivalent capped-l1 relaxation. ``solve_japg`` handles
a fixed regularizer (exact counts or the capped surrogate); ``solve_ajapg``
is the adaptive variant with support pruning and annealed capping scales,
whose output carries strong stationarity certificates.
"""

__version__ = "0.1.0"

from .data import (GroundTruth, RatingData, SyntheticSpec, generate_synthetic,
                   load_jester, load_movielens, sample_mask)
from .loss import (LossKind, ObservedMatrix, SparseResidual, grad_factors,
                   grad_sparse, loss_value, predicted_values, residual)
from .metrics import EvalResult, evaluate, nmae, predict_on, rse
from .model import (ConstraintSpec, DerivedParams, LipschitzBounds,
                    PenaltyParams, ProblemDims, RelaxationParams, capped_theta,
                    derive_params, nnzc, objective_exact, objective_relaxed)
from .prox import (GroupPenalty, ScalarPenalty, prox_group, prox_group_l0,
                   prox_scalar, prox_scalar_l0)
from .solver import (BranchIndex, FactorState, Regularizer, RunTrace,
                     SolverConfig, SolverError, base_step_rule, branch_tags,
                     default_init, ja_a_step, ja_j_step, solve_ajapg,
                     solve_japg)
from .stationarity import (StationarityReport, check_consistency,
                           check_isolation, gradient_norm, kkt_residual,
                           stationarity_report)

__all__ = [name for name in dir() if not name.startswith("_")]
