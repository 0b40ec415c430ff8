"""Non-negative matrix factorisation under relative pairwise distance constraints.

The solvers factorise V (N x M, non-negative) into W (N x K) and H (K x M)
with multiplicative updates while penalising violated triplet constraints of
the form dis(q, r) < dis(q, s) over rows of W or columns of H.
"""

__version__ = "0.1.0"

from .constraints import (
    ConstraintSet,
    ConstraintTriple,
    Measure,
    Target,
    constraints_to_label_matrix,
    constraints_to_weight_matrix,
    csr,
    euclidean_sq,
    generate_chain_constraints,
    generate_chain_plan,
    is_satisfied,
    read_constraints,
    symmetric_divergence,
    write_constraints,
)
from .exceptions import RprNmfError
from .matrix import (
    EPS,
    DenseMatrix,
    MaskMatrix,
    frobenius_sq_diff,
    matmul,
    matrix_divergence,
    new_nonneg,
    random_init,
)
from .metrics import (
    ClusterAssignment,
    clustering_accuracy,
    f1_score,
    kmeans,
    md,
    msl,
    nmi,
    rmse,
)
from .penalties import (
    EucPenaltyGrad,
    div_penalty_grad,
    div_penalty_value,
    euc_penalty_grad,
    euc_penalty_value,
)
from .solver import (
    FactorisationReport,
    SolverConfig,
    SolverState,
    div_update_h_entry,
    div_update_w_entry,
    euc_update_h_entry,
    euc_update_w_entry,
    masked_update_terms,
    objective,
    run,
)

__all__ = [
    "EPS",
    "ClusterAssignment",
    "ConstraintSet",
    "ConstraintTriple",
    "DenseMatrix",
    "EucPenaltyGrad",
    "FactorisationReport",
    "MaskMatrix",
    "Measure",
    "RprNmfError",
    "SolverConfig",
    "SolverState",
    "Target",
    "clustering_accuracy",
    "constraints_to_label_matrix",
    "constraints_to_weight_matrix",
    "csr",
    "div_penalty_grad",
    "div_penalty_value",
    "div_update_h_entry",
    "div_update_w_entry",
    "euc_penalty_grad",
    "euc_penalty_value",
    "euc_update_h_entry",
    "euc_update_w_entry",
    "euclidean_sq",
    "f1_score",
    "frobenius_sq_diff",
    "generate_chain_constraints",
    "generate_chain_plan",
    "is_satisfied",
    "kmeans",
    "masked_update_terms",
    "matmul",
    "matrix_divergence",
    "md",
    "msl",
    "new_nonneg",
    "nmi",
    "objective",
    "random_init",
    "read_constraints",
    "rmse",
    "run",
    "symmetric_divergence",
    "write_constraints",
]
