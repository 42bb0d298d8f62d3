"""Spanning-tree Poincaré operators for Whitney forms.

Builds the lowest order Whitney complex on a simplicial mesh, splits every
form space with a pair of spanning trees, and uses the resulting Poincaré
operator to solve Hodge-Laplace problems in four small SPD steps and to
precondition weighted projection problems.
"""

from .hodge import (
    HodgeLaplaceProblem,
    HodgeLaplaceSolution,
    random_problem,
    solve,
    solve_four_step,
    solve_k_equals_n,
    solve_monolithic,
)
from .mesh import SimplicialMesh, generate_structured, read_mesh, write_mesh
from .poincare import PoincareOperator
from .precond import AuxPreconditioner, estimate_condition, pminres, poincare_constant
from .trees import TreePartition, build_partition
from .whitney import FormComplex

__version__ = "0.1.0"

__all__ = [
    "AuxPreconditioner",
    "FormComplex",
    "HodgeLaplaceProblem",
    "HodgeLaplaceSolution",
    "PoincareOperator",
    "SimplicialMesh",
    "TreePartition",
    "build_partition",
    "estimate_condition",
    "generate_structured",
    "pminres",
    "poincare_constant",
    "random_problem",
    "read_mesh",
    "solve",
    "solve_four_step",
    "solve_k_equals_n",
    "solve_monolithic",
    "write_mesh",
]
