"""Galerkin solver and verifier for Dirichlet systems driven by competing
(p,q)-Laplacians with convective reactions."""

from .eigen import EigenEstimate, estimate_lambda1, rayleigh_quotient
from .femspace import FemFunction, FemSpace, norm_Lp, seminorm_W1p, space_of
from .galerkin import (LevelSolution, SolveReport, check_weak_solution, run_hierarchy,
                       solve_level)
from .hypotheses import (CheckReport, HypothesisConstants, SamplingPlan, apriori_radius,
                         check_H1, check_H1prime, check_H2)
from .mesh import Mesh, RefinementHierarchy, generate_unit_square, unit_square_hierarchy
from .operators import (PairState, ResidualPair, apply_competing, assemble_nemytskii, jacobian,
                        pairing_with_function, probe_nonmonotonicity, residual_A)
from .problem import ProblemSpec
from .reactions import ExampleReactionParams, Reaction, build_example_reactions

__version__ = "0.1.0"
