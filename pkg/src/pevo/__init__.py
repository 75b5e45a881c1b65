"""Numerical laboratory for linear p-evolution equations on the line.

Pseudo-differential symbols are quantised on a periodic grid, the generator
is conjugated by operator exponentials e^{lambda(x, D)} that make its
Hermitian part bounded below, and the energy inequality with its loss of
weight is checked along Crank-Nicolson trajectories.
"""

from .conjugation import (CalibrationResult, ConjugationChain, ConjugationStep, build_chain,
                          build_step, calibrate, conjugate_generator, estimate_Cp,
                          estimate_level_C, leading_correction)
from .errors import (BoundaryMassError, CalibrationError, GridError, HypothesisViolation,
                     NeumannDivergence, PevoError, SingularStep, SymbolError, UnderResolved)
from .evolve import (CauchyProblem, EnergyReport, assemble_generator, solve,
                     step_crank_nicolson, verify_energy_estimate)
from .garding import PositivityReport, hermitian_part, positivity_check
from .grid import GridSpec, NormSpec, fourier_multiplier, make_grid, weighted_sobolev_norm
from .problems import certify, preset
from .quantize import (ExpansionResult, OperatorMatrix, adjoint_asymptotic, apply_op,
                       compose_asymptotic, operator_residual, to_matrix)
from .symbols import (LambdaSymbol, MollifierConfig, Symbol, SymbolOrder, eval_omega, eval_psi,
                      from_expr, lambda_lower, lambda_top, seminorm_estimate)

__version__ = "0.1.0"
