"""Stochastic Hamilton-Jacobi toolkit: symplectic Stratonovich integration, actions,
shooting on Lagrangian sections, Feynman-Kac Monte Carlo and generating functions."""

__version__ = "0.1.0"

from .dsl import ScalarField, field
from .errors import (BindError, DimensionError, EvaluationError, LexError, ParseError, PdeError,
                     ReliabilityWarning, StateError, StepDivergence, StochHJError, TransformError,
                     TruncationMismatch)
from .geometry import (CotangentVector, HamiltonianSystem, PhaseState, hamiltonian_vector_field,
                       liouville_form, liouville_pairing, poisson_bracket, symplectic_defect,
                       symplectic_matrix)
from .noise import NoisePath, TimeGrid, refine, sample_path, sample_paths, stratonovich_sum
from .integrator import SchemeConfig, Trajectory, integrate_flow, inverse_flow_point, step_midpoint
from .action import accumulate_action, action_gradient, fd_action_gradient, hat_r_gradient_check
from .lagrangian_hj import (LagrangianSection, ShootingConfig, ShootingPath, d_s_tilde, hj_residual, lift,
                            projected_action, shoot)
from .canonical import (GeneratingFunction, apply_psi, apply_psi_inverse, bracket_conditions,
                        equilibrium_check, j_inverse, transform_hamiltonians)
from .feynman_kac import FkConfig, FkReport, fk_compare, fk_estimate, pde_reference
from .catalog import list_catalog

__all__ = [name for name in dir() if not name.startswith("_")]
