"""Stochastic Hamiltonian systems on Jacobi-type charts: structure builders,
Stratonovich/Ito integrators, structure-preservation diagnostics, and
stochastic Hamilton-Jacobi solvers."""

from .differentiation import ScalarField, VectorField, gradient, jacobian, hessian
from .geometry import (JacobiStructure, ContactData, LcsData,
                       canonical_symplectic, canonical_contact, lcs_cotangent,
                       lie_poisson_so3, lambda_sharp, hamiltonian_vector_field,
                       jacobi_bracket, first_integral_commutation_check)
from .noise import TimeGrid, NoisePath, sample_brownian, refine, mix_seed
from .integrator import (HamiltonianFamily, SdeSystem, Trajectory, integrate,
                         integrate_batch, heun_step, euler_ito_step,
                         ito_drift_correction, f_along_path_residual)
from .diagnostics import DiagnosticsReport, assemble_report

__version__ = "0.1.0"
