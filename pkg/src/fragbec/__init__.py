"""Fragmented-condensate numerics: exact marginals, closed forms, and dynamics."""

from .basis import ModeBasis, build_mode_basis
from .density import (DensityMatrix, krdm_from_fock, numerical_rank,
                      occupation_spectrum, partial_trace_dense, trace_distance)
from .hartree import (GridGeometry, HartreeField, ModeCoefficients,
                      PotentialSpec, diagnostics, evolve_grid, evolve_modes,
                      ground_field, interaction_tensor, regularize_potential)
from .infinite_gap import (KMatrix, KappaTrajectory, ThetaGrid, assemble_K,
                           evolve_theta_grid, gamma_infinite_gap,
                           gamma_mean_field_k, kappa_evolve, toy_orbitals)
from .manybody import (HamiltonianSpec, SectorMatrix, build_hamiltonian,
                       convergence_sweep, evolve_exact, factorization_check,
                       toy_initial_fock)
from .marginals import (CoefficientTable, SymmetricFrameMarginal, coeff_exact,
                        coeff_limit, coeff_mixture, closed_form_marginal,
                        lemma_bound_fit, marginal_distance_closed_form,
                        spin_marginal_quadrature)
from .states import (FockState, FragmentationSpec, ManyBodyState,
                     build_fragmented_state, build_superposition_state,
                     from_fock, largest_remainder, perturb_state,
                     random_symmetric_state, to_fock)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
