"""roamscope: phase-space cartography for the isokinetic Chesnavich CH4+
model -- periodic orbits, Lagrangian-descriptor fields, and invariant-
manifold extraction on surfaces of section."""

__version__ = "0.1.0"

from .model import ModelParams, eval_U, grad_U, reduced_mass, stationary_points
from .dynamics import (PhaseState, hamiltonian_micro, kinetic_energy,
                       isokinetic_K, momenta_to_pi, pi_to_momenta,
                       vector_field_isokinetic, jacobian_isokinetic,
                       resolve_momentum_on_constraint)
from .integrate import IntegratorSettings, advance, ld_quadrature, section_crossings
from .orbits import (OrbitCurve, inner_rbar, inner_pbar_r, outer_radius,
                     refine_orbit, floquet, default_inner_curve,
                     default_outer_curve)
from .ld import DescriptorSpec, ld_value, equivalent_integrands_check
from .sections import SectionSpec, theta_section, radial_section
from .survey import (LDField, ManifoldTrace, seed_grid, compute_field,
                     extract_minima, extract_gradient_ridges,
                     classify_trajectory, intersection_overlay)
