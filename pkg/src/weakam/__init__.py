"""Weak KAM toolkit for convex Hamiltonians on the circle with time-periodic damping."""
from .critical_value import (critical_value_by_drift, critical_weak_kam, cross_base_differences,
                             mane_critical_value, mather_measure, mather_set, peierls_barrier)
from .discount_limit import DampingFamily, converge_study, family_profile, subsolution_constraint
from .discretization import Grid, build_graph
from .dynamics import (ExtendedState, attractor_bounds, energy_drift, integrate, rotation_number,
                       rotation_staircase, sigma_diagnostics)
from .model import (ConstantDamping, FourierDamping, Mechanical, ModelSpec, cosine_potential, preset_model,
                    zero_potential)
from .weak_kam import ValueField, backward_calibrated_curve, solve_weak_kam, verify_solution

__version__ = "0.1.0"
