"""Two-ion entangling gates with continuously dressed spin states in a magnetic gradient."""

__version__ = "0.1.0"

from .physics import (
    CouplingSet,
    ModeSpectrum,
    OptimizationError,
    ParameterError,
    ResonanceError,
    Sensitivities,
    SystemParams,
    couplings,
    doppler_limit,
    gate_time,
    j0_closed_form,
    mode_spectrum,
    optimal_drive,
    sensitivities,
)
from .analytic import ErrorBudget, bell_fidelity_phase, detuned_evolution, error_budget
from .hilbert import BasisLayout, LayoutError, Operator, StateVector, TruncationError
from .hamiltonians import HamiltonianModel, ScheduleError, WindowError, attach_noise, build_approx, build_exact, phase_flip
from .propagator import BellConfig, FidelityReport, PropagationError, PropagationSpec, bell_experiment, bell_series, propagate

__all__ = [name for name in dir() if not name.startswith("_")]
