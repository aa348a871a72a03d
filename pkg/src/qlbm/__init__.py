"""Quantum lattice Boltzmann simulation of advection-diffusion with statevector readout."""
from .errors import (
    ConfigurationError, DegenerateProjectionError, DomainError, FitFailure,
    PreconditionError, QLBMError, ResourceError, ShapeError,
)
from .lattice import GridSpec, LatticeModel, build_model, classical_step, collision_kernels, simulate_classical
from .quantum import QLBMStep, RegisterLayout, StateVector, encode_density, postselect, qlbm_step, run_chain

__version__ = "0.1.0"
