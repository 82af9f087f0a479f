"""Adiabatic switching of a bias in a lead-sample-lead waveguide.

Lattice model, Cayley propagation, wave operators, discrete adiabatic
theorem checks and the adiabatic non-equilibrium steady state.
"""

__version__ = "0.1.0"

from .errors import (AssemblyError, ConfigError, DomainError, NessError, NumericalError,
                     RegressionFailure)
from .model import (BiasSpec, Geometry, HamiltonianSet, SwitchingFunction, build_model,
                    hamiltonian_at)
from .spectral import FermiParams, fermi_dirac, track_branches

__all__ = [
    "AssemblyError", "BiasSpec", "ConfigError", "DomainError", "FermiParams", "Geometry",
    "HamiltonianSet", "NessError", "NumericalError", "RegressionFailure", "SwitchingFunction",
    "build_model", "fermi_dirac", "hamiltonian_at", "track_branches",
]
