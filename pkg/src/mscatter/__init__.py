"""Multiple-scattering computation of low-energy electron-molecule collisions."""

__version__ = "0.1.0"

from .constants import HARTREE_EV, ev_to_hartree, hartree_to_ev  # noqa: E402
from .errors import (DomainError, InputError, MScatterError, NumericalError,  # noqa: E402
                     OverlapError, SingularOverlapError, UnboundedDiagonalError)
from .model import (ChannelIndex, Molecule, SymmetryLabel, parse_molecule,  # noqa: E402
                    read_molecule, validate_radii)
from .msm import (ModeSet, assemble_N, assemble_S, modes_at, scan_energies,  # noqa: E402
                  solve_modes, w_coefficients)
from .observables import (differential_xsec, find_resonances, integral_xsec,  # noqa: E402
                          partial_harmonic, reconstruct_wave)
from .radial import (AtomicPotential, PhaseTable, atomic_phase,  # noqa: E402
                     solve_inhomogeneous)

__all__ = [
    "HARTREE_EV", "ev_to_hartree", "hartree_to_ev",
    "DomainError", "InputError", "MScatterError", "NumericalError", "OverlapError",
    "SingularOverlapError", "UnboundedDiagonalError",
    "ChannelIndex", "Molecule", "SymmetryLabel", "parse_molecule", "read_molecule",
    "validate_radii",
    "ModeSet", "assemble_N", "assemble_S", "modes_at", "scan_energies", "solve_modes",
    "w_coefficients",
    "differential_xsec", "find_resonances", "integral_xsec", "partial_harmonic",
    "reconstruct_wave",
    "AtomicPotential", "PhaseTable", "atomic_phase", "solve_inhomogeneous",
]
