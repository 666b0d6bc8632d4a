"""Single-excitation simulator for emitters on Harper-Hofstadter lattice edges."""

__version__ = "0.1.0"

from .lattice import BathOperator, Flux, LatticeSpec, build_harper_bloch, build_real_space  # noqa: E402
from .spectrum import BandStructure, chern_numbers, cylinder_bands, diagonalize  # noqa: E402
from .edge_model import EdgeModeModel, build_edge_model, landau_level_energy  # noqa: E402
from .emitter import EmitterSpec, cancel_couplings, golden_rule_rate, momentum_coupling  # noqa: E402
from .dynamics import SingleExcitationState, assemble_full, evolve  # noqa: E402

__all__ = [
    "BathOperator", "Flux", "LatticeSpec", "build_harper_bloch", "build_real_space",
    "BandStructure", "chern_numbers", "cylinder_bands", "diagonalize",
    "EdgeModeModel", "build_edge_model", "landau_level_energy",
    "EmitterSpec", "cancel_couplings", "golden_rule_rate", "momentum_coupling",
    "SingleExcitationState", "assemble_full", "evolve",
]
