"""Proton-driven carbon-13 spin diffusion under magic-angle spinning.

Modules: ``structure`` (spin-system input), ``hamiltonian`` (secular
Hamiltonian under MAS), ``propagator`` (fourth-order Trotter state-vector
evolution), ``powder`` (orientation averaging and local fields), ``chaos``
(level-spacing statistics) and ``cli``.
"""

from .chaos import ResourceCapError, SpectrumUnfolder, eta, spacing_histogram, unfold_spectrum
from .estimators import ChaosDiagnostic, SpinDiffusionSimulator
from .hamiltonian import MasConfig, Orientation, build_hamiltonian
from .powder import PowderPlan, local_field_dispersion, powder_average, sample_orientations
from .propagator import EvolutionConfig, StateVector, evolve, initial_state, polarization, trotter_step
from .structure import Species, SpinSystem, StructureError, load_alanine, load_structure, truncate_system

__version__ = "0.1.0"
