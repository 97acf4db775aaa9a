"""DG-coupled constraint energy minimizing multiscale method for 2D linear elasticity."""

__version__ = "0.1.0"

from ._accel import backend
from .assembly import AssemblyConfig, IPDGOperators, assemble_adg, assemble_b, assemble_source, coercivity_probe
from .grid import Mesh, build_mesh, oversample, partition_of_unity, whole_domain
from .media import generate_medium, load_medium, material_from_modulus, save_medium, voigt_tensor, weight_k1
from .msbasis import BasisBuilder, MultiscaleBasis, build_auxiliary_space, decay_profile
from .solver import compute_errors, solve_multiscale, solve_reference

__all__ = [
    "AssemblyConfig",
    "BasisBuilder",
    "IPDGOperators",
    "Mesh",
    "MultiscaleBasis",
    "assemble_adg",
    "assemble_b",
    "assemble_source",
    "backend",
    "build_auxiliary_space",
    "build_mesh",
    "coercivity_probe",
    "compute_errors",
    "decay_profile",
    "generate_medium",
    "load_medium",
    "material_from_modulus",
    "oversample",
    "partition_of_unity",
    "save_medium",
    "solve_multiscale",
    "solve_reference",
    "voigt_tensor",
    "weight_k1",
    "whole_domain",
]
