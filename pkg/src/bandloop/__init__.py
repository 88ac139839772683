"""Numerical laboratory for block band matrices, G-loops and primitive loops."""

from .model import BandModel, HermitianSample, build_model, sample_hamiltonian, scale_to_time, variance_entry
from .spectral import SpectralPoint, boundary_m, flow_to_z, stieltjes_semicircle, z_to_flow
from .loops import LoopSpec, ResolventCache, cut_glue, eigendecompose, g_chain_entry, g_loop, resolvent_block
from .primitive import (
    build_partition_tree,
    enumerate_noncrossing,
    k_loop,
    k_loop_pi,
    primitive_ode_solve,
    self_energy_empty,
    tree_weight,
)

__all__ = [
    "BandModel",
    "HermitianSample",
    "build_model",
    "sample_hamiltonian",
    "scale_to_time",
    "variance_entry",
    "SpectralPoint",
    "boundary_m",
    "flow_to_z",
    "stieltjes_semicircle",
    "z_to_flow",
    "LoopSpec",
    "ResolventCache",
    "cut_glue",
    "eigendecompose",
    "g_chain_entry",
    "g_loop",
    "resolvent_block",
    "build_partition_tree",
    "enumerate_noncrossing",
    "k_loop",
    "k_loop_pi",
    "primitive_ode_solve",
    "self_energy_empty",
    "tree_weight",
]

__version__ = "0.1.0"
