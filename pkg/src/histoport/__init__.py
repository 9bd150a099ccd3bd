"""Equivariant orientation histograms for pick-and-place on planar kitting scenes."""

from .eoh import EOHMap, generate_eoh, subgroup_alignment, subsample_group, transform_eoh
from .fields import FeatureField, group_pool, rotate_raster, transform_field
from .groups import AliasingError, GroupElement, RepSpec, discretization_matrix, fit_coefficients, rep_matrix
from .kitting import KittingConfig, Scene, generate_episode, oracle_actions, render_observation
from .policy import Action, PolicyBundle, PolicyConfig, preset
from .steerable import SteerableConvLayer, assemble_network, build_kernel_basis
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "EOHMap", "generate_eoh", "subgroup_alignment", "subsample_group", "transform_eoh",
    "FeatureField", "group_pool", "rotate_raster", "transform_field",
    "AliasingError", "GroupElement", "RepSpec", "discretization_matrix", "fit_coefficients", "rep_matrix",
    "KittingConfig", "Scene", "generate_episode", "oracle_actions", "render_observation",
    "Action", "PolicyBundle", "PolicyConfig", "preset",
    "SteerableConvLayer", "assemble_network", "build_kernel_basis",
    "TrainConfig", "evaluate", "train",
]
