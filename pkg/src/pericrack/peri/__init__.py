"""Meshfree peridynamic mechanics: bonds, force states, integration, damage."""
from .body import Body, Bond, BondList, build_neighborhoods, damage_field
from .forces import (StateFields, assemble_internal_force, bond_stretch, compute_state, dilatation, force_vector,
                     lps_force_state, pair_force_scalars, pmb_force_state, pmb_force_state_checked,
                     relax_back_extension, stable_timestep, ves_force_state, weighted_volume)
from .integrate import Simulation, apply_breaking, step_velocity_verlet, strain_energy
from .materials import (LPS, PMB, VES, MaterialModel, critical_stretch, fracture_energy, make_model,
                        pmb_spring_constant)

__all__ = [
    "Body", "Bond", "BondList", "build_neighborhoods", "damage_field", "StateFields",
    "assemble_internal_force", "bond_stretch", "compute_state", "dilatation", "force_vector", "lps_force_state",
    "pair_force_scalars", "pmb_force_state", "pmb_force_state_checked", "relax_back_extension",
    "stable_timestep", "ves_force_state", "weighted_volume", "Simulation", "apply_breaking",
    "step_velocity_verlet", "strain_energy", "LPS", "PMB", "VES", "MaterialModel", "critical_stretch",
    "fracture_energy", "make_model", "pmb_spring_constant",
]
