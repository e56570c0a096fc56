"""Explicit kick-drift-kick integration with bond breaking."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import DivergenceError, ParameterError
from .body import Body, BondList, damage_field
from .forces import (LPS, VES, _kinematics, assemble_internal_force, collapsed_bonds,
                     compute_state, influence, relax_back_extension, warn_collapsed)
from .materials import MaterialModel


def critical_stretch_per_particle(bonds: BondList, stretch: np.ndarray, model: MaterialModel) -> np.ndarray:
    """``s0_k = s00 - alpha * min(0, s_min_k)`` with ``s_min_k`` over unbroken bonds of ``k``."""
    smin = np.zeros(bonds.n_particles)
    live = ~bonds.broken
    np.minimum.at(smin, bonds.i[live], stretch[live])
    np.minimum.at(smin, bonds.j[live], stretch[live])
    return model.s00 - model.alpha * smin


def apply_breaking(bonds: BondList, kin, model: MaterialModel) -> int:
    """Break every unbroken bond whose stretch exceeds the lower endpoint threshold."""
    collapsed = collapsed_bonds(bonds, kin)
    n_collapsed = int(collapsed.sum())
    stretch = kin.extension / bonds.length
    s0 = critical_stretch_per_particle(bonds, stretch, model)
    limit = np.minimum(s0[bonds.i], s0[bonds.j])
    newly = bonds.break_bonds((stretch > limit) | collapsed)
    if n_collapsed:
        warn_collapsed(n_collapsed)
    return newly


def update_back_extension(body: Body, bonds: BondList, model: VES, state, kin, dt: float):
    """Relax the VES back-extension of every live directed bond by one step."""
    live = ~bonds.broken
    L = bonds.length[live]
    e = kin.extension[live]
    for side, idx in ((0, bonds.i[live]), (1, bonds.j[live])):
        ed = e - state.dilatation[idx] * L / 3.0
        bonds.back_extension[live, side] = relax_back_extension(
            bonds.back_extension[live, side], ed, dt, model.time_constant)


ExternalForce = Callable[[Body, float], Optional[np.ndarray]]


class Simulation:
    """Owns a body, its bonds and the integrator state.

    ``external`` is called as ``external(body, time)`` after every drift and
    returns the body-force density (or ``None`` for zero).
    """

    def __init__(self, body: Body, bonds: BondList, model: MaterialModel, dt: float,
                 external: ExternalForce = None, breaking: bool = True):
        if not dt > 0:
            raise ParameterError(f"dt must be positive, got {dt!r}")
        self.body = body
        self.bonds = bonds
        self.model = model
        self.dt = dt
        self.external = external
        self.breaking = breaking
        self.step_index = 0
        self.time = 0.0
        self.state = None
        self.acceleration = self._evaluate(initial=True)

    def _evaluate(self, initial=False) -> np.ndarray:
        body, bonds, model = self.body, self.bonds, self.model
        kin = _kinematics(body, bonds)
        if self.breaking:
            apply_breaking(bonds, kin, model)
        elif np.any(collapsed_bonds(bonds, kin)):
            n = bonds.break_bonds(collapsed_bonds(bonds, kin))
            warn_collapsed(n)
        state = None
        if isinstance(model, (LPS, VES)):
            state = compute_state(body, bonds, kin)
            if isinstance(model, VES) and not initial:
                update_back_extension(body, bonds, model, state, kin, self.dt)
        self.state = state
        if self.external is not None:
            b = self.external(body, self.time)
            body.external_force[:] = 0.0 if b is None else b
        return assemble_internal_force(body, bonds, model, state, kin)

    def step(self) -> None:
        dt = self.dt
        body = self.body
        body.velocities += 0.5 * dt * self.acceleration
        body.displacements += dt * body.velocities
        self.time += dt
        self.step_index += 1
        self.acceleration = self._evaluate()
        body.velocities += 0.5 * dt * self.acceleration
        if not (np.all(np.isfinite(body.velocities)) and np.all(np.isfinite(body.displacements))):
            raise DivergenceError(f"non-finite state at step {self.step_index}", step=self.step_index)

    def run(self, n_steps: int, callback=None) -> None:
        for _ in range(n_steps):
            self.step()
            if callback is not None:
                callback(self)

    def damage(self) -> np.ndarray:
        return damage_field(self.bonds)


def step_velocity_verlet(sim: Simulation) -> Simulation:
    """Advance ``sim`` by one kick-drift-kick step (in place)."""
    sim.step()
    return sim


def strain_energy(body: Body, bonds: BondList, model: MaterialModel) -> float:
    """Elastic energy of a PMB body, ``sum_pairs 1/2 c s^2 |zeta| V_i V_j``."""
    kin = _kinematics(body, bonds)
    live = ~bonds.broken
    L = bonds.length[live]
    s = kin.extension[live] / L
    V = body.volumes
    w = influence(L)
    return float(np.sum(0.5 * model.spring_constant * w * s**2 * L * V[bonds.i[live]] * V[bonds.j[live]]))
