"""Disk-and-indenter crack scenarios over the twelve-mode parameter grid.

The disk lies in the x-y plane with its mid-plane at ``z = 0``. The spherical
indenter starts just above the top face and moves kinematically along ``-z``;
the disk translates with a uniform initial velocity along the mode's axis.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, InputError, ParameterError
from .peri import (Body, MaterialModel, PMB, Simulation, build_neighborhoods, damage_field,
                   stable_timestep)

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class DiskSpec:
    radius: float = 0.037
    thickness: float = 0.0025
    spacing: float = 0.0005
    density: float = 2200.0
    volume: float = 1.25e-10

    def __post_init__(self):
        for name in ("radius", "spacing", "density", "volume"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"DiskSpec.{name} must be positive")
        if self.thickness < 0:
            raise ParameterError("DiskSpec.thickness must be non-negative")
        if abs(self.spacing**3 - self.volume) > 1e-9 * self.volume:
            raise ParameterError(
                f"particle volume {self.volume} inconsistent with spacing^3 = {self.spacing**3}")

    @property
    def n_planes(self) -> int:
        return int(math.floor(self.thickness / self.spacing + 1e-9)) + 1


DESK_DISK = DiskSpec(radius=0.012)


@dataclass(frozen=True)
class IndenterSpec:
    radius: float
    speed: float
    hit_point: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("indenter radius must be positive")
        if not self.speed >= 0:
            raise ParameterError("indenter speed must be non-negative")


@dataclass(frozen=True)
class ModeSpec:
    mode_id: int
    indenter_radius: float
    indenter_speed: float
    direction: str


@dataclass(frozen=True)
class SimulationConfig:
    n_steps: int = 1000
    dt: Optional[float] = None
    disk_speed: float = 10.0
    cadence: int = 100
    seed: int = 0
    contact_stiffness: float = 1.0e17
    hit_radius_fraction: float = 0.8

    def __post_init__(self):
        if self.n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        if self.cadence < 1 or self.n_steps % self.cadence:
            raise ParameterError(f"cadence {self.cadence} must divide n_steps {self.n_steps}")
        if self.dt is not None and not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not self.contact_stiffness > 0:
            raise ParameterError("contact_stiffness must be positive")


@dataclass
class DumpFrame:
    step: int
    ids: np.ndarray
    positions: np.ndarray
    damage: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.damage = np.asarray(self.damage, dtype=np.float64)
        if len(np.unique(self.ids)) != len(self.ids):
            raise InputError("particle ids in a frame must be unique")

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, DumpFrame):
            return NotImplemented
        return (self.step == other.step and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.damage, other.damage))


def mode_grid() -> list[ModeSpec]:
    """Modes 1..12: radius outermost, then direction, then speed."""
    modes = []
    for k, (r, d, v) in enumerate(itertools.product((0.007, 0.008), "xyz", (100.0, 100.1)), start=1):
        modes.append(ModeSpec(k, r, v, d))
    return modes


def mode_of(radius: float, speed: float, direction: str) -> ModeSpec:
    for m in mode_grid():
        if m.indenter_radius == radius and m.indenter_speed == speed and m.direction == direction:
            return m
    raise ParameterError(f"no mode with radius={radius}, speed={speed}, direction={direction!r}")


def get_mode(mode_id: int) -> ModeSpec:
    if not 1 <= int(mode_id) <= 12:
        raise ParameterError(f"mode must be in 1..12, got {mode_id}")
    return mode_grid()[int(mode_id) - 1]


def generate_disk(spec: DiskSpec = DiskSpec()) -> Body:
    """Simple-cubic lattice points with ``x^2 + y^2 <= R^2`` on every plane."""
    if spec.radius < spec.spacing:
        raise InputError(f"disk radius {spec.radius} is smaller than the lattice spacing {spec.spacing}")
    h = spec.spacing
    n = int(math.floor(spec.radius / h + 1e-9))
    k = np.arange(-n, n + 1)
    gi, gj = np.meshgrid(k, k, indexing="ij")
    gi, gj = gi.ravel(), gj.ravel()
    keep = gi**2 + gj**2 <= (spec.radius / h) ** 2 * (1 + 1e-12)
    gi, gj = gi[keep], gj[keep]
    planes = spec.n_planes
    zs = (np.arange(planes) - (planes - 1) / 2.0) * h
    xy = np.column_stack([gi * h, gj * h]).astype(np.float64)
    pos = np.concatenate([np.column_stack([xy, np.full(len(xy), z)]) for z in zs])
    return Body(pos, np.full(len(pos), spec.volume), spec.density)


def contact_force(center, radius: float, positions, stiffness: float = 1.0e17):
    """Penalty force density ``k (R - r) unit(p - c)`` for points inside the sphere.

    A point exactly at the centre is pushed along ``+z``.
    """
    if not radius > 0:
        raise ParameterError("indenter radius must be positive")
    p = np.asarray(positions, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    rel = p - np.asarray(center, dtype=np.float64)
    r = np.sqrt(np.einsum("ij,ij->i", rel, rel))
    out = np.zeros_like(p)
    inside = r < radius
    if np.any(inside):
        ri = r[inside]
        unit = np.zeros((int(inside.sum()), 3))
        nz = ri > 0
        unit[nz] = rel[inside][nz] / ri[nz, None]
        unit[~nz] = (0.0, 0.0, 1.0)
        out[inside] = (stiffness * (radius - ri))[:, None] * unit
    return out[0] if single else out


def sample_hit_point(disk: DiskSpec, seed: int, fraction: float = 0.8) -> tuple:
    """Uniform point on the disk of radius ``fraction * R`` around the centre."""
    rng = np.random.default_rng(seed)
    r = fraction * disk.radius * math.sqrt(rng.random())
    phi = 2 * math.pi * rng.random()
    return (r * math.cos(phi), r * math.sin(phi))


class Indenter:
    """Rigid sphere moving at constant velocity along ``-z``."""

    def __init__(self, spec: IndenterSpec, top: float, stiffness: float, gap: float = 0.0):
        self.spec = spec
        self.stiffness = stiffness
        self.start = np.array([spec.hit_point[0], spec.hit_point[1], top + spec.radius + gap])
        self.velocity = np.array([0.0, 0.0, -spec.speed])

    def center(self, time: float) -> np.ndarray:
        return self.start + self.velocity * time

    def __call__(self, body: Body, time: float) -> np.ndarray:
        return contact_force(self.center(time), self.spec.radius, body.positions, self.stiffness)


def frame_from(sim: Simulation) -> DumpFrame:
    return DumpFrame(sim.step_index, np.arange(len(sim.body)), sim.body.positions.copy(),
                     damage_field(sim.bonds))


def build_simulation(mode: ModeSpec, disk: DiskSpec, config: SimulationConfig, model: MaterialModel,
                     hit_point, indenter_speed: float = None) -> Simulation:
    body = generate_disk(disk)
    if math.hypot(*hit_point) > disk.radius:
        raise InputError(f"hit point {hit_point} lies outside the disk of radius {disk.radius}")
    bonds = build_neighborhoods(body, model.horizon)
    speed = mode.indenter_speed if indenter_speed is None else indenter_speed
    indenter = Indenter(IndenterSpec(mode.indenter_radius, speed, tuple(hit_point)),
                        top=float(body.ref_positions[:, 2].max()), stiffness=config.contact_stiffness,
                        gap=0.5 * disk.spacing)
    body.velocities[:, AXES[mode.direction]] = config.disk_speed
    dt = config.dt
    if dt is None:
        dt = stable_timestep(body, bonds, model, extra_stiffness=config.contact_stiffness)
    return Simulation(body, bonds, model, dt, external=indenter)


def run_scenario(mode: ModeSpec, disk: DiskSpec = DESK_DISK, config: SimulationConfig = SimulationConfig(),
                 model: MaterialModel = None, hit_point=None,
                 callback: Callable[[Simulation], None] = None,
                 indenter_speed: float = None) -> list[DumpFrame]:
    """Simulate one impact and return frames at step 0 and every ``cadence`` steps.

    ``hit_point`` defaults to a seeded sample from ``config.seed``.
    ``indenter_speed`` overrides the mode's speed (0 gives an unloaded run).
    """
    model = model if model is not None else PMB()
    if hit_point is None:
        hit_point = sample_hit_point(disk, config.seed, config.hit_radius_fraction)
    sim = build_simulation(mode, disk, config, model, hit_point, indenter_speed)
    frames = [frame_from(sim)]
    try:
        for _ in range(config.n_steps):
            sim.step()
            if callback is not None:
                callback(sim)
            if sim.step_index % config.cadence == 0:
                frames.append(frame_from(sim))
    except DivergenceError as exc:
        raise DivergenceError(f"mode {mode.mode_id}: {exc}", step=exc.step) from exc
    return frames


def corpus_disk(spacing: float = 0.001, radius: float = 0.012, thickness: float = 0.002) -> DiskSpec:
    """Coarse disk for building large image corpora quickly."""
    return DiskSpec(radius=radius, thickness=thickness, spacing=spacing, volume=spacing**3)


def scaled_model(model: MaterialModel, disk: DiskSpec, reference_spacing: float = 0.0005) -> MaterialModel:
    """Keep the horizon-to-spacing ratio of the reference lattice."""
    return model.scaled(model.horizon * disk.spacing / reference_spacing)
