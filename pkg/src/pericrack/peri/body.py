"""Particle ensembles, bond families and the damage indicator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ..errors import InputError, ParameterError


@dataclass
class Body:
    """Discretised solid: one row per material point.

    Arrays are ``(N, 3)`` except ``volumes`` which is ``(N,)``.
    ``external_force`` is the body-force density ``b`` in N/m^3.
    """

    ref_positions: np.ndarray
    volumes: np.ndarray
    density: float
    displacements: np.ndarray = None
    velocities: np.ndarray = None
    external_force: np.ndarray = None

    def __post_init__(self):
        self.ref_positions = np.ascontiguousarray(self.ref_positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.ref_positions)
        self.volumes = np.ascontiguousarray(np.broadcast_to(np.asarray(self.volumes, dtype=np.float64), (n,)))
        for name in ("displacements", "velocities", "external_force"):
            value = getattr(self, name)
            value = np.zeros((n, 3)) if value is None else np.array(value, dtype=np.float64).reshape(-1, 3)
            if len(value) != n:
                raise InputError(f"{name} has {len(value)} rows, expected {n}")
            setattr(self, name, value)
        if not np.all(np.isfinite(self.ref_positions)):
            raise InputError("reference positions must be finite")
        if n and not np.all(self.volumes > 0):
            raise ParameterError("particle volumes must be positive")
        if not self.density > 0:
            raise ParameterError(f"density must be positive, got {self.density!r}")

    def __len__(self):
        return len(self.ref_positions)

    @property
    def positions(self) -> np.ndarray:
        return self.ref_positions + self.displacements

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.volumes

    def momentum(self) -> np.ndarray:
        return (self.mass[:, None] * self.velocities).sum(axis=0)

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.mass * np.einsum("ij,ij->i", self.velocities, self.velocities)))

    def copy(self) -> "Body":
        return Body(
            self.ref_positions.copy(),
            self.volumes.copy(),
            self.density,
            self.displacements.copy(),
            self.velocities.copy(),
            self.external_force.copy(),
        )


@dataclass
class Bond:
    """One directed bond record as seen from particle ``i``."""

    i: int
    j: int
    zeta: np.ndarray
    broken: bool
    back_extension: float = 0.0


@dataclass
class BondList:
    """Symmetric bond families stored once per unordered pair.

    Pair ``k`` joins ``i[k] < j[k]``; the directed bonds (i, j) and (j, i)
    share ``broken[k]``. ``back_extension[k, 0]`` belongs to the bond seen
    from ``i[k]`` and ``back_extension[k, 1]`` to the one seen from ``j[k]``.
    ``generation`` increments whenever a bond breaks so that derived state
    can detect a stale topology.
    """

    i: np.ndarray
    j: np.ndarray
    zeta: np.ndarray
    horizon: float
    n_particles: int
    broken: np.ndarray = None
    back_extension: np.ndarray = None
    initial_counts: np.ndarray = None
    generation: int = 0
    _adjacency: list = field(default=None, repr=False)
    _operators: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.zeta = np.asarray(self.zeta, dtype=np.float64).reshape(-1, 3)
        self.length = np.sqrt(np.einsum("ij,ij->i", self.zeta, self.zeta))
        if self.broken is None:
            self.broken = np.zeros(len(self.i), dtype=bool)
        if self.back_extension is None:
            self.back_extension = np.zeros((len(self.i), 2))
        if self.initial_counts is None:
            self.initial_counts = self.counts(include_broken=True)

    def __len__(self):
        return len(self.i)

    def counts(self, include_broken=False) -> np.ndarray:
        """Bonds per particle (unbroken only unless ``include_broken``)."""
        mask = slice(None) if include_broken else ~self.broken
        n = self.n_particles
        return np.bincount(self.i[mask], minlength=n) + np.bincount(self.j[mask], minlength=n)

    def difference_operator(self) -> sparse.csr_matrix:
        """Sparse ``D`` with ``(D @ x)[k] = x[j_k] - x[i_k]``."""
        if "diff" not in self._operators:
            nb = len(self.i)
            rows = np.concatenate([np.arange(nb), np.arange(nb)])
            cols = np.concatenate([self.j, self.i])
            vals = np.concatenate([np.ones(nb), -np.ones(nb)])
            self._operators["diff"] = sparse.csr_matrix((vals, (rows, cols)), shape=(nb, self.n_particles))
        return self._operators["diff"]

    def scatter_operator(self, volumes: np.ndarray) -> sparse.csr_matrix:
        """Sparse ``M`` with ``(M @ f)[i] = sum_k f_k V_j - sum_k' f_k' V_i``.

        Applied to pair forces it yields the force density on every particle.
        """
        cached = self._operators.get("scatter")
        if cached is None or not np.array_equal(cached[0], volumes):
            nb = len(self.i)
            rows = np.concatenate([self.i, self.j])
            cols = np.concatenate([np.arange(nb), np.arange(nb)])
            vals = np.concatenate([volumes[self.j], -volumes[self.i]])
            matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_particles, nb))
            cached = self._operators["scatter"] = (volumes.copy(), matrix)
        return cached[1]

    def break_bonds(self, mask: np.ndarray) -> int:
        """Set broken flags (never cleared). Returns the number newly broken."""
        new = mask & ~self.broken
        count = int(new.sum())
        if count:
            self.broken |= new
            self.generation += 1
        return count

    def family(self, particle: int) -> list[Bond]:
        """Directed bond records of one particle (a view built on demand)."""
        if self._adjacency is None:
            adj = [[] for _ in range(self.n_particles)]
            for k, (a, b) in enumerate(zip(self.i.tolist(), self.j.tolist())):
                adj[a].append((k, 0))
                adj[b].append((k, 1))
            self._adjacency = adj
        out = []
        for k, side in self._adjacency[particle]:
            if side == 0:
                out.append(Bond(particle, int(self.j[k]), self.zeta[k].copy(), bool(self.broken[k]),
                                float(self.back_extension[k, 0])))
            else:
                out.append(Bond(particle, int(self.i[k]), -self.zeta[k], bool(self.broken[k]),
                                float(self.back_extension[k, 1])))
        return out


def build_neighborhoods(body: Body, horizon: float) -> BondList:
    """All pairs with ``0 < |x' - x| <= horizon``."""
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon!r}")
    x = body.ref_positions
    if len(x) < 2:
        return BondList(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 3)), horizon, len(x))
    pairs = cKDTree(x).query_pairs(horizon, output_type="ndarray")
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if len(pairs) else pairs.reshape(0, 2)
    i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    zeta = x[j] - x[i]
    dup = np.flatnonzero(~np.any(zeta != 0.0, axis=1))
    if len(dup):
        raise InputError(f"particles {i[dup[0]]} and {j[dup[0]]} share the same reference position")
    return BondList(i, j, zeta, horizon, len(x))


def damage_field(bonds: BondList) -> np.ndarray:
    """Fraction of each particle's initial bonds that are broken."""
    n = bonds.n_particles
    b = bonds.broken
    broken = np.bincount(bonds.i[b], minlength=n) + np.bincount(bonds.j[b], minlength=n)
    init = bonds.initial_counts
    out = np.zeros(n)
    has = init > 0
    out[has] = broken[has] / init[has]
    return out
