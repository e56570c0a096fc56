"""Bond kinematics, force states and internal-force assembly.

Every force-state function broadcasts over leading axes, so it works for a
single bond (``zeta`` of shape ``(3,)``) and for the whole bond list at once.

Sign convention for the state-based models: a positive dilatation produces a
tensile (outward) dilatational contribution, ``t = +3 K theta / m * omega *
|zeta| + ...``. The printed formulas carry a leading minus on that term,
which would make uniform expansion attractive; the engine flips it.

The influence function is ``omega = 1`` inside the horizon.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import (ConsistencyError, DegenerateBondError, ParameterError,
                      ZeroWeightedVolumeError)
from .body import Body, BondList
from .materials import LPS, PMB, VES, MaterialModel


def influence(length):
    return np.ones_like(np.asarray(length, dtype=np.float64))


def _norm(v):
    v = np.asarray(v, dtype=np.float64)
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def bond_stretch(zeta, eta):
    """Return ``(s, y)`` with ``y = |zeta + eta|`` and ``s = (y - |zeta|)/|zeta|``."""
    length = _norm(zeta)
    if np.any(length == 0):
        raise DegenerateBondError("bond with zero reference length")
    y = _norm(np.asarray(zeta) + np.asarray(eta))
    return (y - length) / length, y


def _direction(zeta, eta):
    d = np.asarray(zeta, dtype=np.float64) + np.asarray(eta, dtype=np.float64)
    y = _norm(d)
    if np.any(y == 0):
        raise DegenerateBondError("deformed bond collapsed to zero length")
    return d / y[..., None] if d.ndim > 1 else d / y


def force_vector(scalar, zeta, eta):
    """Vector force state ``t * unit(zeta + eta)`` for a scalar state ``t``."""
    t = np.asarray(scalar, dtype=np.float64)
    return t[..., None] * _direction(zeta, eta)


def pmb_force_state(zeta, eta, model: PMB, broken=False):
    """Force state vector ``1/2 c s mu`` along the deformed bond, N/m^6.

    The pairwise force density between two points is the difference of the
    states seen from each end, which for this model equals ``c s``.
    Broken bonds (``mu = 0``) return zero without error.
    """
    s, _ = bond_stretch(zeta, eta)
    mu = 1.0 - np.asarray(broken, dtype=np.float64)
    magnitude = 0.5 * model.spring_constant * s * mu
    if np.ndim(magnitude) == 0 and magnitude == 0:
        return np.zeros(3)
    return magnitude[..., None] * _direction(zeta, eta) if np.ndim(magnitude) else magnitude * _direction(zeta, eta)


def pmb_force_state_checked(zeta, eta, model: PMB, bond_broken: bool, critical: float):
    """Single-bond form of the history rule: breaks once ``s`` exceeds ``critical``.

    Returns ``(force, broken)``; the caller keeps ``broken`` for later steps.
    """
    if bond_broken:
        return np.zeros(3), True
    s, _ = bond_stretch(zeta, eta)
    if s > critical:
        return np.zeros(3), True
    return pmb_force_state(zeta, eta, model), False


def weighted_volume(length, neighbor_volume, broken=None):
    """``m = sum omega |zeta|^2 V_j`` over the unbroken bonds of one family."""
    length = np.asarray(length, dtype=np.float64)
    terms = influence(length) * length**2 * np.asarray(neighbor_volume, dtype=np.float64)
    if broken is not None:
        terms = np.where(broken, 0.0, terms)
    m = float(np.sum(terms))
    if m <= 0:
        raise ZeroWeightedVolumeError("particle has no unbroken bonds")
    return m


def dilatation(length, extension, neighbor_volume, m, broken=None):
    """``theta = 3/m sum omega |zeta| e V_j`` for one family."""
    if not m > 0:
        raise ZeroWeightedVolumeError(f"weighted volume must be positive, got {m!r}")
    length = np.asarray(length, dtype=np.float64)
    terms = influence(length) * length * np.asarray(extension) * np.asarray(neighbor_volume)
    if broken is not None:
        terms = np.where(broken, 0.0, terms)
    return 3.0 * float(np.sum(terms)) / m


def _lps_parts(zeta, eta, model, theta, m):
    length = _norm(zeta)
    _, y = bond_stretch(zeta, eta)
    e = y - length
    ed = e - theta * length / 3.0
    w = influence(length)
    alpha = 15.0 * model.shear_modulus / m
    dil = 3.0 * model.bulk_modulus * theta / m * w * length
    return dil, alpha, w, ed


def lps_force_state(zeta, eta, model: LPS, theta, m):
    """Scalar LPS force state seen from the particle owning ``theta`` and ``m``."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m <= 0):
        raise ZeroWeightedVolumeError("weighted volume must be positive")
    dil, alpha, w, ed = _lps_parts(zeta, eta, model, theta, m)
    return dil + alpha * w * ed


def relax_back_extension(back_extension, deviatoric_extension, dt, time_constant):
    """Exact exponential update of ``d e_db/dt = (e_d - e_db)/tau`` at fixed ``e_d``."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt!r}")
    decay = np.exp(-dt / time_constant)
    return deviatoric_extension + (back_extension - deviatoric_extension) * decay


def ves_force_state(zeta, eta, model: VES, theta, m, back_extension, dt):
    """Scalar VES force state and the relaxed back-extension.

    Returns ``(t, e_db_new)``; ``t`` uses the back-extension after this step's
    relaxation. ``model.relaxation == 0`` gives exactly :func:`lps_force_state`.
    """
    m = np.asarray(m, dtype=np.float64)
    if np.any(m <= 0):
        raise ZeroWeightedVolumeError("weighted volume must be positive")
    dil, alpha, w, ed = _lps_parts(zeta, eta, model, theta, m)
    edb = relax_back_extension(back_extension, ed, dt, model.time_constant)
    t = dil + alpha * w * ed - (model.relaxation * alpha) * w * edb
    return t, edb


@dataclass
class StateFields:
    """Per-particle weighted volume and dilatation for state-based models."""

    weighted_volume: np.ndarray
    dilatation: np.ndarray
    generation: int
    n_bonds: int


@dataclass
class _Kinematics:
    d: np.ndarray       # deformed bond vectors, (Nb, 3)
    y: np.ndarray       # deformed lengths
    extension: np.ndarray


def _kinematics(body: Body, bonds: BondList) -> _Kinematics:
    d = bonds.difference_operator() @ body.positions
    y = np.sqrt(np.einsum("ij,ij->i", d, d))
    return _Kinematics(d, y, y - bonds.length)


def collapsed_bonds(bonds: BondList, kin: _Kinematics) -> np.ndarray:
    return (kin.y == 0) & ~bonds.broken


def compute_state(body: Body, bonds: BondList, kin: _Kinematics = None) -> StateFields:
    """Weighted volume and dilatation over unbroken bonds.

    Particles without unbroken bonds get ``m = 0`` and ``theta = 0``; they
    contribute no state-based force.
    """
    kin = kin if kin is not None else _kinematics(body, bonds)
    n = len(body)
    live = ~bonds.broken
    i, j, L = bonds.i[live], bonds.j[live], bonds.length[live]
    w = influence(L)
    V = body.volumes
    m = np.bincount(i, w * L**2 * V[j], minlength=n) + np.bincount(j, w * L**2 * V[i], minlength=n)
    e = kin.extension[live]
    s1 = np.bincount(i, w * L * e * V[j], minlength=n) + np.bincount(j, w * L * e * V[i], minlength=n)
    theta = np.zeros(n)
    ok = m > 0
    theta[ok] = 3.0 * s1[ok] / m[ok]
    return StateFields(m, theta, bonds.generation, len(bonds))


def _check_state(state, bonds):
    if state is None:
        raise ConsistencyError("state-based model requires StateFields")
    if state.generation != bonds.generation or state.n_bonds != len(bonds):
        raise ConsistencyError(
            f"state built for bond generation {state.generation}, bonds are at {bonds.generation}")


def pair_force_scalars(body: Body, bonds: BondList, model: MaterialModel, state: StateFields = None,
                       kin: _Kinematics = None, back_extension: np.ndarray = None) -> np.ndarray:
    """Pairwise force density magnitude ``t_ij + t_ji`` for every pair (0 if broken)."""
    kin = kin if kin is not None else _kinematics(body, bonds)
    live = ~bonds.broken
    out = np.zeros(len(bonds))
    if isinstance(model, (LPS, VES)):
        _check_state(state, bonds)
        i, j, L = bonds.i[live], bonds.j[live], bonds.length[live]
        e = kin.extension[live]
        w = influence(L)
        m, th = state.weighted_volume, state.dilatation
        K, G = model.bulk_modulus, model.shear_modulus
        t = np.zeros(len(L))
        for idx, side in ((i, 0), (j, 1)):
            mi = m[idx]
            alpha = 15.0 * G / mi
            ed = e - th[idx] * L / 3.0
            ts = 3.0 * K * th[idx] / mi * w * L + alpha * w * ed
            if isinstance(model, VES) and model.relaxation != 0.0:
                edb = back_extension[live, side] if back_extension is not None else bonds.back_extension[live, side]
                ts = ts - (model.relaxation * alpha) * w * edb
            t += ts
        out[live] = t
    else:
        c = model.spring_constant
        out[live] = c * kin.extension[live] / bonds.length[live]
    return out


def assemble_internal_force(body: Body, bonds: BondList, model: MaterialModel,
                            state: StateFields = None, kin: _Kinematics = None) -> np.ndarray:
    """Acceleration ``(sum_j T V_j + b) / rho`` for every particle."""
    kin = kin if kin is not None else _kinematics(body, bonds)
    f = pair_force_scalars(body, bonds, model, state, kin)
    scale = np.divide(f, kin.y, out=np.zeros_like(f), where=f != 0.0)
    force = bonds.scatter_operator(body.volumes) @ (kin.d * scale[:, None])
    return (force + body.external_force) / body.density


def stable_timestep(body: Body, bonds: BondList, model: MaterialModel, safety: float = 0.8,
                    extra_stiffness: float = 0.0) -> float:
    """Explicit stability bound, minimum over particles.

    ``dt = safety * sqrt(2 rho / S_i)`` where ``S_i`` bounds the stiffness
    seen by particle ``i``: ``sum c V_j / |zeta|`` for PMB. For the
    state-based models the deviatoric part contributes ``sum (alpha_i +
    alpha_j) V_j`` and the dilatational coupling ``18 K (sum |zeta| V_j)^2 /
    m_i^2``. ``extra_stiffness`` (N/m^4) adds e.g. a contact penalty.
    """
    n = len(body)
    live = ~bonds.broken
    i, j, L = bonds.i[live], bonds.j[live], bonds.length[live]
    V = body.volumes
    if isinstance(model, (LPS, VES)):
        w = influence(L)
        m = np.bincount(i, w * L**2 * V[j], minlength=n) + np.bincount(j, w * L**2 * V[i], minlength=n)
        sl = np.bincount(i, w * L * V[j], minlength=n) + np.bincount(j, w * L * V[i], minlength=n)
        a = np.zeros(n)
        a[m > 0] = 15.0 * model.shear_modulus / m[m > 0]
        pair = (a[i] + a[j]) * w
        S = np.bincount(i, pair * V[j], minlength=n) + np.bincount(j, pair * V[i], minlength=n)
        S[m > 0] += 18.0 * model.bulk_modulus * sl[m > 0] ** 2 / m[m > 0] ** 2
    else:
        c = model.spring_constant
        S = np.bincount(i, c * V[j] / L, minlength=n) + np.bincount(j, c * V[i] / L, minlength=n)
    S = S + extra_stiffness
    S = S[S > 0]
    if len(S) == 0:
        raise ParameterError("no bonded particles; stable timestep undefined")
    return float(safety * np.sqrt(2.0 * body.density / S.max()))


def warn_collapsed(count: int):
    warnings.warn(f"{count} bond(s) collapsed to zero length; treating them as broken", RuntimeWarning,
                  stacklevel=3)
