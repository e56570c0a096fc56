"""Material models for the peridynamic engine and their derived constants.

All three models carry the critical-stretch parameters ``s00`` and ``alpha``
used by the bond-breaking rule in :mod:`pericrack.peri.integrate`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ..errors import ParameterError


def _positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise ParameterError(f"{name} must be positive and finite, got {value!r}")


def pmb_spring_constant(bulk_modulus: float, horizon: float) -> float:
    """Micromodulus ``c = 18 K / (pi delta^4)`` in Pa/m^4."""
    _positive("bulk_modulus", bulk_modulus)
    _positive("horizon", horizon)
    return 18.0 * bulk_modulus / (math.pi * horizon**4)


def critical_stretch(fracture_energy: float, bulk_modulus: float, horizon: float) -> float:
    """Energy-based critical stretch ``s0 = sqrt(5 G0 / (9 K delta))``."""
    _positive("fracture_energy", fracture_energy)
    _positive("bulk_modulus", bulk_modulus)
    _positive("horizon", horizon)
    return math.sqrt(5.0 * fracture_energy / (9.0 * bulk_modulus * horizon))


def fracture_energy(spring_constant: float, s0: float, horizon: float) -> float:
    """Inverse of :func:`critical_stretch`: ``G0 = pi c s0^2 delta^5 / 10``."""
    _positive("spring_constant", spring_constant)
    _positive("s0", s0)
    _positive("horizon", horizon)
    return math.pi * spring_constant * s0**2 * horizon**5 / 10.0


@dataclass(frozen=True)
class MaterialModel:
    bulk_modulus: float = 14.9e9
    horizon: float = 0.0015001
    s00: float = 0.0005
    alpha: float = 0.25

    name = "base"

    def __post_init__(self):
        _positive("bulk_modulus", self.bulk_modulus)
        _positive("horizon", self.horizon)
        _positive("s00", self.s00)
        if not math.isfinite(self.alpha):
            raise ParameterError(f"alpha must be finite, got {self.alpha!r}")

    @property
    def spring_constant(self) -> float:
        return pmb_spring_constant(self.bulk_modulus, self.horizon)

    @property
    def state_based(self) -> bool:
        return False

    def scaled(self, horizon: float) -> "MaterialModel":
        """Same material with a different horizon (for coarser lattices)."""
        return replace(self, horizon=horizon)


@dataclass(frozen=True)
class PMB(MaterialModel):
    """Prototype micro-elastic brittle bond model."""

    name = "pmb"


@dataclass(frozen=True)
class LPS(MaterialModel):
    """Linear peridynamic solid (ordinary state-based)."""

    shear_modulus: float = 14.9e9

    name = "lps"

    def __post_init__(self):
        super().__post_init__()
        _positive("shear_modulus", self.shear_modulus)

    @property
    def state_based(self) -> bool:
        return True


@dataclass(frozen=True)
class VES(LPS):
    """Viscoelastic solid: LPS plus one relaxing back-extension branch.

    ``relaxation`` is the fraction of the deviatoric modulus carried by the
    viscous branch (``lambda_i``); ``time_constant`` is ``tau_bi`` in seconds.
    ``relaxation = 0`` is allowed and reproduces :class:`LPS` exactly.
    """

    relaxation: float = 0.5
    time_constant: float = 0.001

    name = "ves"

    def __post_init__(self):
        super().__post_init__()
        if not (0.0 <= self.relaxation < 1.0):
            raise ParameterError(f"relaxation must lie in [0, 1), got {self.relaxation!r}")
        _positive("time_constant", self.time_constant)


MODELS = {"pmb": PMB, "lps": LPS, "ves": VES}


def make_model(name: str, **params) -> MaterialModel:
    try:
        cls = MODELS[name.lower()]
    except KeyError:
        raise ParameterError(f"unknown material model {name!r}; expected one of {sorted(MODELS)}") from None
    return cls(**params)
