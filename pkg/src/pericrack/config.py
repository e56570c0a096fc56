"""Run configuration: an INI file with ``scenario``, ``material``, ``dataset``, ``cnn`` and ``np`` sections.

Every key has a default, unknown sections or keys are rejected, and values
are validated against the owning module's constructors at load time.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .cnn import CnnArchitecture, CnnTrainConfig
from .errors import ConfigError, PericrackError
from .neural_process import NpArchitecture, NpTrainConfig
from .peri.materials import MODELS, MaterialModel, make_model
from .scenario import DiskSpec, SimulationConfig


@dataclass(frozen=True)
class ScenarioSection:
    disk_radius: float = 0.012
    disk_thickness: float = 0.0025
    spacing: float = 0.0005
    density: float = 2200.0
    n_steps: int = 1000
    dt: Optional[float] = None
    disk_speed: float = 10.0
    cadence: int = 100
    seed: int = 0
    contact_stiffness: float = 1.0e17
    hit_radius_fraction: float = 0.8
    runs_per_mode: int = 1


@dataclass(frozen=True)
class MaterialSection:
    model: str = "pmb"
    bulk_modulus: float = 14.9e9
    shear_modulus: float = 14.9e9
    horizon: float = 0.0015001
    s00: float = 0.0005
    alpha: float = 0.25
    relaxation: float = 0.5
    time_constant: float = 0.001


@dataclass(frozen=True)
class DatasetSection:
    train_frac: float = 5 / 6
    val_frac_of_train: float = 0.3
    test_frac: float = 1 / 6
    seed: int = 0


@dataclass(frozen=True)
class CnnSection:
    learning_rate: float = 1e-3
    batch_size: int = 50
    epochs: int = 100
    seed: int = 0
    stride: int = 3


@dataclass(frozen=True)
class NpSection:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    n_images: int = 500
    train_samples: int = 1
    eval_samples: int = 20
    monitor_images: int = 8
    monitor_context: int = 100
    seed: int = 0


SECTIONS = {"scenario": ScenarioSection, "material": MaterialSection, "dataset": DatasetSection,
            "cnn": CnnSection, "np": NpSection}


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    material: MaterialSection = field(default_factory=MaterialSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    cnn: CnnSection = field(default_factory=CnnSection)
    np: NpSection = field(default_factory=NpSection)

    def __post_init__(self):
        try:
            self.disk_spec()
            self.simulation_config()
            self.material_model()
            for name in MODELS:
                self.material_model(name)
            self.cnn_config()
            self.cnn_arch().shape_chain()
            self.np_config()
        except ConfigError:
            raise
        except PericrackError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 <= self.dataset.test_frac <= 1 or not 0 <= self.dataset.val_frac_of_train <= 1:
            raise ConfigError("dataset fractions must lie in [0, 1]")
        if abs(self.dataset.train_frac + self.dataset.test_frac - 1) > 1e-9:
            raise ConfigError("dataset.train_frac + dataset.test_frac must equal 1")
        if self.scenario.runs_per_mode < 1 or self.np.n_images < 1:
            raise ConfigError("scenario.runs_per_mode and np.n_images must be positive")

    # -- module views ------------------------------------------------------------------
    def disk_spec(self) -> DiskSpec:
        s = self.scenario
        return DiskSpec(radius=s.disk_radius, thickness=s.disk_thickness, spacing=s.spacing, density=s.density,
                        volume=s.spacing ** 3)

    def simulation_config(self) -> SimulationConfig:
        s = self.scenario
        return SimulationConfig(n_steps=s.n_steps, dt=s.dt, disk_speed=s.disk_speed, cadence=s.cadence,
                                seed=s.seed, contact_stiffness=s.contact_stiffness,
                                hit_radius_fraction=s.hit_radius_fraction)

    def material_model(self, name: str = None) -> MaterialModel:
        m = self.material
        name = (name or m.model).lower()
        if name not in MODELS:
            raise ConfigError(f"material.model must be one of {sorted(MODELS)}, got {name!r}")
        params = dict(bulk_modulus=m.bulk_modulus, horizon=m.horizon, s00=m.s00, alpha=m.alpha)
        if name in ("lps", "ves"):
            params["shear_modulus"] = m.shear_modulus
        if name == "ves":
            params.update(relaxation=m.relaxation, time_constant=m.time_constant)
        return make_model(name, **params)

    def cnn_arch(self) -> CnnArchitecture:
        return CnnArchitecture(stride=self.cnn.stride)

    def cnn_config(self) -> CnnTrainConfig:
        c = self.cnn
        return CnnTrainConfig(learning_rate=c.learning_rate, batch_size=c.batch_size, epochs=c.epochs, seed=c.seed)

    def np_arch(self) -> NpArchitecture:
        return NpArchitecture()

    def np_config(self) -> NpTrainConfig:
        c = self.np
        return NpTrainConfig(batch_size=c.batch_size, epochs=c.epochs, learning_rate=c.learning_rate,
                             train_samples=c.train_samples, eval_samples=c.eval_samples,
                             monitor_images=c.monitor_images, monitor_context=c.monitor_context, seed=c.seed)

    def replace(self, section: str, **values) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


def _format(value) -> str:
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


def _convert(section: str, f: dataclasses.Field, text: str):
    key = f"{section}.{f.name}"
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    text = text.strip()
    try:
        if "Optional" in kind:
            return None if text.lower() in ("auto", "none", "") else float(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def serialize(config: RunConfig) -> str:
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        section = getattr(config, name)
        for f in fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    kwargs = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _convert(name, known[key], raw)
        try:
            kwargs[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    return RunConfig(**kwargs)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse(path.read_text())


def save(config: RunConfig, path) -> None:
    Path(path).write_text(serialize(config))
