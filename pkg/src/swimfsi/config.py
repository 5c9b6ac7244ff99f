"""Simulation configuration in a flat ``section.key = value`` text format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid

FAMILIES = ("none", "dilation", "travelling_wave", "file")
INITIAL_KINDS = ("zero", "stokes", "file")


@dataclass(frozen=True)
class GeometryConfig:
    box_half_width: float = 1.0
    ball_radius: float = 0.3
    resolution: int = 12
    mesh_path: str = ""
    solid_mesh_path: str = ""


@dataclass(frozen=True)
class FluidConfig:
    nu: float = 1.0


@dataclass(frozen=True)
class SolidConfig:
    rho_s: float = 1.0


@dataclass(frozen=True)
class DeformationConfig:
    family: str = "none"
    amplitude: float = 0.0
    frequency: float = 1.0
    path: str = ""


@dataclass(frozen=True)
class TimeConfig:
    dt: float = 0.01
    t_end: float = 0.1
    snapshot_every: int = 0


@dataclass(frozen=True)
class ToleranceConfig:
    tol_picard: float = 1e-8
    tol_ext: float = 1e-6
    tol_linear: float = 1e-8
    d_min: float = 0.0  # 0 selects two mesh cells
    max_picard: int = 50
    max_ext_iter: int = 20
    theta: float = 1.0


@dataclass(frozen=True)
class InitialConfig:
    u0: str = "zero"
    u0_path: str = ""
    h1: tuple = (0.0, 0.0, 0.0)
    omega0: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


@dataclass(frozen=True)
class SimConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    solid: SolidConfig = field(default_factory=SolidConfig)
    deformation: DeformationConfig = field(default_factory=DeformationConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def dt(self) -> float:
        return self.time.dt

    @property
    def cell_size(self) -> float:
        return 2.0 * self.geometry.box_half_width / self.geometry.resolution

    @property
    def d_min(self) -> float:
        d = self.tolerances.d_min
        return d if d > 0 else 2.0 * self.cell_size

    def with_values(self, **sections) -> "SimConfig":
        """Copy with some fields changed, e.g. ``with_values(time={"dt": 0.1})``."""
        kw = {}
        for name, values in sections.items():
            kw[name] = replace(getattr(self, name), **values)
        return replace(self, **kw).validated()

    def validated(self) -> "SimConfig":
        tol = self.tolerances
        for key in ("tol_picard", "tol_ext", "tol_linear"):
            if not getattr(tol, key) > 0:
                raise ConfigInvalid(f"tolerances.{key} must be positive", value=getattr(tol, key))
        if tol.d_min < 0:
            raise ConfigInvalid("tolerances.d_min must be non-negative", value=tol.d_min)
        if tol.max_picard < 1 or tol.max_ext_iter < 1:
            raise ConfigInvalid("iteration limits must be at least 1")
        if not 0 < tol.theta <= 1:
            raise ConfigInvalid("tolerances.theta must lie in (0, 1]", value=tol.theta)
        if not 0 < self.time.dt < self.time.t_end:
            raise ConfigInvalid("need 0 < time.dt < time.t_end", dt=self.time.dt, t_end=self.time.t_end)
        if self.time.snapshot_every < 0:
            raise ConfigInvalid("time.snapshot_every must be non-negative")
        d = self.deformation
        if d.family not in FAMILIES:
            raise ConfigInvalid("unknown deformation family", family=d.family)
        if d.amplitude < 0:
            raise ConfigInvalid("deformation.amplitude must be non-negative", value=d.amplitude)
        if d.family == "file" and not d.path:
            raise ConfigInvalid("deformation.path is required for family 'file'")
        if not self.fluid.nu > 0 or not self.solid.rho_s > 0:
            raise ConfigInvalid("fluid.nu and solid.rho_s must be positive")
        g = self.geometry
        if not g.mesh_path and not 0 < g.ball_radius < g.box_half_width:
            raise ConfigInvalid("need 0 < ball_radius < box_half_width")
        if bool(g.mesh_path) != bool(g.solid_mesh_path):
            raise ConfigInvalid("mesh_path and solid_mesh_path go together")
        if self.initial.u0 not in INITIAL_KINDS:
            raise ConfigInvalid("unknown initial.u0", value=self.initial.u0)
        if self.initial.u0 == "file" and not self.initial.u0_path:
            raise ConfigInvalid("initial.u0_path is required for u0 = file")
        return self


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(default, text: str, key: str):
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            vals = tuple(float(v) for v in text.replace("(", "").replace(")", "").split(","))
            if len(vals) != 3:
                raise ValueError("expected three components")
            return vals
    except ValueError as exc:
        raise ConfigInvalid(f"bad value for {key}: {exc}", value=text) from exc
    return text.strip().strip('"')


def parse_config(text: str) -> SimConfig:
    sections = {f.name: {} for f in fields(SimConfig)}
    defaults = SimConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid("expected 'section.key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigInvalid("key must be section.key", key=key, line=lineno)
        sec, name = key.split(".")
        if sec not in sections:
            raise ConfigInvalid("unknown section", key=key, line=lineno)
        sub = getattr(defaults, sec)
        if name not in {f.name for f in fields(sub)}:
            raise ConfigInvalid("unknown key", key=key, line=lineno)
        sections[sec][name] = _coerce(getattr(sub, name), value, key)
    cfg = SimConfig(**{sec: replace(getattr(defaults, sec), **vals) for sec, vals in sections.items()})
    return cfg.validated()


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}", path=str(path)) from exc
    return parse_config(text)


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for sec in fields(SimConfig):
        sub = getattr(cfg, sec.name)
        for f in fields(sub):
            lines.append(f"{sec.name}.{f.name} = {_format(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(3)
