"""Run configuration: ``[section]`` headers with ``key = value`` lines.

Units throughout: mm, ms, mg, kPa.  Viscosity is given in Poise in the file
and converted once, when the config is built.  A small hand parser is used
instead of configparser so that every error can name its line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Tuple

from .fluid import FluidParams, poise_to_kpa_ms
from .materials import ADVENTITIA_PARAMS, MEDIA_PARAMS, ArteryLayerParams, MooneyRivlinParams
from .mesh import Region


class ConfigError(ValueError):
    pass


@dataclass
class GeometryConfig:
    radius: float = 1.43
    length: float = 18.0
    media_thickness: float = 0.26
    adventitia_thickness: float = 0.13
    n_axial: int = 36
    n_circ: int = 24
    n_radial_fluid: int = 2
    n_radial_layer: int = 2


@dataclass
class FluidConfig:
    rho: float = 1.0
    mu_poise: float = 0.035
    g_in: float = 1.332            # axial inlet traction, kPa
    pulse_duration: float = 1.0    # ms
    stabilize: bool = True
    mu: float = field(init=False)  # kPa*ms

    def __post_init__(self):
        self.mu = poise_to_kpa_ms(self.mu_poise)


@dataclass
class StructureConfig:
    model: str = "mooney_rivlin"
    rho: float = 1.2
    beta: float = 0.625
    gamma: float = 1.0
    kappa: float = 1e5
    c10: float = 3.0
    c01: float = 0.3
    media_c10: float = MEDIA_PARAMS.c10
    media_k1: float = MEDIA_PARAMS.k1
    media_k2: float = MEDIA_PARAMS.k2
    media_alpha: float = MEDIA_PARAMS.alpha
    adventitia_c10: float = ADVENTITIA_PARAMS.c10
    adventitia_k1: float = ADVENTITIA_PARAMS.k1
    adventitia_k2: float = ADVENTITIA_PARAMS.k2
    adventitia_alpha: float = ADVENTITIA_PARAMS.alpha
    stabilize: bool = True


@dataclass
class SolverConfig:
    fluid_solver: str = "amg"
    structure_solver: str = "amg"
    fluid_smoother: str = "braess_sarazin"
    structure_smoother: str = "vanka"
    fluid_steps: int = 8
    structure_steps: int = 12
    omega_vanka: float = 0.78
    theta: float = 6.0
    tolerance_mode: str = "fixed"
    eps_dn: float = 1e-8
    eps2: float = 1e-8
    eps1: float = 1e-8
    absolute: bool = False
    omega0: float = 0.5
    max_dn: int = 100
    max_newton: int = 25
    max_krylov: int = 200
    dt: float = 0.125
    n_steps: int = 8
    output_every: int = 1
    output_dir: str = ""


@dataclass
class Config:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    structure: StructureConfig = field(default_factory=StructureConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def fluid_params(self) -> FluidParams:
        f = self.fluid
        return FluidParams(rho=f.rho, mu=f.mu, dt=self.solver.dt, g_in=(0.0, 0.0, f.g_in),
                           pulse_duration=f.pulse_duration)

    def materials(self) -> Dict[int, object]:
        s = self.structure
        if s.model == "mooney_rivlin":
            mr = MooneyRivlinParams(c10=s.c10, c01=s.c01, kappa=s.kappa)
            return {Region.MEDIA: mr, Region.ADVENTITIA: mr}
        return {
            Region.MEDIA: ArteryLayerParams(s.media_c10, s.media_k1, s.media_k2, s.media_alpha, s.kappa),
            Region.ADVENTITIA: ArteryLayerParams(s.adventitia_c10, s.adventitia_k1, s.adventitia_k2,
                                                 s.adventitia_alpha, s.kappa),
        }


SECTIONS = {"geometry": GeometryConfig, "fluid": FluidConfig, "structure": StructureConfig, "solver": SolverConfig}
REQUIRED = {"structure": ("model",)}
MODEL_KEYS = {
    "mooney_rivlin": ("c10", "c01"),
    "artery": ("media_c10", "media_k1", "media_k2", "media_alpha",
               "adventitia_c10", "adventitia_k1", "adventitia_k2", "adventitia_alpha"),
}
CHOICES = {
    "model": tuple(MODEL_KEYS),
    "fluid_solver": ("amg", "krylov", "direct"),
    "structure_solver": ("amg", "krylov", "direct"),
    "fluid_smoother": ("braess_sarazin", "vanka"),
    "structure_smoother": ("braess_sarazin", "vanka"),
    "tolerance_mode": ("fixed", "adaptive"),
}
# keys that may be zero; every other number must be strictly positive
NONNEGATIVE = {"g_in", "pulse_duration", "gamma", "media_alpha", "adventitia_alpha", "c01"}


def _convert(kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("value must be finite")
        return v
    return raw


def _type_of(cls, name):
    hints = {"float": float, "int": int, "bool": bool, "str": str}
    for f in fields(cls):
        if f.name == name and f.init:
            return hints.get(f.type, f.type) if isinstance(f.type, str) else f.type
    return None


def _check_value(key, value, line_no, where):
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{where}:{line_no}: {key} must be one of {', '.join(CHOICES[key])}")
    if isinstance(value, (int, float)) and not isinstance(value, bool) and key != "output_every":
        if value < 0 or (value == 0 and key not in NONNEGATIVE):
            raise ConfigError(f"{where}:{line_no}: {key} must be positive (got {value})")
    if key == "output_every" and value < 0:
        raise ConfigError(f"{where}:{line_no}: output_every must be >= 0")
    if key == "beta" and value > 1:
        raise ConfigError(f"{where}:{line_no}: beta must lie in (0, 1]")
    if key == "gamma" and value > 1:
        raise ConfigError(f"{where}:{line_no}: gamma must lie in [0, 1]")
    if key in ("omega_vanka", "omega0") and value > 1:
        raise ConfigError(f"{where}:{line_no}: {key} must lie in (0, 1]")


def parse_config_text(text: str, where: str = "<config>") -> Config:
    values: Dict[str, Dict[str, Tuple[object, int]]] = {}
    section = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}:{line_no}: malformed section header")
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"{where}:{line_no}: unknown section [{section}]")
            if section in values:
                raise ConfigError(f"{where}:{line_no}: duplicate section [{section}]")
            values[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{line_no}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{where}:{line_no}: key outside of a section")
        key, raw = (s.strip() for s in line.split("=", 1))
        kind = _type_of(SECTIONS[section], key)
        if kind is None:
            raise ConfigError(f"{where}:{line_no}: unknown key {key!r} in [{section}]")
        if key in values[section]:
            raise ConfigError(f"{where}:{line_no}: duplicate key {key!r}")
        try:
            value = _convert(kind, raw)
        except ValueError as exc:
            raise ConfigError(f"{where}:{line_no}: bad value for {key}: {exc}") from None
        _check_value(key, value, line_no, where)
        values[section][key] = (value, line_no)

    for name in SECTIONS:
        if name not in values:
            raise ConfigError(f"{where}: missing [{name}]")
    for name, keys in REQUIRED.items():
        for key in keys:
            if key not in values[name]:
                raise ConfigError(f"{where}: missing required key {key!r} in [{name}]")
    model = values["structure"]["model"][0]
    for key in MODEL_KEYS[model]:
        if key not in values["structure"]:
            raise ConfigError(f"{where}: model {model} requires key {key!r} in [structure]")

    parts = {name: cls(**{k: v for k, (v, _) in values[name].items()}) for name, cls in SECTIONS.items()}
    return Config(**parts)


def parse_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def format_config(config: Config) -> str:
    """Inverse of parse_config_text (floats printed with repr, so exact)."""
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        part = getattr(config, name)
        for f in fields(part):
            if not f.init:
                continue
            if name == "structure" and f.name in sum(MODEL_KEYS.values(), ()) \
                    and f.name not in MODEL_KEYS[config.structure.model]:
                continue
            v = getattr(part, f.name)
            out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v!r}".replace("'", ""))
        out.append("")
    return "\n".join(out)


def parameter_table(config: Config) -> str:
    """Human-readable resolved parameters (used by ``fsikit check``)."""
    rows = []
    for name in SECTIONS:
        part = getattr(config, name)
        for f in fields(part):
            if name == "structure" and f.name in sum(MODEL_KEYS.values(), ()) \
                    and f.name not in MODEL_KEYS[config.structure.model]:
                continue
            rows.append((f"{name}.{f.name}", getattr(part, f.name)))
    rows.append(("fluid.mu [kPa*ms]", config.fluid.mu))
    w = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)
