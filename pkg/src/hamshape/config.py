"""Run configuration: INI files with section headers, presets for the two
reference experiments, validation and construction of a :class:`Problem`."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, replace
from io import StringIO
from pathlib import Path

from .cost import CostFunctions
from .errors import ConfigError
from .expressions import Expression
from .geometry import FiniteElementSpace, build_rectangle_mesh
from .levelset import ObservationRegion

Y_D = "x^2 + y^2 - 1"

PRESETS = {
    "example1": {
        "g0": "max(x^2 + y^2 - 2.5^2, -(x + 1)^2 - (y + 1)^2 + 0.5^2)",
        "u0": "0",
        "epsilon": 0.5,
        "cost": "boundary",
    },
    "example2": {
        "g0": "max((x + 0.8)^2 + (y + 0.8)^2 - 1.8^2, -(x + 0.8)^2 - (y + 0.8)^2 + 0.6^2)",
        "u0": "1",
        "epsilon": 0.9,
        "cost": "distributed",
        "E_center": (0.0, 0.0),
        "E_radius": 0.5,
        "g_E": "x^2 + y^2 - 0.5^2",
    },
}

# INI section of every key
_SECTIONS = {
    "mesh": ("bounds", "n_per_side", "degree", "pattern"),
    "problem": ("g0", "u0", "f", "delta", "epsilon", "E_center", "E_radius", "g_E", "cost", "y_d"),
    "optimizer": ("tol", "rho", "max_pow", "max_iter", "variant", "m", "c_step"),
    "run": ("preset", "output", "seed", "threads"),
}


@dataclass
class RunConfig:
    bounds: tuple = (-3.0, 3.0, -3.0, 3.0)
    n_per_side: int = 96
    degree: int = 2
    pattern: str = "diagonal"
    g0: str = PRESETS["example1"]["g0"]
    u0: str = "0"
    f: str = f"-4 + ({Y_D})"
    delta: str = "2"
    epsilon: float = 0.5
    E_center: tuple | None = None
    E_radius: float | None = None
    g_E: str | None = None
    cost: str = "boundary"          # none | boundary | distributed
    y_d: str = Y_D
    tol: float = 1e-6
    rho: float = 0.8
    max_pow: int = 30
    max_iter: int = 50
    variant: str = "ii"
    m: float = 1e-3
    c_step: float = 0.25
    preset: str | None = None
    output: str = "run"
    seed: int = 0
    threads: int = 1

    def validate(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must satisfy 0 < rho < 1")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.n_per_side < 2:
            raise ConfigError("n_per_side must be at least 2")
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        if self.variant not in ("i", "ii"):
            raise ConfigError("variant must be 'i' or 'ii'")
        if self.cost not in ("none", "boundary", "distributed"):
            raise ConfigError("cost must be none, boundary or distributed")
        if self.max_pow < 1 or self.max_iter < 0:
            raise ConfigError("max_pow must be >= 1 and max_iter >= 0")
        if (self.E_center is None) != (self.E_radius is None):
            raise ConfigError("E needs both E_center and E_radius")
        if self.E_radius is not None and self.E_radius <= 0:
            raise ConfigError("E_radius must be > 0")
        if self.E_radius is not None and self.g_E is None:
            raise ConfigError("E requires g_E for the projection")
        if self.cost == "distributed" and self.E_radius is None:
            raise ConfigError("distributed tracking needs an observation region E")
        for name in ("g0", "u0", "f", "delta", "g_E", "y_d"):
            text = getattr(self, name)
            if text is not None:
                Expression(text)
        return self

    # -- construction ----------------------------------------------------
    def build_space(self):
        mesh = build_rectangle_mesh(self.bounds, self.n_per_side, self.pattern)
        return FiniteElementSpace(mesh, self.degree)

    def observation_region(self):
        if self.E_radius is None:
            return None
        return ObservationRegion(self.E_center, self.E_radius)

    def cost_functions(self):
        if self.cost == "none":
            return CostFunctions()
        return CostFunctions.tracking(self.y_d, distributed=self.cost == "distributed",
                                      boundary=self.cost == "boundary")

    def problem(self, space=None):
        from .optimizer import Problem

        return Problem(
            space=space or self.build_space(), f=Expression(self.f), delta=Expression(self.delta),
            cf=self.cost_functions(), epsilon=self.epsilon, E=self.observation_region(),
            g_E=self.g_E, m=self.m, c_step=self.c_step, rho=self.rho, max_pow=self.max_pow,
            tol=self.tol, max_iter=self.max_iter, variant=self.variant, threads=self.threads,
        )

    # -- serialization ---------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        data = asdict(self)
        for sec, keys in _SECTIONS.items():
            cp[sec] = {k: _fmt(data[k]) for k in keys if data[k] is not None}
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _parse_value(name, text):
    try:
        if name in ("bounds", "E_center"):
            vals = tuple(float(t) for t in text.replace(";", ",").split(","))
            want = 4 if name == "bounds" else 2
            if len(vals) != want:
                raise ValueError(f"expected {want} numbers")
            return vals
        if name in ("E_radius", "epsilon", "tol", "rho", "m", "c_step"):
            return float(text)
        if name in ("n_per_side", "degree", "max_pow", "max_iter", "seed", "threads"):
            return int(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r} ({exc})") from None
    if text.strip().lower() == "none" and name in ("g_E", "preset"):
        return None
    return text.strip()


def from_preset(name, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    data = dict(PRESETS[name])
    data.update(overrides)
    return replace(RunConfig(preset=name, output=name), **data)


def load_config(path=None, preset=None, overrides=None) -> RunConfig:
    """Read an INI file (optionally naming a preset in [run]) and apply
    command-line overrides. Unknown keys are rejected."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        for sec in cp.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            for key, text in cp[sec].items():
                if key not in _SECTIONS[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                values[key] = _parse_value(key, text)
    preset = preset or values.pop("preset", None)
    cfg = from_preset(preset) if preset else RunConfig()
    cfg = replace(cfg, **values)
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
