"""
Physical parameters, dimensionless scales and run configuration.

Lengths are measured in ``l = v_Ti / nu_in``, times in ``1/nu_in``,
velocities in ``v_Ti = sqrt(T_i / m_i)`` and the potential in ``T_i / e``.
Temperatures are energies in Joules; the electron temperature is stored
as its ratio to ``T_i``.  Densities keep their physical unit (m^-3).

Configuration files are flat TOML (``key = value`` lines, ``#`` comments).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

# bound on the Gaussian tail at the edge of the velocity box
TAIL_BOUND = 1e-6
MIN_POINTS = 8


@dataclass(frozen=True)
class PhysicalParams:
    T_i: float
    T_e: float
    E_0: float
    B_0: float
    n_0: float
    m_i: float
    m_e: float
    nu_in: float
    e_charge: float
    eps_0: float
    psi: float
    theta: float

    def problems(self) -> list:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                out.append(f"{f.name} must be a positive finite number (got {v!r})")
        return out


@dataclass(frozen=True)
class DerivedScales:
    v_Ti: float
    l: float
    V_0: float
    drive: float
    poisson_coeff: float


@dataclass(frozen=True)
class GridSpec:
    n_x: int
    n_v: int
    L: float
    v_max: float

    @property
    def h(self) -> float:
        return self.L / self.n_x

    @property
    def h_v(self) -> float:
        return 2.0 * self.v_max / self.n_v

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h

    @property
    def v(self) -> np.ndarray:
        """Cell-centred velocity nodes; symmetric about zero."""
        return -self.v_max + (np.arange(self.n_v) + 0.5) * self.h_v


@dataclass(frozen=True)
class TimeSpec:
    tau: float
    n_steps: int
    N_ext: int


@dataclass(frozen=True)
class ToleranceSpec:
    eps_factor: float = 0.05
    eps_floor: float = 1e-8
    eps_initial: float = 1e-3
    eps_cap: float = 0.1
    adaptive: bool = True
    kickrank: int = 4
    max_sweeps: int = 4

    def problems(self) -> list:
        out = []
        if not 0 < self.eps_floor <= self.eps_initial:
            out.append("need 0 < eps_floor <= eps_initial")
        if not 0 < self.eps_factor < 1:
            out.append("eps_factor must lie in (0, 1)")
        if self.eps_cap < self.eps_floor:
            out.append("eps_cap must be >= eps_floor")
        if self.kickrank < 0 or self.max_sweeps < 1:
            out.append("kickrank must be >= 0 and max_sweeps >= 1")
        return out

    def next_eps(self, relative_change: float) -> float:
        if not self.adaptive:
            return self.eps_initial
        return float(min(self.eps_cap, max(self.eps_floor, self.eps_factor * relative_change)))


@dataclass(frozen=True)
class InitSpec:
    seed: int = 0
    target_ratio: float = 0.1


@dataclass(frozen=True)
class StatWindows:
    avg: tuple = (0.03, 0.05)
    peak: tuple = (0.015, 0.03)
    onset_after: float = 0.01
    smoothing: int = 5


@dataclass(frozen=True)
class SimConfig:
    physics: PhysicalParams
    grid: GridSpec
    time: TimeSpec
    tol: ToleranceSpec = ToleranceSpec()
    init: InitSpec = InitSpec()
    stats: StatWindows = StatWindows()
    poisson_coeff_scale: float = 1.0
    backend: str = "tt"
    out: str = "run"
    checkpoint_every: int = 500

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_flat(self) -> dict:
        flat = {}
        for name, (section, attr) in _KEYS.items():
            obj = self if section is None else getattr(self, section)
            val = getattr(obj, attr)
            flat[name] = val
        return flat

    @property
    def config_hash(self) -> str:
        return config_hash(self)


def derive_scales(p: PhysicalParams) -> DerivedScales:
    problems = p.problems()
    if problems:
        raise ConfigError(problems)
    v_Ti = math.sqrt(p.T_i / p.m_i)
    return DerivedScales(
        v_Ti=v_Ti,
        l=v_Ti / p.nu_in,
        V_0=p.E_0 / p.B_0,
        drive=p.e_charge * p.E_0 / (p.m_i * v_Ti * p.nu_in),
        poisson_coeff=p.e_charge ** 2 / (p.eps_0 * p.m_i * p.nu_in ** 2),
    )


def validate_grid(g: GridSpec, t: Optional[TimeSpec] = None) -> list:
    """Return a list of violated discretization constraints (empty if ok)."""
    out = []
    if g.n_x < MIN_POINTS:
        out.append(f"n_x = {g.n_x} is below the minimum of {MIN_POINTS}")
    if g.n_v < MIN_POINTS:
        out.append(f"n_v = {g.n_v} is below the minimum of {MIN_POINTS}")
    if not g.L > 0:
        out.append(f"L = {g.L} must be positive")
    if not g.v_max > 0:
        out.append(f"v_max = {g.v_max} must be positive")
    elif math.exp(-g.v_max ** 2 / 2) >= TAIL_BOUND:
        out.append(f"v_max = {g.v_max} too small: exp(-v_max^2/2) = "
                   f"{math.exp(-g.v_max ** 2 / 2):.3g} >= {TAIL_BOUND:g}")
    if t is not None:
        if not t.tau > 0:
            out.append(f"tau = {t.tau} must be positive")
        if t.n_steps < 0:
            out.append(f"n_steps = {t.n_steps} must be >= 0")
        if t.N_ext < 1:
            out.append(f"N_ext = {t.N_ext} must be >= 1")
    return out


def physical_time(step: int, tau: float, nu_in: float) -> float:
    return step * tau / nu_in


# ----------------------------------------------------------------------------
# flat key-value files

# key -> (section attribute or None, field name)
_KEYS = {
    "T_i": ("physics", "T_i"), "T_e": ("physics", "T_e"), "E_0": ("physics", "E_0"),
    "B_0": ("physics", "B_0"), "n_0": ("physics", "n_0"), "m_i": ("physics", "m_i"),
    "m_e": ("physics", "m_e"), "nu_in": ("physics", "nu_in"),
    "e_charge": ("physics", "e_charge"), "eps_0": ("physics", "eps_0"),
    "psi": ("physics", "psi"), "theta": ("physics", "theta"),
    "L": ("grid", "L"), "v_max": ("grid", "v_max"), "n_x": ("grid", "n_x"),
    "n_v": ("grid", "n_v"),
    "tau": ("time", "tau"), "n_steps": ("time", "n_steps"), "N_ext": ("time", "N_ext"),
    "eps_factor": ("tol", "eps_factor"), "eps_floor": ("tol", "eps_floor"),
    "eps_initial": ("tol", "eps_initial"), "eps_cap": ("tol", "eps_cap"),
    "eps_adaptive": ("tol", "adaptive"), "amen_kickrank": ("tol", "kickrank"),
    "amen_max_sweeps": ("tol", "max_sweeps"),
    "seed": ("init", "seed"), "target_ratio": ("init", "target_ratio"),
    "stat_avg_window": ("stats", "avg"), "stat_max_window": ("stats", "peak"),
    "stat_onset_after": ("stats", "onset_after"), "stat_smoothing": ("stats", "smoothing"),
    "poisson_coeff_scale": (None, "poisson_coeff_scale"),
    "backend": (None, "backend"), "out": (None, "out"),
    "checkpoint_every": (None, "checkpoint_every"),
}

REQUIRED_KEYS = tuple(k for k, (sec, _) in _KEYS.items() if sec in ("physics", "grid", "time"))
_INT_KEYS = {"n_x", "n_v", "n_steps", "N_ext", "seed", "amen_kickrank", "amen_max_sweeps",
             "stat_smoothing", "checkpoint_every"}
_BOOL_KEYS = {"eps_adaptive"}
_STR_KEYS = {"backend", "out"}
_PAIR_KEYS = {"stat_avg_window", "stat_max_window"}
# keys that do not change the computed trajectory (n_steps only sets its length,
# so a resumed or extended run keeps its hash)
_UNHASHED = {"backend", "out", "checkpoint_every", "n_steps"}
BACKENDS = ("tt", "dense", "both")


def _coerce(key, val):
    if key in _BOOL_KEYS:
        if not isinstance(val, bool):
            raise TypeError("expected true or false")
        return val
    if key in _STR_KEYS:
        if not isinstance(val, str):
            raise TypeError("expected a string")
        return val
    if key in _PAIR_KEYS:
        if not (isinstance(val, list) and len(val) == 2):
            raise TypeError("expected a two-element list")
        return (float(val[0]), float(val[1]))
    if isinstance(val, bool):
        raise TypeError("expected a number")
    if key in _INT_KEYS:
        if isinstance(val, float) and not val.is_integer():
            raise TypeError("expected an integer")
        return int(val)
    if not isinstance(val, (int, float)):
        raise TypeError("expected a number")
    return float(val)


def config_from_mapping(data: dict) -> SimConfig:
    """Build and validate a config; every problem is reported at once."""
    problems = []
    unknown = sorted(set(data) - set(_KEYS))
    problems += [f"unknown key {k!r}" for k in unknown]
    problems += [f"missing required key {k!r}" for k in REQUIRED_KEYS if k not in data]
    values = {}
    for k, v in data.items():
        if k in _KEYS:
            try:
                values[k] = _coerce(k, v)
            except (TypeError, ValueError) as exc:
                problems.append(f"{k}: {exc}")
    if problems:
        raise ConfigError(problems)

    sections = {"physics": {}, "grid": {}, "time": {}, "tol": {}, "init": {}, "stats": {}}
    top = {}
    for k, v in values.items():
        sec, attr = _KEYS[k]
        (top if sec is None else sections[sec])[attr] = v
    cfg = SimConfig(
        physics=PhysicalParams(**sections["physics"]),
        grid=GridSpec(**sections["grid"]),
        time=TimeSpec(**sections["time"]),
        tol=ToleranceSpec(**sections["tol"]),
        init=InitSpec(**sections["init"]),
        stats=StatWindows(**sections["stats"]),
        **top,
    )
    problems = cfg.physics.problems() + validate_grid(cfg.grid, cfg.time) + cfg.tol.problems()
    if cfg.backend not in BACKENDS:
        problems.append(f"backend must be one of {BACKENDS} (got {cfg.backend!r})")
    if cfg.init.target_ratio <= 0:
        problems.append("target_ratio must be positive")
    if cfg.checkpoint_every < 0:
        problems.append("checkpoint_every must be >= 0")
    if not cfg.poisson_coeff_scale > 0:
        problems.append("poisson_coeff_scale must be positive")
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config_text(text: str, source: str = "<string>") -> SimConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # message carries "(at line N, column M)"
        raise ConfigError(f"{source}: parse error: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{source}: tables are not allowed in the flat format: {nested}")
    return config_from_mapping(data)


def load_config(path) -> SimConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def preset_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("fbtt.presets").iterdir()
                  if p.name.endswith(".toml"))


def load_preset(name: str) -> SimConfig:
    res = resources.files("fbtt.presets") / f"{name}.toml"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return parse_config_text(res.read_text(), f"preset {name}")


def config_hash(cfg: SimConfig) -> str:
    """SHA-256 of the canonical JSON of all trajectory-relevant keys."""
    flat = {k: v for k, v in cfg.to_flat().items() if k not in _UNHASHED}
    flat = {k: list(v) if isinstance(v, tuple) else v for k, v in flat.items()}
    blob = json.dumps(flat, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_config(cfg: SimConfig) -> str:
    """Flat TOML text that round-trips through :func:`parse_config_text`."""
    lines = [f"# config hash {config_hash(cfg)}"]
    for k, v in cfg.to_flat().items():
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, str):
            s = json.dumps(v)
        elif isinstance(v, tuple):
            s = f"[{v[0]!r}, {v[1]!r}]"
        else:
            s = repr(v)
        lines.append(f"{k} = {s}")
    return "\n".join(lines) + "\n"
