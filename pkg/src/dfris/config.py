"""Scenario configuration: YAML schema, defaults and validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .channel import LinkModels, PathLossParams, ScenarioGeometry, default_user_positions
from .optimizer import OptimizerConfig
from .system import NoiseAndGainParams

SWEEPABLE = ("p_t_dbm", "beta_db", "n_elements", "n_antennas", "n_users", "bits",
             "noise_dbm", "amp_noise_dbm")


class ConfigError(ValueError):
    pass


def parse_bits(value) -> Optional[int]:
    """``inf``/``None`` -> continuous phases, otherwise a positive integer."""
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "none"):
            return None
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"bits: expected a positive integer or 'inf', got {value!r}") from None
    if isinstance(value, bool):
        raise ConfigError("bits: expected a positive integer or 'inf'")
    if isinstance(value, float):
        if math.isinf(value) and value > 0:
            return None
        if not value.is_integer():
            raise ConfigError(f"bits: expected an integer, got {value}")
        value = int(value)
    if not isinstance(value, int) or value < 1:
        raise ConfigError(f"bits: expected a positive integer or 'inf', got {value!r}")
    return value


@dataclass(frozen=True)
class GeometryConfig:
    bs_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    ris_position: Tuple[float, float, float] = (50.0, 0.0, 0.0)
    # None -> default layout from the two distances below
    user_positions: Optional[Tuple[Tuple[float, float, float], ...]] = None
    near_user_distance: float = 2.0
    far_user_distance: float = 20.0
    horn_offsets: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = (
        (-0.25, 0.0, 0.0), (0.25, 0.0, 0.0))
    element_spacing: float = 0.5
    carrier_wavelength: float = 0.1


@dataclass(frozen=True)
class PathLossConfig:
    bs_ris: PathLossParams = PathLossParams(kappa=2.5)
    ris_user: PathLossParams = PathLossParams(kappa=3.0)
    rician_factor_db: float = 3.0
    los_bs_angles: Tuple[float, float] = (0.0, 0.0)
    los_ris_angles: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Sweep:
    parameter: str
    values: Tuple[Any, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    n_antennas: int = 6
    n_users: int = 4
    n_elements: int = 64
    p_t_dbm: float = 40.0
    beta_db: float = 30.0
    bits: Optional[int] = None
    noise_dbm: float = -80.0
    amp_noise_dbm: float = -70.0
    geometry: GeometryConfig = GeometryConfig()
    path_loss: PathLossConfig = PathLossConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    trials: int = 50
    base_seed: int = 0
    sweep: Optional[Sweep] = None

    def __post_init__(self):
        for name in ("n_antennas", "n_users", "n_elements", "trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.n_users < 2:
            raise ConfigError("n_users: need at least 2 (reflect-served users plus the relay user)")
        if self.base_seed < 0:
            raise ConfigError("base_seed: must be nonnegative")
        g = self.geometry
        if g.user_positions is not None and len(g.user_positions) != self.n_users:
            raise ConfigError(f"geometry.user_positions: expected {self.n_users} positions, "
                              f"got {len(g.user_positions)}")
        if self.sweep is not None:
            if self.sweep.parameter not in SWEEPABLE:
                raise ConfigError(f"sweep.parameter: {self.sweep.parameter!r} is not one of {SWEEPABLE}")
            if not self.sweep.values:
                raise ConfigError("sweep.values: must not be empty")
            if self.sweep.parameter == "n_users" and g.user_positions is not None:
                raise ConfigError("sweep.parameter: n_users sweeps need the default user layout")
            for v in self.sweep.values:
                # each point must build a valid scenario
                self.at(v)
        # building these surfaces any remaining field errors
        self.scenario_geometry()
        self.noise()

    # ---- derived objects
    def scenario_geometry(self) -> ScenarioGeometry:
        g = self.geometry
        users = g.user_positions
        if users is None:
            users = default_user_positions(self.n_users, g.ris_position,
                                           g.near_user_distance, g.far_user_distance)
        try:
            return ScenarioGeometry(tuple(g.bs_position), tuple(g.ris_position),
                                    tuple(tuple(u) for u in users), tuple(g.horn_offsets),
                                    g.element_spacing, g.carrier_wavelength)
        except ValueError as exc:
            raise ConfigError(f"geometry: {exc}") from None

    def links(self) -> LinkModels:
        p = self.path_loss
        return LinkModels(p.bs_ris, p.ris_user, p.rician_factor_db,
                          tuple(p.los_bs_angles), tuple(p.los_ris_angles))

    def noise(self) -> NoiseAndGainParams:
        try:
            return NoiseAndGainParams.from_db(self.n_users, self.noise_dbm, self.amp_noise_dbm,
                                              self.beta_db, self.p_t_dbm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def optimizer_config(self, seed: int) -> OptimizerConfig:
        return replace(self.optimizer, resolution_bits=self.bits, seed=seed)

    def at(self, value) -> "ScenarioConfig":
        """Copy of this config with the sweep parameter set to ``value`` (sweep removed)."""
        if self.sweep is None:
            raise ConfigError("no sweep configured")
        name = self.sweep.parameter
        if name == "bits":
            value = parse_bits(value)
        elif name in ("n_elements", "n_antennas", "n_users"):
            value = _as_int(value, f"sweep.values ({name})")
        else:
            value = _as_float(value, f"sweep.values ({name})")
        return replace(self, sweep=None, **{name: value})

    def sweep_points(self) -> List[Tuple[Any, "ScenarioConfig"]]:
        if self.sweep is None:
            return [(None, self)]
        return [(v, self.at(v)) for v in self.sweep.values]


def _as_float(value, where) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None


def _as_int(value, where) -> int:
    f = _as_float(value, where)
    if not f.is_integer():
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return int(f)


def _point(value, where, length=3) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigError(f"{where}: expected a list of {length} numbers")
    return tuple(_as_float(v, where) for v in value)


def _check_keys(block: Dict, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"{prefix}{unknown[0]}: unknown field")


def _geometry(block) -> GeometryConfig:
    _check_keys(block, [f.name for f in fields(GeometryConfig)], "geometry")
    kw: Dict[str, Any] = {}
    for name in ("bs_position", "ris_position"):
        if name in block:
            kw[name] = _point(block[name], f"geometry.{name}")
    if block.get("user_positions") is not None:
        users = block["user_positions"]
        if not isinstance(users, list):
            raise ConfigError("geometry.user_positions: expected a list of points")
        kw["user_positions"] = tuple(_point(u, "geometry.user_positions") for u in users)
    if "horn_offsets" in block:
        offs = block["horn_offsets"]
        if not isinstance(offs, list) or len(offs) != 2:
            raise ConfigError("geometry.horn_offsets: expected two points")
        kw["horn_offsets"] = tuple(_point(o, "geometry.horn_offsets") for o in offs)
    for name in ("near_user_distance", "far_user_distance", "element_spacing", "carrier_wavelength"):
        if name in block:
            kw[name] = _as_float(block[name], f"geometry.{name}")
            if kw[name] <= 0:
                raise ConfigError(f"geometry.{name}: must be positive")
    return GeometryConfig(**kw)


def _path_loss(block) -> PathLossConfig:
    _check_keys(block, [f.name for f in fields(PathLossConfig)], "path_loss")
    kw: Dict[str, Any] = {}
    defaults = PathLossConfig()
    for name in ("bs_ris", "ris_user"):
        if name in block:
            sub = block[name]
            _check_keys(sub, ("c0_db", "d0_m", "kappa"), f"path_loss.{name}")
            base = getattr(defaults, name)
            vals = {k: _as_float(sub.get(k, getattr(base, k)), f"path_loss.{name}.{k}")
                    for k in ("c0_db", "d0_m", "kappa")}
            try:
                kw[name] = PathLossParams(**vals)
            except ValueError as exc:
                raise ConfigError(f"path_loss.{name}: {exc}") from None
    if "rician_factor_db" in block:
        kw["rician_factor_db"] = _as_float(block["rician_factor_db"], "path_loss.rician_factor_db")
    for name in ("los_bs_angles", "los_ris_angles"):
        if name in block:
            kw[name] = _point(block[name], f"path_loss.{name}", 2)
    return PathLossConfig(**kw)


def _optimizer(block) -> OptimizerConfig:
    allowed = ("outer_max_iters", "outer_rel_tol", "mm_max_iters", "mm_rel_tol",
               "bisection_power_tol", "bisection_mu_bracket_growth", "bisection_max_steps")
    _check_keys(block, allowed, "optimizer")
    kw: Dict[str, Any] = {}
    for name in allowed:
        if name in block and block[name] is not None:
            conv = _as_int if name in ("outer_max_iters", "mm_max_iters", "bisection_max_steps") else _as_float
            kw[name] = conv(block[name], f"optimizer.{name}")
    try:
        return OptimizerConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def _sweep(block) -> Sweep:
    if isinstance(block, dict) and set(block) == {"parameter", "values"}:
        name, values = block["parameter"], block["values"]
    elif isinstance(block, dict) and len(block) == 1:
        (name, values), = block.items()
    else:
        raise ConfigError("sweep: expected {parameter: ..., values: [...]} or {<parameter>: [...]}")
    if not isinstance(values, list):
        raise ConfigError("sweep.values: expected a list")
    return Sweep(str(name), tuple(values))


TOP_LEVEL = ("n_antennas", "n_users", "n_elements", "p_t_dbm", "beta_db", "bits", "noise_dbm",
             "amp_noise_dbm", "geometry", "path_loss", "optimizer", "trials", "base_seed", "sweep")


def config_from_dict(data: Optional[Dict]) -> ScenarioConfig:
    """Validated config from a parsed mapping; missing fields take the default scenario."""
    data = data or {}
    _check_keys(data, TOP_LEVEL, "")
    kw: Dict[str, Any] = {}
    for name in ("n_antennas", "n_users", "n_elements", "trials", "base_seed"):
        if name in data:
            kw[name] = _as_int(data[name], name)
    for name in ("p_t_dbm", "beta_db", "noise_dbm", "amp_noise_dbm"):
        if name in data:
            kw[name] = _as_float(data[name], name)
    if "bits" in data:
        kw["bits"] = parse_bits(data["bits"])
    if data.get("geometry") is not None:
        kw["geometry"] = _geometry(data["geometry"])
    if data.get("path_loss") is not None:
        kw["path_loss"] = _path_loss(data["path_loss"])
    if data.get("optimizer") is not None:
        kw["optimizer"] = _optimizer(data["optimizer"])
    if data.get("sweep") is not None:
        kw["sweep"] = _sweep(data["sweep"])
    return ScenarioConfig(**kw)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{path}: parse error{where}: {problem}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(config: ScenarioConfig) -> str:
    """YAML rendering of a config (round-trips through :func:`config_from_dict`)."""
    g, p, o = config.geometry, config.path_loss, config.optimizer
    data = {
        "n_antennas": config.n_antennas, "n_users": config.n_users,
        "n_elements": config.n_elements, "p_t_dbm": config.p_t_dbm, "beta_db": config.beta_db,
        "bits": "inf" if config.bits is None else config.bits,
        "noise_dbm": config.noise_dbm, "amp_noise_dbm": config.amp_noise_dbm,
        "geometry": {
            "bs_position": list(g.bs_position), "ris_position": list(g.ris_position),
            "user_positions": None if g.user_positions is None else [list(u) for u in g.user_positions],
            "near_user_distance": g.near_user_distance, "far_user_distance": g.far_user_distance,
            "horn_offsets": [list(h) for h in g.horn_offsets],
            "element_spacing": g.element_spacing, "carrier_wavelength": g.carrier_wavelength,
        },
        "path_loss": {
            "bs_ris": vars(p.bs_ris).copy(), "ris_user": vars(p.ris_user).copy(),
            "rician_factor_db": p.rician_factor_db,
            "los_bs_angles": list(p.los_bs_angles), "los_ris_angles": list(p.los_ris_angles),
        },
        "optimizer": {
            "outer_max_iters": o.outer_max_iters, "outer_rel_tol": o.outer_rel_tol,
            "mm_max_iters": o.mm_max_iters, "mm_rel_tol": o.mm_rel_tol,
            "bisection_power_tol": o.bisection_power_tol,
            "bisection_mu_bracket_growth": o.bisection_mu_bracket_growth,
            "bisection_max_steps": o.bisection_max_steps,
        },
        "trials": config.trials, "base_seed": config.base_seed,
    }
    if config.sweep is not None:
        data["sweep"] = {"parameter": config.sweep.parameter, "values": list(config.sweep.values)}
    return yaml.safe_dump(data, sort_keys=False)
