"""Run configuration: typed sections with defaults, YAML loading and a stable hash.

Every constant the model leaves open lives here so that a run is fully
described by its config file and seed.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .exceptions import ConfigError


@dataclass(frozen=True)
class DomainConfig:
    outer: tuple = (-1.1, 1.1, -0.62, 0.62)
    inner: tuple = (-1.0, 1.0, -0.52, 0.52)
    omega1: tuple | None = None  # upper half of inner
    h: float = 0.02
    t1: float | None = None  # source cutoff; 2 pi / omega_f when unset


@dataclass(frozen=True)
class TimeConfig:
    T: float = 2.0
    tau: float = 0.002


@dataclass(frozen=True)
class SourceConfig:
    omega_f: float = 40.0
    plane_wave: bool = True  # top-boundary pulse f(t)
    initial: bool = True  # initial displacement a(x)


@dataclass(frozen=True)
class InversionConfig:
    zeta: float = 0.5
    q: float = 0.5
    alpha_reference: str = "initial_misfit"  # or "absolute"
    s_z: float = 0.05
    n_max: int = 50
    c_morozov: float = 1.0
    grad_tol: float = 1e-6
    block_tol: float = 0.05
    restart_every: int = 10
    armijo_c: float = 1e-4
    max_halvings: int = 20
    step_rho: float = 1.0
    step_p: float = 0.25
    beta: str = "joint"  # PR+ coefficient shared by both blocks, or "block"
    base_factor: int = 2  # parameter lattice spacing in units of h


@dataclass(frozen=True)
class NoiseConfig:
    delta: float = 0.0
    seed: int = 0
    fine_data: bool = False  # generate data on (h/2, tau/2) and subsample


@dataclass(frozen=True)
class RefineConfig:
    levels: int = 0
    kappa: float = 0.6
    n_max: int | None = None  # per refined level; inversion.n_max when unset


@dataclass(frozen=True)
class StabilityConfig:
    x0: tuple = (0.0, -2.0)
    theta0: float = 0.5
    theta1: float = 1.0
    M0: float = 1.0
    M1: float = 1.0
    lambda_w: float = 1.0
    strip_width: float = 0.1
    T_factor: float = 1.1
    probe_s: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    probe_lambda: float = 0.1
    probe_h: float = 0.005
    probe_functions: int = 5
    gamma: float = 5.0
    lipschitz_eps: tuple = (1e-2, 5e-3)
    lipschitz_perturbations: int = 10
    lipschitz_tau: float = 0.005
    lipschitz_h: float = 0.04


_SECTIONS = {
    "domain": DomainConfig,
    "time": TimeConfig,
    "source": SourceConfig,
    "inversion": InversionConfig,
    "noise": NoiseConfig,
    "refine": RefineConfig,
    "stability": StabilityConfig,
}


@dataclass(frozen=True)
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)

    def __post_init__(self):
        _validate(self)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """Short sha256 of the canonical JSON form; identifies the run setup."""
        blob = json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_section(self, name, **changes):
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        return replace(self, **{name: replace(getattr(self, name), **changes)})

    @property
    def t1(self):
        if self.domain.t1 is not None:
            return self.domain.t1
        return 2.0 * math.pi / self.source.omega_f


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _coerce(cls, name, raw):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for key, value in raw.items():
        default = getattr(defaults, key)
        try:
            if isinstance(value, list):
                value = tuple(float(v) if not isinstance(v, bool) else v for v in value)
            elif isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
            elif isinstance(default, int) and value is not None:
                if isinstance(value, bool) or float(value) != int(value):
                    raise TypeError
                value = int(value)
            elif isinstance(default, float) and value is not None:
                if isinstance(value, bool):
                    raise TypeError
                value = float(value)
            elif isinstance(default, str) and not isinstance(value, str):
                raise TypeError
        except (TypeError, ValueError):
            raise ConfigError(f"{name}.{key}: bad value {value!r}") from None
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return RunConfig(**{name: _coerce(cls, name, data.get(name)) for name, cls in _SECTIONS.items()})


def load_config(path=None):
    """Read a YAML run config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(_jsonable(cfg.to_dict()), fh, sort_keys=False)


def _validate(cfg):
    d, t, inv = cfg.domain, cfg.time, cfg.inversion
    for name in ("outer", "inner"):
        if len(getattr(d, name)) != 4:
            raise ConfigError(f"domain.{name} needs 4 numbers")
    if d.omega1 is not None and len(d.omega1) != 4:
        raise ConfigError("domain.omega1 needs 4 numbers")
    if not d.h > 0:
        raise ConfigError("domain.h must be positive")
    if not (t.T > 0 and t.tau > 0):
        raise ConfigError("time.T and time.tau must be positive")
    if not cfg.source.omega_f > 0:
        raise ConfigError("source.omega_f must be positive")
    if not 0 < inv.q < 1:
        raise ConfigError("inversion.q must lie in (0, 1)")
    if not 0 < inv.zeta < 1:
        raise ConfigError("inversion.zeta must lie in (0, 1)")
    if inv.alpha_reference not in ("initial_misfit", "absolute"):
        raise ConfigError("inversion.alpha_reference must be 'initial_misfit' or 'absolute'")
    if inv.beta not in ("joint", "block"):
        raise ConfigError("inversion.beta must be 'joint' or 'block'")
    if inv.n_max < 0 or inv.restart_every < 1 or inv.max_halvings < 1:
        raise ConfigError("inversion iteration limits must be positive")
    if inv.base_factor < 1:
        raise ConfigError("inversion.base_factor must be >= 1")
    if not (inv.step_rho > 0 and inv.step_p > 0 and 0 < inv.armijo_c < 1):
        raise ConfigError("inversion step sizes and Armijo constant out of range")
    if cfg.noise.delta < 0:
        raise ConfigError("noise.delta must be non-negative")
    if cfg.refine.levels < 0 or not 0 < cfg.refine.kappa <= 1:
        raise ConfigError("refine.levels must be >= 0 and refine.kappa in (0, 1]")
    st = cfg.stability
    if len(st.x0) != 2:
        raise ConfigError("stability.x0 needs 2 numbers")
    if not 0 < st.theta0 <= 1 or not st.theta1 > 0:
        raise ConfigError("stability.theta0 must lie in (0, 1] and theta1 > 0")


@dataclass(frozen=True)
class Setup:
    """Discrete problem objects derived from a config."""

    domain: object
    grid: object
    time_grid: object
    mask: object


def build_setup(cfg, factor=1):
    """Domain, grid, time grid and free mask; ``factor`` refines space and time together."""
    from .fields import free_mask
    from .forward import make_time_grid
    from .geometry import build_domain

    d = cfg.domain
    domain, grid = build_domain(d.outer, d.inner, d.omega1, d.h, cfg.t1)
    tg = make_time_grid(cfg.time.T, cfg.time.tau, cfg.t1, cfg.source.omega_f)
    if factor != 1:
        grid = grid.refined(factor)
        tg = tg.refined(factor)
    return Setup(domain, grid, tg, free_mask(grid, domain))
