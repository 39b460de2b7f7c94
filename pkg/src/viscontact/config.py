"""Run configuration: a flat TOML document with validated defaults."""
from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, fields, replace

import tomli

MODES = ("elastic", "viscoelastic", "both", "lipschitz")
SHAPES = {"sin": math.sin, "cos": math.cos}


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(ConfigError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    # material
    E: float = 1e4
    kappa: float = 0.4
    b: float = 1e4
    # contact and loading, f2y(t) = amplitude * shape(t) on the upper arc
    F: float = 10.0
    amplitude: float = 10.0
    load_shape: str = "sin"
    # time grid and mesh
    T_end: float = 5.0
    n_steps: int = 100
    h_interior: float = 0.275
    h_contact: float = 0.06
    # inner solver
    opt_tol: float = 1e-9
    max_inner_iters: int = 20000
    restart_period: int = 0
    seed: int = 0
    # certificates
    vi_probes: int = 64
    sigma_probes: int = 500
    certify: bool = True
    tol_vi: float = 1e-6
    tol_energy: float = 1e-7
    tol_violation: float = 1e-6
    tol_roundtrip: float = 1e-8
    tol_complementarity: float = 1e-2  # relative to F
    tol_tangential: float = 1e-8  # relative to F
    # experiment
    mode: str = "both"
    snapshot_times: tuple = (1.5, 2.75, 4.0, 5.0)
    lipschitz_scales: tuple = (1e-1, 1e-2, 1e-3)
    lipschitz_window: float = 5.0
    out_dir: str = "out"

    def __post_init__(self):
        validate(self)

    @property
    def dt(self) -> float:
        return self.T_end / self.n_steps

    @property
    def shape(self):
        return SHAPES[self.load_shape]

    def f2y(self, t):
        return self.amplitude * self.shape(t)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapshot_times"] = list(self.snapshot_times)
        d["lipschitz_scales"] = list(self.lipschitz_scales)
        return d


_POSITIVE = ("E", "F", "amplitude", "T_end", "h_interior", "h_contact", "opt_tol", "tol_vi", "tol_energy",
             "tol_violation", "tol_roundtrip", "tol_complementarity", "tol_tangential", "lipschitz_window")
_INTS = ("n_steps", "max_inner_iters", "restart_period", "seed", "vi_probes", "sigma_probes")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(cfg: RunConfig) -> None:
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _INTS:
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValidationError(f.name, "expected an integer")
        elif f.type in ("float",) or f.name in _POSITIVE or f.name in ("b", "kappa"):
            if not _is_number(v) or not math.isfinite(v):
                raise ValidationError(f.name, "expected a finite number")
    for key in _POSITIVE:
        if not getattr(cfg, key) > 0:
            raise ValidationError(key, "must be positive")
    if not 0 < cfg.kappa < 0.5:
        raise ValidationError("kappa", "must lie in (0, 0.5); the plane-strain tensor is singular at 0.5")
    if cfg.b < 0:
        raise ValidationError("b", "must be nonnegative")
    if cfg.h_contact > cfg.h_interior:
        raise ValidationError("h_contact", "must not exceed h_interior")
    if cfg.n_steps < 1:
        raise ValidationError("n_steps", "must be at least 1")
    if cfg.max_inner_iters < 1:
        raise ValidationError("max_inner_iters", "must be at least 1")
    for key in ("restart_period", "vi_probes", "sigma_probes"):
        if getattr(cfg, key) < 0:
            raise ValidationError(key, "must be nonnegative")
    if cfg.mode not in MODES:
        raise ValidationError("mode", f"must be one of {', '.join(MODES)}")
    if cfg.load_shape not in SHAPES:
        raise ValidationError("load_shape", f"must be one of {', '.join(SHAPES)}")
    if not isinstance(cfg.certify, bool):
        raise ValidationError("certify", "expected a boolean")
    if not isinstance(cfg.out_dir, str):
        raise ValidationError("out_dir", "expected a string")
    for key in ("snapshot_times", "lipschitz_scales"):
        seq = getattr(cfg, key)
        if not all(_is_number(x) and math.isfinite(x) for x in seq):
            raise ValidationError(key, "expected a list of numbers")
    if any(t < 0 or t > cfg.T_end for t in cfg.snapshot_times):
        raise ValidationError("snapshot_times", "times must lie in [0, T_end]")
    if any(s <= 0 for s in cfg.lipschitz_scales):
        raise ValidationError("lipschitz_scales", "scales must be positive")


_LINE = re.compile(r"line (\d+)")


def parse_config(text: str) -> RunConfig:
    """Parse a flat TOML document; omitted keys take the defaults, unknown keys are rejected."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = _LINE.search(str(exc))
            line = int(m.group(1)) if m else None
        raise ParseError(getattr(exc, "msg", str(exc)), line) from exc
    known = {f.name: f for f in fields(RunConfig)}
    kw = {}
    for key, value in doc.items():
        if key not in known:
            raise ValidationError(key, "unknown key")
        if isinstance(value, dict):
            raise ValidationError(key, "tables are not supported")
        if key in ("snapshot_times", "lipschitz_scales"):
            if not isinstance(value, list):
                raise ValidationError(key, "expected a list")
            value = tuple(value)
        elif key in _INTS:
            pass
        elif _is_number(value) and known[key].default is not None and isinstance(known[key].default, float):
            value = float(value)
        kw[key] = value
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
