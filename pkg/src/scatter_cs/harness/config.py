"""Experiment configuration: flat ``key = value`` files with [section] headers."""
import configparser
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..errors import ConfigError, DomainError
from ..scene import AngleDensity, SphereDensity

EXPERIMENTS = ("mc-coherence", "mc-recovery", "mc-stability", "mc-dt", "reciprocity", "resonance")

# section -> keys it may hold
SECTIONS = {
    "experiment": ("experiment", "model", "trials", "seed", "threads", "out"),
    "lattice": ("spacing", "side", "dim"),
    "sensors": ("n", "p", "incident_density", "sampling_density", "aperture", "delta_min"),
    "target": ("s", "amplitude"),
    "physics": ("omega", "eps"),
    "theory": ("delta", "tau"),
}
SWEEPS = ("omega", "s", "eps")


@dataclass
class ExperimentConfig:
    experiment: str = "mc-coherence"
    model: str = "born"                 # born | exact
    spacing: float = 1.0
    side: int = 8
    dim: int = 2
    n: int = 30                         # sampling directions or near-field sensors
    p: int = 1                          # incident directions
    incident_density: str = "uniform"
    sampling_density: str = "uniform"
    aperture: float = 10.0
    delta_min: float = 1.0
    omega: list = field(default_factory=lambda: [20.0])
    s: list = field(default_factory=lambda: [3])
    eps: list = field(default_factory=lambda: [0.0])
    amplitude: float = 1.0
    delta: float = 0.1
    tau: float = 0.05
    trials: int = 100
    seed: int = 0
    threads: int = 1
    out: str = None

    @property
    def m(self):
        return self.side ** self.dim

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.model not in ("born", "exact"):
            raise ConfigError(f"model must be born or exact, got {self.model!r}")
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        for k in ("side", "n", "p", "trials", "threads"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        for k in ("spacing", "aperture", "delta_min", "amplitude"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive")
        if not (0 < self.delta < 1 and 0 < self.tau < 1):
            raise ConfigError("delta and tau must lie in (0, 1)")
        for k in SWEEPS:
            vals = getattr(self, k)
            if not vals:
                raise ConfigError(f"{k} sweep is empty")
            if not all(np.isfinite(vals)):
                raise ConfigError(f"{k} sweep has non-finite entries")
            if len(vals) > 1 and not (np.all(np.diff(vals) > 0) or np.all(np.diff(vals) < 0)):
                raise ConfigError(f"{k} sweep must be strictly monotone")
        if min(self.omega) <= 0:
            raise ConfigError("omega must be positive")
        if min(self.eps) < 0:
            raise ConfigError("eps must be non-negative")
        if min(self.s) < 1 or max(self.s) > self.m:
            raise ConfigError(f"s must lie in 1..{self.m}")
        try:
            self.densities()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def densities(self):
        """(incident, sampling) density objects."""
        return (parse_density(self.incident_density, self.dim),
                parse_density(self.sampling_density, self.dim))


def parse_density(text, dim=2):
    """Density from a short spec.

    2D: ``uniform``, ``uniform:a:b``, ``bump:center:halfwidth[:h]``.
    3D: ``uniform`` or ``tilted:a``.
    """
    parts = [t.strip() for t in str(text).split(":")]
    kind, args = parts[0].lower(), [float(a) for a in parts[1:]]
    try:
        if dim == 3:
            if kind == "uniform" and not args:
                return SphereDensity.uniform()
            if kind == "tilted" and len(args) <= 1:
                return SphereDensity.tilted(*args)
        else:
            if kind == "uniform" and len(args) in (0, 2):
                return AngleDensity.uniform(*args)
            if kind == "bump" and len(args) in (2, 3):
                h = int(args[2]) if len(args) == 3 else 2
                return AngleDensity.bump(args[0], args[1], h)
    except TypeError as exc:
        raise ConfigError(f"bad density {text!r}") from exc
    raise ConfigError(f"bad density {text!r} for dim {dim}")


_TYPES = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(key, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    raw = str(raw).strip()
    try:
        if key in SWEEPS:
            conv = int if key == "s" else float
            return [conv(v) for v in raw.replace(",", " ").split()]
        default = getattr(ExperimentConfig(), key)
        if key == "out":
            return raw or None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from exc


def parse_config_text(text):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SECTIONS[sec]:
                raise ConfigError(f"key {key!r} does not belong in [{sec}]")
            values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides=None):
    """Read a config file (optional) and apply ``key -> value`` overrides on top."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    return replace(ExperimentConfig(), **values).validate()


def config_to_text(cfg):
    lines = []
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        for k in keys:
            v = getattr(cfg, k)
            if v is None:
                continue
            if k in SWEEPS:
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
