"""Experiment configuration: typed sections, plain-text round trip.

The on-disk format is one ``key = value`` pair per line with dotted
section prefixes (``train.epochs = 40``), ``#`` comments, and blank lines
ignored.  Unknown keys and malformed values raise :class:`ConfigError`;
parsing the serialized form of a config reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

EXPERIMENTS = ("gauss-sat", "radon-sat", "rates", "convergence")


class ConfigError(ValueError):
    """Bad configuration file or inconsistent option values."""


@dataclass(frozen=True)
class GridSection:
    n: int = 64


@dataclass(frozen=True)
class RadonSection:
    n_angles: int = 8
    saturation: float = 8.0


@dataclass(frozen=True)
class GaussSection:
    level: float = 0.6
    radius: float = 0.5


@dataclass(frozen=True)
class DataSection:
    n_train: int = 256
    n_val: int = 64
    n_test: int = 128
    k_ellipses: int = 4
    n_preview: int = 3


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 200
    batch_size: int = 16
    lr_start: float = 1e-3
    lr_final: float = 1e-4
    weight_decay: float = 1e-4
    depth: int = 6
    width: int = 8
    sino_depth: int = 8
    sino_width: int = 8
    scheme: str = "fixed"
    alpha_ladder: tuple[float, ...] = ()


@dataclass(frozen=True)
class NoiseSection:
    ladder: tuple[float, ...] = tuple(10.0 ** (-1 - 0.5 * k) for k in range(7))
    n_draws: int = 20


@dataclass(frozen=True)
class PcSection:
    c: float = 1.0
    p: float = 1.0


@dataclass(frozen=True)
class SolverSection:
    lsqr_tol: float = 1e-8
    train_lsqr_tol: float = 1e-6
    pocs_tol: float = 1e-8
    pocs_max_iter: int = 2000
    cg_tol: float = 1e-10


@dataclass(frozen=True)
class RateSection:
    n_sources: int = 3
    source_scale: float = 1.0
    radius_power: float = 0.5
    radius_scale: float = 0.1


@dataclass(frozen=True)
class RunSection:
    seed: int = 1
    out_dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "gauss-sat"
    grid: GridSection = field(default_factory=GridSection)
    radon: RadonSection = field(default_factory=RadonSection)
    gauss: GaussSection = field(default_factory=GaussSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    pc: PcSection = field(default_factory=PcSection)
    solver: SolverSection = field(default_factory=SolverSection)
    rate: RateSection = field(default_factory=RateSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"experiment must be one of {', '.join(EXPERIMENTS)}; got {self.experiment!r}"
            )
        if self.grid.n < 12:
            raise ConfigError("grid.n must be at least 12")
        if self.data.n_train < 1 or self.data.n_test < 1:
            raise ConfigError("data split sizes must be positive")
        if self.data.n_preview < 0:
            raise ConfigError("data.n_preview must be non-negative")
        if not 0 < self.pc.p < 2:
            raise ConfigError("pc.p must lie in (0, 2)")
        if self.pc.c <= 0:
            raise ConfigError("pc.c must be positive")
        if any(d <= 0 for d in self.noise.ladder):
            raise ConfigError("noise.ladder entries must be positive")
        if self.train.scheme not in ("fixed", "alpha-ladder"):
            raise ConfigError("train.scheme must be 'fixed' or 'alpha-ladder'")
        if self.train.scheme == "alpha-ladder":
            if not self.train.alpha_ladder:
                raise ConfigError("alpha-ladder scheme needs train.alpha_ladder values")
            if any(a <= 0 for a in self.train.alpha_ladder):
                raise ConfigError("train.alpha_ladder entries must be positive")


_SECTIONS = {
    "grid": GridSection,
    "radon": RadonSection,
    "gauss": GaussSection,
    "data": DataSection,
    "train": TrainSection,
    "noise": NoiseSection,
    "pc": PcSection,
    "solver": SolverSection,
    "rate": RateSection,
    "run": RunSection,
}


def _parse_value(raw: str, kind: type, key: str) -> Any:
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        # tuple of floats, comma separated
        return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines into a config, over the given base."""
    experiment = base.experiment if base else None
    overrides: dict[str, dict[str, Any]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key == "experiment":
            experiment = raw
            continue
        if "." not in key:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr = key.split(".", 1)
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        spec = {f.name: f.type for f in fields(cls)}
        if attr not in spec:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        declared = spec[attr]
        kind = {"int": int, "float": float, "str": str}.get(str(declared), tuple)
        overrides.setdefault(section, {})[attr] = _parse_value(raw, kind, key)
    base = base or ExperimentConfig(experiment=experiment or "gauss-sat")
    if experiment is None:
        raise ConfigError("config must set 'experiment'")
    kwargs: dict[str, Any] = {"experiment": experiment}
    for section, cls in _SECTIONS.items():
        current = getattr(base, section)
        if section in overrides:
            current = replace(current, **overrides[section])
        kwargs[section] = current
    return ExperimentConfig(**kwargs)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Write every key in a fixed order; parse(serialize(c)) == c."""
    lines = [f"experiment = {cfg.experiment}"]
    for section, cls in _SECTIONS.items():
        value = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(value, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config(experiment: str) -> ExperimentConfig:
    """Desk-scale defaults per experiment."""
    if experiment == "gauss-sat":
        return ExperimentConfig(
            experiment=experiment,
            grid=GridSection(n=64),
            data=DataSection(n_train=256, n_val=64, n_test=128),
        )
    if experiment == "radon-sat":
        return ExperimentConfig(
            experiment=experiment,
            grid=GridSection(n=48),
            data=DataSection(n_train=512, n_val=64, n_test=128),
            train=TrainSection(epochs=60),
        )
    if experiment == "rates":
        return ExperimentConfig(
            experiment=experiment,
            grid=GridSection(n=24),
            data=DataSection(n_train=32, n_val=8, n_test=16),
        )
    if experiment == "convergence":
        return ExperimentConfig(
            experiment=experiment,
            grid=GridSection(n=32),
            data=DataSection(n_train=32, n_val=8, n_test=16),
        )
    raise ConfigError(f"unknown experiment {experiment!r}")
