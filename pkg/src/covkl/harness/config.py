"""Experiment configuration: defaults, flat key-value files and overrides."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_VERSION = 1
EXPERIMENTS = ("fig1_left", "fig1_right", "fig2_left", "fig2_right", "custom")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int
    nu_grid: tuple[float, ...] = ()
    h_grid: tuple[float, ...] = ()
    lambda_grid: tuple[float, ...] = ()
    ratio: float = 1.8
    rotation_scale: float = 0.01
    mc_samples: int = 10_000
    runs: int = 1
    obs_per_var: float = 2.0
    master_seed: int = 0
    output_dir: str = "results"
    nu: float = 4.0
    quad_points: int = 2001
    half_width: float = 100.0
    constraint: str = "trace_equals_n"
    workers: int = 1
    config_version: int = CONFIG_VERSION
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {self.config_version}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.mc_samples < 2:
            raise ConfigError("mc_samples must be at least 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.ratio <= 1:
            raise ConfigError("ratio must exceed 1")
        if self.rotation_scale < 0:
            raise ConfigError("rotation_scale must be non-negative")
        if self.obs_per_var <= 0:
            raise ConfigError("obs_per_var must be positive")
        for name in ("nu_grid", "h_grid", "lambda_grid"):
            grid = getattr(self, name)
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
        needed = {"fig1_left": "lambda_grid", "fig1_right": "nu_grid",
                  "fig2_left": "h_grid", "fig2_right": "h_grid"}.get(self.experiment)
        if needed and not getattr(self, needed):
            raise ConfigError(f"{self.experiment} needs a non-empty {needed}")
        if self.experiment == "fig1_left" and self.n != 2:
            raise ConfigError("fig1_left is defined for n = 2 only")
        if self.experiment == "fig1_left" and not all(0 < v < self.n for v in self.lambda_grid):
            raise ConfigError("lambda_grid values must lie strictly inside (0, n)")

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def _fig2_ratio(n: int) -> float:
    # condition number 150 whatever the size, so n=200 and n=1000 are comparable
    return 150.0 ** (1.0 / (n - 1))


def default_config(experiment: str, *, desk: bool = False) -> ExperimentConfig:
    """Full-scale defaults, or the reduced desk scale when ``desk`` is set."""
    if experiment == "fig1_left":
        grid = tuple(round(0.05 * k, 10) for k in range(1, 40))
        return ExperimentConfig(
            "fig1_left", 2, lambda_grid=grid, ratio=19.0, rotation_scale=0.5, nu=4.0,
            mc_samples=100_000 if desk else 1_000_000, runs=1,
            quad_points=801 if desk else 2001,
        )
    if experiment == "fig1_right":
        return ExperimentConfig(
            "fig1_right", 30, nu_grid=(2.5, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0),
            ratio=1.8, rotation_scale=0.01, mc_samples=10_000, runs=20 if desk else 100,
        )
    if experiment in ("fig2_left", "fig2_right"):
        n = 200 if desk else 1000
        h_grid = (0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 25.0, 100.0, 1000.0)
        return ExperimentConfig(
            experiment, n, h_grid=h_grid, ratio=_fig2_ratio(n), rotation_scale=0.0,
            mc_samples=10_000, runs=20 if desk else 100, obs_per_var=2.0,
        )
    if experiment == "custom":
        return ExperimentConfig("custom", 10, nu_grid=(4.0,), runs=1)
    raise ConfigError(f"unknown experiment {experiment!r}")


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name != "extra"}
_GRIDS = {"nu_grid", "h_grid", "lambda_grid"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key in _GRIDS:
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        typ = _FIELDS[key].type
        if typ == "int":
            return int(raw)
        if typ == "float":
            v = float(raw)
            if math.isnan(v):
                raise ValueError("nan")
            return v
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_assignments(lines) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        out[key] = _parse_value(key, value)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_assignments(text.splitlines())


def build_config(
    experiment: str | None = None,
    *,
    desk: bool = False,
    file_values: dict | None = None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Defaults, then file values, then overrides (flags win)."""
    merged = dict(file_values or {})
    merged.update(overrides or {})
    experiment = merged.pop("experiment", None) or experiment
    if experiment is None:
        raise ConfigError("no experiment given")
    base = default_config(experiment, desk=desk)
    try:
        return base.replace(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [f"config_version = {cfg.config_version}"]
    for name in _FIELDS:
        if name == "config_version":
            continue
        value = getattr(cfg, name)
        if name in _GRIDS:
            value = ",".join(f"{v:.17g}" for v in value)
        elif isinstance(value, float):
            value = f"{value:.17g}"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
