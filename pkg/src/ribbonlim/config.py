import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
from lark.exceptions import LarkError

from ribbonlim.errors import ConfigError, InputError
from ribbonlim.geometry import (
    NaturalCurvature,
    ReferenceChart,
    builtin_chart,
    load_chart_csv,
    load_natural_csv,
)
from ribbonlim.parser import Shorthand, Value, parse
from ribbonlim.quadratic_forms import Rigidity, SymMat2
from ribbonlim.surface import ETA_MAX
from ribbonlim.variational import ClampedTargets, MinimizeSpec

logger = logging.getLogger(__name__)

RIGIDITY_KINDS: dict[str, tuple[str, ...]] = {
    "voigt": ("C11", "C12", "C13", "C22", "C23", "C33"),
    "orthotropic": ("K11", "K12", "K22", "K33"),
    "isotropic": ("Kmu", "Klambda"),
    "tensor": ("K1111", "K1122", "K1112", "K2222", "K1222", "K1212"),
    "sadowsky": (),
}
CHART_KINDS: dict[str, tuple[str, ...]] = {
    "rectangle": (),
    "arc": ("kappa0",),
    "sheared": ("d12", "d22"),
    "sampled": ("path",),
}
NATURAL_KINDS: dict[str, tuple[str, ...]] = {
    "zero": (),
    "constant": ("a11", "a12", "a22"),
    "table": ("path",),
}
MODES = ("free", "clamped")


@dataclass(frozen=True)
class GridSpec:
    mu_min: float = -3.0
    mu_max: float = 3.0
    tau_min: float = -3.0
    tau_max: float = 3.0
    points: int = 61

    def __post_init__(self):
        if self.points < 2:
            raise ConfigError("grid.points", f"expected at least 2 points, got {self.points}")
        if not self.mu_min < self.mu_max:
            raise ConfigError("grid.mu_min", "must be smaller than grid.mu_max")
        if not self.tau_min < self.tau_max:
            raise ConfigError("grid.tau_min", "must be smaller than grid.tau_max")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Uniform axes as (min (n - i) + max i) / n, which hits round values
        such as 0 and 1 exactly when the bounds are integers."""
        i = np.arange(self.points, dtype=float)
        n = self.points - 1
        return (
            (self.mu_min * (n - i) + self.mu_max * i) / n,
            (self.tau_min * (n - i) + self.tau_max * i) / n,
        )


@dataclass(frozen=True)
class ClampedSpec:
    y_target: tuple[float, ...] | None = None
    r_target: tuple[tuple[float, ...], ...] | None = None
    penalty: float = 1e5
    max_iter: int = 3000
    controls: int = 9


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one run.

    Structured entries are kept as `Shorthand` and turned into domain objects
    by the `build_*` functions. `base_dir` resolves relative data paths.
    """

    rigidity: Shorthand = Shorthand("sadowsky")
    chart: Shorthand = Shorthand("rectangle")
    natural_curvature: Shorthand = Shorthand("zero")
    length: float = 1.0
    nodes: int = 64
    initial_frame: tuple[tuple[float, ...], ...] | None = None
    margin: float = 0.5
    eta_max: float = ETA_MAX
    surface_samples: int = 9
    cells: int = 16
    seed: int = 0
    threads: int | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    mode: str = "free"
    clamped: ClampedSpec = field(default_factory=ClampedSpec)
    samples: int = 1000
    oracle_n: int = 24
    oracle_radius: float = 6.0
    contexts: int = 10
    oracle_grid: int = 2001
    base_dir: str = "."

    def __post_init__(self):
        if self.rigidity.kind not in RIGIDITY_KINDS:
            raise ConfigError("rigidity", f"unknown kind {self.rigidity.kind!r}")
        if self.chart.kind not in CHART_KINDS:
            raise ConfigError("chart", f"unknown kind {self.chart.kind!r}")
        if self.natural_curvature.kind not in NATURAL_KINDS:
            raise ConfigError("natural_curvature", f"unknown kind {self.natural_curvature.kind!r}")
        if not self.length > 0.0:
            raise ConfigError("length", f"must be positive, got {self.length}")
        if self.nodes < 2:
            raise ConfigError("nodes", f"expected at least 2 intervals, got {self.nodes}")
        if not 0.0 < self.margin < 1.0:
            raise ConfigError("margin", f"must lie in (0, 1), got {self.margin}")
        if not self.eta_max > 0.0:
            raise ConfigError("eta_max", f"must be positive, got {self.eta_max}")
        if self.surface_samples < 3 or self.surface_samples % 2 == 0:
            raise ConfigError("surface_samples", f"must be odd and >= 3, got {self.surface_samples}")
        if self.cells < 2 or self.cells % 2:
            raise ConfigError("cells", f"must be even and >= 2, got {self.cells}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads", f"must be positive, got {self.threads}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {self.mode!r}")
        if self.mode == "clamped" and self.clamped.y_target is None:
            raise ConfigError("clamped.y_target", "clamped mode needs a target end point")
        if self.samples < 1:
            raise ConfigError("samples", f"must be positive, got {self.samples}")
        if self.oracle_n < 16:
            raise ConfigError("oracle_n", f"must be at least 16, got {self.oracle_n}")
        if self.contexts < 1:
            raise ConfigError("contexts", f"must be positive, got {self.contexts}")
        if self.oracle_grid < 3:
            raise ConfigError("oracle_grid", f"must be at least 3, got {self.oracle_grid}")

    def replace(self, **changes: Any) -> "RunConfig":
        """Copy with the given keys overridden, skipping None values."""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else Path(self.base_dir) / candidate

    def header(self) -> list[tuple[str, str]]:
        """The configuration as (key, value) pairs, readable by `parse_header`."""
        pairs = [
            ("rigidity", str(self.rigidity)),
            ("chart", str(self.chart)),
            ("natural_curvature", str(self.natural_curvature)),
        ]
        for key in (
            "length",
            "nodes",
            "initial_frame",
            "margin",
            "eta_max",
            "surface_samples",
            "cells",
            "seed",
            "mode",
            "samples",
            "oracle_n",
            "oracle_radius",
            "contexts",
            "oracle_grid",
        ):
            pairs.append((key, json.dumps(getattr(self, key))))
        for group in ("grid", "clamped"):
            for item in dataclasses.fields(getattr(self, group)):
                pairs.append((f"{group}.{item.name}", json.dumps(getattr(getattr(self, group), item.name))))
        return pairs


def spec_value(key: str, value: Any) -> Shorthand:
    if isinstance(value, Shorthand):
        return value
    if isinstance(value, str):
        try:
            return parse(value)
        except LarkError as err:
            raise ConfigError(key, f"cannot parse {value!r}: {err}") from None
    if isinstance(value, Mapping):
        if "kind" not in value or not isinstance(value["kind"], str):
            raise ConfigError(key, "an object specification needs a string 'kind'")
        kwargs = []
        for name, item in value.items():
            if name == "kind":
                continue
            if isinstance(item, list):
                item = tuple(item)
            elif isinstance(item, int) and not isinstance(item, bool):
                item = float(item)
            kwargs.append((str(name), item))
        return Shorthand(value["kind"], (), tuple(kwargs))
    raise ConfigError(key, f"expected a shorthand string or an object, got {type(value).__name__}")


def _number(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return float(value)


def _integer(key: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return int(value)


def _matrix(key: str, value: Any) -> tuple[tuple[float, ...], ...]:
    try:
        rows = tuple(tuple(_number(key, x) for x in row) for row in value)
    except TypeError:
        raise ConfigError(key, "expected a 3x3 array of numbers") from None
    if len(rows) != 3 or any(len(row) != 3 for row in rows):
        raise ConfigError(key, "expected a 3x3 array of numbers")
    return rows


def _vector(key: str, value: Any) -> tuple[float, ...]:
    try:
        entries = tuple(_number(key, x) for x in value)
    except TypeError:
        raise ConfigError(key, "expected an array of 3 numbers") from None
    if len(entries) != 3:
        raise ConfigError(key, "expected an array of 3 numbers")
    return entries


def _group(key: str, value: Any, cls: type, converters: Mapping[str, Any]) -> Any:
    if not isinstance(value, Mapping):
        raise ConfigError(key, "expected an object")
    changes = {}
    for name, item in value.items():
        if name not in converters:
            raise ConfigError(f"{key}.{name}", "unknown key")
        if item is not None:
            changes[name] = converters[name](f"{key}.{name}", item)
    return cls(**changes)


SCALARS: dict[str, Any] = {
    "length": _number,
    "nodes": _integer,
    "margin": _number,
    "eta_max": _number,
    "surface_samples": _integer,
    "cells": _integer,
    "seed": _integer,
    "threads": _integer,
    "samples": _integer,
    "oracle_n": _integer,
    "oracle_radius": _number,
    "contexts": _integer,
    "oracle_grid": _integer,
}


def from_mapping(data: Mapping[str, Any], base_dir: str = ".") -> RunConfig:
    """Build a `RunConfig` from a decoded JSON document.

    Raises:
        ConfigError: on unknown keys or malformed values, naming the key
    """
    changes: dict[str, Any] = {"base_dir": base_dir}
    for key, value in data.items():
        if key in ("rigidity", "chart", "natural_curvature"):
            changes[key] = spec_value(key, value)
        elif key in SCALARS:
            changes[key] = None if value is None else SCALARS[key](key, value)
        elif key == "initial_frame":
            changes[key] = None if value is None else _matrix(key, value)
        elif key == "mode":
            if not isinstance(value, str):
                raise ConfigError(key, f"expected a string, got {value!r}")
            changes[key] = value
        elif key == "grid":
            changes[key] = _group(
                key,
                value,
                GridSpec,
                {"mu_min": _number, "mu_max": _number, "tau_min": _number, "tau_max": _number, "points": _integer},
            )
        elif key == "clamped":
            changes[key] = _group(
                key,
                value,
                ClampedSpec,
                {
                    "y_target": _vector,
                    "r_target": _matrix,
                    "penalty": _number,
                    "max_iter": _integer,
                    "controls": _integer,
                },
            )
        else:
            raise ConfigError(key, "unknown key")
    return RunConfig(**changes)


def load_config(path: str) -> RunConfig:
    """Read a JSON configuration; relative data paths resolve against its directory."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"{path} is not valid JSON: {err}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("config", f"{path} must hold a JSON object")
    return from_mapping(data, str(Path(path).parent))


def parse_header(lines: Iterable[str], base_dir: str = ".") -> RunConfig:
    """Rebuild a configuration from `# key=value` report header lines."""
    data: dict[str, Any] = {}
    for line in lines:
        if not line.startswith("# ") or "=" not in line:
            continue
        key, _, raw = line[2:].rstrip("\n").partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        group, dot, name = key.partition(".")
        if dot:
            data.setdefault(group, {})[name] = value
        else:
            data[key] = value
    return from_mapping(data, base_dir)


def _numbers(spec: Shorthand, names: tuple[str, ...], key: str) -> dict[str, float]:
    bound = spec.bind(names, key)
    values: dict[str, float] = {}
    for name, value in bound.items():
        if not isinstance(value, float):
            raise ConfigError(key, f"{spec.kind} argument {name} must be a number")
        values[name] = value
    return values


def _path(spec: Shorthand, key: str) -> str:
    value: Value = spec.bind(("path",), key)["path"]
    if not isinstance(value, str):
        raise ConfigError(key, f"{spec.kind} argument path must be a string")
    return value


def build_rigidity(spec: Shorthand, key: str = "rigidity") -> Rigidity:
    if spec.kind not in RIGIDITY_KINDS:
        raise ConfigError(key, f"unknown kind {spec.kind!r}")
    values = _numbers(spec, RIGIDITY_KINDS[spec.kind], key)
    try:
        if spec.kind == "voigt":
            return Rigidity.voigt(*values.values())
        if spec.kind == "orthotropic":
            return Rigidity.orthotropic(*values.values())
        if spec.kind == "isotropic":
            return Rigidity.isotropic(*values.values())
        if spec.kind == "tensor":
            return Rigidity.from_tensor_entries(*values.values())
        return Rigidity.orthotropic(1.0, 0.0, 1.0, 0.5)
    except InputError as err:
        raise ConfigError(key, str(err)) from None


def build_chart(config: RunConfig) -> tuple[ReferenceChart, NaturalCurvature | None]:
    """The reference chart and, for sampled charts, any natural curvature columns."""
    spec = config.chart
    if spec.kind == "sampled":
        path = config.resolve(_path(spec, "chart"))
        try:
            return load_chart_csv(path)
        except (OSError, InputError) as err:
            raise ConfigError("chart", str(err)) from None
    values = _numbers(spec, CHART_KINDS[spec.kind], "chart")
    try:
        return builtin_chart(spec.kind, values, config.length, config.nodes), None
    except InputError as err:
        raise ConfigError("chart", str(err)) from None


def build_natural(config: RunConfig, from_chart: NaturalCurvature | None = None) -> NaturalCurvature:
    spec = config.natural_curvature
    key = "natural_curvature"
    if spec.kind == "zero":
        return from_chart if from_chart is not None else NaturalCurvature.zero()
    if spec.kind == "table":
        path = config.resolve(_path(spec, key))
        try:
            return load_natural_csv(path)
        except (OSError, InputError) as err:
            raise ConfigError(key, str(err)) from None
    values = _numbers(spec, NATURAL_KINDS["constant"], key)
    return NaturalCurvature.constant(SymMat2(values["a11"], values["a12"], values["a22"]))


def build_spec(config: RunConfig) -> MinimizeSpec:
    """Everything the variational problem needs, from the configuration."""
    chart, from_chart = build_chart(config)
    natural = build_natural(config, from_chart)
    rigidity = build_rigidity(config.rigidity)
    clamped = None
    if config.mode == "clamped":
        settings = config.clamped
        try:
            clamped = ClampedTargets(
                np.array(settings.y_target),
                None if settings.r_target is None else np.array(settings.r_target),
                settings.penalty,
                settings.max_iter,
                settings.controls,
            )
        except InputError as err:
            raise ConfigError("clamped", str(err)) from None
    try:
        return MinimizeSpec(
            chart,
            rigidity,
            natural,
            config.mode,  # type: ignore[arg-type]
            clamped,
            None if config.initial_frame is None else np.array(config.initial_frame),
        )
    except InputError as err:
        raise ConfigError("initial_frame", str(err)) from None
