import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ldplab.space import BUILDERS, StateSpace

# marks a probe parameter without a default
REQUIRED = object()

_KERNEL_GRID = {"t_min": 2e-3, "t_max": 2e-2, "points": 12}

PROBE_DEFAULTS: dict[str, dict[str, Any]] = {
    "vd": {"region": "all", "radii": REQUIRED, "centers": None},
    "pi": {"centers": REQUIRED, "radii": REQUIRED},
    "hi": {"region": "all", "radii": REQUIRED, "times": None, "centers": None, "sources": None, "time_samples": 8},
    "volscale": {"center": REQUIRED, "epsilon": 1.0, "t_min": 1e-4, "t_max": 1e-1, "points": 12, "doubling": None},
    "metric": {"pairs": REQUIRED, "tol": 1e-3, "max_iter": 200},
    "varadhan_kernel": {"x": REQUIRED, "y": REQUIRED, **_KERNEL_GRID},
    "varadhan_indicator": {"region": REQUIRED, "x": REQUIRED, **_KERNEL_GRID},
    "varadhan_integrated": {"a": REQUIRED, "b": REQUIRED, **_KERNEL_GRID},
    "gaussian_threshold": {"a": REQUIRED, "b": REQUIRED, "t_min": 1e-4, "t_max": 10.0, "points": 60},
    "gaussian_lower": {"pairs": REQUIRED, "t_min": 1e-3, "t_max": 1e-2, "points": 6},
    "fdd": {"event": REQUIRED, "s_min": 2e-3, "s_max": 2e-2, "points": 10, "beta": None},
    "energy": {
        "curve": REQUIRED,
        "op": "gap",
        "intervals": 8,
        "t": 0.5,
        "tol": 1e-4,
        "max_level": 12,
        "nodes": 256,
    },
    "tube": {
        "curve": REQUIRED,
        "delta": REQUIRED,
        "checkpoints": 5,
        "s_min": 5e-3,
        "s_max": 5e-2,
        "points": 8,
        "samples": 100_000,
        "beta": None,
    },
}

PROBE_KINDS = tuple(PROBE_DEFAULTS)
ENERGY_OPS = ("discrete", "sup", "derivative", "ac2", "gap")


class ConfigError(ValueError):
    pass


def load_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


@dataclass
class SpaceSpec:
    """A builder kind with its arguments, e.g. {"kind": "lattice_1d", "cells": 256}."""

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceSpec":
        d = d.copy()
        kind = d.pop("kind", None)
        if kind not in BUILDERS:
            raise ConfigError(f"unknown space kind {kind!r}, expected one of {sorted(BUILDERS)}")
        return cls(kind, d)

    @classmethod
    def load(cls, path: str | Path) -> "SpaceSpec":
        return cls.from_dict(load_json(path))

    def build(self) -> StateSpace:
        params = dict(self.params)
        if self.kind == "grid_2d" and "lengths" in params:
            params["lengths"] = tuple(params["lengths"])
        try:
            return BUILDERS[self.kind](**params)
        except TypeError as e:
            raise ConfigError(f"bad arguments for space kind {self.kind!r}: {e}") from e


@dataclass
class EventSpec:
    """Cylinder event: {"times": [...]} or {"intervals": n}, one region per time, optional initial law."""

    sets: list
    times: list[float] | None = None
    intervals: int | None = None
    initial_law: list[float] | None = None
    description: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "EventSpec":
        d = d.copy()
        if "sets" not in d:
            raise ConfigError("event needs 'sets'")
        if ("times" in d) == ("intervals" in d):
            raise ConfigError("event needs exactly one of 'times' and 'intervals'")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad event description: {e}") from e


@dataclass
class CurveSpec:
    """Curve descriptor with its context: "space" (the experiment's state space) or "euclidean"."""

    descriptor: dict
    context: str = "space"
    dim: int | None = None
    resolution: int = 2**12

    @classmethod
    def from_dict(cls, d: dict) -> "CurveSpec":
        d = d.copy()
        context = d.pop("context", "space")
        if context not in ("space", "euclidean"):
            raise ConfigError(f"unknown curve context {context!r}")
        dim = d.pop("dim", None)
        resolution = d.pop("resolution", 2**12)
        if "type" not in d:
            raise ConfigError("curve descriptor needs a 'type'")
        return cls(d, context, dim, resolution)

    @classmethod
    def load(cls, path: str | Path) -> "CurveSpec":
        return cls.from_dict(load_json(path))


@dataclass
class ProbeConfig:
    kind: str
    id: str
    params: dict

    @classmethod
    def from_dict(cls, d: dict, position: int = 0) -> "ProbeConfig":
        d = d.copy()
        kind = d.pop("kind", None)
        if kind not in PROBE_DEFAULTS:
            raise ConfigError(f"unknown probe kind {kind!r}, expected one of {list(PROBE_KINDS)}")
        probe_id = str(d.pop("id", f"{position:02d}_{kind}"))
        defaults = PROBE_DEFAULTS[kind]
        unknown = sorted(set(d) - set(defaults))
        if unknown:
            raise ConfigError(f"probe {probe_id!r} ({kind}) has unknown key(s) {unknown}")
        params = {**defaults, **d}
        missing = sorted(k for k, v in params.items() if v is REQUIRED)
        if missing:
            raise ConfigError(f"probe {probe_id!r} ({kind}) is missing required key(s) {missing}")
        if kind == "energy" and params["op"] not in ENERGY_OPS:
            raise ConfigError(f"probe {probe_id!r}: unknown energy op {params['op']!r}")
        return cls(kind, probe_id, params)


@dataclass
class ExperimentConfig:
    """`space` is an inline SpaceSpec or the path of a space file (builder spec or saved explicit space)."""

    space: SpaceSpec
    probes: list[ProbeConfig] = field(default_factory=list)
    output_dir: str = "results"
    seed: int = 0
    threads: int | None = None

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "ExperimentConfig":
        d = d.copy()
        if "space" not in d:
            raise ConfigError("experiment needs a 'space'")
        space = d.pop("space")
        if isinstance(space, str):
            path = Path(space) if base is None else base / space
            space = SpaceSpec.load(path)
        else:
            space = SpaceSpec.from_dict(space)
        probes = [ProbeConfig.from_dict(p, i) for i, p in enumerate(d.pop("probes", []))]
        ids = [p.id for p in probes]
        duplicated = sorted({i for i in ids if ids.count(i) > 1})
        if duplicated:
            raise ConfigError(f"duplicate probe id(s) {duplicated}")
        try:
            return cls(space, probes, **d)
        except TypeError as e:
            raise ConfigError(f"bad experiment description: {e}") from e

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(load_json(path), base=path.parent)
