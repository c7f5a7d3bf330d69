"""TOML run configurations.

A configuration holds everything needed to reproduce a run: the norm, the
sampling settings, tolerance overrides and output location.  Matrices are
written row-major as nested arrays; polynomial fields as a list of
``{exponents = [...], coefficient = ...}`` tables.

Example::

    name = "bspace_plus"

    [norm]
    family = "bspace"
    sign = 1
    metric = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ]
    field = [0.0, 0.0, 0.5]

    [sampling]
    seed = 0
    samples = 10000
    points = [[1.0, 0.0, 0.0]]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomlkit
from tomlkit.exceptions import ParseError

from . import tensors
from .diagnostics import TOLERANCES
from .errors import ConfigError, FinslerError
from .geometry import DEFAULT_DELTA_MIN, DEFAULT_EIG_MARGIN, Family, Field, NormSpec

_TOP_KEYS = {"name", "norm", "sampling", "tolerances", "indicatrix", "output"}
_NORM_KEYS = {"family", "sign", "metric", "field", "delta_min", "eig_margin"}
_SAMPLING_KEYS = {"seed", "samples", "jobs", "x", "points", "scan_samples"}
_INDICATRIX_KEYS = {"level", "count"}
_OUTPUT_KEYS = {"dir"}


@dataclass
class RunConfig:
    spec: NormSpec
    name: str = "run"
    seed: int = 0
    samples: int = 10_000
    jobs: int = 1
    x: list | None = None
    points: list = field(default_factory=list)
    scan_samples: int | None = None
    kappa_floor: float = tensors.KAPPA_FLOOR
    tolerances: dict = field(default_factory=dict)
    level: int = 4
    count: int | None = None
    out: str | None = None

    def to_dict(self) -> dict:
        """Plain nested dict in the on-disk layout (no ``None`` values)."""
        spec = self.spec
        norm = {"family": spec.family.value, "sign": spec.sign,
                "metric": _field_to_toml(spec.metric),
                "delta_min": spec.delta_min, "eig_margin": spec.eig_margin}
        if spec.field is not None:
            norm["field"] = _field_to_toml(spec.field)
        sampling = {"seed": self.seed, "samples": self.samples, "jobs": self.jobs,
                    "points": [list(map(float, p)) for p in self.points]}
        if self.x is not None:
            sampling["x"] = [float(v) for v in self.x]
        if self.scan_samples is not None:
            sampling["scan_samples"] = self.scan_samples
        tol = {"kappa_floor": self.kappa_floor, **self.tolerances}
        ind = {"level": self.level}
        if self.count is not None:
            ind["count"] = self.count
        out = {"name": self.name, "norm": norm, "sampling": sampling,
               "tolerances": tol, "indicatrix": ind}
        if self.out is not None:
            out["output"] = {"dir": self.out}
        return out

    def to_toml(self) -> str:
        return tomlkit.dumps(_layout(self.to_dict()))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_toml())
        return path

    def replace(self, **changes) -> "RunConfig":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return RunConfig(**data)


def _layout(obj):
    """Matrices one row per line; everything else as tomlkit renders it."""
    if isinstance(obj, dict):
        return {k: _layout(v) for k, v in obj.items()}
    if isinstance(obj, list) and obj and all(isinstance(r, list) for r in obj):
        arr = tomlkit.array()
        arr.extend(obj)
        return arr.multiline(True)
    if isinstance(obj, list):
        return [_layout(v) for v in obj]
    return obj


def _field_to_toml(f: Field):
    if f.is_constant:
        return f.constant.tolist()
    return {"terms": [{"exponents": list(e), "coefficient": c.tolist()} for e, c in f.terms]}


def _field_from_toml(value, where: str) -> Field:
    try:
        if isinstance(value, dict):
            unknown = set(value) - {"terms"}
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)}", field=where)
            terms = []
            for i, t in enumerate(value.get("terms", [])):
                if set(t) != {"exponents", "coefficient"}:
                    raise ConfigError("each term needs exactly 'exponents' and 'coefficient'",
                                      field=f"{where}.terms[{i}]")
                terms.append((t["exponents"], t["coefficient"]))
            return Field.polynomial(terms)
        arr = np.asarray(value, dtype=float)
        return Field.const(arr)
    except ConfigError:
        raise
    except (FinslerError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), field=where) from exc


def _check_keys(table: dict, allowed: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field=where or "<top>")


def _get(table, key, kind, where, default=None):
    if key not in table:
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"expected {kind.__name__}, got {type(value).__name__}",
                          field=f"{where}.{key}" if where else key)
    return value


def from_dict(data: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig` from the on-disk layout."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table", field="<top>")
    _check_keys(data, _TOP_KEYS, "")
    if "norm" not in data:
        raise ConfigError("missing [norm] table", field="norm")
    norm = data["norm"]
    _check_keys(norm, _NORM_KEYS, "norm")
    family = _get(norm, "family", str, "norm")
    if family is None:
        raise ConfigError("missing family", field="norm.family")
    try:
        family = Family(family)
    except ValueError:
        choices = ", ".join(f.value for f in Family)
        raise ConfigError(f"unknown family {family!r} (choose from {choices})",
                          field="norm.family") from None
    if "metric" not in norm:
        raise ConfigError("missing metric", field="norm.metric")
    metric = _field_from_toml(norm["metric"], "norm.metric")
    if len(metric.shape) != 2:
        raise ConfigError("metric must be a square matrix", field="norm.metric")
    fld = _field_from_toml(norm["field"], "norm.field") if "field" in norm else None
    try:
        spec = NormSpec(family, metric.shape[0], metric, fld,
                        sign=_get(norm, "sign", int, "norm", 1),
                        delta_min=_get(norm, "delta_min", float, "norm", DEFAULT_DELTA_MIN),
                        eig_margin=_get(norm, "eig_margin", float, "norm", DEFAULT_EIG_MARGIN))
    except ConfigError:
        raise
    except FinslerError as exc:
        raise ConfigError(str(exc), field="norm") from exc

    smp = data.get("sampling", {})
    _check_keys(smp, _SAMPLING_KEYS, "sampling")
    n = spec.dim
    x = smp.get("x")
    if x is not None and np.shape(x) != (n,):
        raise ConfigError(f"chart point must have length {n}", field="sampling.x")
    try:
        spec.at(x)  # eigenvalue margins and field lengths depend on the chart point
    except FinslerError as exc:
        raise ConfigError(str(exc), field="norm") from exc
    points = smp.get("points", [])
    if points and np.shape(points)[1:] != (n,):
        raise ConfigError(f"points must be length-{n} vectors", field="sampling.points")
    samples = _get(smp, "samples", int, "sampling", 10_000)
    if samples < 1:
        raise ConfigError("samples must be positive", field="sampling.samples")
    jobs = _get(smp, "jobs", int, "sampling", 1)
    if jobs < 1:
        raise ConfigError("jobs must be positive", field="sampling.jobs")

    tol = dict(data.get("tolerances", {}))
    kappa_floor = float(tol.pop("kappa_floor", tensors.KAPPA_FLOOR))
    for key, value in tol.items():
        if key not in TOLERANCES:
            raise ConfigError(f"unknown tolerance {key!r}", field=f"tolerances.{key}")
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
            raise ConfigError("tolerances must be positive numbers", field=f"tolerances.{key}")
    ind = data.get("indicatrix", {})
    _check_keys(ind, _INDICATRIX_KEYS, "indicatrix")
    outt = data.get("output", {})
    _check_keys(outt, _OUTPUT_KEYS, "output")
    return RunConfig(
        spec=spec, name=_get(data, "name", str, "", "run"),
        seed=_get(smp, "seed", int, "sampling", 0), samples=samples, jobs=jobs,
        x=None if x is None else [float(v) for v in x],
        points=[[float(v) for v in p] for p in points],
        scan_samples=_get(smp, "scan_samples", int, "sampling"),
        kappa_floor=kappa_floor, tolerances={k: float(v) for k, v in tol.items()},
        level=_get(ind, "level", int, "indicatrix", 4), count=_get(ind, "count", int, "indicatrix"),
        out=_get(outt, "dir", str, "output"))


def _parse(text: str) -> dict:
    try:
        return tomlkit.parse(text).unwrap()
    except ParseError as exc:
        raise ConfigError(f"TOML parse error: {exc}", field="<file>") from exc


def loads(text: str) -> RunConfig:
    return from_dict(_parse(text))


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", field="<file>") from exc
    data = _parse(text)
    cfg = from_dict(data)
    if "name" not in data:
        cfg.name = path.stem
    return cfg
