"""Problem configuration files (JSON) with field-level diagnostics.

Schema::

    {
      "name": "circle",
      "dim": 2,
      "function": "(x1^2 + x2^2 - 4)^2",
      "mode": "euclidean",                 # or an atlas name: "S2", "S1"
      "zero_set": [
        {"kind": "chart", "coords": ["2*cos(t1)", "2*sin(t1)"],
         "domain": [[0, "2*pi"]], "d0": 1},
        {"kind": "point", "location": [0, 0]}
      ],
      "tolerances": {"tol_global": 1e-6},  # optional overrides
      "grid": "x1:-3:3:101,x2:-3:3:101",
      "domain": [[-3, 3], [-3, 3]],        # optional; defaults to the grid box
      "nhc_samples": 32                    # optional
    }

Numbers inside ``domain`` boxes may be given as constant expressions such as
``"2*pi"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exprparse import ExprAst, ExprError, ExprSyntaxError, parse
from .geometry import GeometryError, ZeroComponent, ZeroSetDescription, builtin_atlas
from .gluing import Domain
from .tolerances import DEFAULT, Tolerances
from .verify import GridSpec, GridSpecError, parse_grid

ATLASES = ("S1", "S2")


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and offending field."""


@dataclass(frozen=True, eq=False)
class ProblemConfig:
    dim: int
    function: str
    zero_set: tuple[dict, ...]
    mode: str = "euclidean"
    tolerances: dict = field(default_factory=dict)
    grid: str = ""
    domain: tuple | None = None
    name: str = ""
    nhc_samples: int = 32
    source: str = "<config>"

    # -- derived objects (validated in from_dict) ---------------------------

    @property
    def is_manifold(self) -> bool:
        return self.mode != "euclidean"

    def function_ast(self) -> ExprAst:
        return parse(self.function, self.dim)

    def tol(self, seed: int | None = None) -> Tolerances:
        overrides = dict(self.tolerances)
        if seed is not None:
            overrides["seed"] = seed
        return DEFAULT.with_overrides(**overrides)

    def zero_set_description(self) -> ZeroSetDescription:
        return ZeroSetDescription(tuple(_component(c, self.dim) for c in self.zero_set), self.dim)

    def grid_spec(self, override: str | None = None) -> GridSpec:
        grid = parse_grid(override or self.grid)
        if self.is_manifold:
            return grid.with_mapping(builtin_atlas(self.mode).grid_map)
        return grid

    def domain_object(self, grid_override: str | None = None) -> Domain:
        if self.is_manifold:
            return Domain.manifold(builtin_atlas(self.mode))
        if self.domain is not None:
            box = np.asarray(self.domain, dtype=float)
        else:
            grid = parse_grid(grid_override or self.grid)
            box = np.array([[a.lo, a.hi] for a in grid.axes])
        return Domain.box(box[:, 0], box[:, 1])

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "dim": self.dim,
            "function": self.function,
            "mode": self.mode,
            "zero_set": list(self.zero_set),
            "tolerances": dict(self.tolerances),
            "grid": self.grid,
            "nhc_samples": self.nhc_samples,
        }
        if self.domain is not None:
            out["domain"] = [list(b) for b in self.domain]
        return out

    # -- loading ------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, source: str = "<config>") -> "ProblemConfig":
        def fail(where: str, msg: str):
            raise ConfigError(f"{source}: field '{where}': {msg}")

        if not isinstance(data, dict):
            raise ConfigError(f"{source}: top level must be a JSON object")
        known = {"name", "dim", "function", "mode", "zero_set", "tolerances", "grid",
                 "domain", "nhc_samples"}
        for key in data:
            if key not in known:
                fail(key, "unknown field")
        for key in ("dim", "function", "zero_set", "grid"):
            if key not in data:
                fail(key, "missing required field")

        dim = data["dim"]
        if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
            fail("dim", f"must be a positive integer, got {dim!r}")
        mode = data.get("mode", "euclidean")
        if mode != "euclidean" and mode not in ATLASES:
            fail("mode", f"must be 'euclidean' or one of {', '.join(ATLASES)}, got {mode!r}")
        if mode != "euclidean" and builtin_atlas(mode).ambient_dim != dim:
            fail("dim", f"atlas {mode} lives in R^{builtin_atlas(mode).ambient_dim}")

        fn = data["function"]
        if not isinstance(fn, str):
            fail("function", "must be a string")
        try:
            parse(fn, dim)
        except ExprSyntaxError as exc:
            fail("function", f"{exc} (at offset {exc.offset})")
        except ExprError as exc:
            fail("function", str(exc))

        zs = data["zero_set"]
        if not isinstance(zs, list) or not zs:
            fail("zero_set", "must be a non-empty list of components")
        manifold_dim = builtin_atlas(mode).dim if mode != "euclidean" else dim
        for i, comp in enumerate(zs):
            where = f"zero_set[{i}]"
            try:
                c = _component(comp, dim, where)
            except ConfigError as exc:
                raise ConfigError(f"{source}: {exc}") from None
            if c.d0 >= manifold_dim:
                fail(where, f"d0 = {c.d0} must be smaller than the dimension {manifold_dim}")

        tol = data.get("tolerances", {})
        if not isinstance(tol, dict):
            fail("tolerances", "must be an object")
        try:
            DEFAULT.with_overrides(**tol)
        except (TypeError, ValueError) as exc:
            fail("tolerances", str(exc))

        grid = data["grid"]
        try:
            spec = parse_grid(grid) if isinstance(grid, str) else fail("grid", "must be a string")
        except GridSpecError as exc:
            fail("grid", str(exc))
        gdim = builtin_atlas(mode).grid_dim if mode != "euclidean" else dim
        if len(spec.axes) != gdim:
            fail("grid", f"needs {gdim} axes, got {len(spec.axes)}")

        domain = data.get("domain")
        if domain is not None:
            if mode != "euclidean":
                fail("domain", "only allowed in euclidean mode")
            try:
                box = _box(domain, "domain")
            except ConfigError as exc:
                raise ConfigError(f"{source}: {exc}") from None
            if len(box) != dim:
                fail("domain", f"needs {dim} intervals")
            domain = tuple(tuple(b) for b in box)

        n = data.get("nhc_samples", 32)
        if not isinstance(n, int) or n < 1:
            fail("nhc_samples", "must be a positive integer")

        return cls(dim=dim, function=fn, zero_set=tuple(zs), mode=mode,
                   tolerances=dict(tol), grid=grid, domain=domain,
                   name=str(data.get("name", "")), nhc_samples=n, source=source)


def load_config(path: str | Path) -> ProblemConfig:
    """Read and validate a JSON problem file (``OSError`` if unreadable)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    return ProblemConfig.from_dict(data, str(path))


# ---------------------------------------------------------------------------
# Helpers


def _number(value, where: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"field '{where}': expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(parse(value, 1)(np.zeros(1)))
        except ExprError as exc:
            raise ConfigError(f"field '{where}': {exc}") from None
    raise ConfigError(f"field '{where}': expected a number or constant expression")


def _box(value, where: str) -> list[list[float]]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"field '{where}': expected a list of [lo, hi] pairs")
    out = []
    for k, pair in enumerate(value):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"field '{where}[{k}]': expected [lo, hi]")
        lo, hi = (_number(v, f"{where}[{k}]") for v in pair)
        if not lo < hi:
            raise ConfigError(f"field '{where}[{k}]': needs lo < hi")
        out.append([lo, hi])
    return out


def _component(data, dim: int, where: str = "zero_set") -> ZeroComponent:
    if not isinstance(data, dict):
        raise ConfigError(f"field '{where}': expected an object")
    kind = data.get("kind")
    try:
        if kind == "point":
            loc = data.get("location")
            if not isinstance(loc, list) or len(loc) != dim:
                raise ConfigError(f"field '{where}.location': expected {dim} coordinates")
            return ZeroComponent.point([_number(v, f"{where}.location") for v in loc],
                                       name=str(data.get("name", "")))
        if kind == "chart":
            coords = data.get("coords")
            if not isinstance(coords, list) or len(coords) != dim or \
                    not all(isinstance(c, str) for c in coords):
                raise ConfigError(f"field '{where}.coords': expected {dim} expression strings")
            box = _box(data.get("domain"), f"{where}.domain")
            return ZeroComponent.chart(coords, box, declared_d0=data.get("d0"),
                                       regularity=int(data.get("regularity", 2)),
                                       name=str(data.get("name", "")))
    except ExprSyntaxError as exc:
        raise ConfigError(f"field '{where}.coords': {exc} (at offset {exc.offset})") from None
    except (ExprError, GeometryError) as exc:
        raise ConfigError(f"field '{where}': {exc}") from None
    raise ConfigError(f"field '{where}.kind': must be 'point' or 'chart', got {kind!r}")
