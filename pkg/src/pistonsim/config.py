"""YAML run configuration shared by every CLI subcommand.

A config has a ``container`` section (inline, or a path to a separate
geometry file resolved against the config's directory) plus ``initial``,
``region``, ``dynamics``, ``experiment`` and ``verify`` sections, all
optional except ``container``.  Errors carry the file, line and dotted field
path so a bad entry can be found without guessing.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .geometry import Arc, Container, Facet, GeometryError, Segment, SpherePatch, dome_cap
from .states import Region, SlowState

__all__ = ["ConfigError", "RunConfig", "canonical_hash", "load_config", "parse_config"]


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None,
                 field_path: str | None = None):
        self.source, self.line, self.field_path = source, line, field_path
        where = source if line is None else f"{source}:{line}"
        what = f" [{field_path}]" if field_path else ""
        super().__init__(f"{where}{what}: {message}")


class _Map(dict):
    """Mapping that remembers the 1-based line of each key."""

    lines: dict
    line: int | None = None


class _Seq(list):
    lines: list
    line: int | None = None


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", line=k_node.start_mark.line + 1)
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = v_node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(n, deep=True) for n in node.value)
    out.lines = [n.start_mark.line + 1 for n in node.value]
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class _Reader:
    """Typed accessor over one mapping; tracks consumed keys to reject typos."""

    def __init__(self, data, path: str, source: str):
        self.source, self.path = source, path
        if data is None:
            data = _Map()
            data.lines = {}
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", source, getattr(data, "line", None), path or None)
        self.data = data
        self.used: set = set()

    def _field(self, key):
        return f"{self.path}.{key}" if self.path else key

    def line(self, key=None):
        if key is not None and key in getattr(self.data, "lines", {}):
            return self.data.lines[key]
        return getattr(self.data, "line", None)

    def fail(self, key, message):
        raise ConfigError(message, self.source, self.line(key), self._field(key))

    def has(self, key) -> bool:
        return key in self.data

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key, default=None, *, positive=False, nonneg=False, integer=False):
        if key not in self.data:
            if default is None:
                self.fail(key, "required field missing")
            return default
        v = self.raw(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(key, f"expected a number, got {type(v).__name__}")
        if integer:
            if float(v) != int(v):
                self.fail(key, "expected an integer")
            v = int(v)
        elif not math.isfinite(v):
            self.fail(key, "must be finite")
        else:
            v = float(v)
        if positive and not v > 0:
            self.fail(key, "must be positive")
        if nonneg and v < 0:
            self.fail(key, "must be non-negative")
        return v

    def optional_number(self, key, **kw):
        if key not in self.data or self.data[key] is None:
            self.used.add(key)
            return None
        return self.number(key, **kw)

    def vector(self, key, n=None, default=None):
        if key not in self.data:
            if default is None:
                self.fail(key, "required field missing")
            return default
        v = self.raw(key)
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            self.fail(key, "expected a list of numbers")
        if n is not None and len(v) != n:
            self.fail(key, f"expected {n} numbers, got {len(v)}")
        return tuple(float(x) for x in v)

    def sub(self, key) -> _Reader:
        return _Reader(self.raw(key), self._field(key), self.source)

    def done(self):
        extra = [k for k in self.data if k not in self.used]
        if extra:
            self.fail(extra[0], f"unknown field {extra[0]!r}")


# ---------------------------------------------------------------------------
# geometry section

_PRESETS = {
    "rectangle": (2, ("ell",)),
    "stadium": (2, ("ell",)),
    "box": (3, ("a", "b")),
    "box_with_domes": (3, ("a", "b", "base_radius", "height")),
}


def _container(r: _Reader) -> tuple[Container, dict]:
    if r.has("preset"):
        name = r.raw("preset")
        if name not in _PRESETS:
            r.fail("preset", f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
        _, params = _PRESETS[name]
        kw = {p: r.number(p, positive=True) for p in params if r.has(p)}
        r.done()
        try:
            c = getattr(Container, name)(**kw)
        except GeometryError as e:
            raise ConfigError(str(e), r.source, r.line(), r.path) from None
        return c, {"preset": name, **kw}
    dim = r.number("dimension", integer=True)
    if dim not in (2, 3):
        r.fail("dimension", "must be 2 or 3")
    tube = r.sub("tube")
    if tube.number("length", 1.0) != 1.0:
        tube.fail("length", "tube length is fixed to 1")
    if dim == 2:
        cross = tube.number("cross_section", positive=True)
    else:
        cross = tube.vector("cross_section", 2)
        if min(cross) <= 0:
            tube.fail("cross_section", "sides must be positive")
    tube.done()
    caps, canon = {}, {"dimension": dim, "cross_section": cross}
    for key in ("left_cap", "right_cap"):
        side = 1 if key == "left_cap" else 2
        items = r.raw(key, [])
        if not isinstance(items, list):
            r.fail(key, "expected a list of primitive records")
        pieces, recs = [], []
        for i, item in enumerate(items):
            pr = _Reader(item, f"{r._field(key)}[{i}]", r.source)
            got, rec = _primitive(pr, dim, side, cross)
            pieces.extend(got)
            recs.append(rec)
        caps[key] = tuple(pieces)
        canon[key] = recs
    r.done()
    try:
        c = Container(dim, cross, caps["left_cap"], caps["right_cap"])
    except GeometryError as e:
        raise ConfigError(str(e), r.source, r.line(), r.path or "container") from None
    return c, canon


def _primitive(r: _Reader, dim: int, side: int, cross):
    kind = r.raw("type")
    allowed = ("segment", "arc") if dim == 2 else ("facet", "sphere", "dome")
    if kind not in allowed:
        r.fail("type", f"expected one of {allowed} in {dim}D, got {kind!r}")
    try:
        if kind == "segment":
            p = Segment(r.vector("p0", 2), r.vector("p1", 2))
            rec = {"p0": p.p0, "p1": p.p1}
            out = (p,)
        elif kind == "arc":
            # angles in degrees keep hand-written files exact for the usual quarter turns
            c, rad = r.vector("center", 2), r.number("radius", positive=True)
            a0, a1 = r.number("start_deg"), r.number("end_deg")
            out = (Arc(c, rad, math.radians(a0), math.radians(a1)),)
            rec = {"center": c, "radius": rad, "start_deg": a0, "end_deg": a1}
        elif kind == "facet":
            poly = r.raw("polygon")
            if not isinstance(poly, list) or not all(isinstance(v, list) and len(v) == 2 for v in poly):
                r.fail("polygon", "expected a list of [u, w] pairs")
            hole = r.vector("hole", 3) if r.has("hole") else None
            rec = {"origin": r.vector("origin", 3), "normal": r.vector("normal", 3),
                   "u": r.vector("u", 3), "w": r.vector("w", 3),
                   "polygon": tuple(tuple(float(x) for x in v) for v in poly), "hole": hole}
            out = (Facet(**rec),)
        elif kind == "sphere":
            concave = r.raw("concave", True)
            if not isinstance(concave, bool):
                r.fail("concave", "expected true or false")
            rec = {"center": r.vector("center", 3), "radius": r.number("radius", positive=True),
                   "axis": r.vector("axis", 3), "cos_limit": r.number("cos_limit"), "concave": concave}
            out = (SpherePatch(**rec),)
        else:
            rec = {"base_radius": r.number("base_radius", positive=True),
                   "height": r.number("height", positive=True),
                   "base_center": r.vector("base_center", 2) if r.has("base_center") else None}
            out = dome_cap(side, cross, **rec)
    except GeometryError as e:
        raise ConfigError(str(e), r.source, r.line(), r.path) from None
    r.done()
    return out, {"type": kind, **rec}


# ---------------------------------------------------------------------------
# whole config


@dataclass(frozen=True, eq=False)
class RunConfig:
    container: Container
    initial: SlowState
    region: Region
    eps: float = 0.05
    horizon: float = 1.0
    dtau: float = 1e-3
    c1: float | None = None
    max_events: int = 2**62
    seed: int = 0
    eps_grid: tuple[float, ...] = (0.2, 0.1, 0.05)
    samples: int = 100
    deltas: tuple[float, ...] = (0.1,)
    sample_h0: bool = False
    verify: dict = field(default_factory=dict)
    canonical: dict = field(default_factory=dict)
    source: str = "<config>"

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.canonical)


_VERIFY_DEFAULTS = {
    "Q": 0.5, "E1": 0.5, "samples": 100_000, "flux_horizon": 1e4, "orbits": 8,
    "ks_samples": 100_000, "involution_samples": 10_000, "df_samples": 2_000,
    "gammas": (0.1, 0.01),
}


def _canon_value(x):
    if isinstance(x, dict):
        return {str(k): _canon_value(v) for k, v in sorted(x.items())}
    if isinstance(x, (list, tuple)):
        return [_canon_value(v) for v in x]
    if isinstance(x, float):
        # a float that is an exact integer still serialises as a float
        return float(repr(x))
    return x


def canonical_hash(canon: dict) -> str:
    blob = json.dumps(_canon_value(canon), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except ConfigError as e:
        raise ConfigError(str(e).split(": ", 1)[1], source, e.line) from None
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", source,
                          mark.line + 1 if mark else None) from None
    root = _Reader(data, "", source)
    if not root.has("container"):
        raise ConfigError("required section 'container' missing", source, root.line())
    cont_raw = root.raw("container")
    if isinstance(cont_raw, str):
        path = Path(cont_raw)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.is_file():
            root.fail("container", f"container file not found: {path}")
        sub = load_yaml_file(path)
        container, ccanon = _container(_Reader(sub, "", str(path)))
    else:
        container, ccanon = _container(root.sub("container"))

    reg = root.sub("region")
    try:
        region = Region(
            q_min=reg.number("q_min", 0.1), q_max=reg.number("q_max", 0.9),
            w_max=reg.number("w_max", 2.0), e_floor=reg.number("e_floor", 1e-3),
            e_min=reg.number("e_min", 0.0), e_max=reg.number("e_max", 4.0))
    except ValueError as e:
        raise ConfigError(str(e), source, reg.line(), "region") from None
    reg.done()

    ini = root.sub("initial")
    try:
        h0 = SlowState(ini.number("Q", 0.5), ini.number("W", 0.0),
                       ini.vector("E1", default=(0.75,)), ini.vector("E2", default=(0.5,)))
    except ValueError as e:
        raise ConfigError(str(e), source, ini.line(), "initial") from None
    ini.done()
    if not region.contains(h0):
        raise ConfigError("initial slow state lies outside the region", source, ini.line(), "initial")

    dyn = root.sub("dynamics")
    eps = dyn.number("eps", 0.05, positive=True)
    horizon = dyn.number("horizon", 1.0, positive=True)
    dtau = dyn.number("dtau", 1e-3, positive=True)
    c1 = dyn.optional_number("c1")
    max_events = dyn.number("max_events", 2**62, integer=True, positive=True)
    dyn.done()

    seed = root.number("seed", 0, integer=True, nonneg=True)

    exp = root.sub("experiment")
    grid = exp.vector("eps_grid", default=(0.2, 0.1, 0.05))
    if not grid or min(grid) <= 0 or any(b >= a for a, b in zip(grid, grid[1:])):
        exp.fail("eps_grid", "must be positive and strictly decreasing")
    samples = exp.number("samples", 100, integer=True)
    if samples < 10:
        exp.fail("samples", "need at least 10 samples per eps")
    sample_h0 = exp.raw("sample_h0", False)
    if not isinstance(sample_h0, bool):
        exp.fail("sample_h0", "must be true or false")
    deltas = exp.vector("deltas", default=(0.1,))
    if not deltas or min(deltas) <= 0:
        exp.fail("deltas", "must be positive")
    exp.done()

    ver = root.sub("verify")
    verify = {}
    for k, dflt in _VERIFY_DEFAULTS.items():
        if isinstance(dflt, tuple):
            verify[k] = ver.vector(k, default=dflt)
        else:
            verify[k] = ver.number(k, dflt, integer=isinstance(dflt, int), positive=True)
    if not 0.0 < verify["Q"] <= 1.0:
        ver.fail("Q", "must lie in (0, 1]")
    ver.done()
    root.done()

    canonical = {
        "container": ccanon,
        "region": {k: getattr(region, k) for k in ("q_min", "q_max", "w_max", "e_floor", "e_min", "e_max")},
        "initial": {"Q": h0.Q, "W": h0.W, "E1": h0.E1, "E2": h0.E2},
        "dynamics": {"eps": eps, "horizon": horizon, "dtau": dtau, "c1": c1, "max_events": max_events},
        "seed": seed,
        "experiment": {"eps_grid": grid, "samples": samples, "deltas": deltas, "sample_h0": sample_h0},
        "verify": verify,
    }
    return RunConfig(container, h0, region, eps, horizon, dtau, c1, max_events, seed,
                     grid, samples, deltas, sample_h0, verify, canonical, source)


def load_yaml_file(path: Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read file: {e.strerror}", str(path)) from None
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", str(path),
                          mark.line + 1 if mark else None) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", str(path))
    return parse_config(path.read_text(), str(path), path.parent)
