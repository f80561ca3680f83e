"""Declarative scenario files: schema, validation, parameters and construction.

A scenario is a JSON document. Numbers anywhere in it may be written as
strings holding an arithmetic expression over the declared ``params``
(``"$h + 0.5"``, ``"round(40 * $h)"``, or ``"=2 * pi"`` without parameters);
that is what makes a parameter sweepable. ``derived`` holds named
expressions evaluated in order after ``params`` and usable the same way. Parsing resolves every expression,
validates the result and collects all errors before raising.
"""
from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
import operator
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1
PACKAGED = Path(__file__).with_name("scenarios")


class ScenarioError(ValueError):
    """Validation failure carrying every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# -- expressions -------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow, ast.FloorDiv: operator.floordiv}
_FUNCS = {"round": lambda x: int(round(x)), "int": int, "ceil": math.ceil, "floor": math.floor,
          "sqrt": math.sqrt, "abs": abs, "min": min, "max": max}
_CONSTS = {"pi": math.pi}


def evaluate(expr: str, params: dict[str, float]) -> float:
    """Evaluate a small arithmetic expression; ``$name`` refers to a parameter."""
    text = expr.replace("$", "_p_")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"bad expression {expr!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Name):
            if node.id.startswith("_p_"):
                key = node.id[3:]
                if key not in params:
                    raise ValueError(f"undeclared parameter ${key} in {expr!r}")
                return params[key]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ValueError(f"unsupported syntax in expression {expr!r}")

    return ev(tree)


# string-valued fields that are never expressions
_LITERAL_KEYS = {"schema_version", "name", "description", "kind", "shape", "type", "model",
                 "component", "quantity", "check", "monitor",
                 "keep_structures", "boundaries", "signal", "env"}


def _resolve(node, params, path=""):
    if isinstance(node, dict):
        return {k: (v if k in _LITERAL_KEYS or k in ("params", "derived")
                    else _resolve(v, params, f"{path}.{k}"))
                for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve(v, params, f"{path}[{i}]") for i, v in enumerate(node)]
    if isinstance(node, str) and ("$" in node or node.startswith("=")):
        try:
            return evaluate(node.lstrip("="), params)
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            raise ScenarioError([f"{path.lstrip('.')}: {exc}"]) from None
    return node


# -- schema ------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=False)


Vec = list[float]


class Cpml(_Strict):
    thickness: int = 10
    order: float = 3.0
    sigma_scale: float = 1.0
    kappa_max: float = 1.0
    alpha_max: float = 0.05


class Grid(_Strict):
    dim: Literal[2, 3]
    cells: list[int]
    cells_per_wavelength: float = 20.0
    courant: float = 0.5
    boundaries: dict[str, Literal["cpml", "pec"]] = Field(default_factory=dict)
    cpml: Cpml = Field(default_factory=Cpml)

    @model_validator(mode="after")
    def _check(self):
        if len(self.cells) != self.dim:
            raise ValueError(f"grid.cells needs {self.dim} entries")
        if min(self.cells) < 4:
            raise ValueError("grid.cells must be at least 4 per axis")
        if not 0 < self.courant < 1:
            raise ValueError("grid.courant must lie in (0, 1)")
        if self.cells_per_wavelength <= 0:
            raise ValueError("grid.cells_per_wavelength must be positive")
        return self

    @property
    def dx(self) -> float:
        return 1.0 / self.cells_per_wavelength

    @property
    def size(self) -> list[float]:
        return [n * self.dx for n in self.cells]


class Box(_Strict):
    shape: Literal["box"]
    lo: Vec
    hi: Vec
    eps: float = 1.0
    pec: bool = False
    name: str = ""


class Disk(_Strict):
    shape: Literal["disk"]
    center: Vec
    radius: float
    eps: float = 1.0
    pec: bool = False
    name: str = ""


class Ring(_Strict):
    shape: Literal["ring"]
    center: Vec
    radius: float
    width: float
    eps: float
    name: str = ""


Structure = Annotated[Union[Box, Disk, Ring], Field(discriminator="shape")]


class Tls(_Strict):
    position: Vec
    dipole: Vec
    omega0: float = 2 * math.pi
    gamma: float | None = None
    b0: list[float] = Field(default_factory=lambda: [0.0, 0.0])
    model: Literal["amplitude", "schrodinger", "bloch"] = "amplitude"
    exclude: bool = True

    @field_validator("b0")
    @classmethod
    def _b0(cls, v):
        if len(v) != 2:
            raise ValueError("b0 is [real, imag]")
        return v


class TlsArray(_Strict):
    """Rectangular array of identical emitters (one or two axes)."""

    center: Vec
    counts: list[int]
    axes: list[int]
    spacing: float
    dipole: Vec
    omega0: float = 2 * math.pi
    gamma: float | None = None
    b0: Literal["ground", "symmetric", "first"] = "ground"
    model: Literal["amplitude", "schrodinger", "bloch"] = "amplitude"
    exclude: bool = True

    @model_validator(mode="after")
    def _check(self):
        if len(self.counts) != len(self.axes) or not 1 <= len(self.axes) <= 2:
            raise ValueError("tls_arrays: counts and axes need one or two matching entries")
        if min(self.counts) < 0:
            raise ValueError("tls_arrays: counts must be non-negative")
        return self


class Coupling(_Strict):
    half_width: int = 1
    nsub: int = 5
    aux_margin: int = 4
    hold_drive: bool = False
    interface_warning: bool = True


class Pulse(_Strict):
    omega_c: float = 2 * math.pi
    tau: float
    t0: float
    amplitude: float = 1.0
    polarization: int = 0


class PlaneWave(_Strict):
    type: Literal["plane_wave"]
    lo: list[int]
    hi: list[int]
    axis: int
    direction: Literal[1, -1] = 1
    pulse: Pulse


class GuidedMode(_Strict):
    type: Literal["guided_mode"]
    x: float
    center: float
    width: float
    eps_core: float
    eps_clad: float = 1.0
    pulse: Pulse


class Dipole(_Strict):
    type: Literal["dipole"]
    position: Vec
    axis: int
    pulse: Pulse


Source = Annotated[Union[PlaneWave, GuidedMode, Dipole], Field(discriminator="type")]


class Frequencies(_Strict):
    start: float
    stop: float
    count: int

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


class FluxBox(_Strict):
    type: Literal["flux_box"]
    name: str
    lo: list[int]
    hi: list[int]
    frequencies: Frequencies
    stride: int = 1


class FluxPlane(_Strict):
    type: Literal["flux_plane"]
    name: str
    lo: list[int]
    hi: list[int]
    axis: int
    sign: Literal[1, -1] = 1
    frequencies: Frequencies
    stride: int = 1


class ProbeSpec(_Strict):
    type: Literal["probe"]
    name: str
    component: str
    position: Vec
    every: int = 1


Monitor = Annotated[Union[FluxBox, FluxPlane, ProbeSpec], Field(discriminator="type")]


class Run(_Strict):
    t_max: float | None = None
    max_steps: int | None = None
    output_every: int = 10
    stop_threshold: float = 1e-8
    max_lifetimes: float = 20.0
    snapshot_steps: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if self.output_every < 1:
            raise ValueError("run.output_every must be >= 1")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("run.t_max must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("run.max_steps must be >= 1")
        return self


class Analysis(_Strict):
    """Post-processing of a finished run.

    kinds: ``none``; ``decay`` (exponential fit of ``signal``: P0 or n_exc);
    ``pair`` (two-emitter master-equation fit); ``scattering`` (cross
    section from ``monitor``); ``transmission`` (port flux over a reference
    run that keeps only ``keep_structures``).
    """

    kind: Literal["none", "decay", "pair", "scattering", "transmission"] = "none"
    signal: Literal["P0", "n_exc"] = "P0"
    window: list[float] = Field(default_factory=lambda: [1e-4, 0.95])
    monitor: str = ""
    keep_structures: list[str] = Field(default_factory=list)
    env: Literal["vacuum", "pec_halfspace", "pec_waveguide"] = "vacuum"
    mirror_axis: int = 1
    mirror_plane: float = 0.0
    width: float = 0.0
    wall: float = 0.0
    band: list[float] = Field(default_factory=list)
    prominence: float = 0.05


class Check(_Strict):
    """One embedded acceptance assertion on an analysis result.

    ``check``: ``rel`` |q/ref - 1| <= tol; ``abs`` |q - ref| <= tol;
    ``lt`` q < ref; ``gt`` q > ref; ``eq`` q == ref; ``same_sign``
    sign(q) == sign(ref). ``ref`` is a number or the name of an oracle value
    produced by the analysis.
    """

    quantity: str
    oracle: str | float
    check: Literal["rel", "abs", "lt", "gt", "eq", "same_sign"] = "rel"
    tol: float = 0.0


class Scenario(_Strict):
    schema_version: Literal[1]
    name: str
    description: str = ""
    params: dict[str, float] = Field(default_factory=dict)
    derived: dict[str, float] = Field(default_factory=dict)
    grid: Grid
    structures: list[Structure] = Field(default_factory=list)
    tls: list[Tls] = Field(default_factory=list)
    tls_arrays: list[TlsArray] = Field(default_factory=list)
    coupling: Coupling = Field(default_factory=Coupling)
    sources: list[Source] = Field(default_factory=list)
    monitors: list[Monitor] = Field(default_factory=list)
    run: Run = Field(default_factory=Run)
    analysis: Analysis = Field(default_factory=Analysis)
    verify: list[Check] = Field(default_factory=list)

    # filled by parse_scenario: the raw document before expression resolution
    _template: dict = {}

    @property
    def template(self) -> dict:
        return self._template

    def emitters(self) -> list[Tls]:
        """Explicit emitters followed by every array member."""
        out = list(self.tls)
        for arr in self.tls_arrays:
            out.extend(expand_array(arr))
        return out


def expand_array(arr: TlsArray) -> list[Tls]:
    n_total = int(np.prod(arr.counts))
    grids = [[(k - (n - 1) / 2) * arr.spacing for k in range(n)] for n in arr.counts]
    offsets = [(a,) for a in grids[0]] if len(grids) == 1 else [(a, b) for a in grids[0] for b in grids[1]]
    out = []
    for m, off in enumerate(offsets):
        pos = list(arr.center)
        for ax, o in zip(arr.axes, off):
            pos[ax] += o
        if arr.b0 == "symmetric":
            b0 = [1 / math.sqrt(n_total), 0.0]
        elif arr.b0 == "first":
            b0 = [1.0 if m == 0 else 0.0, 0.0]
        else:
            b0 = [0.0, 0.0]
        out.append(Tls(position=pos, dipole=list(arr.dipole), omega0=arr.omega0, gamma=arr.gamma,
                       b0=b0, model=arr.model, exclude=arr.exclude))
    return out


# -- parsing -----------------------------------------------------------------

def _pydantic_messages(exc: ValidationError) -> list[str]:
    msgs = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"])
        msgs.append(f"{loc}: {e['msg']}")
    return msgs


def _semantic_errors(sc: Scenario) -> list[str]:
    errs: list[str] = []
    g = sc.grid
    dim = g.dim
    size = g.size
    cp = g.cpml.thickness
    bounds = {f"{a}{s}": "cpml" for a in "xyz"[:dim] for s in "-+"}
    for key in g.boundaries:
        if key not in bounds:
            errs.append(f"grid.boundaries: unknown key {key!r}")
    bounds.update({k: v for k, v in g.boundaries.items() if k in bounds})
    lo_int = [cp * g.dx if bounds[f"{a}-"] == "cpml" else 0.0 for a in "xyz"[:dim]]
    hi_int = [size[i] - (cp * g.dx if bounds[f"{a}+"] == "cpml" else 0.0)
              for i, a in enumerate("xyz"[:dim])]
    if g.cpml.thickness < 6:
        errs.append("grid.cpml.thickness must be >= 6")
    clearance = (sc.coupling.half_width + 1) * g.dx
    emitters = sc.emitters()
    norm = 0.0
    seen: dict[tuple, int] = {}
    for i, t in enumerate(emitters):
        if len(t.position) != dim or len(t.dipole) != dim:
            errs.append(f"TLS {i}: position and dipole need {dim} components")
            continue
        nz = [k for k, v in enumerate(t.dipole) if v != 0]
        if len(nz) != 1:
            errs.append(f"TLS {i}: dipole must be nonzero and aligned with a grid axis")
            continue
        if t.omega0 <= 0:
            errs.append(f"TLS {i}: omega0 must be positive")
        if t.gamma is not None and t.gamma < 0:
            errs.append(f"TLS {i}: gamma must be non-negative")
        if not all(lo_int[a] + clearance <= t.position[a] <= hi_int[a] - clearance
                   for a in range(dim)):
            errs.append(f"TLS {i}: position {t.position} lies outside the usable domain")
            continue
        ax = nz[0]
        off = [0.5 if a == ax else 0.0 for a in range(dim)]
        node = (ax,) + tuple(int(math.floor(t.position[a] / g.dx - off[a] + 0.5)) for a in range(dim))
        if node in seen:
            errs.append(f"TLS {i}: shares its sampling node with TLS {seen[node]}")
        else:
            seen[node] = i
        norm += t.b0[0] ** 2 + t.b0[1] ** 2
    if norm > 1 + 1e-9:
        errs.append(f"initial state norm {norm:.6g} exceeds 1")
    for k, s in enumerate(sc.structures):
        pts = ([s.lo, s.hi] if isinstance(s, Box) else [s.center])
        for p in pts:
            if len(p) != dim:
                errs.append(f"structure {k}: coordinates need {dim} components")
            elif not all(-1e-9 <= p[a] <= size[a] + 1e-9 for a in range(dim)):
                errs.append(f"structure {k}: geometry outside the domain")
    for k, src in enumerate(sc.sources):
        if isinstance(src, PlaneWave):
            if len(src.lo) != dim or len(src.hi) != dim or not 0 <= src.axis < dim:
                errs.append(f"source {k}: box or axis does not match the grid dimension")
            elif not all(0 < src.lo[a] < src.hi[a] < g.cells[a] for a in range(dim)):
                errs.append(f"source {k}: box outside the domain")
        elif isinstance(src, Dipole):
            if len(src.position) != dim or not 0 <= src.axis < dim:
                errs.append(f"source {k}: position or axis does not match the grid dimension")
        elif isinstance(src, GuidedMode) and dim != 2:
            errs.append(f"source {k}: guided_mode sources are 2D only")
        if src.pulse.tau <= 0 or src.pulse.t0 < 4 * src.pulse.tau:
            errs.append(f"source {k}: pulse needs tau > 0 and t0 >= 4 tau")
    names = set()
    for k, m in enumerate(sc.monitors):
        if m.name in names:
            errs.append(f"monitor {k}: duplicate name {m.name!r}")
        names.add(m.name)
        if isinstance(m, (FluxBox, FluxPlane)):
            if len(m.lo) != dim or len(m.hi) != dim:
                errs.append(f"monitor {m.name}: bounds need {dim} entries")
            if m.frequencies.count < 1:
                errs.append(f"monitor {m.name}: needs at least one frequency")
    if sc.analysis.kind in ("scattering", "transmission") and sc.analysis.monitor not in names:
        errs.append(f"analysis.monitor {sc.analysis.monitor!r} is not a declared monitor")
    if sc.analysis.kind == "pair" and len(emitters) != 2:
        errs.append("analysis 'pair' needs exactly two emitters")
    if sc.run.t_max is None and sc.run.max_steps is None and not emitters:
        errs.append("run needs t_max or max_steps when there are no emitters")
    return errs


def parse_scenario(text: str | dict, overrides: dict[str, float] | None = None) -> Scenario:
    """Validate a scenario document; raises :class:`ScenarioError` listing every problem."""
    if isinstance(text, (str, bytes)):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError([f"not valid JSON: {exc}"]) from None
    else:
        raw = copy.deepcopy(text)
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario must be a JSON object"])
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ScenarioError(["params must be an object"])
    params = dict(params)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise ScenarioError([f"parameter {k!r} is not declared in params"])
        params[k] = float(v)
    template = copy.deepcopy(raw)
    template["params"] = params
    derived = raw.get("derived", {})
    if not isinstance(derived, dict):
        raise ScenarioError(["derived must be an object"])
    values = dict(params)
    for k, expr in derived.items():
        if k in values:
            raise ScenarioError([f"derived.{k}: name already used by a parameter"])
        if isinstance(expr, str):
            try:
                values[k] = evaluate(expr.lstrip("="), values)
            except (ValueError, ZeroDivisionError, TypeError) as exc:
                raise ScenarioError([f"derived.{k}: {exc}"]) from None
        else:
            values[k] = expr
    resolved = _resolve(template, values)
    resolved["derived"] = {k: values[k] for k in derived}
    try:
        sc = Scenario.model_validate(resolved)
    except ValidationError as exc:
        raise ScenarioError(_pydantic_messages(exc)) from None
    errs = _semantic_errors(sc)
    if errs:
        raise ScenarioError(errs)
    sc._template = template
    return sc


def load_scenario(path_or_name: str | Path, overrides: dict[str, float] | None = None) -> Scenario:
    """Read a scenario file, or a packaged scenario by name."""
    p = Path(path_or_name)
    if not p.exists():
        cand = PACKAGED / f"{path_or_name}.json"
        if not cand.exists():
            raise ScenarioError([f"no scenario file or packaged scenario named {str(path_or_name)!r}"])
        p = cand
    return parse_scenario(p.read_text(), overrides)


def packaged_scenarios() -> list[str]:
    return sorted(p.stem for p in PACKAGED.glob("*.json"))


def canonical_json(sc: Scenario) -> str:
    """Sorted-key compact JSON of the template (params applied), stable across runs."""
    return json.dumps(sc.template, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_hash(sc: Scenario) -> str:
    resolved = sc.model_dump(mode="json")
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def dump_scenario(sc: Scenario) -> str:
    """Human-readable serialization that parses back to an equal scenario."""
    # document order matters: derived values may refer to earlier ones
    return json.dumps(sc.template, indent=2)


# -- construction --------------------------------------------------------------

def build(sc: Scenario, parallel: bool = False):
    """Construct the live objects: (grid, TlsSystem, monitors by name, probes)."""
    from .grid import CpmlParams, GridSpec, YeeGrid
    from .monitors import FluxMonitor, Probe
    from .sources import GaussianPulseSpec, ModeLine, TfsfBox, dipole_source, slab_mode
    from .tfif import TlsSystem
    from .tls import TlsDescriptor

    g = sc.grid
    cp = g.cpml
    grid = YeeGrid(GridSpec(tuple(g.cells), g.dx, g.courant),
                   CpmlParams(cp.thickness, cp.order, cp.sigma_scale, cp.kappa_max, cp.alpha_max),
                   boundaries=dict(g.boundaries), parallel=parallel)
    apply_structures(grid, sc.structures)

    def pulse(p: Pulse):
        return GaussianPulseSpec(p.omega_c, p.tau, p.t0, p.amplitude, p.polarization)

    sources = []
    for s in sc.sources:
        if isinstance(s, PlaneWave):
            sources.append(TfsfBox(grid, s.lo, s.hi, pulse(s.pulse), s.axis, s.direction))
        elif isinstance(s, GuidedMode):
            mode = slab_mode(s.pulse.omega_c, s.width, s.eps_core, s.eps_clad)
            sources.append(ModeLine(grid, s.x, s.center, mode, pulse(s.pulse)))
        else:
            ps = pulse(s.pulse)
            sources.append(dipole_source(grid, s.position, s.axis, ps))
    monitors = {}
    probes = []
    for m in sc.monitors:
        if isinstance(m, FluxBox):
            monitors[m.name] = FluxMonitor(grid, m.lo, m.hi, m.frequencies.values(),
                                           stride=m.stride, name=m.name)
        elif isinstance(m, FluxPlane):
            monitors[m.name] = FluxMonitor(grid, m.lo, m.hi, m.frequencies.values(),
                                           plane=(m.axis, m.sign), stride=m.stride, name=m.name)
        else:
            idx = grid.nearest_index(m.component, m.position)
            probes.append(Probe(m.component, idx, m.every, m.name))
    ems = sc.emitters()
    descs = [TlsDescriptor(t.omega0, tuple(t.dipole), tuple(t.position), t.gamma, i)
             for i, t in enumerate(ems)]
    c = sc.coupling
    system = TlsSystem(grid, descs, [complex(*t.b0) for t in ems],
                       models=[t.model for t in ems], exclude=[t.exclude for t in ems],
                       half_width=c.half_width, sources=sources,
                       monitors=list(monitors.values()) + probes, nsub=c.nsub,
                       interface_warning=c.interface_warning, aux_margin=c.aux_margin,
                       hold_drive=c.hold_drive)
    return grid, system, monitors, probes


def apply_structures(grid, structures) -> None:
    """Paint boxes, disks and rings in list order (later entries win)."""
    if not structures:
        return
    dim = grid.dim

    def eps_fn(*xs):
        e = np.ones(np.broadcast_shapes(*[x.shape for x in xs]))
        for s in structures:
            m = _inside(s, xs, dim)
            if m is not None and not getattr(s, "pec", False):
                e = np.where(m, s.eps, e)
        return e

    def pec_fn(*xs):
        p = np.zeros(np.broadcast_shapes(*[x.shape for x in xs]), bool)
        for s in structures:
            m = _inside(s, xs, dim)
            if m is not None and getattr(s, "pec", False):
                p = p | m
        return p

    grid.set_material(eps_fn, pec_fn)


def _inside(s, xs, dim):
    if isinstance(s, Box):
        m = np.ones(np.broadcast_shapes(*[x.shape for x in xs]), bool)
        for a in range(dim):
            m = m & (xs[a] >= s.lo[a]) & (xs[a] <= s.hi[a])
        return m
    r2 = sum((xs[a] - s.center[a]) ** 2 for a in range(min(dim, 2)))
    r = np.sqrt(r2)
    if isinstance(s, Disk):
        return r <= s.radius
    return np.abs(r - s.radius) <= s.width / 2
