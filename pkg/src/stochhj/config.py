"""Run configuration: a JSON document validated before any computation.

A run holds one or more *cases*. Each case names an experiment (falling back
to the run-level default), a system (catalog name or DSL strings), optional
section / potential / generating function, evaluation points and checks.
"""

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import catalog
from .canonical import GeneratingFunction
from .dsl import GENERATING, PHASE, field, parse
from .dsl.parser import variables
from .errors import StochHJError
from .geometry import HamiltonianSystem
from .lagrangian_hj import LagrangianSection

Experiment = Literal["simulate", "action-check", "hj", "feynman-kac", "transform", "convergence"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Component(_Strict):
    """Either a catalog entry (``catalog`` + ``params``) or explicit DSL source."""

    catalog: str | None = None
    params: dict[str, float] = Field(default_factory=dict)
    expr: list[str] | str | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.catalog is None) == (self.expr is None):
            raise ValueError("give exactly one of 'catalog' or 'expr'")
        if self.params and self.catalog is None:
            raise ValueError("'params' only applies to catalog entries")
        return self


class GridSpec(_Strict):
    t_end: float = Field(gt=0)
    steps: int = Field(ge=1)


class NoiseSpec(_Strict):
    seed: int = 0
    paths: int = Field(default=1, ge=1)


class Tolerances(_Strict):
    defect: float = 1e-9
    relative: float = 1e-4
    hat_r: float = 1e-8
    shoot: float = 1e-10
    closed_form: float = 1e-10
    residual: float = 1e-8
    gradient: float = 1e-3
    slope: float = 0.5
    budget: float = 0.02
    equilibrium: float = 1e-8
    bracket: float = 1e-6


class Reference(_Strict):
    kind: Literal["pde", "expr"] = "pde"
    phi: str | None = None          # for kind="expr": a field of q1 and t
    dx: float = Field(default=0.0125, gt=0)
    potential: str | None = None    # override V on the reference side (negative controls)


class Case(_Strict):
    name: str
    experiment: Experiment | None = None
    system: Component | None = None
    section: Component | None = None
    potential: str | None = None
    generating: Component | None = None
    points: list[list[float]] = Field(default_factory=lambda: [[0.0]])
    checks: list[str] = Field(default_factory=list)
    reference: Reference | None = None
    refinements: int = Field(default=3, ge=1)
    fd_step: float = Field(default=1e-4, gt=0)
    expect: Literal["PASS", "FAIL"] = "PASS"
    tolerances: Tolerances | None = None
    grid: GridSpec | None = None


class RunConfig(_Strict):
    experiment: Experiment | None = None
    grid: GridSpec
    noise: NoiseSpec = NoiseSpec()
    tolerances: Tolerances = Tolerances()
    cases: list[Case] = Field(min_length=1)
    out: str = "out"
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _resolve(self):
        for i, case in enumerate(self.cases):
            if case.experiment is None and self.experiment is None:
                raise ValueError(f"cases[{i}] has no experiment and no run-level default is set")
            kind = case.experiment or self.experiment
            needs_system = kind != "feynman-kac"
            if needs_system and case.system is None:
                raise ValueError(f"cases[{i}] ({kind}) needs a 'system'")
            if kind in ("hj", "convergence", "feynman-kac") and case.section is None:
                raise ValueError(f"cases[{i}] ({kind}) needs a 'section'")
            if kind == "feynman-kac" and case.potential is None:
                raise ValueError(f"cases[{i}] (feynman-kac) needs a 'potential'")
            if kind == "transform" and case.generating is None and "equilibrium" in case.checks:
                raise ValueError(f"cases[{i}] equilibrium check needs a 'generating' function")
            _compile_case(case, i)
        names = [c.name for c in self.cases]
        if len(set(names)) != len(names):
            raise ValueError("case names must be unique")
        return self

    def kind(self, case: Case) -> str:
        return case.experiment or self.experiment

    def tol(self, case: Case) -> Tolerances:
        return case.tolerances or self.tolerances

    def grid_for(self, case: Case) -> GridSpec:
        return case.grid or self.grid


def _compile_case(case: Case, i: int) -> None:
    """Compile every expression once so DSL errors surface as schema errors."""
    try:
        if case.system is not None:
            build_system(case.system)
        if case.section is not None:
            build_section(case.section)
        if case.potential is not None:
            field(case.potential, 1, PHASE)
        if case.generating is not None:
            build_generating(case.generating)
        if case.reference is not None:
            if case.reference.phi is not None:
                field(case.reference.phi, 1, PHASE)
            if case.reference.potential is not None:
                field(case.reference.potential, 1, PHASE)
    except (StochHJError, KeyError) as exc:
        raise ValueError(f"cases[{i}]: {exc}") from exc


def build_system(c: Component):
    if c.catalog is not None:
        return catalog.system(c.catalog, **c.params)
    exprs = [c.expr] if isinstance(c.expr, str) else list(c.expr)
    n = max([1] + [_max_index(e) for e in exprs])
    return HamiltonianSystem([field(e, n, PHASE) for e in exprs], name="custom")


def build_section(c: Component):
    if c.catalog is not None:
        return catalog.section(c.catalog, **c.params)
    src = c.expr if isinstance(c.expr, str) else c.expr[0]
    return LagrangianSection(field(src, max(1, _max_index(src)), PHASE))


def build_generating(c: Component):
    if c.catalog is not None:
        return catalog.generating_function(c.catalog, **c.params)
    src = c.expr if isinstance(c.expr, str) else c.expr[0]
    return GeneratingFunction(field(src, max(1, _max_index(src)), GENERATING))


def _max_index(src: str) -> int:
    idx = [int(v[1:]) for v in variables(parse(src)) if len(v) > 1 and v[1:].isdigit()]
    return max(idx, default=1)


class ConfigError(Exception):
    """Schema or syntax problem in a run configuration; ``lines`` holds diagnostics."""

    def __init__(self, lines: list[str]):
        super().__init__("\n".join(lines))
        self.lines = lines


def _line_of(text: str, loc: tuple) -> int | None:
    keys = [k for k in loc if isinstance(k, str)]
    for key in reversed(keys):
        needle = f'"{key}"'
        for no, line in enumerate(text.splitlines(), start=1):
            if needle in line:
                return no
    return None


def load_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate; raises ConfigError with ``line N, field a.b: message`` diagnostics."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["line 1: the configuration must be a JSON object"])
    for path, value in (overrides or {}).items():
        node = raw
        *head, last = path.split(".")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            where = ".".join(str(p) for p in loc) or "<root>"
            line = _line_of(text, loc)
            prefix = f"line {line}, " if line is not None else ""
            lines.append(f"{prefix}field {where}: {err['msg']}")
        raise ConfigError(lines) from exc
