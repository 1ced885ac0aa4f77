"""Built-in systems, sections and generating functions with closed-form oracles.

Entries are DSL templates; numeric parameters (``c``, ``kappa``) are
substituted before compilation. Every system here is one-dimensional and
driven by one Brownian channel unless noted.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .dsl import GENERATING, PHASE, field
from .geometry import HamiltonianSystem
from .lagrangian_hj import LagrangianSection
from .canonical import GeneratingFunction


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    kind: str                      # "system" | "section" | "generating"
    templates: tuple[str, ...]
    oracle: str
    params: dict = dc_field(default_factory=dict)

    def sources(self, **params) -> list[str]:
        values = {**self.params, **params}
        unknown = set(params) - set(self.params)
        if unknown:
            raise KeyError(f"{self.name} has no parameter(s) {sorted(unknown)}")
        return [tpl.format(**{k: repr(float(v)) for k, v in values.items()}) for tpl in self.templates]


_ENTRIES = [
    CatalogEntry("translation", "system", ("0", "p1"), "flow: q+B, p const"),
    CatalogEntry("free_particle", "system", ("p1^2/2", "p1"), "flow: q+pt+B, p const"),
    CatalogEntry("harmonic", "system", ("(q1^2+p1^2)/2",), "flow: rotation by angle t (no noise)"),
    CatalogEntry("linear_field", "system", ("p1^2/2 + {c}*q1", "p1"),
                 "flow: p-ct, q+pt-ct^2/2+B", {"c": 1.0}),
    CatalogEntry("quadratic_potential", "system", ("p1^2/2 + 0.5*{kappa}*q1^2", "p1"),
                 "flow: linear, per-step Cayley products", {"kappa": 1.0}),
    CatalogEntry("pendulum", "system", ("p1^2/2 + cos(q1)", "p1"), "no closed form; symplectic defect only"),
    CatalogEntry("zero", "section", ("0",), "S~ = 0 under translation"),
    CatalogEntry("linear", "section", ("{c}*q1",), "free particle: S~ = cx - c^2 t/2 - cB", {"c": 1.0}),
    CatalogEntry("quadratic", "section", ("0.5*{kappa}*q1^2",), "linear shooting map", {"kappa": 1.0}),
    CatalogEntry("exchange", "generating", ("a1*b1",), "psi: (q, p) -> (p, -q)"),
    CatalogEntry("free_flow", "generating", ("(a1-b1)^2/(2*t)",), "psi: (q, p) -> (q-pt, p)"),
    CatalogEntry("drift_shift", "generating", ("a1*(b1-t)",), "psi: (q, p) -> (p+t, -q); K0 = 0 for h = (q1, p1)"),
]

CATALOG = {e.name: e for e in _ENTRIES}


def _entry(name: str, kind: str) -> CatalogEntry:
    e = CATALOG.get(name)
    if e is None or e.kind != kind:
        names = sorted(k for k, v in CATALOG.items() if v.kind == kind)
        raise KeyError(f"unknown {kind} {name!r}; available: {', '.join(names)}")
    return e


def system(name: str, **params) -> HamiltonianSystem:
    e = _entry(name, "system")
    return HamiltonianSystem([field(s, 1, PHASE) for s in e.sources(**params)], name=name,
                             meta={"oracle": e.oracle, **e.params, **params})


def section(name: str, **params) -> LagrangianSection:
    (src,) = _entry(name, "section").sources(**params)
    return LagrangianSection(field(src, 1, PHASE))


def generating_function(name: str, **params) -> GeneratingFunction:
    (src,) = _entry(name, "generating").sources(**params)
    return GeneratingFunction(field(src, 1, GENERATING))


def list_catalog() -> str:
    """One line per entry, grouped by kind in a fixed order."""
    lines = []
    labels = {"system": "systems", "section": "sections", "generating": "generating functions"}
    for kind in ("system", "section", "generating"):
        lines.append(f"[{labels[kind]}]")
        for e in _ENTRIES:
            if e.kind != kind:
                continue
            src = e.sources()
            if kind == "system":
                body = ", ".join(f"h{j} = {s}" for j, s in enumerate(src))
            elif kind == "section":
                body = f"f = {src[0]}"
            else:
                body = f"S = {src[0]}"
            params = "" if not e.params else "  (" + ", ".join(f"{k}={v:g}" for k, v in e.params.items()) + ")"
            lines.append(f"{e.name}: {body}  -- {e.oracle}{params}")
    return "\n".join(lines) + "\n"


# Closed-form flows used as test oracles, vectorised over paths ------------------

def translation_flow(z0, brownian) -> np.ndarray:
    """``h = (0, p)``: ``q_k = q0 + B_k``, ``p`` constant. ``brownian`` is ``(K+1,)``."""
    z0 = np.asarray(z0, float)
    out = np.empty((len(brownian), 2))
    out[:, 0] = z0[0] + brownian
    out[:, 1] = z0[1]
    return out


def free_particle_flow(z0, times, brownian) -> np.ndarray:
    z0 = np.asarray(z0, float)
    out = np.empty((len(times), 2))
    out[:, 0] = z0[0] + z0[1] * times + brownian
    out[:, 1] = z0[1]
    return out


def linear_field_flow(z0, times, brownian, c: float = 1.0) -> np.ndarray:
    z0 = np.asarray(z0, float)
    out = np.empty((len(times), 2))
    out[:, 0] = z0[0] + z0[1] * times - 0.5 * c * times ** 2 + brownian
    out[:, 1] = z0[1] - c * times
    return out


def harmonic_flow(z0, times) -> np.ndarray:
    z0 = np.asarray(z0, float)
    c, s = np.cos(times), np.sin(times)
    return np.stack([c * z0[0] + s * z0[1], -s * z0[0] + c * z0[1]], axis=-1)
