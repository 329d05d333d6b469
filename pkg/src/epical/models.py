"""Compartmental model structures and their right-hand sides.

Four model kinds are supported:

``sir``            S -> I -> R
``sird``           S -> I -> {R, D}
``sirvd``          S -> {I, V}, I -> {R, D}
``sir-subgroups``  SIR per population group, coupled by a mixing matrix

Transmission is frequency dependent, ``beta * S * I / N``, so every rate is a
per-day rate in ``[0, 1]``.  ``ModelSpec.mass_action`` switches to the
unnormalized ``beta * S * I`` form.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels_py
from .errors import DomainError, StructuralError, ValidationError

ROW_SUM_TOLERANCE = 0.02
_EXACT = 1e-9


class ModelKind(str, enum.Enum):
    SIR = "sir"
    SIRD = "sird"
    SIRVD = "sirvd"
    SIR_SUBGROUPS = "sir-subgroups"

    @property
    def compartments(self) -> tuple[str, ...]:
        return _COMPARTMENTS[self]

    @property
    def grouped(self) -> bool:
        return self is ModelKind.SIR_SUBGROUPS


_COMPARTMENTS = {
    ModelKind.SIR: ("S", "I", "R"),
    ModelKind.SIRD: ("S", "I", "R", "D"),
    ModelKind.SIRVD: ("S", "I", "R", "V", "D"),
    ModelKind.SIR_SUBGROUPS: ("S", "I", "R"),
}

# position of each compartment inside the five-slot kernel state
_FLAT_INDEX = {"S": 0, "I": 1, "R": 2, "V": 3, "D": 4}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float = 0.0
    upper: float = 1.0
    description: str = ""


_PARAM_DOCS = {
    "beta": "transmission rate (1/day)",
    "gamma": "recovery rate (1/day)",
    "mu": "mortality rate, I -> D (1/day)",
    "nu": "vaccination rate, S -> V (1/day)",
}
_KIND_PARAMS = {
    ModelKind.SIR: ("beta", "gamma"),
    ModelKind.SIRD: ("beta", "gamma", "mu"),
    ModelKind.SIRVD: ("beta", "gamma", "mu", "nu"),
    ModelKind.SIR_SUBGROUPS: ("beta", "gamma"),
}


def default_params(kind: ModelKind) -> tuple[ParamSpec, ...]:
    kind = ModelKind(kind)
    return tuple(ParamSpec(n, 0.0, 1.0, _PARAM_DOCS[n]) for n in _KIND_PARAMS[kind])


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    severity: str  # "error" | "warning"
    message: str

    def __str__(self):
        return f"[{self.severity}] {self.field}: {self.message}"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ContactConfig:
    """Facility-based contact structure.

    ``facility_time[f, g]`` is the share of time group ``g`` spends in
    facility ``f``; ``within_facility_contact[f, g, h]`` is the share of that
    time a member of ``g`` spends interacting with group ``h``.
    """

    groups: tuple[str, ...]
    fractions: tuple[float, ...]
    facilities: tuple[str, ...]
    facility_time: np.ndarray
    within_facility_contact: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "fractions", tuple(float(x) for x in self.fractions))
        object.__setattr__(self, "facilities", tuple(self.facilities))
        object.__setattr__(self, "facility_time", _frozen(self.facility_time))
        object.__setattr__(self, "within_facility_contact", _frozen(self.within_facility_contact))
        nf, ng = len(self.facilities), len(self.groups)
        if len(self.fractions) != ng:
            raise StructuralError("one population fraction per group required")
        if self.facility_time.shape != (nf, ng):
            raise StructuralError(f"facility_time must be {nf}x{ng}, got {self.facility_time.shape}")
        if self.within_facility_contact.shape != (nf, ng, ng):
            raise StructuralError(
                f"within_facility_contact must be {nf}x{ng}x{ng}, "
                f"got {self.within_facility_contact.shape}"
            )

    def violations(self) -> list[Violation]:
        out = []
        if any(f < 0 or f > 1 for f in self.fractions):
            out.append(Violation("contact.fractions", "range", "error", "fractions must lie in [0, 1]"))
        total = math.fsum(self.fractions)
        if abs(total - 1.0) > _EXACT:
            out.append(Violation("contact.fractions", "sum", "error", f"fractions sum to {total:.6g}, not 1"))
        for name, arr in (("facility_time", self.facility_time),
                          ("within_facility_contact", self.within_facility_contact)):
            if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
                out.append(Violation(f"contact.{name}", "range", "error", "entries must lie in [0, 1]"))
        for g, group in enumerate(self.groups):
            out.extend(_sum_check(
                f"contact.facility_time[{group}]", "column",
                math.fsum(self.facility_time[:, g])))
        for f, fac in enumerate(self.facilities):
            for g, group in enumerate(self.groups):
                out.extend(_sum_check(
                    f"contact.within_facility_contact[{fac}][{group}]", "row",
                    math.fsum(self.within_facility_contact[f, g])))
        return out

    def normalized(self) -> ContactConfig:
        """Rescale every facility-time column and contact row to sum to 1."""
        ft = np.array(self.facility_time)
        col = ft.sum(axis=0)
        if np.any(col <= 0):
            bad = [self.groups[g] for g in np.flatnonzero(col <= 0)]
            raise ValidationError(f"facility_time columns cannot be normalized: {bad}")
        ft = ft / col
        wc = np.array(self.within_facility_contact)
        rows = wc.sum(axis=2)
        if np.any(rows <= 0):
            f, g = np.argwhere(rows <= 0)[0]
            raise ValidationError(
                f"within_facility_contact[{self.facilities[f]}][{self.groups[g]}] "
                "is all zero and cannot be normalized")
        wc = wc / rows[:, :, None]
        return ContactConfig(self.groups, self.fractions, self.facilities, ft, wc)

    def to_dict(self) -> dict:
        return {
            "groups": [{"name": g, "fraction": f} for g, f in zip(self.groups, self.fractions)],
            "facilities": list(self.facilities),
            "facility_time": self.facility_time.tolist(),
            "within_facility_contact": {
                fac: self.within_facility_contact[f].tolist()
                for f, fac in enumerate(self.facilities)
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path | None = None) -> ContactConfig:
        base_dir = Path(base_dir or ".")
        groups = [g["name"] for g in data["groups"]]
        fractions = [float(g["fraction"]) for g in data["groups"]]
        facilities = list(data["facilities"])
        ft = data["facility_time"]
        if isinstance(ft, str):
            ft = _read_labelled_csv(base_dir / ft, facilities, groups)
        wfc = data["within_facility_contact"]
        mats = []
        for fac in facilities:
            m = wfc[fac]
            if isinstance(m, str):
                m = _read_labelled_csv(base_dir / m, groups, groups)
            mats.append(m)
        return cls(groups, fractions, facilities, ft, mats)


def _sum_check(field_name, kind, total):
    if abs(total - 1.0) <= _EXACT:
        return []
    if abs(total - 1.0) <= ROW_SUM_TOLERANCE + _EXACT:
        return [Violation(field_name, f"{kind}-sum", "warning",
                          f"{kind} sum {total:.4g}, will renormalize")]
    return [Violation(field_name, f"{kind}-sum", "error",
                      f"{kind} sum {total:.4g} outside 1 +/- {ROW_SUM_TOLERANCE}")]


def _read_labelled_csv(path: Path, row_labels: Sequence[str], col_labels: Sequence[str]):
    """Read a CSV whose first column labels rows and header labels columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0][1:]]
    table = {r[0].strip(): [float(v) for v in r[1:]] for r in rows[1:] if r}
    try:
        cols = [header.index(c) for c in col_labels]
        return [[table[r][c] for c in cols] for r in row_labels]
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"{path}: missing label {exc}") from None


def write_labelled_csv(path, matrix, row_labels, col_labels, corner="group"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *col_labels])
        for label, row in zip(row_labels, np.asarray(matrix)):
            w.writerow([label, *(repr(float(v)) for v in row)])


def age_facility_contact(fractions=(0.25, 0.55, 0.20)) -> ContactConfig:
    """Children/adults/seniors across household, school, workplace, community.

    Facility time shares and within-facility interaction shares are taken
    verbatim from the published survey tables (several rows sum to 0.99 or
    1.01).  The population fractions are not published; the defaults are
    arbitrary but fixed.
    """
    facility_time = [
        [0.4, 0.4, 0.54],    # household
        [0.31, 0.08, 0.01],  # school
        [0.08, 0.32, 0.18],  # workplace
        [0.2, 0.2, 0.27],    # community
    ]
    contact = [
        [[0.37, 0.53, 0.1], [0.32, 0.6, 0.07], [0.27, 0.36, 0.37]],
        [[0.92, 0.08, 0.0], [0.67, 0.33, 0.0], [0.75, 0.25, 0.0]],
        [[0.0, 0.89, 0.11], [0.03, 0.92, 0.05], [0.04, 0.94, 0.02]],
        [[0.54, 0.4, 0.06], [0.1, 0.57, 0.34], [0.1, 0.57, 0.34]],
    ]
    return ContactConfig(
        ("children", "adults", "seniors"), fractions,
        ("household", "school", "workplace", "community"),
        facility_time, contact,
    )


def effective_contact_matrix(contact: ContactConfig, normalize: bool = True) -> np.ndarray:
    """Mixing matrix ``M[i, j] = sum_f F[f, i] * C_f[i, j]``.

    With ``normalize`` the inputs are renormalized first and every row of the
    result is rescaled to sum to exactly 1 (up to rounding).
    """
    if normalize:
        contact = contact.normalized()
    m = np.einsum("fi,fij->ij", contact.facility_time, contact.within_facility_contact)
    if normalize:
        m = m / m.sum(axis=1, keepdims=True)
    return m


@dataclass(frozen=True, eq=False)
class ModelSpec:
    kind: ModelKind
    population: int
    initial_conditions: tuple[float, ...]
    params: tuple[ParamSpec, ...] = ()
    contact: ContactConfig | None = None
    mass_action: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not self.params:
            object.__setattr__(self, "params", default_params(self.kind))
        object.__setattr__(self, "params", tuple(self.params))
        ic = self.initial_conditions
        if isinstance(ic, Mapping):
            ic = self._ic_from_mapping(ic)
        object.__setattr__(self, "initial_conditions", tuple(float(v) for v in ic))
        if len(self.initial_conditions) != len(self.slots):
            raise StructuralError(
                f"{len(self.initial_conditions)} initial counts for {len(self.slots)} slots")

    # -- layout ---------------------------------------------------------
    @cached_property
    def slots(self) -> tuple[str, ...]:
        comps = self.kind.compartments
        if not self.kind.grouped:
            return comps
        if self.contact is None:
            raise StructuralError("sir-subgroups requires a contact configuration")
        return tuple(f"{c}_{g}" for c in comps for g in self.contact.groups)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @cached_property
    def lower(self) -> np.ndarray:
        return _frozen([p.lower for p in self.params])

    @cached_property
    def upper(self) -> np.ndarray:
        return _frozen([p.upper for p in self.params])

    def slot_indices(self, name: str) -> list[int]:
        """Indices for a slot name, or for every group slot of a compartment."""
        if name in self.slots:
            return [self.slots.index(name)]
        if self.kind.grouped and name in self.kind.compartments:
            return [self.slots.index(f"{name}_{g}") for g in self.contact.groups]
        raise StructuralError(f"unknown compartment {name!r}; slots are {self.slots}")

    def _ic_from_mapping(self, ic):
        if not self.kind.grouped:
            unknown = set(ic) - set(self.kind.compartments)
            if unknown:
                raise StructuralError(f"unknown compartments {sorted(unknown)}")
            return [float(ic.get(c, 0.0)) for c in self.kind.compartments]
        if self.contact is None:
            raise StructuralError("sir-subgroups requires a contact configuration")
        out = []
        for c in self.kind.compartments:
            per_group = ic.get(c, {})
            out.extend(float(per_group.get(g, 0.0)) for g in self.contact.groups)
        return out

    @cached_property
    def mixing(self) -> np.ndarray | None:
        if self.contact is None:
            return None
        return effective_contact_matrix(self.contact)

    @cached_property
    def group_sizes(self) -> np.ndarray:
        g = len(self.contact.groups)
        y = np.asarray(self.initial_conditions)
        return y.reshape(3, g).sum(axis=0)

    # -- construction / IO ----------------------------------------------
    @classmethod
    def default(cls, kind, population=10_000, infected=1.0, contact=None,
                mass_action=False) -> ModelSpec:
        """``population - infected`` susceptible, ``infected`` infectious, rest 0.

        Grouped models seed every initial infection in the largest group;
        proportional seeding would make all groups evolve identically.
        """
        kind = ModelKind(kind)
        if kind.grouped:
            contact = contact or age_facility_contact()
            seed_group = contact.groups[int(np.argmax(contact.fractions))]
            i = {g: (infected if g == seed_group else 0.0) for g in contact.groups}
            s = {g: f * population - i[g] for g, f in zip(contact.groups, contact.fractions)}
            ic = {"S": s, "I": i}
        else:
            ic = {"S": population - infected, "I": infected}
        return cls(kind, population, ic, contact=contact, mass_action=mass_action)

    def with_bounds(self, **bounds) -> ModelSpec:
        """Copy with ``name=(lower, upper)`` overrides."""
        params = tuple(
            ParamSpec(p.name, *bounds[p.name], p.description) if p.name in bounds else p
            for p in self.params)
        return ModelSpec(self.kind, self.population, self.initial_conditions, params,
                         self.contact, self.mass_action, self.meta)

    def to_dict(self) -> dict:
        ic = dict(zip(self.slots, self.initial_conditions))
        if self.kind.grouped:
            groups = self.contact.groups
            ic = {c: {g: ic[f"{c}_{g}"] for g in groups} for c in self.kind.compartments}
        d = {
            "kind": self.kind.value,
            "population": self.population,
            "initial_conditions": ic,
            "params": [vars(p).copy() for p in self.params],
            "mass_action": self.mass_action,
        }
        if self.contact is not None:
            d["contact"] = self.contact.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=None) -> ModelSpec:
        kind = ModelKind(data["kind"])
        contact = data.get("contact")
        if contact == "age-facility":
            contact = age_facility_contact()
        elif contact is not None:
            contact = ContactConfig.from_dict(contact, base_dir)
        params = tuple(ParamSpec(**p) for p in data.get("params", ())) or default_params(kind)
        population = int(data.get("population", 10_000))
        if "initial_conditions" in data:
            return cls(kind, population, data["initial_conditions"], params, contact,
                       bool(data.get("mass_action", False)))
        spec = cls.default(kind, population, float(data.get("infected", 1.0)), contact,
                           bool(data.get("mass_action", False)))
        return ModelSpec(spec.kind, spec.population, spec.initial_conditions, params,
                         spec.contact, spec.mass_action)

    @classmethod
    def load(cls, path) -> ModelSpec:
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def flat_rates(kind: ModelKind, params) -> tuple[float, float, float, float]:
    """Map a parameter vector to the kernel's ``(beta, gamma, mu, nu)``."""
    p = [float(v) for v in params]
    if kind is ModelKind.SIR or kind is ModelKind.SIR_SUBGROUPS:
        return p[0], p[1], 0.0, 0.0
    if kind is ModelKind.SIRD:
        return p[0], p[1], p[2], 0.0
    return p[0], p[1], p[2], p[3]


def rhs(spec: ModelSpec, params, state) -> np.ndarray:
    """Time derivative of every slot (counts/day) at ``state``.

    Raises
    ------
    StructuralError
        ``params`` or ``state`` length does not match the spec.
    DomainError
        ``state`` has negative or non-finite entries.
    """
    params = np.asarray(params, dtype=np.float64)
    state = np.asarray(state, dtype=np.float64)
    if params.shape != (len(spec.params),):
        raise StructuralError(f"expected {len(spec.params)} parameters, got {params.shape}")
    if state.shape != (len(spec.slots),):
        raise StructuralError(f"expected state of length {len(spec.slots)}, got {state.shape}")
    if not np.all(np.isfinite(state)):
        raise DomainError("state must be finite")
    if np.any(state < 0):
        raise DomainError("state entries must be nonnegative")
    beta, gamma, mu, nu = flat_rates(spec.kind, params)
    if spec.kind.grouped:
        norms = np.ones(len(spec.contact.groups)) if spec.mass_action else spec.group_sizes
        return np.array(_kernels_py._group_rhs(
            beta, gamma, spec.mixing.tolist(), [float(v) for v in norms],
            len(spec.contact.groups), [float(v) for v in state]))
    norm = 1.0 if spec.mass_action else float(spec.population)
    full = [0.0] * 5
    for comp, v in zip(spec.kind.compartments, state):
        full[_FLAT_INDEX[comp]] = float(v)
    d = _kernels_py._flat_rhs(beta, gamma, mu, nu, norm, full)
    return np.array([d[_FLAT_INDEX[c]] for c in spec.kind.compartments])


def validate(spec: ModelSpec) -> list[Violation]:
    """Every broken invariant of ``spec`` as a list; empty when valid."""
    out = []
    for p in spec.params:
        if not (p.lower < p.upper):
            out.append(Violation(f"params.{p.name}", "bounds", "error",
                                 f"lower {p.lower} must be < upper {p.upper}"))
        if p.lower < 0:
            out.append(Violation(f"params.{p.name}", "bounds", "error", "rates must be >= 0"))
    expected = _KIND_PARAMS[spec.kind]
    if spec.param_names != expected:
        out.append(Violation("params", "names", "error",
                             f"{spec.kind.value} takes {expected}, got {spec.param_names}"))
    if spec.population <= 0:
        out.append(Violation("population", "positive", "error", "population must be positive"))
    ic = np.asarray(spec.initial_conditions)
    if np.any(ic < 0) or not np.all(np.isfinite(ic)):
        out.append(Violation("initial_conditions", "nonnegative", "error",
                             "initial counts must be finite and >= 0"))
    total = math.fsum(ic)
    if abs(total - spec.population) > 1e-6 * max(1, spec.population):
        out.append(Violation("initial_conditions", "sum", "error",
                             f"initial counts sum to {total:g}, population is {spec.population}"))
    if spec.kind.grouped:
        if spec.contact is None:
            out.append(Violation("contact", "required", "error", "sir-subgroups needs contact"))
        else:
            out.extend(spec.contact.violations())
            for g, (name, frac) in enumerate(zip(spec.contact.groups, spec.contact.fractions)):
                size = spec.group_sizes[g]
                if abs(size - frac * spec.population) > 1.0:
                    out.append(Violation(f"initial_conditions[{name}]", "group-total", "error",
                                         f"group total {size:g} != {frac} * {spec.population}"))
    elif spec.contact is not None:
        out.append(Violation("contact", "forbidden", "error",
                             f"{spec.kind.value} does not take a contact configuration"))
    return out


def errors_only(violations):
    return [v for v in violations if v.severity == "error"]
