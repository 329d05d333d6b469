"""Day-by-day integration, synthetic datasets and regime splitting."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DegenerateSeriesError, IntegrationError, StructuralError, ValidationError
from .models import _FLAT_INDEX, ModelSpec, flat_rates

DEFAULT_HORIZON = 175
DEFAULT_STEPS_PER_DAY = 10
HIGH_MARGIN = 40
MIN_TRAIN_DAYS = 3


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Counts per integer day ``0..horizon`` for every slot of ``spec``."""

    slots: tuple[str, ...]
    values: np.ndarray
    population: float
    source_id: str = ""

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.values.shape[0])

    def column(self, name: str) -> np.ndarray:
        """Series for a slot, or the sum over groups for a bare compartment."""
        return _column(self.slots, self.values, name)

    def to_csv(self, path):
        write_series_csv(path, self.slots, self.values)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed series for a subset of slots.

    ``clamped`` counts noisy values that fell below zero before clamping.
    """

    observed: tuple[str, ...]
    values: np.ndarray
    noise_sigma: float = 0.0
    seed: int | None = None
    train_cutoff_day: int | None = None
    source_id: str = ""
    clamped: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cut = self.train_cutoff_day
        if cut is not None and not (MIN_TRAIN_DAYS <= cut <= self.horizon):
            raise ValidationError(
                f"train_cutoff_day {cut} outside [{MIN_TRAIN_DAYS}, {self.horizon}]")

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def column(self, name: str) -> np.ndarray:
        return _column(self.observed, self.values, name)

    def with_cutoff(self, day: int) -> Dataset:
        return replace(self, train_cutoff_day=int(day))

    def to_csv(self, path):
        write_series_csv(path, self.observed, self.values)

    @classmethod
    def from_csv(cls, path, **kw) -> Dataset:
        slots, values = read_series_csv(path)
        return cls(slots, values, source_id=str(path), **kw)


@dataclass(frozen=True)
class RegimeSplit:
    peak_day: int
    low_cutoff: int
    high_cutoff: int


def _column(slots, values, name):
    if name in slots:
        return values[:, slots.index(name)]
    members = [k for k, s in enumerate(slots) if s.split("_", 1)[0] == name]
    if not members:
        raise StructuralError(f"no slot named {name!r} in {slots}")
    return values[:, members].sum(axis=1)


def integrate(spec: ModelSpec, params, horizon_days: int = DEFAULT_HORIZON,
              steps_per_day: int = DEFAULT_STEPS_PER_DAY, method: str = "rk4") -> Trajectory:
    """Fixed-step integration of ``spec`` sampled at integer days.

    Parameters
    ----------
    spec : ModelSpec
    params : sequence of float
        Rates aligned with ``spec.params``.
    horizon_days : int
        Last day ``T``; the trajectory has ``T + 1`` rows.
    steps_per_day : int
        Substeps per day.
    method : {"rk4", "euler"}
        ``euler`` with one step per day is the literal per-day update rule.

    Raises
    ------
    IntegrationError
        The state became non-finite; ``.day`` names the first bad day.
    """
    values = _run(spec, params, horizon_days, steps_per_day, method)
    np.maximum(values, 0.0, out=values)
    return Trajectory(spec.slots, values, float(spec.population),
                      source_id=f"{spec.kind.value}:{','.join(repr(float(p)) for p in params)}")


def _run(spec, params, horizon_days, steps_per_day, method):
    """Raw (unclamped) samples; the hot path used by the objective."""
    if horizon_days < 1 or steps_per_day < 1:
        raise ValidationError("horizon_days and steps_per_day must be >= 1")
    if method not in ("rk4", "euler"):
        raise ValidationError(f"unknown integration method {method!r}")
    if len(params) != len(spec.params):
        raise StructuralError(f"expected {len(spec.params)} parameters, got {len(params)}")
    euler = method == "euler"
    beta, gamma, mu, nu = flat_rates(spec.kind, params)
    if spec.kind.grouped:
        norms = np.ones(len(spec.contact.groups)) if spec.mass_action else spec.group_sizes
        out, fail = kernels.grouped(beta, gamma, spec.mixing, np.ascontiguousarray(norms, dtype=float),
                                    np.asarray(spec.initial_conditions, dtype=float),
                                    horizon_days, steps_per_day, euler)
    else:
        y0 = np.zeros(5)
        for comp, v in zip(spec.kind.compartments, spec.initial_conditions):
            y0[_FLAT_INDEX[comp]] = v
        norm = 1.0 if spec.mass_action else float(spec.population)
        out, fail = kernels.flat(beta, gamma, mu, nu, norm, y0, horizon_days, steps_per_day, euler)
        out = out[:, [_FLAT_INDEX[c] for c in spec.kind.compartments]]
    if fail >= 0:
        raise IntegrationError(fail)
    return out


def add_noise(traj: Trajectory, sigma: float, seed: int, observed=None,
              clamp: bool = True) -> Dataset:
    """Add independent ``N(0, sigma)`` noise to every observed datum.

    Negative noisy counts are clamped to zero (``clamp=False`` keeps them);
    the number clamped is recorded on the dataset.  ``sigma == 0`` returns
    the source values untouched.
    """
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    observed = tuple(observed) if observed else traj.slots
    cols = [traj.slots.index(s) for s in observed]
    clean = traj.values[:, cols]
    if sigma == 0:
        return Dataset(observed, clean.copy(), 0.0, seed, source_id=traj.source_id)
    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
    clamped = 0
    if clamp:
        neg = noisy < 0
        clamped = int(neg.sum())
        noisy[neg] = 0.0
    return Dataset(observed, noisy, float(sigma), seed, source_id=traj.source_id, clamped=clamped)


def find_peak(traj: Trajectory, compartment: str = "I", high_margin: int = HIGH_MARGIN) -> RegimeSplit:
    """Locate the peak of ``compartment`` (first index on ties) and split.

    The low-data regime trains on the days strictly before the peak; the
    high-data regime on ``high_margin`` more days (capped at the horizon).
    """
    series = traj.column(compartment)
    if not np.any(series != 0):
        raise DegenerateSeriesError(f"{compartment} is identically zero")
    peak = int(np.argmax(series))
    T = len(series) - 1
    if peak >= T:
        raise DegenerateSeriesError(f"{compartment} peaks on the final day {T}")
    return RegimeSplit(peak, peak, min(T, peak + high_margin))


def write_series_csv(path, slots, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", *slots])
        for d, row in enumerate(np.asarray(values)):
            w.writerow([d, *("%.17g" % v for v in row)])


def read_series_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "day":
        raise ValidationError(f"{path}: first column must be 'day'")
    slots = tuple(rows[0][1:])
    body = [r for r in rows[1:] if r]
    days = [int(r[0]) for r in body]
    if days != list(range(len(body))):
        raise ValidationError(f"{path}: days must run 0, 1, 2, ... without gaps")
    values = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    return slots, values.reshape(len(body), len(slots))
