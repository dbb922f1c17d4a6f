"""Multi-class restless bandit model: data types, validation, and file I/O.

A model is a collection of bandit classes, an activation budget, and a
population mode.  A class-k bandit occupies states 1..J_k; pseudo-state 0 is
departure.  Transition rates are stored as J x (J+1) nonnegative off-diagonal
matrices (column 0 = departure); diagonal entries are derived, never stored.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Union

import numpy as np

PROB_TOL = 1e-12


class InvalidModel(ValueError):
    """Raised when an operation requires a valid model and gets violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid model: " + "; ".join(self.violations))


class StateId(NamedTuple):
    """A (class, state) pair, both 1-based as in the model definition."""

    k: int
    j: int

    def __str__(self):
        return f"({self.j},{self.k})"


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BanditClass:
    """One bandit class: arrival stream, transition rates, and holding costs.

    ``gen_passive`` / ``gen_active`` have shape (J, J+1): row i-1 holds the
    rates out of state i, column 0 is departure, column j is state j.  The
    diagonal slot (row i-1, column i) is forced to zero on construction; the
    actual diagonal rate q(i|i,a) = -(total outflow) is always derived.
    """

    arrival_rate: float
    entry_dist: np.ndarray
    gen_passive: np.ndarray
    gen_active: np.ndarray
    cost_passive: np.ndarray
    cost_active: np.ndarray

    def __post_init__(self):
        entry = _readonly(self.entry_dist)
        j = entry.shape[0]
        gens = []
        for name in ("gen_passive", "gen_active"):
            g = np.array(getattr(self, name), dtype=float)
            if g.shape != (j, j + 1):
                raise ValueError(f"{name} must have shape ({j}, {j + 1}), got {g.shape}")
            g[np.arange(j), np.arange(1, j + 1)] = 0.0
            g.setflags(write=False)
            gens.append(g)
        object.__setattr__(self, "entry_dist", entry)
        object.__setattr__(self, "gen_passive", gens[0])
        object.__setattr__(self, "gen_active", gens[1])
        object.__setattr__(self, "cost_passive", _readonly(self.cost_passive))
        object.__setattr__(self, "cost_active", _readonly(self.cost_active))

    @property
    def num_states(self) -> int:
        return self.entry_dist.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BanditClass):
            return NotImplemented
        return self.arrival_rate == other.arrival_rate and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("entry_dist", "gen_passive", "gen_active", "cost_passive", "cost_active")
        )

    def rates(self, action: int) -> np.ndarray:
        """Off-diagonal rate matrix (J, J+1) for the given action."""
        return self.gen_active if action else self.gen_passive

    def outflow(self, action: int) -> np.ndarray:
        """Total outflow rate per state (departure included)."""
        return self.rates(action).sum(axis=1)

    def departure_rates(self, action: int) -> np.ndarray:
        return self.rates(action)[:, 0]

    def interior_generator(self, action: int) -> np.ndarray:
        """(J, J) generator over states 1..J with the derived diagonal.

        Entry [i-1, j-1] is q(j|i,a); the diagonal absorbs departures, so each
        row sums to -q(0|i,a).
        """
        g = self.rates(action)
        q = np.array(g[:, 1:])
        np.fill_diagonal(q, -self.outflow(action))
        return q

    def cost(self, action: int) -> np.ndarray:
        return self.cost_active if action else self.cost_passive


@dataclass(frozen=True)
class FixedPopulation:
    """No arrivals, no departures; per-class, per-state initial counts."""

    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(_readonly(c) for c in self.counts))

    def __eq__(self, other):
        if not isinstance(other, FixedPopulation):
            return NotImplemented
        return len(self.counts) == len(other.counts) and all(
            np.array_equal(a, b) for a, b in zip(self.counts, other.counts)
        )

    @property
    def totals(self) -> np.ndarray:
        return np.array([c.sum() for c in self.counts])


@dataclass(frozen=True)
class DynamicPopulation:
    """Bandits arrive at rate lambda_k and eventually depart."""


DYNAMIC = DynamicPopulation()

Population = Union[FixedPopulation, DynamicPopulation]


@dataclass(frozen=True)
class ModelInstance:
    """The full problem datum: classes, budget alpha, and population mode."""

    classes: tuple
    alpha: float
    population: Population = DYNAMIC

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def is_fixed(self) -> bool:
        return isinstance(self.population, FixedPopulation)

    def state_ids(self) -> tuple:
        """All (k, j) pairs in lexicographic (k, j) order."""
        return tuple(
            StateId(k + 1, j + 1)
            for k, cls in enumerate(self.classes)
            for j in range(cls.num_states)
        )

    def state_index(self) -> dict:
        return {sid: i for i, sid in enumerate(self.state_ids())}

    @property
    def num_states_total(self) -> int:
        return sum(cls.num_states for cls in self.classes)

    def fixed_totals(self) -> np.ndarray:
        if not self.is_fixed:
            raise ValueError("dynamic population carries no initial counts")
        return self.population.totals

    def with_counts(self, counts) -> "ModelInstance":
        """Copy with replaced fixed-population initial counts."""
        return dataclasses.replace(self, population=FixedPopulation(tuple(counts)))

    def scaled_counts(self, factor: float) -> "ModelInstance":
        """Copy with every fixed-population count multiplied by ``factor``."""
        if not self.is_fixed:
            raise ValueError("scaled_counts requires a fixed population")
        return self.with_counts(tuple(np.asarray(c) * factor for c in self.population.counts))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    def __bool__(self):
        return bool(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(model: ModelInstance) -> ValidationReport:
    """Check every model invariant; returns the list of violations (empty iff valid)."""
    v = []
    if model.num_classes < 1:
        v.append("model must have at least one class")
    if not (math.isfinite(model.alpha) and model.alpha > 0):
        v.append(f"alpha must be a positive real, got {model.alpha}")

    for k, cls in enumerate(model.classes, start=1):
        tag = f"class {k}"
        if cls.num_states < 1:
            v.append(f"{tag}: needs at least one state")
            continue
        if not np.all(np.isfinite(cls.entry_dist)) or np.any(cls.entry_dist < 0):
            v.append(f"{tag}: entry_dist entries must be finite and >= 0")
        elif abs(cls.entry_dist.sum() - 1.0) > PROB_TOL:
            v.append(f"{tag}: entry_dist sums to {cls.entry_dist.sum()!r}, not 1")
        if not (math.isfinite(cls.arrival_rate) and cls.arrival_rate >= 0):
            v.append(f"{tag}: arrival_rate must be finite and >= 0")
        for a in (0, 1):
            g = cls.rates(a)
            if not np.all(np.isfinite(g)):
                v.append(f"{tag}: action {a} rates must be finite")
            elif np.any(g < 0):
                v.append(f"{tag}: action {a} rates must be >= 0")
        for vec, name in ((cls.cost_passive, "cost_passive"), (cls.cost_active, "cost_active")):
            if vec.shape != (cls.num_states,):
                v.append(f"{tag}: {name} must have one entry per state")
            elif not np.all(np.isfinite(vec)):
                v.append(f"{tag}: {name} must be finite")
        if cls.arrival_rate == 0 and (
            np.any(cls.departure_rates(0) > 0) or np.any(cls.departure_rates(1) > 0)
        ):
            v.append(f"{tag}: fixed population requires no departures when arrival_rate = 0")

    if model.is_fixed:
        counts = model.population.counts
        if len(counts) != model.num_classes:
            v.append("fixed population must carry counts for every class")
        else:
            for k, (cls, c) in enumerate(zip(model.classes, counts), start=1):
                if c.shape != (cls.num_states,):
                    v.append(f"class {k}: initial counts must have one entry per state")
                elif not np.all(np.isfinite(c)) or np.any(c < 0):
                    v.append(f"class {k}: initial counts must be finite and >= 0")
        for k, cls in enumerate(model.classes, start=1):
            if cls.arrival_rate != 0:
                v.append(f"class {k}: fixed population requires lambda_k = 0")
    else:
        for k, cls in enumerate(model.classes, start=1):
            if cls.arrival_rate <= 0:
                v.append(f"class {k}: dynamic population requires lambda_k > 0")
            if not (np.any(cls.departure_rates(0) > 0) or np.any(cls.departure_rates(1) > 0)):
                v.append(f"class {k}: dynamic class must admit departure")

    return ValidationReport(tuple(v))


def ensure_valid(model: ModelInstance) -> None:
    report = validate(model)
    if report:
        raise InvalidModel(report.violations)


def exactly_alpha_transform(model: ModelInstance, penalty: float) -> ModelInstance:
    """Shift every passive cost by ``penalty`` so exactly-alpha activation is rewarded.

    Implements the dummy-cost transformation: with a large enough penalty an
    optimal policy keeps the number of active bandits maximal.
    """
    ensure_valid(model)
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    classes = tuple(
        dataclasses.replace(cls, cost_passive=np.asarray(cls.cost_passive) + penalty)
        for cls in model.classes
    )
    return dataclasses.replace(model, classes=classes)


def uniformization_rate(model: ModelInstance) -> float:
    """Maximum total outflow rate over all (state, class, action); 0 if rateless."""
    ensure_valid(model)
    rates = [cls.outflow(a).max(initial=0.0) for cls in model.classes for a in (0, 1)]
    return float(max(rates, default=0.0))


def min_positive_rate(model: ModelInstance) -> float:
    """Smallest strictly positive rate in the model (transitions and arrivals)."""
    vals = []
    for cls in model.classes:
        if cls.arrival_rate > 0:
            vals.append(cls.arrival_rate)
        for a in (0, 1):
            g = cls.rates(a)
            pos = g[g > 0]
            if pos.size:
                vals.append(pos.min())
    return float(min(vals)) if vals else 0.0


# --- convenience constructors -------------------------------------------------

def mmsm_class(
    arrival_rate: float,
    service_rate: float,
    abandon_rate_queue: float,
    abandon_rate_service: float = 0.0,
    cost_queue: float = 0.0,
    cost_service: float = 0.0,
    abandon_cost_queue: float = 0.0,
    abandon_cost_service: float = 0.0,
) -> BanditClass:
    """Single-state class for a multi-server queue with abandonments.

    Queueing parameters are folded into the bandit form at construction:
    passive departure rate = abandonment rate in queue, active departure rate
    = service + in-service abandonment, costs absorb the per-abandonment
    penalties (C(1,0) = c + d*theta, C(1,1) = c~ + d~*theta~).
    """
    theta = abandon_rate_queue
    mu_eff = service_rate + abandon_rate_service
    return BanditClass(
        arrival_rate=arrival_rate,
        entry_dist=[1.0],
        gen_passive=[[theta, 0.0]],
        gen_active=[[mu_eff, 0.0]],
        cost_passive=[cost_queue + abandon_cost_queue * theta],
        cost_active=[cost_service + abandon_cost_service * abandon_rate_service],
    )


def mmsm_model(num_servers: float, classes: Iterable[BanditClass]) -> ModelInstance:
    return ModelInstance(classes=tuple(classes), alpha=float(num_servers), population=DYNAMIC)


# --- JSON model files ----------------------------------------------------------

def _reject_constant(name):
    raise ValueError(f"model file must not contain {name}")


def parse_model(doc: dict, *, check: bool = True) -> ModelInstance:
    """Build a ModelInstance from a parsed model document."""
    try:
        classes = []
        for cdoc in doc["classes"]:
            classes.append(
                BanditClass(
                    arrival_rate=float(cdoc.get("arrival_rate", 0.0)),
                    entry_dist=cdoc["entry_dist"],
                    gen_passive=cdoc["gen_passive"],
                    gen_active=cdoc["gen_active"],
                    cost_passive=cdoc["cost_passive"],
                    cost_active=cdoc["cost_active"],
                )
            )
        pop_doc = doc.get("population", "dynamic")
        if pop_doc == "dynamic":
            population = DYNAMIC
        elif isinstance(pop_doc, dict) and "fixed" in pop_doc:
            population = FixedPopulation(tuple(pop_doc["fixed"]["counts"]))
        else:
            raise ValueError(f"unrecognized population spec: {pop_doc!r}")
        model = ModelInstance(classes=tuple(classes), alpha=float(doc["alpha"]), population=population)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model document: {exc}") from exc
    arrays = [
        arr
        for cls in model.classes
        for arr in (cls.entry_dist, cls.gen_passive, cls.gen_active, cls.cost_passive, cls.cost_active)
    ]
    if model.is_fixed:
        arrays.extend(model.population.counts)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("model file must not contain NaN or infinite values")
    if check:
        ensure_valid(model)
    return model


def load_model(path, *, check: bool = True) -> ModelInstance:
    with open(path) as fh:
        doc = json.load(fh, parse_constant=_reject_constant)
    return parse_model(doc, check=check)


def model_to_dict(model: ModelInstance) -> dict:
    doc = {
        "alpha": model.alpha,
        "population": (
            {"fixed": {"counts": [list(map(float, c)) for c in model.population.counts]}}
            if model.is_fixed
            else "dynamic"
        ),
        "classes": [
            {
                "arrival_rate": cls.arrival_rate,
                "entry_dist": cls.entry_dist.tolist(),
                "gen_passive": cls.gen_passive.tolist(),
                "gen_active": cls.gen_active.tolist(),
                "cost_passive": cls.cost_passive.tolist(),
                "cost_active": cls.cost_active.tolist(),
            }
            for cls in model.classes
        ],
    }
    return doc


def save_model(model: ModelInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")
