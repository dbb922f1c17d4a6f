"""Priority policies: construction from fluid optima, the budget-sweep
selection procedure, and Whittle / abandonment index computations.

A priority policy is a strict ordering over (class, state) pairs plus a set
of states that are never activated.  The asymptotically optimal family is cut
out of an optimal fluid solution by three rules: never-passive states beat
states with passive mass, split states beat never-active states, and with
slack budget the never-active states stay passive forever.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import lp, mdp
from .model import ModelInstance, StateId, ensure_valid, uniformization_rate

POSITIVE_INDEX_TOL = 1e-9
BINDING_TOL = 1e-8
LIMIT_CONV_TOL = 1e-4
DEFAULT_BETAS = (1e-1, 1e-2, 1e-3, 1e-4)


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class PriorityPolicy:
    """Strict priority order (highest first) plus a never-activate set."""

    order: tuple
    never_active: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(self.order))
        object.__setattr__(self, "never_active", frozenset(self.never_active))
        overlap = set(self.order) & self.never_active
        if overlap:
            raise ValueError(f"states both ordered and never-active: {sorted(overlap)}")
        if len(set(self.order)) != len(self.order):
            raise ValueError("priority order contains duplicates")

    def states(self) -> frozenset:
        return frozenset(self.order) | self.never_active

    def covers(self, model: ModelInstance) -> bool:
        return self.states() == set(model.state_ids())

    def rank(self) -> dict:
        return {sid: i for i, sid in enumerate(self.order)}

    def to_dict(self) -> dict:
        return {
            "order": [[s.k, s.j] for s in self.order],
            "never_active": sorted([s.k, s.j] for s in self.never_active),
        }


def single_class_policy(name: str, num_states: int) -> PriorityPolicy:
    """Parse a 'prio213'-style name into a policy over a single class.

    Digits are states in priority order; unlisted states are never active.
    """
    if not name.startswith("prio") or not name[4:].isdigit():
        raise ValueError(f"not a prioXYZ-style policy name: {name!r}")
    states = [int(ch) for ch in name[4:]]
    if len(set(states)) != len(states) or any(not 1 <= j <= num_states for j in states):
        raise ValueError(f"bad state list in policy name {name!r}")
    order = tuple(StateId(1, j) for j in states)
    never = frozenset(StateId(1, j) for j in range(1, num_states + 1) if StateId(1, j) not in order)
    return PriorityPolicy(order=order, never_active=never)


def policy_name(policy: PriorityPolicy, model: ModelInstance) -> str:
    """Inverse of single_class_policy for one-class models; generic repr otherwise."""
    if model.num_classes == 1:
        return "prio" + "".join(str(s.j) for s in policy.order)
    return "+".join(f"{s.k}.{s.j}" for s in policy.order)


# --- the asymptotically optimal set ---------------------------------------------

@dataclass(frozen=True)
class PolicyConstraints:
    """Partial order and forced exclusions carved out of an equilibrium point."""

    must_dominate: frozenset
    forced_never_active: frozenset
    alpha: float
    states: tuple


def pi_star_constraints(eq: lp.EquilibriumPoint, alpha: Optional[float] = None) -> PolicyConstraints:
    """Dominance pairs and forced-passive states for the policy family of ``eq``."""
    alpha = eq.alpha if alpha is None else float(alpha)
    cats = {sid: eq.category(sid) for sid in eq.state_ids}
    dominate = set()
    for a_sid, a_cat in cats.items():
        if a_cat == lp.ACTIVE_ONLY:
            for b_sid, b_cat in cats.items():
                if b_cat in (lp.SPLIT, lp.PASSIVE_ONLY):
                    dominate.add((a_sid, b_sid))
        elif a_cat == lp.SPLIT:
            for b_sid, b_cat in cats.items():
                if b_cat == lp.PASSIVE_ONLY:
                    dominate.add((a_sid, b_sid))
    forced = frozenset(
        sid for sid, cat in cats.items() if cat == lp.PASSIVE_ONLY
    ) if eq.total_active < alpha - BINDING_TOL else frozenset()
    return PolicyConstraints(
        must_dominate=frozenset(dominate),
        forced_never_active=forced,
        alpha=alpha,
        states=eq.state_ids,
    )


def is_in_pi_star(policy: PriorityPolicy, eq: lp.EquilibriumPoint, alpha: Optional[float] = None) -> bool:
    """Membership test against the family induced by one equilibrium point."""
    cons = pi_star_constraints(eq, alpha)
    if not cons.forced_never_active <= policy.never_active:
        return False
    for sid in policy.never_active:
        if sid in eq.state_ids and eq.x1(sid) > 0:
            return False
    if set(cons.states) - policy.states():
        return False
    pos = policy.rank()
    for hi, lo_s in cons.must_dominate:
        if hi in policy.never_active:
            return False
        if lo_s in policy.never_active:
            continue
        if pos[hi] >= pos[lo_s]:
            return False
    return True


def enumerate_pi_star_policies(cons: PolicyConstraints, max_count: int = 1000) -> list:
    """All linear extensions of the dominance order, never-active set minimal.

    Bounded enumeration for tests and small instances; raises once the count
    exceeds ``max_count``.
    """
    orderable = [s for s in cons.states if s not in cons.forced_never_active]
    succs = {s: set() for s in orderable}
    preds = {s: 0 for s in orderable}
    for hi, lo_s in cons.must_dominate:
        if hi in succs and lo_s in preds and lo_s not in succs[hi]:
            succs[hi].add(lo_s)
            preds[lo_s] += 1
    out = []

    def extend(prefix, remaining_preds):
        if len(out) > max_count:
            raise RuntimeError(f"more than {max_count} policies in the family")
        if len(prefix) == len(orderable):
            out.append(PriorityPolicy(order=tuple(prefix), never_active=cons.forced_never_active))
            return
        for s in sorted(remaining_preds):
            if remaining_preds[s] == 0:
                nxt = dict(remaining_preds)
                del nxt[s]
                for t in succs[s]:
                    if t in nxt:
                        nxt[t] -= 1
                extend(prefix + [s], nxt)

    extend([], preds)
    return out


def select_policy(table: lp.BreakpointTable, value: float) -> PriorityPolicy:
    """Pick the canonical priority policy for a budget (or x0) inside the table.

    High-priority states come first (lexicographic), then the split pair.
    Passive-only states are activated below the split pair only when the
    budget binds *and* they turn active in some higher-capacity interval;
    everything else is never active.
    """
    if value > table.sweep_max or value <= 0:
        raise OutOfRange(f"{value} outside swept range (0, {table.sweep_max}]")
    i = table.locate(value)
    iv = table.intervals[i]
    order = sorted(iv.active_only)
    if iv.split is not None:
        order.append(iv.split)
    never = set(iv.zero_mass)
    appended = []
    for sid in iv.passive_only:
        promote = False
        if iv.budget_binding:
            for n in table.more_capacity_indices(i):
                other = table.intervals[n]
                if sid in other.active_only or sid == other.split:
                    promote = True
                    break
        if promote:
            appended.append(sid)
        else:
            never.add(sid)
    order.extend(sorted(appended))
    return PriorityPolicy(order=tuple(order), never_active=frozenset(never))


def pi_star_membership(policy: PriorityPolicy, model: ModelInstance) -> dict:
    """Test membership of ``policy`` in the full policy family of the model.

    The family is a union over *all* optimal fluid solutions; the canonical
    structured optimum is tried first, then every optimal vertex, then the
    centroid of the optimal face (which covers solutions that randomize a
    tie state).  Returns {"member": bool, "route": str | None}.
    """
    eq = lp.structured_optimum(model)
    if is_in_pi_star(policy, eq):
        return {"member": True, "route": "canonical"}
    prob = lp.build_fluid_lp(model)
    vertices = lp.optimal_vertices(prob)
    for x in vertices:
        alt = lp.equilibrium_from_values(model, x, float(prob.objective @ x))
        if is_in_pi_star(policy, alt):
            return {"member": True, "route": "alternate-vertex"}
    if vertices:
        centroid = np.mean(vertices, axis=0)
        alt = lp.equilibrium_from_values(model, centroid, float(prob.objective @ centroid))
        if is_in_pi_star(policy, alt):
            return {"member": True, "route": "centroid"}
    return {"member": False, "route": None}


# --- Whittle indices -------------------------------------------------------------

@dataclass(frozen=True)
class IndexabilityWitness:
    """Two charge levels whose passive-optimal sets violate monotonicity."""

    class_index: int
    nu_low: float
    nu_high: float
    state: int
    passive_low: tuple
    passive_high: tuple

    def __str__(self):
        return (
            f"class {self.class_index}: state {self.state} passive-optimal at "
            f"nu={self.nu_low:.6g} but not at nu={self.nu_high:.6g} "
            f"(D({self.nu_low:.6g})={list(self.passive_low)}, "
            f"D({self.nu_high:.6g})={list(self.passive_high)})"
        )

    def to_dict(self) -> dict:
        return {
            "class": self.class_index,
            "nu_low": self.nu_low,
            "nu_high": self.nu_high,
            "state": self.state,
            "passive_low": list(self.passive_low),
            "passive_high": list(self.passive_high),
        }


class NotIndexable(Exception):
    def __init__(self, witness: IndexabilityWitness):
        self.witness = witness
        super().__init__(str(witness))


@dataclass(frozen=True)
class WhittleIndexTable:
    """Per-state index values for one class, with an indexability verdict.

    When ``indexable`` is false the values are unreliable and policy
    construction from the table is refused.  The dummy-bandit index is 0.
    """

    class_index: int
    criterion: str
    values: dict
    indexable: bool
    witness: Optional[IndexabilityWitness] = None
    converged: Optional[dict] = None
    dummy_index: float = 0.0

    def to_dict(self) -> dict:
        return {
            "class": self.class_index,
            "criterion": self.criterion,
            "values": {str(j): v for j, v in self.values.items()},
            "indexable": self.indexable,
            "witness": self.witness.to_dict() if self.witness else None,
            "converged": {str(j): bool(v) for j, v in self.converged.items()} if self.converged else None,
            "dummy_index": self.dummy_index,
        }


MAX_BRACKET_GROWTH = 64


def _passive_set(model: ModelInstance, k: int, beta: float, nu: float) -> frozenset:
    """States of class k where passive is optimal in the nu-charged subproblem."""
    sub = mdp.build_single_bandit(model, k, beta, nu)
    result = mdp.policy_iteration_discounted(sub)
    return frozenset(j for j in range(1, sub.num_states) if result.actions[j] == 0)


def whittle_index(
    model: ModelInstance,
    class_index: int,
    beta: float,
    *,
    grid: int = 200,
    tol: float = 1e-7,
    strict: bool = True,
) -> WhittleIndexTable:
    """Discounted Whittle indices of one class by bisection on the charge nu.

    For each state the index is the least activation charge at which passive
    becomes optimal (ties resolve passive).  The indexability verdict sweeps a
    nu-grid and demands the passive-optimal set grow monotonically; on a
    violation NotIndexable carries the witness (or, with strict=False, the
    table comes back flagged).
    """
    ensure_valid(model)
    if beta <= 0:
        raise ValueError("beta must be positive")
    cls = model.classes[class_index - 1]
    qbar = uniformization_rate(model)
    cost_scale = max(np.abs(cls.cost_passive).max(), np.abs(cls.cost_active).max())
    nu_bar = max(10.0 * cost_scale + qbar, 1.0)

    def passive(nu: float) -> frozenset:
        return _passive_set(model, class_index, beta, nu)

    values = {}
    lo_all, hi_all = -nu_bar, nu_bar
    for j in range(1, cls.num_states + 1):
        lo, hi = -nu_bar, nu_bar
        growth = 0
        while j in passive(lo) and growth < MAX_BRACKET_GROWTH:
            lo *= 2.0
            growth += 1
        if j in passive(lo):
            values[j] = -np.inf
            continue
        growth = 0
        while j not in passive(hi) and growth < MAX_BRACKET_GROWTH:
            hi *= 2.0
            growth += 1
        if j not in passive(hi):
            values[j] = np.inf
            continue
        lo_all, hi_all = min(lo_all, lo), max(hi_all, hi)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if j in passive(mid):
                hi = mid
            else:
                lo = mid
        values[j] = 0.5 * (lo + hi)

    witness = None
    nus = np.linspace(lo_all, hi_all, grid)
    prev_nu, prev_set = None, None
    for nu in nus:
        d = passive(float(nu))
        if prev_set is not None and not prev_set <= d:
            lost = sorted(prev_set - d)[0]
            witness = IndexabilityWitness(
                class_index=class_index,
                nu_low=float(prev_nu),
                nu_high=float(nu),
                state=int(lost),
                passive_low=tuple(sorted(prev_set)),
                passive_high=tuple(sorted(d)),
            )
            break
        prev_nu, prev_set = nu, d

    table = WhittleIndexTable(
        class_index=class_index,
        criterion=f"discounted beta={beta:g}",
        values=values,
        indexable=witness is None,
        witness=witness,
    )
    if strict and witness is not None:
        raise NotIndexable(witness)
    return table


def whittle_limit(
    model: ModelInstance,
    class_index: int,
    betas: Sequence[float] = DEFAULT_BETAS,
    *,
    tol: float = 1e-7,
    grid: int = 200,
) -> WhittleIndexTable:
    """Vanishing-discount limit of the Whittle indices along a beta sequence.

    The reported value per state is the index at the smallest beta; the
    convergence flag compares the last two members of the sequence.  Every
    beta must yield an indexable class.
    """
    betas = tuple(float(b) for b in betas)
    if len(betas) < 4:
        raise ValueError("need at least 4 discount values")
    if any(b <= 0 for b in betas) or any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("betas must be positive and strictly decreasing")
    tables = [whittle_index(model, class_index, b, tol=tol, grid=grid) for b in betas]
    last, prev = tables[-1].values, tables[-2].values
    values, converged = {}, {}
    for j in last:
        v = last[j]
        if np.isinf(v) or np.isinf(prev[j]):
            values[j] = v
            converged[j] = bool(np.isinf(v) and np.isinf(prev[j]) and np.sign(v) == np.sign(prev[j]))
        else:
            values[j] = v
            converged[j] = bool(abs(v - prev[j]) <= LIMIT_CONV_TOL * (1.0 + abs(v)))
    return WhittleIndexTable(
        class_index=class_index,
        criterion="limit",
        values=values,
        indexable=True,
        converged=converged,
    )


def whittle_policy(tables: Iterable[WhittleIndexTable]) -> PriorityPolicy:
    """Index policy: strictly positive indices in descending order; ties (k, j).

    States with nonpositive index are never activated (a dummy bandit with
    index 0 always outranks them).
    """
    tables = list(tables)
    for t in tables:
        if not t.indexable:
            if t.witness is not None:
                raise NotIndexable(t.witness)
            raise ValueError(f"class {t.class_index} flagged not indexable")
    entries = []
    seen = set()
    for t in tables:
        if t.class_index in seen:
            raise ValueError(f"duplicate table for class {t.class_index}")
        seen.add(t.class_index)
        for j, v in t.values.items():
            entries.append((StateId(t.class_index, j), float(v)))
    order = [sid for sid, v in sorted(
        (e for e in entries if e[1] > POSITIVE_INDEX_TOL),
        key=lambda e: (-e[1], e[0].k, e[0].j),
    )]
    never = frozenset(sid for sid, v in entries if v <= POSITIVE_INDEX_TOL)
    return PriorityPolicy(order=tuple(order), never_active=never)


# --- the single-state abandonment index ------------------------------------------

def abandonment_index(model: ModelInstance) -> np.ndarray:
    """Cost-reduction-per-time index for single-state classes.

    iota_k = q_k(0|1,1) * (C_k(1,0)/q_k(0|1,0) - C_k(1,1)/q_k(0|1,1)), written
    so that a zero active departure rate is harmless.  Requires J_k = 1 and a
    positive passive departure rate for every class.
    """
    ensure_valid(model)
    out = np.zeros(model.num_classes)
    for k, cls in enumerate(model.classes, start=1):
        if cls.num_states != 1:
            raise ValueError(f"class {k}: abandonment index needs a single state")
        theta = cls.departure_rates(0)[0]
        if theta <= 0:
            raise ValueError(f"class {k}: passive departure rate must be positive")
        active_out = cls.departure_rates(1)[0]
        out[k - 1] = active_out * cls.cost_passive[0] / theta - cls.cost_active[0]
    return out


def abandonment_policy(model: ModelInstance) -> PriorityPolicy:
    """Serve classes by descending positive index; nonpositive never served."""
    iotas = abandonment_index(model)
    order = [
        StateId(k, 1)
        for k in sorted(
            (k for k in range(1, model.num_classes + 1) if iotas[k - 1] > POSITIVE_INDEX_TOL),
            key=lambda k: (-iotas[k - 1], k),
        )
    ]
    never = frozenset(
        StateId(k, 1) for k in range(1, model.num_classes + 1) if iotas[k - 1] <= POSITIVE_INDEX_TOL
    )
    return PriorityPolicy(order=tuple(order), never_active=never)
