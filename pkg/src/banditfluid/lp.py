"""Fluid linear programs: the equilibrium relaxation, structured optima, and
parametric sweeps over the activation budget.

The fluid relaxation minimizes total holding-cost rate over equilibrium
occupancies x^a_{j,k} subject to per-state balance, the activation budget, and
(fixed populations) per-class mass conservation.  Optimal vertices with at
most one (state, class) pair split between both actions are the raw material
for priority-policy construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import simplex
from .model import (
    ModelInstance,
    StateId,
    ensure_valid,
)

ZERO_TOL = 1e-9          # below this a component counts as zero
RESIDUAL_TOL = 1e-8      # balance / mass / budget verification
EPS_SCHEDULE = (1e-4, 1e-5, 1e-6)


class StructureNotFound(RuntimeError):
    """No optimal solution with <= 1 split pair could be pinned down."""


@dataclass(frozen=True)
class LpProblem:
    """min objective.x  s.t.  eq rows, ub rows (<=), x >= 0.

    ``columns[i]`` is the (StateId, action) pair owning variable i.
    """

    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    ub_matrix: np.ndarray
    ub_rhs: np.ndarray
    columns: tuple

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    def column_of(self, sid: StateId, action: int) -> int:
        return self.columns.index((sid, action))


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    objective: float
    basis: tuple
    duals: np.ndarray
    kept_rows: tuple
    iterations: int


def solve_lp(problem: LpProblem) -> LpSolution:
    """Optimal basic solution via the dense two-phase simplex (Bland's rule)."""
    res = simplex.solve(
        problem.objective,
        problem.eq_matrix,
        problem.eq_rhs,
        problem.ub_matrix,
        problem.ub_rhs,
    )
    return LpSolution(
        x=res.x[: problem.num_vars],
        objective=res.objective,
        basis=res.basis,
        duals=res.duals,
        kept_rows=res.kept_rows,
        iterations=res.iterations,
    )


def build_fluid_lp(model: ModelInstance, *, entry_inflate: float = 0.0) -> LpProblem:
    """Assemble the fluid relaxation for ``model``.

    ``entry_inflate`` adds epsilon to every entry probability (the
    perturbation used to pin a canonical optimal basis); it only moves the
    right-hand side of the balance rows.  Redundant balance rows of fixed
    classes are kept; the solver's phase 1 drops them.
    """
    ensure_valid(model)
    sids = model.state_ids()
    columns = tuple((sid, a) for sid in sids for a in (0, 1))
    col = {pair: i for i, pair in enumerate(columns)}
    n = len(columns)

    obj = np.zeros(n)
    for sid, a in columns:
        cls = model.classes[sid.k - 1]
        obj[col[(sid, a)]] = cls.cost(a)[sid.j - 1]

    eq_rows = []
    eq_rhs = []
    for sid in sids:  # balance: 0 = lambda_k p_k(j) + sum_{i,a} x^a_{i,k} q_k(j|i,a)
        cls = model.classes[sid.k - 1]
        row = np.zeros(n)
        for a in (0, 1):
            gen = cls.interior_generator(a)
            for i in range(cls.num_states):
                row[col[(StateId(sid.k, i + 1), a)]] = gen[i, sid.j - 1]
        eq_rows.append(row)
        eq_rhs.append(-cls.arrival_rate * (cls.entry_dist[sid.j - 1] + entry_inflate))

    if model.is_fixed:
        totals = model.fixed_totals()
        for k, cls in enumerate(model.classes, start=1):
            row = np.zeros(n)
            for j in range(1, cls.num_states + 1):
                for a in (0, 1):
                    row[col[(StateId(k, j), a)]] = 1.0
            eq_rows.append(row)
            eq_rhs.append(float(totals[k - 1]))

    budget = np.zeros(n)
    for sid in sids:
        budget[col[(sid, 1)]] = 1.0

    return LpProblem(
        objective=obj,
        eq_matrix=np.array(eq_rows),
        eq_rhs=np.array(eq_rhs),
        ub_matrix=budget.reshape(1, -1),
        ub_rhs=np.array([model.alpha]),
        columns=columns,
    )


def build_relaxed_lp_fixed(model: ModelInstance) -> LpProblem:
    """The fixed-population relaxed program over per-bandit state-action frequencies.

    Its optimal value equals the fluid optimum; scaling an optimal solution by
    the class populations yields an optimal fluid solution.
    """
    ensure_valid(model)
    if not model.is_fixed:
        raise ValueError("the relaxed frequency program is defined for fixed populations")
    totals = model.fixed_totals()
    sids = model.state_ids()
    columns = tuple((sid, a) for sid in sids for a in (0, 1))
    col = {pair: i for i, pair in enumerate(columns)}
    n = len(columns)

    obj = np.zeros(n)
    for sid, a in columns:
        cls = model.classes[sid.k - 1]
        obj[col[(sid, a)]] = totals[sid.k - 1] * cls.cost(a)[sid.j - 1]

    eq_rows = []
    eq_rhs = []
    for sid in sids:
        cls = model.classes[sid.k - 1]
        row = np.zeros(n)
        for a in (0, 1):
            gen = cls.interior_generator(a)
            for i in range(cls.num_states):
                row[col[(StateId(sid.k, i + 1), a)]] = gen[i, sid.j - 1]
        eq_rows.append(row)
        eq_rhs.append(0.0)
    for k, cls in enumerate(model.classes, start=1):  # per-class normalization
        row = np.zeros(n)
        for j in range(1, cls.num_states + 1):
            for a in (0, 1):
                row[col[(StateId(k, j), a)]] = 1.0
        eq_rows.append(row)
        eq_rhs.append(1.0)

    budget = np.zeros(n)
    for sid in sids:
        budget[col[(sid, 1)]] = totals[sid.k - 1]

    return LpProblem(
        objective=obj,
        eq_matrix=np.array(eq_rows),
        eq_rhs=np.array(eq_rhs),
        ub_matrix=budget.reshape(1, -1),
        ub_rhs=np.array([model.alpha]),
        columns=columns,
    )


# --- equilibrium points ---------------------------------------------------------

ACTIVE_ONLY = "active_only"
SPLIT = "split"
PASSIVE_ONLY = "passive_only"
ZERO = "zero"


@dataclass(frozen=True)
class EquilibriumPoint:
    """An optimal fluid solution: occupancies, optimal value, and budget status."""

    state_ids: tuple
    passive: np.ndarray
    active: np.ndarray
    objective: float
    alpha: float
    capacity_binding: bool

    def __post_init__(self):
        self.passive.setflags(write=False)
        self.active.setflags(write=False)

    def index(self, sid: StateId) -> int:
        return self.state_ids.index(sid)

    def x0(self, sid: StateId) -> float:
        return float(self.passive[self.index(sid)])

    def x1(self, sid: StateId) -> float:
        return float(self.active[self.index(sid)])

    def total(self, sid: StateId) -> float:
        i = self.index(sid)
        return float(self.passive[i] + self.active[i])

    @property
    def total_active(self) -> float:
        return float(self.active.sum())

    def totals(self) -> np.ndarray:
        return self.passive + self.active

    def category(self, sid: StateId) -> str:
        i = self.index(sid)
        p, a = self.passive[i] > 0, self.active[i] > 0
        if a and not p:
            return ACTIVE_ONLY
        if a and p:
            return SPLIT
        if p:
            return PASSIVE_ONLY
        return ZERO

    def split_pairs(self) -> tuple:
        return tuple(s for s in self.state_ids if self.category(s) == SPLIT)

    def pattern(self) -> tuple:
        return tuple(self.category(s) for s in self.state_ids)

    def to_dict(self) -> dict:
        values = {}
        for i, sid in enumerate(self.state_ids):
            values[f"{sid.k}.{sid.j}.0"] = float(self.passive[i])
            values[f"{sid.k}.{sid.j}.1"] = float(self.active[i])
        return {
            "objective": self.objective,
            "alpha": self.alpha,
            "capacity_binding": self.capacity_binding,
            "values": values,
        }


def balance_residual(model: ModelInstance, passive: np.ndarray, active: np.ndarray) -> float:
    """Sup-norm of the fluid balance equations at the given occupancies."""
    worst = 0.0
    off = 0
    for cls in model.classes:
        j = cls.num_states
        x0 = passive[off : off + j]
        x1 = active[off : off + j]
        drift = cls.arrival_rate * cls.entry_dist
        drift = drift + x0 @ cls.interior_generator(0) + x1 @ cls.interior_generator(1)
        worst = max(worst, float(np.abs(drift).max(initial=0.0)))
        off += j
    return worst


def _make_equilibrium(model: ModelInstance, x: np.ndarray, objective: float) -> EquilibriumPoint:
    sids = model.state_ids()
    passive = np.array(x[0::2])
    active = np.array(x[1::2])
    low = min(passive.min(initial=0.0), active.min(initial=0.0))
    if low < -ZERO_TOL:
        raise StructureNotFound(f"solver returned component {low:.3e} below -{ZERO_TOL}")
    passive[passive < ZERO_TOL] = 0.0
    active[active < ZERO_TOL] = 0.0
    res = balance_residual(model, passive, active)
    if res > RESIDUAL_TOL:
        raise StructureNotFound(f"balance residual {res:.3e} exceeds {RESIDUAL_TOL}")
    total_active = active.sum()
    if total_active > model.alpha + RESIDUAL_TOL:
        raise StructureNotFound("budget violated after clamping")
    if model.is_fixed:
        totals = model.fixed_totals()
        off = 0
        for k, cls in enumerate(model.classes):
            mass = passive[off : off + cls.num_states].sum() + active[off : off + cls.num_states].sum()
            if abs(mass - totals[k]) > RESIDUAL_TOL * (1.0 + abs(totals[k])):
                raise StructureNotFound(f"class {k + 1} mass off by {mass - totals[k]:.3e}")
            off += cls.num_states
    return EquilibriumPoint(
        state_ids=sids,
        passive=passive,
        active=active,
        objective=float(objective),
        alpha=model.alpha,
        capacity_binding=bool(total_active >= model.alpha - RESIDUAL_TOL),
    )


def _split_count(x: np.ndarray) -> int:
    return int(np.sum((x[0::2] > ZERO_TOL) & (x[1::2] > ZERO_TOL)))


def _structured_fixed(model: ModelInstance, first: LpSolution, prob: LpProblem) -> EquilibriumPoint:
    # Support reduction: drop zero-mass states and re-solve; each restricted
    # basic solution over an all-positive support has at most one split pair.
    sids = model.state_ids()
    dropped = set()
    x = first.x
    for _ in range(len(sids) + 1):
        passive, active = x[0::2], x[1::2]
        for i, sid in enumerate(sids):
            if passive[i] + active[i] <= ZERO_TOL:
                dropped.add(sid)
        keep_cols = [i for i, (sid, _) in enumerate(prob.columns) if sid not in dropped]
        res = simplex.solve(
            prob.objective[keep_cols],
            prob.eq_matrix[:, keep_cols],
            prob.eq_rhs,
            prob.ub_matrix[:, keep_cols],
            prob.ub_rhs,
        )
        if res.objective > first.objective + RESIDUAL_TOL * (1.0 + abs(first.objective)):
            raise StructureNotFound("restricted program lost optimality")
        x_new = np.zeros(prob.num_vars)
        x_new[keep_cols] = res.x[: len(keep_cols)]
        if _split_count(x_new) <= 1:
            return _make_equilibrium(model, x_new, res.objective)
        if np.all(x_new[0::2] + x_new[1::2] > ZERO_TOL) or np.array_equal(x_new, x):
            break
        x = x_new
    raise StructureNotFound("support reduction did not reach a structured solution")


def _structured_dynamic(model: ModelInstance, first: LpSolution, prob: LpProblem) -> EquilibriumPoint:
    # Entry-distribution inflation: when the same optimal basis survives two
    # consecutive epsilon values, evaluate that basis on the unperturbed data.
    prev = None
    for eps in EPS_SCHEDULE:
        prob_eps = build_fluid_lp(model, entry_inflate=eps)
        sol = solve_lp(prob_eps)
        key = (sol.basis, sol.kept_rows)
        if prev == key:
            try:
                x_full = simplex.evaluate_basis(
                    prob.objective,
                    prob.eq_matrix,
                    prob.eq_rhs,
                    prob.ub_matrix,
                    prob.ub_rhs,
                    sol.basis,
                    sol.kept_rows,
                )
            except np.linalg.LinAlgError:
                prev = key
                continue
            x = x_full[: prob.num_vars]
            obj = float(prob.objective @ x)
            ok = (
                x_full.min(initial=0.0) >= -ZERO_TOL
                and _split_count(x) <= 1
                and abs(obj - first.objective) <= RESIDUAL_TOL * (1.0 + abs(first.objective))
            )
            if ok:
                return _make_equilibrium(model, x, obj)
        prev = key
    raise StructureNotFound("no epsilon yielded a stable structured basis")


def structured_optimum(model: ModelInstance) -> EquilibriumPoint:
    """An optimal fluid solution with at most one split (state, class) pair.

    Solves the fluid relaxation; if the Bland vertex carries more than one
    split pair the canonical disambiguation runs (epsilon inflation for
    dynamic populations, support reduction for fixed ones).  Dynamic
    populations need a bounded optimal set, e.g. positive passive costs.
    """
    prob = build_fluid_lp(model)
    sol = solve_lp(prob)
    if _split_count(sol.x) <= 1:
        return _make_equilibrium(model, sol.x, sol.objective)
    if model.is_fixed:
        return _structured_fixed(model, sol, prob)
    return _structured_dynamic(model, sol, prob)


def relaxed_value_fixed(model: ModelInstance) -> float:
    """Optimal value of the per-bandit frequency relaxation (the lower bound)."""
    return solve_lp(build_relaxed_lp_fixed(model)).objective


def equilibrium_from_values(model: ModelInstance, x: np.ndarray, objective: float) -> EquilibriumPoint:
    """Wrap any optimal variable vector (column order of build_fluid_lp) as an
    EquilibriumPoint, verifying balance/budget/mass residuals and clamping."""
    return _make_equilibrium(model, np.asarray(x, dtype=float), objective)


def optimal_vertices(problem: LpProblem, *, objective_tol: float = 1e-8, max_bases: int = 500_000) -> list:
    """Every optimal basic feasible solution, by exhaustive basis enumeration.

    Exponential in the problem size; meant for the small instances where the
    full optimal face matters (alternate-basis policy membership).  Returns
    deduplicated variable vectors (slacks stripped).
    """
    import itertools

    opt = solve_lp(problem)
    a, b, _, n, _ = simplex.standardize(
        problem.objective, problem.eq_matrix, problem.eq_rhs, problem.ub_matrix, problem.ub_rhs
    )
    rows = list(opt.kept_rows)  # full-row-rank subsystem found in phase 1
    a_red, b_red = a[rows], b[rows]
    m = len(rows)
    n_tot = a.shape[1]
    if math.comb(n_tot, m) > max_bases:
        raise StructureNotFound("basis enumeration too large")
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    found = []
    for cols in itertools.combinations(range(n_tot), m):
        bmat = a_red[:, cols]
        try:
            xb = np.linalg.solve(bmat, b_red)
        except np.linalg.LinAlgError:
            continue
        if xb.min(initial=0.0) < -ZERO_TOL:
            continue
        x = np.zeros(n_tot)
        x[list(cols)] = xb
        if float(np.abs(a @ x - b).max(initial=0.0)) > 1e-7 * scale:
            continue
        val = float(problem.objective @ x[:n])
        if val > opt.objective + objective_tol * (1.0 + abs(opt.objective)):
            continue
        xv = x[:n]
        if not any(np.abs(xv - seen).max() < 1e-7 for seen in found):
            found.append(xv)
    return found


# --- parametric sweep over the budget -------------------------------------------

@dataclass(frozen=True)
class PatternInterval:
    """One maximal parameter interval with a fixed optimal sign pattern."""

    lo: float
    hi: float
    active_only: tuple
    split: Optional[StateId]
    passive_only: tuple
    zero_mass: tuple
    budget_binding: bool

    def classify(self) -> dict:
        out = {sid: ACTIVE_ONLY for sid in self.active_only}
        if self.split is not None:
            out[self.split] = SPLIT
        out.update({sid: PASSIVE_ONLY for sid in self.passive_only})
        out.update({sid: ZERO for sid in self.zero_mass})
        return out

    def to_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "active_only": [list(s) for s in self.active_only],
            "split": list(self.split) if self.split else None,
            "passive_only": [list(s) for s in self.passive_only],
            "zero_mass": [list(s) for s in self.zero_mass],
            "budget_binding": self.budget_binding,
        }


@dataclass(frozen=True)
class BreakpointTable:
    """Sign-pattern intervals of the optimal solution along a swept parameter.

    ``parameter`` is "alpha" (budget sweep) or "x0" (total initial mass sweep
    at fixed budget; the two are equivalent up to rescaling, with *larger* x0
    playing the role of *smaller* alpha).
    """

    parameter: str
    intervals: tuple
    breakpoints: tuple
    sweep_max: float
    degenerate_objective: bool = False

    def locate(self, value: float) -> int:
        if not (0.0 < value <= self.sweep_max):
            raise ValueError(f"{value} outside the swept range (0, {self.sweep_max}]")
        for i, iv in enumerate(self.intervals):
            if value < iv.hi or i == len(self.intervals) - 1:
                return i
        return len(self.intervals) - 1

    def more_capacity_indices(self, i: int) -> range:
        """Interval indices with strictly more activation capacity than interval i."""
        if self.parameter == "x0":
            return range(0, i)
        return range(i + 1, len(self.intervals))

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "sweep_max": self.sweep_max,
            "breakpoints": list(self.breakpoints),
            "degenerate_objective": self.degenerate_objective,
            "intervals": [iv.to_dict() for iv in self.intervals],
        }


def _pattern_key(eq: EquilibriumPoint):
    return (eq.pattern(), eq.capacity_binding)


def _interval_from_point(eq: EquilibriumPoint, lo: float, hi: float) -> PatternInterval:
    groups = {ACTIVE_ONLY: [], SPLIT: [], PASSIVE_ONLY: [], ZERO: []}
    for sid in eq.state_ids:
        groups[eq.category(sid)].append(sid)
    if len(groups[SPLIT]) > 1:
        raise StructureNotFound(f"{len(groups[SPLIT])} split pairs inside one interval")
    return PatternInterval(
        lo=lo,
        hi=hi,
        active_only=tuple(groups[ACTIVE_ONLY]),
        split=groups[SPLIT][0] if groups[SPLIT] else None,
        passive_only=tuple(groups[PASSIVE_ONLY]),
        zero_mass=tuple(groups[ZERO]),
        budget_binding=eq.capacity_binding,
    )


def _sweep(
    make_model: Callable[[float], ModelInstance],
    parameter: str,
    sweep_max: float,
    n_probes: int,
    resolution: float,
) -> BreakpointTable:
    solve_at = {}

    def at(t: float) -> EquilibriumPoint:
        if t not in solve_at:
            solve_at[t] = structured_optimum(make_model(t))
        return solve_at[t]

    base = make_model(sweep_max)
    if np.all(build_fluid_lp(base).objective == 0.0):
        eq = at(sweep_max)
        iv = _interval_from_point(eq, 0.0, sweep_max)
        return BreakpointTable(parameter, (iv,), (), sweep_max, degenerate_objective=True)

    lo = sweep_max * 1e-6
    probes = np.unique(
        np.concatenate(
            [np.geomspace(lo, sweep_max, max(n_probes // 4, 4)), np.linspace(lo, sweep_max, n_probes)]
        )
    )
    keys = {t: _pattern_key(at(t)) for t in probes}

    breakpoints = []
    for a, b in zip(probes[:-1], probes[1:]):
        if keys[a] == keys[b]:
            continue
        left, right = float(a), float(b)
        key_left = keys[a]
        while right - left > resolution:
            mid = 0.5 * (left + right)
            if _pattern_key(at(mid)) == key_left:
                left = mid
            else:
                right = mid
        breakpoints.append(0.5 * (left + right))

    edges = [0.0] + breakpoints + [sweep_max]
    intervals = []
    for lo_e, hi_e in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (max(lo_e, lo * 0.5) + hi_e)
        intervals.append(_interval_from_point(at(mid), lo_e, hi_e))
    return BreakpointTable(parameter, tuple(intervals), tuple(breakpoints), sweep_max)


def alpha_breakpoints(
    model: ModelInstance,
    alpha_max: float,
    *,
    n_probes: int = 64,
    resolution: float = 1e-6,
) -> BreakpointTable:
    """Sweep the activation budget over (0, alpha_max] and table the pattern changes."""
    if not (math.isfinite(alpha_max) and alpha_max > 0):
        raise ValueError("alpha_max must be finite and positive")
    ensure_valid(model)

    def make(t: float) -> ModelInstance:
        import dataclasses

        return dataclasses.replace(model, alpha=float(t))

    return _sweep(make, "alpha", float(alpha_max), n_probes, resolution)


def x0_breakpoints(
    model: ModelInstance,
    x0_max: float,
    *,
    n_probes: int = 64,
    resolution: float = 1e-6,
) -> BreakpointTable:
    """Fixed-population variant: sweep total initial mass at fixed budget.

    The swept value is the total population; per-class composition is scaled
    proportionally from the model's counts.
    """
    ensure_valid(model)
    if not model.is_fixed:
        raise ValueError("x0 sweep requires a fixed population")
    base_total = float(model.fixed_totals().sum())
    if base_total <= 0:
        raise ValueError("x0 sweep needs a strictly positive base population")

    def make(t: float) -> ModelInstance:
        return model.scaled_counts(float(t) / base_total)

    return _sweep(make, "x0", float(x0_max), n_probes, resolution)
