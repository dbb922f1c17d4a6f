"""Exact Markov-decision solvers.

Two scales: the single-bandit discounted subproblem (uniformized to a
discrete-time discounted MDP over states 0..J, state 0 absorbing at zero
cost) feeding the Whittle-index bisection, and the full fixed-population
count process solved by relative value iteration for average cost, used to
measure sub-optimality gaps of priority policies on small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .model import ModelInstance, StateId, ensure_valid, uniformization_rate

APERIODICITY_MARGIN = 1.01  # keeps every uniformized self-loop probability positive
DEFAULT_SA_CAP = 2_000_000
DEFAULT_MAX_ITER = 1_000_000


class StateSpaceTooLarge(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, span, iterations):
        self.span = span
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations (span {span:.3e})")


@dataclass(frozen=True)
class SolveResult:
    """Values (or bias), greedy actions, and convergence diagnostics."""

    values: np.ndarray
    actions: object
    iterations: int
    residual: float
    gain: Optional[float] = None


@dataclass(frozen=True)
class SingleBanditMdp:
    """Uniformized discounted single-bandit MDP; state 0 is departed/absorbing."""

    class_index: int
    beta: float
    nu: float
    discount: float
    costs: np.ndarray        # (J+1, 2)
    transitions: np.ndarray  # (2, J+1, J+1), rows sum to 1 by construction

    @property
    def num_states(self) -> int:
        return self.costs.shape[0]


def build_single_bandit(model: ModelInstance, class_index: int, beta: float, nu: float = 0.0) -> SingleBanditMdp:
    """Uniformize one class with activation charge ``nu`` per unit active time.

    Discount q/(beta+q), costs (C + nu*1{a=1})/(beta+q), transition rows
    q(.|i,a)/q plus the diagonal complement.
    """
    ensure_valid(model)
    if beta <= 0:
        raise ValueError("beta must be positive")
    cls = model.classes[class_index - 1]
    qbar = uniformization_rate(model)
    n = cls.num_states + 1
    discount = qbar / (beta + qbar) if qbar > 0 else 0.0
    costs = np.zeros((n, 2))
    trans = np.zeros((2, n, n))
    for a in (0, 1):
        trans[a, 0, 0] = 1.0
        rates = cls.rates(a)
        for i in range(1, n):
            if qbar > 0:
                trans[a, i] = rates[i - 1] / qbar
                trans[a, i, i] = 1.0 - rates[i - 1].sum() / qbar
            else:
                trans[a, i, i] = 1.0
            costs[i, a] = (cls.cost(a)[i - 1] + (nu if a == 1 else 0.0)) / (beta + qbar)
    return SingleBanditMdp(
        class_index=class_index,
        beta=beta,
        nu=nu,
        discount=discount,
        costs=costs,
        transitions=trans,
    )


def _greedy_passive_ties(q: np.ndarray) -> np.ndarray:
    # action 1 only on strict improvement: the index is the least charge at
    # which passive is optimal, so equality resolves passive
    scale = 1.0 + np.abs(q).max(initial=0.0)
    return (q[:, 1] < q[:, 0] - 1e-13 * scale).astype(int)


def value_iteration_discounted(mdp: SingleBanditMdp, tol: float = 1e-9) -> SolveResult:
    """Bellman backups to sup-norm tolerance; ties resolve to passive."""
    if not 0.0 <= mdp.discount < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    n = mdp.num_states
    v = np.zeros(n)
    stop = tol if mdp.discount == 0.0 else tol * (1.0 - mdp.discount) / (2.0 * mdp.discount)
    it = 0
    while True:
        it += 1
        q = mdp.costs + mdp.discount * np.stack(
            [mdp.transitions[0] @ v, mdp.transitions[1] @ v], axis=1
        )
        v_new = q.min(axis=1)
        delta = float(np.abs(v_new - v).max())
        v = v_new
        if delta <= stop or mdp.discount == 0.0:
            break
    return SolveResult(values=v, actions=_greedy_passive_ties(q), iterations=it, residual=delta)


def policy_iteration_discounted(mdp: SingleBanditMdp, max_iter: int = 200) -> SolveResult:
    """Howard policy iteration with exact linear-solve evaluation.

    Gives machine-precision values in a handful of solves, independent of how
    close the discount is to 1; this backs the Whittle bisection.
    """
    n = mdp.num_states
    actions = np.zeros(n, dtype=int)
    eye = np.eye(n)
    for it in range(1, max_iter + 1):
        p_pi = mdp.transitions[actions, np.arange(n)]
        c_pi = mdp.costs[np.arange(n), actions]
        v = np.linalg.solve(eye - mdp.discount * p_pi, c_pi)
        q = mdp.costs + mdp.discount * np.stack(
            [mdp.transitions[0] @ v, mdp.transitions[1] @ v], axis=1
        )
        new_actions = _greedy_passive_ties(q)
        if np.array_equal(new_actions, actions):
            residual = float(np.abs(q.min(axis=1) - v).max())
            return SolveResult(values=v, actions=actions, iterations=it, residual=residual)
        actions = new_actions
    raise NoConvergence(float("nan"), max_iter)


# --- fixed-population count process ----------------------------------------------

def _compositions(total: int, parts: int):
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class PopulationMdp:
    """Occupancy-vector MDP for a fixed population (exchangeable bandits).

    States are count vectors over the flat (class, state) order; actions are
    feasible integer activation vectors with sum at most the budget.
    """

    model: ModelInstance
    budget: int
    states: tuple
    state_index: dict
    allocations: tuple          # per state: tuple of allocation tuples, passive-most first
    uniformization: float
    cost_passive: np.ndarray    # flat per-state passive cost rates
    cost_active: np.ndarray

    @property
    def num_states(self) -> int:
        return len(self.states)

    def num_state_actions(self) -> int:
        return sum(len(a) for a in self.allocations)


def build_population_mdp(model: ModelInstance, sa_cap: int = DEFAULT_SA_CAP) -> PopulationMdp:
    ensure_valid(model)
    if not model.is_fixed:
        raise ValueError("the exact population solver requires a fixed population")
    totals = model.fixed_totals()
    int_totals = np.rint(totals).astype(int)
    if np.abs(totals - int_totals).max(initial=0.0) > 1e-9:
        raise ValueError("stochastic solving needs integer per-class populations")
    budget = int(np.floor(model.alpha + 1e-9))

    per_class = [
        list(_compositions(int(int_totals[k]), cls.num_states))
        for k, cls in enumerate(model.classes)
    ]
    states = tuple(
        tuple(itertools.chain.from_iterable(combo)) for combo in itertools.product(*per_class)
    )
    n_flat = model.num_states_total

    allocations = []
    n_sa = 0
    for n_vec in states:
        allocs = []
        ranges = [range(min(c, budget) + 1) for c in n_vec]
        for m in itertools.product(*ranges):
            if sum(m) <= budget:
                allocs.append(m)
        allocs.sort(key=lambda m: (sum(m), m))
        n_sa += len(allocs)
        if n_sa > sa_cap:
            raise StateSpaceTooLarge(
                f"more than {sa_cap} state-action pairs ({len(states)} states)"
            )
        allocations.append(tuple(allocs))

    qbar = uniformization_rate(model)
    unif = APERIODICITY_MARGIN * qbar * float(int_totals.sum())
    c0 = np.zeros(n_flat)
    c1 = np.zeros(n_flat)
    off = 0
    for cls in model.classes:
        j = cls.num_states
        c0[off : off + j] = cls.cost_passive
        c1[off : off + j] = cls.cost_active
        off += j
    return PopulationMdp(
        model=model,
        budget=budget,
        states=states,
        state_index={s: i for i, s in enumerate(states)},
        allocations=tuple(allocations),
        uniformization=unif,
        cost_passive=c0,
        cost_active=c1,
    )


def _flat_rates(model: ModelInstance):
    """Per flat state and action: list of (destination flat index, rate)."""
    moves = {0: [], 1: []}
    sids = model.state_ids()
    index = {sid: i for i, sid in enumerate(sids)}
    for a in (0, 1):
        per_state = []
        for sid in sids:
            cls = model.classes[sid.k - 1]
            row = cls.rates(a)[sid.j - 1]
            entries = []
            for dest in range(1, cls.num_states + 1):
                if dest != sid.j and row[dest] > 0:
                    entries.append((index[StateId(sid.k, dest)], float(row[dest])))
            per_state.append(entries)
        moves[a] = per_state
    return moves


def greedy_allocation(policy, n_vec: Sequence[int], budget: int, state_pos: dict) -> tuple:
    """Integer water-filling down the priority order; never-active excluded."""
    m = [0] * len(n_vec)
    remaining = budget
    for sid in policy.order:
        i = state_pos[sid]
        take = min(remaining, n_vec[i])
        m[i] = take
        remaining -= take
        if remaining == 0:
            break
    return tuple(m)


def _assemble(pm: PopulationMdp, chosen: Optional[list]):
    """COO transition data and stage costs for all or one allocation per state.

    ``chosen`` maps state index -> allocation tuple (policy evaluation); None
    enumerates every allocation (optimization).
    """
    model = pm.model
    moves = _flat_rates(model)
    unif = pm.uniformization
    rows, cols, vals = [], [], []
    costs = []
    sa_state_ptr = [0]
    sa_alloc = []
    sa_id = 0
    for s_idx, n_vec in enumerate(pm.states):
        allocs = (chosen[s_idx],) if chosen is not None else pm.allocations[s_idx]
        for m in allocs:
            passive = [n - mm for n, mm in zip(n_vec, m)]
            cost = float(np.dot(pm.cost_passive, passive) + np.dot(pm.cost_active, m))
            total_rate = 0.0
            for i in range(len(n_vec)):
                if n_vec[i] == 0:
                    continue
                for count, action in ((passive[i], 0), (m[i], 1)):
                    if count == 0:
                        continue
                    for dest, rate in moves[action][i]:
                        r = count * rate
                        nxt = list(n_vec)
                        nxt[i] -= 1
                        nxt[dest] += 1
                        rows.append(sa_id)
                        cols.append(pm.state_index[tuple(nxt)])
                        vals.append(r / unif)
                        total_rate += r
            stay = 1.0 - total_rate / unif
            rows.append(sa_id)
            cols.append(s_idx)
            vals.append(stay)
            costs.append(cost)
            sa_alloc.append(m)
            sa_id += 1
        sa_state_ptr.append(sa_id)
    p = sp.csr_matrix((vals, (rows, cols)), shape=(sa_id, pm.num_states))
    return p, np.array(costs), np.array(sa_state_ptr[:-1]), sa_alloc


def relative_value_iteration(
    model: ModelInstance,
    policy=None,
    tol: float = 1e-9,
    max_iter: int = DEFAULT_MAX_ITER,
    sa_cap: int = DEFAULT_SA_CAP,
    fixed_actions: Optional[list] = None,
) -> SolveResult:
    """Average-cost solve of the fixed-population count process.

    With ``policy`` None the optimal gain and a greedy allocation map come
    back; with a priority policy the policy's greedy allocations are
    evaluated.  Assumes the controlled chain is unichain.  The gain is in
    cost per unit (continuous) time.
    """
    pm = build_population_mdp(model, sa_cap=sa_cap)
    chosen = None
    if fixed_actions is not None:
        chosen = list(fixed_actions)
    elif policy is not None:
        if not policy.covers(model):
            raise ValueError("policy must cover every (class, state) pair")
        state_pos = {sid: i for i, sid in enumerate(model.state_ids())}
        chosen = [greedy_allocation(policy, n_vec, pm.budget, state_pos) for n_vec in pm.states]

    if pm.uniformization == 0.0:
        # rateless chain: nothing ever moves, the gain is the initial state's cost rate
        counts = np.concatenate([np.rint(c).astype(int) for c in model.population.counts])
        s0 = pm.state_index[tuple(int(c) for c in counts)]
        if chosen is not None:
            m = chosen[s0]
            passive = [n - mm for n, mm in zip(pm.states[s0], m)]
            g = float(np.dot(pm.cost_passive, passive) + np.dot(pm.cost_active, m))
            actions = chosen
        else:
            best, best_m = np.inf, None
            for m in pm.allocations[s0]:
                passive = [n - mm for n, mm in zip(pm.states[s0], m)]
                val = float(np.dot(pm.cost_passive, passive) + np.dot(pm.cost_active, m))
                if val < best:
                    best, best_m = val, m
            g, actions = best, {s0: best_m}
        return SolveResult(values=np.zeros(pm.num_states), actions=actions, iterations=0, residual=0.0, gain=g)

    p, costs, ptr, sa_alloc = _assemble(pm, chosen)
    stage = costs / pm.uniformization
    h = np.zeros(pm.num_states)
    for it in range(1, max_iter + 1):
        q = stage + p @ h
        th = np.minimum.reduceat(q, ptr)
        diff = th - h
        span = float(diff.max() - diff.min())
        gain_stage = 0.5 * (diff.max() + diff.min())
        h = th - th[0]
        if span <= tol:
            # greedy (passive-most on ties, by enumeration order) action map
            actions = []
            bounds = list(ptr) + [len(q)]
            q_final = stage + p @ (h + 0.0)
            for s_idx in range(pm.num_states):
                lo, hi = bounds[s_idx], bounds[s_idx + 1]
                best = lo + int(np.argmin(q_final[lo:hi]))
                actions.append(sa_alloc[best])
            return SolveResult(
                values=h,
                actions=actions,
                iterations=it,
                residual=span,
                gain=float(gain_stage * pm.uniformization),
            )
    raise NoConvergence(span, max_iter)


def suboptimality_table(
    model: ModelInstance,
    policies: dict,
    x0_values: Sequence[int],
    *,
    x0_state: int = 1,
    tol: float = 1e-9,
) -> list:
    """Relative sub-optimality gaps (percent) of priority policies vs the exact optimum.

    ``model`` must be a single-class fixed-population instance; each x0 puts
    the whole population in ``x0_state``.  Rows come back as dicts with keys
    x0, policy, g_policy, g_opt, gap_percent, absolute_gap (flag set when the
    optimal gain is ~0 and the gap is absolute instead of relative).
    """
    ensure_valid(model)
    if model.num_classes != 1 or not model.is_fixed:
        raise ValueError("gap tables are defined for single-class fixed models")
    rows = []
    j_states = model.classes[0].num_states
    for x0 in x0_values:
        counts = np.zeros(j_states)
        counts[x0_state - 1] = x0
        inst = model.with_counts((counts,))
        g_opt = relative_value_iteration(inst, tol=tol).gain
        for name, pol in policies.items():
            g_pol = relative_value_iteration(inst, policy=pol, tol=tol).gain
            if abs(g_opt) > 1e-12:
                gap = 100.0 * (g_pol - g_opt) / abs(g_opt)
                rows.append(
                    {"x0": x0, "policy": name, "g_policy": g_pol, "g_opt": g_opt,
                     "gap_percent": gap, "absolute_gap": False}
                )
            else:
                rows.append(
                    {"x0": x0, "policy": name, "g_policy": g_pol, "g_opt": g_opt,
                     "gap_percent": g_pol - g_opt, "absolute_gap": True}
                )
    return rows
