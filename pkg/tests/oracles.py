"""Independent oracles for the test suite.

Everything here is deliberately brute-force or closed-form and shares no code
with the solvers it cross-checks: exhaustive vertex enumeration for linear
programs, the abandonment-queue equilibrium in closed form, hand-rolled
water-filling, and two-policy enumeration for single-state bandits.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

import banditfluid as bf


def enumerate_lp_vertices(c, a_eq, b_eq, a_ub, b_ub, tol=1e-9):
    """All basic feasible solutions of min c.x, A_eq x = b_eq, A_ub x <= b_ub, x >= 0.

    Brute force over column subsets of the slack-augmented system.  Returns
    (vertices, objectives, best_value); vertices carry only the original
    variables.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    a_eq = np.asarray(a_eq, dtype=float).reshape(-1, n) if np.size(a_eq) else np.zeros((0, n))
    a_ub = np.asarray(a_ub, dtype=float).reshape(-1, n) if np.size(a_ub) else np.zeros((0, n))
    b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float)) if np.size(b_eq) else np.zeros(0)
    b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float)) if np.size(b_ub) else np.zeros(0)
    m_ub = a_ub.shape[0]
    a = np.vstack([np.hstack([a_eq, np.zeros((a_eq.shape[0], m_ub))]),
                   np.hstack([a_ub, np.eye(m_ub)])]) if (a_eq.size or a_ub.size) else np.zeros((0, n))
    b = np.concatenate([b_eq, b_ub])
    rank = np.linalg.matrix_rank(a) if a.size else 0
    n_tot = a.shape[1]
    vertices, objectives = [], []
    for cols in itertools.combinations(range(n_tot), rank):
        sub = a[:, cols]
        if np.linalg.matrix_rank(sub) < rank:
            continue
        xb, residual, *_ = np.linalg.lstsq(sub, b, rcond=None)
        x = np.zeros(n_tot)
        x[list(cols)] = xb
        if np.abs(a @ x - b).max(initial=0.0) > 1e-8 * (1.0 + np.abs(b).max(initial=0.0)):
            continue
        if x.min(initial=0.0) < -tol:
            continue
        xv = np.maximum(x[:n], 0.0)
        if any(np.abs(xv - v).max() < 1e-8 for v in vertices):
            continue
        vertices.append(xv)
        objectives.append(float(c @ xv))
    best = min(objectives) if objectives else math.inf
    return vertices, objectives, best


def mmsm_equilibrium(num_servers, arrival, active_exit, passive_exit, iota):
    """Closed-form optimal fluid point of the abandonment queue.

    Classes are ranked by iota (descending); positive-index classes fill the
    server pool in order, the first class that does not fit splits, everyone
    after (and every nonpositive-index class) queues entirely.
    Returns (passive, active) arrays indexed by original class position.
    """
    k_count = len(arrival)
    ranked = sorted(range(k_count), key=lambda i: (-iota[i], i))
    eligible = [i for i in ranked if iota[i] > 0]
    passive = np.zeros(k_count)
    active = np.zeros(k_count)
    capacity = float(num_servers)
    for i in ranked:
        if i not in eligible:
            passive[i] = arrival[i] / passive_exit[i]
            continue
        full = arrival[i] / active_exit[i]
        if full <= capacity:
            active[i] = full
            capacity -= full
        else:
            active[i] = capacity
            passive[i] = (arrival[i] - active_exit[i] * capacity) / passive_exit[i]
            capacity = 0.0
    return passive, active


def waterfill(order, masses, budget):
    """Reference greedy allocation: plain loop, no vectorization."""
    active = [0.0] * len(masses)
    remaining = budget
    for idx in order:
        give = min(max(remaining, 0.0), max(masses[idx], 0.0))
        active[idx] = give
        remaining -= masses[idx]
    return active


def single_state_policy_values(cost_passive, cost_active, exit_passive, exit_active, beta, nu):
    """Exact discounted values of the two stationary policies of a J=1 bandit.

    Keeping action a forever from state 1 costs (C_a + nu*1{a=1})/(beta + exit_a);
    the subproblem optimum is their minimum.
    """
    v_passive = cost_passive / (beta + exit_passive)
    v_active = (cost_active + nu) / (beta + exit_active)
    return v_passive, v_active


def single_state_whittle(cost_passive, cost_active, exit_passive, exit_active, beta):
    """Least nu making passive optimal, from the closed-form policy values."""
    return (beta + exit_active) * cost_passive / (beta + exit_passive) - cost_active


# --- randomized instance generators ----------------------------------------------

def random_fixed_model(rng, k_max=2, j_max=3, x_max=6, alpha_max=3, positive_costs=False,
                       rate_lo=0.1, rate_hi=1.0, integer_counts=True):
    """Random fixed-population model with strictly positive rates (unichain)."""
    k_count = int(rng.integers(1, k_max + 1))
    classes = []
    counts = []
    for _ in range(k_count):
        j = int(rng.integers(1, j_max + 1))
        gens = []
        for _a in (0, 1):
            g = np.zeros((j, j + 1))
            for i in range(j):
                for d in range(1, j + 1):
                    if d != i + 1:
                        g[i, d] = rng.uniform(rate_lo, rate_hi)
            gens.append(g)
        if positive_costs:
            c0 = rng.uniform(0.2, 3.0, size=j)
            c1 = rng.uniform(0.0, 3.0, size=j)
        else:
            c0 = rng.uniform(-2.0, 3.0, size=j)
            c1 = rng.uniform(-2.0, 3.0, size=j)
        entry = rng.dirichlet(np.ones(j))
        classes.append(
            bf.BanditClass(
                arrival_rate=0.0,
                entry_dist=entry,
                gen_passive=gens[0],
                gen_active=gens[1],
                cost_passive=c0,
                cost_active=c1,
            )
        )
        if integer_counts:
            total = int(rng.integers(1, x_max + 1))
            split = rng.multinomial(total, np.ones(j) / j)
            counts.append(split.astype(float))
        else:
            counts.append(rng.uniform(0.0, x_max, size=j))
    alpha = float(rng.integers(1, alpha_max + 1))
    return bf.ModelInstance(
        classes=tuple(classes), alpha=alpha, population=bf.FixedPopulation(tuple(counts))
    )


def random_dynamic_model(rng, k_max=2, j_max=3, positive_passive_costs=True):
    """Random dynamic-population model; every class can depart from any state."""
    k_count = int(rng.integers(1, k_max + 1))
    classes = []
    for _ in range(k_count):
        j = int(rng.integers(1, j_max + 1))
        gens = []
        for _a in (0, 1):
            g = np.zeros((j, j + 1))
            for i in range(j):
                g[i, 0] = rng.uniform(0.1, 1.0)
                for d in range(1, j + 1):
                    if d != i + 1:
                        g[i, d] = rng.uniform(0.1, 1.0)
            gens.append(g)
        c0 = rng.uniform(0.2, 3.0, size=j) if positive_passive_costs else rng.uniform(-2.0, 3.0, size=j)
        classes.append(
            bf.BanditClass(
                arrival_rate=float(rng.uniform(0.3, 2.0)),
                entry_dist=rng.dirichlet(np.ones(j)),
                gen_passive=gens[0],
                gen_active=gens[1],
                cost_passive=c0,
                cost_active=rng.uniform(-1.0, 3.0, size=j),
            )
        )
    alpha = float(rng.uniform(0.5, 3.0))
    return bf.ModelInstance(classes=tuple(classes), alpha=alpha, population=bf.DYNAMIC)


def random_mmsm_model(rng, k_max=4, min_iota_sep=1e-2, min_boundary_sep=1e-2, max_tries=200):
    """Random abandonment queue with well-separated indices and load boundaries."""
    for _ in range(max_tries):
        k_count = int(rng.integers(1, k_max + 1))
        lam = rng.uniform(0.3, 3.0, size=k_count)
        mu = rng.uniform(0.5, 2.5, size=k_count)
        theta = rng.uniform(0.5, 2.5, size=k_count)
        theta_t = np.where(rng.random(k_count) < 0.5, 0.0, rng.uniform(0.1, 0.6, size=k_count))
        c = rng.uniform(0.0, 2.0, size=k_count)
        d = rng.uniform(0.0, 1.0, size=k_count)
        ct = rng.uniform(0.0, 1.0, size=k_count)
        dt = rng.uniform(0.0, 1.0, size=k_count)
        servers = float(rng.integers(1, 4))
        classes = [
            bf.mmsm_class(lam[i], mu[i], theta[i], theta_t[i], c[i], ct[i], d[i], dt[i])
            for i in range(k_count)
        ]
        model = bf.mmsm_model(servers, classes)
        iota = bf.abandonment_index(model)
        seps = [abs(a - b) for a, b in itertools.combinations(iota, 2)]
        if any(s < min_iota_sep for s in seps) or any(abs(v) < min_iota_sep for v in iota):
            continue
        ranked = sorted(range(k_count), key=lambda i: (-iota[i], i))
        loads = np.cumsum([lam[i] / (mu[i] + theta_t[i]) for i in ranked if iota[i] > 0])
        if any(abs(load - servers) < min_boundary_sep for load in loads):
            continue
        return model
    raise RuntimeError("no admissible random abandonment instance found")
