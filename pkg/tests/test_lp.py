import numpy as np
import pytest

import banditfluid as bf
from banditfluid import lp
from conftest import with_x0
from oracles import enumerate_lp_vertices, mmsm_equilibrium, random_fixed_model


def single_state_dynamic(lam=1.0, passive_exit=1.0, active_exit=2.0, c0=1.0, c1=0.0, alpha=1.0):
    cls = bf.BanditClass(
        arrival_rate=lam,
        entry_dist=[1.0],
        gen_passive=[[passive_exit, 0.0]],
        gen_active=[[active_exit, 0.0]],
        cost_passive=[c0],
        cost_active=[c1],
    )
    return bf.ModelInstance(classes=(cls,), alpha=alpha)


# --- problem assembly --------------------------------------------------------------

def test_three_state_dimensions(three_state):
    prob = lp.build_fluid_lp(three_state)
    assert prob.num_vars == 6
    assert prob.eq_matrix.shape == (4, 6)   # 3 balance rows + 1 mass row
    assert prob.ub_matrix.shape == (1, 6)   # the budget row


def test_single_state_balance_row():
    prob = lp.build_fluid_lp(single_state_dynamic())
    # balance: 0 = 1 - x0 - 2 x1  ->  -x0 - 2 x1 = -1
    assert prob.eq_matrix.shape == (1, 2)
    assert prob.eq_matrix[0, prob.column_of(bf.StateId(1, 1), 0)] == pytest.approx(-1.0)
    assert prob.eq_matrix[0, prob.column_of(bf.StateId(1, 1), 1)] == pytest.approx(-2.0)
    assert prob.eq_rhs[0] == pytest.approx(-1.0)


def test_zero_cost_objective(three_state):
    import dataclasses

    cls = dataclasses.replace(
        three_state.classes[0], cost_passive=np.zeros(3), cost_active=np.zeros(3)
    )
    model = dataclasses.replace(three_state, classes=(cls,))
    prob = lp.build_fluid_lp(model)
    assert np.all(prob.objective == 0.0)


# --- structured optima --------------------------------------------------------------

TABLE_1 = {
    1.0: (("active_only", "passive_only", "passive_only"), False),
    3.0: (("active_only", "split", "passive_only"), True),
    8.0: (("passive_only", "split", "passive_only"), True),
}


@pytest.mark.parametrize("x0", sorted(TABLE_1))
def test_three_state_patterns(three_state, x0):
    eq = lp.structured_optimum(with_x0(three_state, x0))
    pattern, binding = TABLE_1[x0]
    assert eq.pattern() == pattern
    assert eq.capacity_binding == binding
    assert len(eq.split_pairs()) <= 1


def test_mmsm_reference_instance():
    # K=2, S=1, lambda=mu=theta=1, iota_1 > iota_2 > 0
    classes = [
        bf.mmsm_class(1.0, 1.0, 1.0, cost_queue=3.0),
        bf.mmsm_class(1.0, 1.0, 1.0, cost_queue=1.0),
    ]
    model = bf.mmsm_model(1.0, classes)
    eq = lp.structured_optimum(model)
    assert eq.x1(bf.StateId(1, 1)) == pytest.approx(1.0, abs=1e-9)
    assert eq.x0(bf.StateId(1, 1)) == pytest.approx(0.0, abs=1e-9)
    assert eq.x1(bf.StateId(2, 1)) == pytest.approx(0.0, abs=1e-9)
    assert eq.x0(bf.StateId(2, 1)) == pytest.approx(1.0, abs=1e-9)


def test_equilibrium_residuals_and_budget(three_state):
    eq = lp.structured_optimum(with_x0(three_state, 5.0))
    assert lp.balance_residual(three_state, eq.passive, eq.active) <= 1e-8
    assert eq.total_active <= eq.alpha + 1e-8
    assert eq.passive.min() >= 0.0 and eq.active.min() >= 0.0


@pytest.mark.parametrize("seed", range(12))
def test_structured_split_budget_on_random_fixed(seed):
    rng = np.random.default_rng(1200 + seed)
    model = random_fixed_model(rng, positive_costs=(seed % 2 == 0))
    eq = lp.structured_optimum(model)
    assert len(eq.split_pairs()) <= 1
    off = 0
    for k, cls in enumerate(model.classes):
        mass = eq.totals()[off : off + cls.num_states].sum()
        assert mass == pytest.approx(model.fixed_totals()[k], abs=1e-7)
        off += cls.num_states


def test_fluid_lp_matches_vertex_enumeration(three_state):
    prob = lp.build_fluid_lp(with_x0(three_state, 3.0))
    _, _, best = enumerate_lp_vertices(
        prob.objective, prob.eq_matrix, prob.eq_rhs, prob.ub_matrix, prob.ub_rhs
    )
    assert lp.solve_lp(prob).objective == pytest.approx(best, abs=1e-8)


# --- the relaxed frequency program ---------------------------------------------------

@pytest.mark.parametrize("seed", range(8))
def test_relaxed_value_matches_fluid_value(seed):
    rng = np.random.default_rng(3300 + seed)
    model = random_fixed_model(rng)
    assert bf.relaxed_value_fixed(model) == pytest.approx(
        lp.structured_optimum(model).objective, abs=1e-8
    )


def test_relaxed_empty_population(three_state):
    model = three_state.with_counts((np.zeros(3),))
    assert bf.relaxed_value_fixed(model) == pytest.approx(0.0, abs=1e-10)


def test_relaxed_frequencies_prioritize_state_two(three_state):
    model = with_x0(three_state, 4.0)
    prob = lp.build_relaxed_lp_fixed(model)
    sol = lp.solve_lp(prob)
    x2_active = sol.x[prob.column_of(bf.StateId(1, 2), 1)]
    assert x2_active > 1e-6
    # scaling by the population recovers a fluid-feasible optimum
    scaled = sol.x * 4.0
    assert lp.balance_residual(model, scaled[0::2], scaled[1::2]) <= 1e-8
    assert lp.structured_optimum(model).objective == pytest.approx(sol.objective, abs=1e-8)


def test_relaxed_rejects_dynamic():
    with pytest.raises(ValueError):
        lp.build_relaxed_lp_fixed(single_state_dynamic())


# --- breakpoint sweeps ---------------------------------------------------------------

def test_single_state_alpha_breakpoint():
    # budget saturates at lambda/(mu+theta~) = 0.5; above it x0 drains to 0
    model = single_state_dynamic(lam=1.0, passive_exit=1.0, active_exit=2.0, c0=1.0, c1=0.0)
    table = lp.alpha_breakpoints(model, 1.0)
    assert len(table.breakpoints) == 1
    assert table.breakpoints[0] == pytest.approx(0.5, abs=1e-5)
    below, above = table.intervals
    assert below.budget_binding and not above.budget_binding
    assert above.active_only == (bf.StateId(1, 1),)


def test_zero_cost_sweep_is_degenerate():
    model = single_state_dynamic(c0=0.0, c1=0.0)
    table = lp.alpha_breakpoints(model, 1.0)
    assert table.degenerate_objective
    assert len(table.intervals) == 1


def test_three_state_sweep_table(x0_table):
    assert [round(b, 2) for b in x0_table.breakpoints] == [2.4, 3.6, 7.37]
    h_sets = [tuple(s.j for s in iv.active_only) for iv in x0_table.intervals]
    assert h_sets == [(1,), (1,), (2,), ()]
    splits = [iv.split.j if iv.split else None for iv in x0_table.intervals]
    assert splits == [None, 2, 1, 2]
    assert [iv.budget_binding for iv in x0_table.intervals] == [False, True, True, True]


def test_optimal_vertices_contains_canonical(three_state):
    model = with_x0(three_state, 8.0)
    prob = lp.build_fluid_lp(model)
    vertices = lp.optimal_vertices(prob)
    eq = lp.structured_optimum(model)
    stacked = np.empty(2 * len(eq.state_ids))
    stacked[0::2] = eq.passive
    stacked[1::2] = eq.active
    assert any(np.abs(v - stacked).max() < 1e-6 for v in vertices)
