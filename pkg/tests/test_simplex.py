import numpy as np
import pytest

from banditfluid import simplex
from oracles import enumerate_lp_vertices


def test_forced_single_point():
    res = simplex.solve([1.0], a_eq=[[1.0]], b_eq=[1.0])
    assert res.x[0] == pytest.approx(1.0, abs=1e-12)
    assert res.objective == pytest.approx(1.0, abs=1e-12)


def test_bound_attaining_maximum():
    res = simplex.solve([-1.0], a_ub=[[1.0]], b_ub=[5.0])
    assert res.x[0] == pytest.approx(5.0, abs=1e-12)
    assert res.objective == pytest.approx(-5.0, abs=1e-12)


def test_infeasible_detected():
    with pytest.raises(simplex.Infeasible):
        simplex.solve([1.0, 1.0], a_eq=[[1.0, 1.0]], b_eq=[-1.0])


def test_unbounded_detected():
    with pytest.raises(simplex.Unbounded):
        simplex.solve([-1.0, 0.0], a_ub=[[-1.0, 1.0]], b_ub=[1.0])


def test_redundant_rows_are_dropped():
    # second equality row duplicates the first
    res = simplex.solve(
        [1.0, 2.0],
        a_eq=[[1.0, 1.0], [2.0, 2.0]],
        b_eq=[1.0, 2.0],
    )
    assert res.objective == pytest.approx(1.0, abs=1e-9)
    assert len(res.kept_rows) == 1
    assert res.duals.shape == (2,)


def _random_lp(rng):
    n = int(rng.integers(2, 7))
    m_eq = int(rng.integers(0, 3))
    m_ub = int(rng.integers(1, 4))
    a_eq = rng.normal(size=(m_eq, n))
    a_ub = rng.normal(size=(m_ub, n))
    x_feas = rng.uniform(0.0, 2.0, size=n)
    b_eq = a_eq @ x_feas
    b_ub = a_ub @ x_feas + rng.uniform(0.0, 1.0, size=m_ub)
    # cap the polytope so every instance is bounded
    a_ub = np.vstack([a_ub, np.ones(n)])
    b_ub = np.concatenate([b_ub, [x_feas.sum() + rng.uniform(1.0, 5.0)]])
    c = rng.normal(size=n)
    return c, a_eq, b_eq, a_ub, b_ub


@pytest.mark.parametrize("seed", range(40))
def test_against_vertex_enumeration(seed):
    rng = np.random.default_rng(900 + seed)
    c, a_eq, b_eq, a_ub, b_ub = _random_lp(rng)
    vertices, objectives, best = enumerate_lp_vertices(c, a_eq, b_eq, a_ub, b_ub)
    res = simplex.solve(c, a_eq, b_eq, a_ub, b_ub)
    assert res.objective == pytest.approx(best, abs=1e-9 * (1.0 + abs(best)))
    # the reported solution is one of the optimal vertices
    opt = [v for v, o in zip(vertices, objectives) if o <= best + 1e-8 * (1.0 + abs(best))]
    assert any(np.abs(res.x[: len(c)] - v).max() < 1e-7 for v in opt)


@pytest.mark.parametrize("seed", range(10))
def test_strong_duality(seed):
    rng = np.random.default_rng(7000 + seed)
    c, a_eq, b_eq, a_ub, b_ub = _random_lp(rng)
    res = simplex.solve(c, a_eq, b_eq, a_ub, b_ub)
    b_all = np.concatenate([b_eq, b_ub])
    assert res.duals @ b_all == pytest.approx(res.objective, abs=1e-7 * (1 + abs(res.objective)))


def test_evaluate_basis_reproduces_solution():
    rng = np.random.default_rng(55)
    c, a_eq, b_eq, a_ub, b_ub = _random_lp(rng)
    res = simplex.solve(c, a_eq, b_eq, a_ub, b_ub)
    x = simplex.evaluate_basis(c, a_eq, b_eq, a_ub, b_ub, res.basis, res.kept_rows)
    assert np.abs(x - res.x).max() < 1e-8
