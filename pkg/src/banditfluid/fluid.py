"""Fluid dynamics under a priority policy and the sampled attractor check.

The drift at mass vector x is lambda_k p_k(j) plus the generator action on
the active/passive split, where the split greedily water-fills the budget
down the priority order.  An optimal fluid solution is an equilibrium of
these dynamics for every policy in its family; the attractor check probes
whether sampled trajectories all return to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .model import ModelInstance, ensure_valid, min_positive_rate, uniformization_rate

CLAMP_TOL = 1e-12        # post-step: components in [-CLAMP_TOL, 0) snap to 0
NEGATIVE_TOL = 1e-9      # beyond this a step is considered broken
BLOWUP = 1e12
STALL_TOL = 1e-11        # chunk-to-chunk movement below this counts as settled


class Diverged(RuntimeError):
    pass


@dataclass(frozen=True)
class FluidTrajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), num flat states)

    def terminal(self) -> np.ndarray:
        return self.states[-1]


class FluidOde:
    """Precompiled drift for one (model, policy) pair; batch-friendly."""

    def __init__(self, model: ModelInstance, policy):
        ensure_valid(model)
        if not policy.covers(model):
            raise ValueError("policy must cover every (class, state) pair")
        self.model = model
        self.policy = policy
        self.alpha = model.alpha
        index = model.state_index()
        self.order_idx = np.array([index[sid] for sid in policy.order], dtype=int)
        self.gen_passive = scipy.linalg.block_diag(
            *[cls.interior_generator(0) for cls in model.classes]
        )
        self.gen_active = scipy.linalg.block_diag(
            *[cls.interior_generator(1) for cls in model.classes]
        )
        self.inflow = np.concatenate(
            [cls.arrival_rate * cls.entry_dist for cls in model.classes]
        )

    def split(self, x: np.ndarray):
        """Active/passive split of a batch (n, S) or single (S,) mass vector."""
        single = x.ndim == 1
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        active = np.zeros_like(xb)
        if self.order_idx.size:
            masses = np.maximum(xb[:, self.order_idx], 0.0)
            ahead = np.cumsum(masses, axis=1) - masses
            active[:, self.order_idx] = np.minimum(np.maximum(self.alpha - ahead, 0.0), masses)
        passive = xb - active
        if single:
            return active[0], passive[0]
        return active, passive

    def rhs(self, x: np.ndarray) -> np.ndarray:
        active, passive = self.split(x)
        return self.inflow + passive @ self.gen_passive + active @ self.gen_active

    def default_step(self, horizon: float) -> float:
        qbar = uniformization_rate(self.model)
        return 0.01 / qbar if qbar > 0 else horizon / 100.0

    def rk4_span(self, x: np.ndarray, steps: int, h: float) -> np.ndarray:
        """Advance a batch ``steps`` fixed RK4 steps, clamping tiny negatives."""
        for _ in range(steps):
            k1 = self.rhs(x)
            k2 = self.rhs(x + 0.5 * h * k1)
            k3 = self.rhs(x + 0.5 * h * k2)
            k4 = self.rhs(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            low = float(x.min(initial=0.0))
            if low < -NEGATIVE_TOL:
                raise Diverged(f"component reached {low:.3e}; step too coarse")
            if np.abs(x).max(initial=0.0) > BLOWUP:
                raise Diverged("trajectory exceeded the blow-up guard")
            np.copyto(x, 0.0, where=(x < 0.0))
        return x


def fluid_allocation(model: ModelInstance, policy, x, alpha: Optional[float] = None):
    """Greedy budget split: returns (active, passive) mass vectors."""
    ode = FluidOde(model, policy)
    if alpha is not None:
        ode.alpha = float(alpha)
    return ode.split(np.asarray(x, dtype=float))


def fluid_rhs(model: ModelInstance, policy, x) -> np.ndarray:
    """Drift of the total-mass vector under the policy's allocation."""
    return FluidOde(model, policy).rhs(np.asarray(x, dtype=float))


def integrate(
    model: ModelInstance,
    policy,
    x0,
    horizon: float,
    step: Optional[float] = None,
) -> FluidTrajectory:
    """Fixed-step RK4 over [0, horizon], sampling after every step.

    The step is capped at 0.01/qbar; the right-hand side is piecewise linear
    and globally Lipschitz, and the step-halving self-convergence of the
    scheme is asserted in the test suite rather than assumed.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ode = FluidOde(model, policy)
    h_max = ode.default_step(horizon)
    h = min(step, h_max) if step else h_max
    n_steps = max(1, int(np.ceil(horizon / h)))
    h = horizon / n_steps
    x = np.array(x0, dtype=float).reshape(1, -1)
    times = [0.0]
    states = [x[0].copy()]
    for i in range(n_steps):
        x = ode.rk4_span(x, 1, h)
        times.append((i + 1) * h)
        states.append(x[0].copy())
    return FluidTrajectory(times=np.array(times), states=np.array(states))


@dataclass(frozen=True)
class AttractorReport:
    """Outcome of the sampled global-attractor probe.

    A full pass is evidence, not proof (the property quantifies over all
    initial points); any failed sample is a disproof and its terminal point
    is retained.
    """

    converged_count: int
    total_samples: int
    max_terminal_distance: float
    tolerance: float
    horizon: float
    terminals: np.ndarray
    distances: np.ndarray
    initials: np.ndarray

    @property
    def passed(self) -> bool:
        return self.converged_count == self.total_samples

    @property
    def verdict(self) -> str:
        return "pass (sampled)" if self.passed else "fail"

    def worst_terminal(self) -> np.ndarray:
        return self.terminals[int(np.argmax(self.distances))]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "converged": self.converged_count,
            "samples": self.total_samples,
            "max_terminal_distance": self.max_terminal_distance,
            "tolerance": self.tolerance,
            "horizon": self.horizon,
            "terminals": self.terminals.tolist(),
        }


def _initial_samples(model: ModelInstance, x_star_totals: np.ndarray, n_samples: int, seed) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_flat = model.num_states_total
    corners = []
    if model.is_fixed:
        totals = model.fixed_totals()
        max_j = max(cls.num_states for cls in model.classes)
        for c in range(max_j):  # mass piled on one state per class (simplex vertices)
            vec = np.zeros(n_flat)
            off = 0
            for k, cls in enumerate(model.classes):
                vec[off + min(c, cls.num_states - 1)] = totals[k]
                off += cls.num_states
            corners.append(vec)
    else:
        corners.append(np.zeros(n_flat))
        corners.append(2.0 * x_star_totals)
    corners = corners[:n_samples]
    n_random = n_samples - len(corners)
    randoms = np.zeros((n_random, n_flat))
    if model.is_fixed:
        totals = model.fixed_totals()
        off = 0
        for k, cls in enumerate(model.classes):
            j = cls.num_states
            randoms[:, off : off + j] = rng.dirichlet(np.ones(j), size=n_random) * totals[k]
            off += j
    else:
        high = 3.0 * x_star_totals + 1.0
        randoms = rng.uniform(0.0, 1.0, size=(n_random, n_flat)) * high
    return np.vstack([corners, randoms]) if n_random else np.array(corners)


def attractor_check(
    model: ModelInstance,
    policy,
    x_star,
    n_samples: int = 64,
    horizon: Optional[float] = None,
    tol: float = 1e-4,
    seed: int = 0,
    step: Optional[float] = None,
) -> AttractorReport:
    """Integrate sampled initial states and test convergence to ``x_star``.

    Fixed populations sample the per-class mass simplex (plus its vertices);
    dynamic ones sample a box around the equilibrium plus the corners 0 and
    2x*.  Pass requires every terminal point within ``tol`` in sup norm.
    Samples may stop early once provably converged (within 0.2 tol) or
    settled at a distinctly different point; ambiguous ones run the full
    horizon.  Deterministic given the seed.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    target = np.asarray(x_star.totals(), dtype=float)
    ode = FluidOde(model, policy)
    if horizon is None:
        rate = min_positive_rate(model)
        horizon = 200.0 / rate if rate > 0 else 1.0
    h_max = ode.default_step(horizon)
    h = min(step, h_max) if step else h_max

    x = _initial_samples(model, target, n_samples, seed)
    initials = x.copy()
    total_steps = max(1, int(np.ceil(horizon / h)))
    chunk = min(total_steps, max(256, total_steps // 256))

    active = np.arange(n_samples)
    finals = x.copy()
    prev = x.copy()
    done_steps = 0
    while done_steps < total_steps and active.size:
        n = min(chunk, total_steps - done_steps)
        x = ode.rk4_span(x, n, h)
        done_steps += n
        dist = np.abs(x - target).max(axis=1)
        move = np.abs(x - prev).max(axis=1)
        settled_far = (move <= STALL_TOL) & (dist > 10.0 * tol)
        converged_now = dist <= 0.2 * tol
        stop = settled_far | converged_now
        if done_steps >= total_steps:
            stop[:] = True
        if np.any(stop):
            finals[active[stop]] = x[stop]
            keep = ~stop
            active = active[keep]
            x = x[keep]
        prev = x.copy()
    if active.size:
        finals[active] = x

    distances = np.abs(finals - target).max(axis=1)
    converged = distances <= tol
    return AttractorReport(
        converged_count=int(converged.sum()),
        total_samples=n_samples,
        max_terminal_distance=float(distances.max()),
        tolerance=tol,
        horizon=horizon,
        terminals=finals,
        distances=distances,
        initials=initials,
    )
