"""Particle-swarm minimization over a box, seeded and fully deterministic.

The swarm state lives in (p, D) arrays so objective sweeps vectorize; the
per-particle update contract is exposed separately and shares the same
velocity kernel. Randomness comes only from the generator handed in:
fixed draw order (positions, velocities, neighborhoods at init; u1, u2
per iteration) makes runs bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

STALL_TOL = 1e-9
INERTIA_DECAY = 0.97


class OptimizationError(RuntimeError):
    """The objective returned a non-finite value; carries the position."""

    def __init__(self, message: str, position: Optional[np.ndarray] = None):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class PsoParams:
    p: int = 40
    omega_min: float = 0.1
    omega_max: float = 1.1
    y1: float = 1.49
    y2: float = 1.49
    max_iterations: int = 100
    stall_iterations: int = 20
    neighbor_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.p < 2:
            raise ValueError("particle count must be >= 2")
        if self.y1 < 0 or self.y2 < 0:
            raise ValueError("adjustment weights must be nonnegative")
        if not 0 < self.omega_min <= self.omega_max:
            raise ValueError("need 0 < omega_min <= omega_max")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.stall_iterations < 1:
            raise ValueError("stall_iterations must be >= 1")
        if not 0 <= self.neighbor_fraction <= 1:
            raise ValueError("neighbor_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class Particle:
    """One swarm member. best_cost equals the objective at best_x exactly
    once the initial evaluation has run; it never increases afterwards."""

    x: np.ndarray
    v: np.ndarray
    best_x: np.ndarray
    best_cost: float
    neighbors: tuple[int, ...]


@dataclass
class Swarm:
    """Array-of-structs swarm state; row j is particle j."""

    x: np.ndarray                    # (p, d)
    v: np.ndarray                    # (p, d)
    best_x: np.ndarray               # (p, d)
    best_cost: np.ndarray            # (p,)
    neighbors: tuple[np.ndarray, ...]
    lo: np.ndarray
    hi: np.ndarray

    def particle(self, j: int) -> Particle:
        return Particle(
            x=self.x[j].copy(),
            v=self.v[j].copy(),
            best_x=self.best_x[j].copy(),
            best_cost=float(self.best_cost[j]),
            neighbors=tuple(int(i) for i in self.neighbors[j]),
        )


class OptimizeResult(NamedTuple):
    x: np.ndarray
    cost: float
    iterations: int


def _as_bounds(d: int, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,)).copy()
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise ValueError("bounds must be finite")
    if not (lo < hi).all():
        raise ValueError("lower bounds must be strictly below upper bounds")
    return lo, hi


def init_swarm(
    rng: np.random.Generator, d: int, lo, hi, params: PsoParams
) -> Swarm:
    """Seeded swarm: positions uniform in the box, velocities uniform in
    [-(hi-lo), hi-lo] per coordinate, personal bests at the start positions
    (costs unset until the first evaluation), and one random neighborhood
    per particle of size uniform in [max(2, ceil(frac*p)), p]."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    lo, hi = _as_bounds(d, lo, hi)
    p = params.p
    span = hi - lo
    x = rng.uniform(lo, hi, size=(p, d))
    v = rng.uniform(-span, span, size=(p, d))
    k_min = min(p, max(2, math.ceil(params.neighbor_fraction * p)))
    neighbors = []
    for _ in range(p):
        k = int(rng.integers(k_min, p + 1))
        neighbors.append(np.sort(rng.choice(p, size=k, replace=False)))
    return Swarm(
        x=x,
        v=v,
        best_x=x.copy(),
        best_cost=np.full(p, np.inf),
        neighbors=tuple(neighbors),
        lo=lo,
        hi=hi,
    )


def _velocity_update(x, v, best_x, x_g, u1, u2, omega, y1, y2):
    return omega * v + y1 * u1 * (best_x - x) + y2 * u2 * (x_g - x)


def _move(x, v_new, lo, hi):
    x_new = x + v_new
    clipped = (x_new < lo) | (x_new > hi)
    x_new = np.clip(x_new, lo, hi)
    v_new = np.where(clipped, 0.0, v_new)
    return x_new, v_new


def update_particle(
    particle: Particle,
    x_g: np.ndarray,
    u1: np.ndarray,
    u2: np.ndarray,
    params: PsoParams,
    omega: Optional[float] = None,
    lo=None,
    hi=None,
) -> Particle:
    """One velocity/position update against neighborhood best x_g.

    v' = omega*v + y1*u1*(best_x - x) + y2*u2*(x_g - x), componentwise;
    x' = x + v', clipped to [lo, hi] when bounds are given, with velocity
    zeroed in clipped coordinates. Personal bests are untouched; they
    update after the next objective evaluation.
    """
    w = params.omega_max if omega is None else float(omega)
    v_new = _velocity_update(
        particle.x, particle.v, particle.best_x,
        np.asarray(x_g, dtype=float), np.asarray(u1, dtype=float),
        np.asarray(u2, dtype=float), w, params.y1, params.y2,
    )
    if lo is not None or hi is not None:
        if lo is None or hi is None:
            raise ValueError("give both bounds or neither")
        d = particle.x.shape[0]
        lo, hi = _as_bounds(d, lo, hi)
        x_new, v_new = _move(particle.x, v_new, lo, hi)
    else:
        x_new = particle.x + v_new
    return replace(particle, x=x_new, v=v_new)


def _evaluate(
    objective: Callable, X: np.ndarray, vectorized: bool
) -> np.ndarray:
    if vectorized:
        f = np.asarray(objective(X), dtype=float)
        if f.shape != (X.shape[0],):
            raise ValueError(
                f"vectorized objective returned shape {f.shape}, "
                f"expected ({X.shape[0]},)"
            )
    else:
        f = np.array([float(objective(X[j])) for j in range(X.shape[0])])
    if not np.isfinite(f).all():
        j = int(np.nonzero(~np.isfinite(f))[0][0])
        raise OptimizationError(
            f"objective returned {f[j]!r} at position {X[j]!r}",
            position=X[j].copy(),
        )
    return f


def optimize(
    objective: Callable,
    d: int,
    lo,
    hi,
    params: PsoParams,
    rng: np.random.Generator,
    vectorized: bool = False,
    trace_path: Optional[str] = None,
) -> OptimizeResult:
    """Minimize objective over the box; returns (best x, best cost, iterations).

    The best-ever evaluated position is returned, and the global best cost
    is non-increasing over iterations. Terminates at max_iterations, or
    earlier after stall_iterations sweeps without global improvement above
    a fixed tolerance. Inertia starts at omega_max and decays by a constant
    factor on every stalled sweep, floored at omega_min. With vectorized
    True the objective receives the whole (p, d) position matrix.
    """
    swarm = init_swarm(rng, d, lo, hi, params)
    p = params.p
    f = _evaluate(objective, swarm.x, vectorized)
    swarm.best_cost = f.copy()
    g = int(np.argmin(swarm.best_cost))
    gbest_x = swarm.best_x[g].copy()
    gbest_cost = float(swarm.best_cost[g])

    omega = params.omega_max
    stall = 0
    iterations = 0
    trace_rows: list[str] = []
    for it in range(1, params.max_iterations + 1):
        iterations = it
        # Neighborhood bests from current personal bests, one row per particle.
        x_g = np.empty_like(swarm.x)
        for j in range(p):
            nbrs = swarm.neighbors[j]
            x_g[j] = swarm.best_x[nbrs[np.argmin(swarm.best_cost[nbrs])]]
        u1 = rng.random((p, d))
        u2 = rng.random((p, d))
        v_new = _velocity_update(
            swarm.x, swarm.v, swarm.best_x, x_g, u1, u2,
            omega, params.y1, params.y2,
        )
        swarm.x, swarm.v = _move(swarm.x, v_new, swarm.lo, swarm.hi)
        f = _evaluate(objective, swarm.x, vectorized)
        improved = f < swarm.best_cost
        swarm.best_x[improved] = swarm.x[improved]
        swarm.best_cost[improved] = f[improved]
        g = int(np.argmin(swarm.best_cost))
        new_gbest = float(swarm.best_cost[g])
        if gbest_cost - new_gbest > STALL_TOL:
            stall = 0
        else:
            stall += 1
            omega = max(omega * INERTIA_DECAY, params.omega_min)
        if new_gbest < gbest_cost:
            gbest_cost = new_gbest
            gbest_x = swarm.best_x[g].copy()
        if trace_path is not None:
            trace_rows.append(f"{it},{gbest_cost!r}")
        if stall >= params.stall_iterations:
            break
    if trace_path is not None:
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("iteration,best_cost\n")
            fh.write("\n".join(trace_rows))
            fh.write("\n")
    return OptimizeResult(gbest_x, gbest_cost, iterations)


def optimize_many(
    objective_multi: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_swarms: int,
    d: int,
    lo,
    hi,
    params: PsoParams,
    rngs: Sequence[np.random.Generator],
    max_neighbor_pad: Optional[int] = None,
) -> list[OptimizeResult]:
    """Run n independent swarms in lockstep, one batched sweep per iteration.

    Distinct swarms never interact: swarm s draws only from rngs[s], keeps
    its own inertia/stall state, and stops by its own criteria. The result
    list is bit-identical to calling optimize once per swarm with the same
    generators; the batching exists purely so one objective call can score
    every active swarm at once. objective_multi receives the stacked
    positions (a, p, d) of the currently active swarms and their swarm
    indices (a,), and returns costs (a, p).
    """
    if n_swarms < 1:
        raise ValueError("need at least one swarm")
    if len(rngs) != n_swarms:
        raise ValueError("need exactly one generator per swarm")
    lo_arr, hi_arr = _as_bounds(d, lo, hi)
    p = params.p
    swarms = [init_swarm(rngs[s], d, lo_arr, hi_arr, params) for s in range(n_swarms)]
    x = np.stack([sw.x for sw in swarms])               # (n, p, d)
    v = np.stack([sw.v for sw in swarms])
    best_x = x.copy()
    k_max = max(len(nb) for sw in swarms for nb in sw.neighbors)
    if max_neighbor_pad is not None:
        k_max = max(k_max, max_neighbor_pad)
    # Pad each neighborhood by repeating its last entry; appended
    # duplicates can never win an argmin tie, so results are unchanged.
    neighbors = np.empty((n_swarms, p, k_max), dtype=np.intp)
    for s, sw in enumerate(swarms):
        for j, nb in enumerate(sw.neighbors):
            neighbors[s, j, : len(nb)] = nb
            neighbors[s, j, len(nb) :] = nb[-1]

    all_idx = np.arange(n_swarms)
    f = _check_finite_multi(objective_multi(x, all_idx), x)
    best_cost = f.copy()                                # (n, p)
    arg = np.argmin(best_cost, axis=1)
    gbest_cost = best_cost[all_idx, arg]
    gbest_x = best_x[all_idx, arg].copy()

    omega = np.full(n_swarms, params.omega_max)
    stall = np.zeros(n_swarms, dtype=int)
    iterations = np.zeros(n_swarms, dtype=int)
    active = np.ones(n_swarms, dtype=bool)
    u1 = np.empty((n_swarms, p, d))
    u2 = np.empty((n_swarms, p, d))
    for it in range(1, params.max_iterations + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        iterations[idx] = it
        bc = best_cost[idx[:, None, None], neighbors[idx]]      # (a, p, k)
        pick = np.argmin(bc, axis=-1)
        winner = np.take_along_axis(neighbors[idx], pick[..., None], axis=-1)[..., 0]
        x_g = best_x[idx[:, None], winner]                      # (a, p, d)
        for s in idx:
            u1[s] = rngs[s].random((p, d))
            u2[s] = rngs[s].random((p, d))
        v_new = _velocity_update(
            x[idx], v[idx], best_x[idx], x_g, u1[idx], u2[idx],
            omega[idx][:, None, None], params.y1, params.y2,
        )
        x_new, v_new = _move(x[idx], v_new, lo_arr, hi_arr)
        x[idx] = x_new
        v[idx] = v_new
        f = _check_finite_multi(objective_multi(x_new, idx), x_new)
        improved = f < best_cost[idx]
        rows = np.nonzero(improved)
        best_x[idx[rows[0]], rows[1]] = x_new[rows[0], rows[1]]
        best_cost[idx[rows[0]], rows[1]] = f[rows[0], rows[1]]
        arg = np.argmin(best_cost[idx], axis=1)
        new_g = best_cost[idx, arg]
        stalled = gbest_cost[idx] - new_g <= STALL_TOL
        stall[idx] = np.where(stalled, stall[idx] + 1, 0)
        omega[idx] = np.where(
            stalled, np.maximum(omega[idx] * INERTIA_DECAY, params.omega_min),
            omega[idx],
        )
        upd = new_g < gbest_cost[idx]
        gbest_cost[idx[upd]] = new_g[upd]
        gbest_x[idx[upd]] = best_x[idx[upd], arg[upd]]
        active[idx[stall[idx] >= params.stall_iterations]] = False
    return [
        OptimizeResult(gbest_x[s].copy(), float(gbest_cost[s]), int(iterations[s]))
        for s in range(n_swarms)
    ]


def _check_finite_multi(f, X) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != X.shape[:2]:
        raise ValueError(
            f"multi-swarm objective returned shape {f.shape}, "
            f"expected {X.shape[:2]}"
        )
    if not np.isfinite(f).all():
        s, j = (int(i[0]) for i in np.nonzero(~np.isfinite(f)))
        raise OptimizationError(
            f"objective returned {f[s, j]!r} at position {X[s, j]!r}",
            position=X[s, j].copy(),
        )
    return f
