"""Adaptive receding-horizon plan synthesis over a deterministic process.

The search keeps n clones of the state. Each round, every clone runs a
particle-swarm search over its next h-step action block; if the best clone
improves the current level value by more than its dynamic threshold, all
clones commit their blocks, the worst half is resampled from the best
half, and the horizon/particle schedule resets. Otherwise the schedule
widens: first the horizon h up to h_max, then the particle count p up to
p_max. The run succeeds when a committed level value reaches phi, and
fails when the schedule or the level budget m is exhausted.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np

from .mdp import Mdp, Plan, TrajectoryNode, extract_plan, rollout
from .pso import OptimizationError, PsoParams, optimize, optimize_many

# Spawn-key tags namespacing the derived random streams.
_TAG_CLONE = 1
_TAG_RESAMPLE = 2


@dataclass(frozen=True)
class AresParams:
    phi: float = 1e-3
    m: int = 20
    n: int = 20
    h_max: int = 5
    p_start: int = 10
    p_inc: int = 5
    p_max: int = 40

    def __post_init__(self) -> None:
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.m < 1:
            raise ValueError("level budget m must be >= 1")
        if self.n < 1:
            raise ValueError("clone count n must be >= 1")
        if self.h_max < 1:
            raise ValueError("h_max must be >= 1")
        if not 2 <= self.p_start <= self.p_max:
            raise ValueError("need 2 <= p_start <= p_max")
        if self.p_inc < 1:
            raise ValueError("p_inc must be >= 1")


@dataclass(frozen=True)
class CloneState:
    """One of the n search clones.

    cost is always the process cost of state; prev_cost is the clone's
    cost at the previously committed level, and threshold is its dynamic
    requirement prev_cost / (m - i + 1) for the current target level i.
    node heads the clone's committed history for plan extraction.
    """

    k: int
    state: Any
    cost: float
    prev_cost: float
    threshold: float
    node: TrajectoryNode


@dataclass(frozen=True)
class SimResult:
    """Best h-step block found for one clone, not yet committed."""

    actions: tuple[np.ndarray, ...]
    cost: float
    state: Any


@dataclass(frozen=True)
class LevelRecord:
    index: int
    ell: float
    delta1: float
    horizon: int
    particles: int
    clone_costs: tuple[float, ...]
    wall_ms: float

    @property
    def best_cost(self) -> float:
        return min(self.clone_costs)


@dataclass(frozen=True)
class AresOutcome:
    success: bool
    plan: Optional[Plan]
    levels: tuple[LevelRecord, ...]
    wall_time_s: float
    mean_horizon: float
    final_cost: float
    budget_exhausted: bool = False

    @property
    def levels_used(self) -> int:
        return len(self.levels)

    @property
    def total_actions(self) -> int:
        return sum(r.horizon for r in self.levels)


def dynamic_threshold(j_prev: float, m: int, i: int) -> float:
    """Required cost decrease at level i: spread the remaining gap evenly
    over the remaining levels."""
    if not 1 <= i <= m:
        raise ValueError(f"level index {i} outside 1..{m}")
    if j_prev < 0:
        raise ValueError("costs are nonnegative")
    return j_prev / (m - i + 1)


def next_level_check(ell_prev: float, best_cost: float, delta1: float) -> bool:
    """True iff the best cost improves the level value by strictly more
    than the best clone's threshold."""
    return ell_prev - best_cost > delta1


def clone_seed_stream(
    master_seed: int, clone_id: int, level: int, attempt: int
) -> np.random.Generator:
    """Independent, reproducible stream for one clone's search attempt.

    Streams are derived by hash-splitting the master seed with the
    (clone, level, attempt) coordinates, so identical coordinates give
    identical streams and distinct coordinates give independent ones,
    irrespective of scheduling order.
    """
    ss = np.random.SeedSequence(
        master_seed, spawn_key=(_TAG_CLONE, clone_id, level, attempt)
    )
    return np.random.default_rng(ss)


def _resample_stream(master_seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(_TAG_RESAMPLE,))
    return np.random.default_rng(ss)


def simulate(
    clones: Sequence[CloneState],
    mdp: Mdp,
    h: int,
    p: int,
    pso_params: PsoParams,
    master_seed: int,
    level: int,
    attempt: int,
) -> list[SimResult]:
    """Run one PSO per clone over h-step action blocks.

    Each clone searches independently on its own derived stream; nothing
    is committed here. The returned cost and successor state are always
    recomputed by stepping the process through the best block, so later
    replay of a committed plan reproduces them bit for bit.
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    d = h * mdp.action_dim
    lo = np.tile(mdp.action_low, h)
    hi = np.tile(mdp.action_high, h)
    params = replace(pso_params, p=p)
    if mdp.batch_plan_cost_multi is not None and len(clones) > 1:
        bests = _search_stacked(
            clones, mdp, h, d, lo, hi, params, master_seed, level, attempt
        )
    else:
        bests = [
            _search_single(clone, mdp, h, d, lo, hi, params, master_seed, level, attempt)
            for clone in clones
        ]
    results = []
    for clone, best in zip(clones, bests):
        actions = tuple(
            best.x[t * mdp.action_dim : (t + 1) * mdp.action_dim].copy()
            for t in range(h)
        )
        state = rollout(mdp, clone.state, actions)
        results.append(
            SimResult(actions=actions, cost=float(mdp.cost(state)), state=state)
        )
    return results


def _search_single(
    clone: CloneState, mdp: Mdp, h, d, lo, hi, params, master_seed, level, attempt
):
    rng = clone_seed_stream(master_seed, clone.k, level, attempt)
    if mdp.batch_plan_cost is not None:
        objective = lambda X, s=clone.state: mdp.batch_plan_cost(s, X, h)
        vectorized = True
    else:
        objective = lambda z, s=clone.state: mdp.cost(
            rollout(mdp, s, z.reshape(h, mdp.action_dim))
        )
        vectorized = False
    try:
        return optimize(objective, d, lo, hi, params, rng, vectorized=vectorized)
    except OptimizationError as exc:
        raise OptimizationError(
            f"clone {clone.k}: {exc}", position=exc.position
        ) from exc


def _search_stacked(
    clones, mdp: Mdp, h, d, lo, hi, params, master_seed, level, attempt
):
    """All clones' swarms advance in lockstep; one objective sweep scores
    every active swarm. Bit-identical to the per-clone route because each
    swarm keeps its own derived stream and every cost kernel is
    row-deterministic."""
    states = [clone.state for clone in clones]
    ids = [clone.k for clone in clones]

    def objective_multi(X: np.ndarray, idx: np.ndarray) -> np.ndarray:
        f = np.asarray(
            mdp.batch_plan_cost_multi([states[i] for i in idx], X, h), dtype=float
        )
        bad = ~np.isfinite(f)
        if bad.any():
            s, j = (int(v[0]) for v in np.nonzero(bad))
            raise OptimizationError(
                f"clone {ids[idx[s]]}: objective returned {f[s, j]!r} "
                f"at position {X[s, j]!r}",
                position=X[s, j].copy(),
            )
        return f

    rngs = [
        clone_seed_stream(master_seed, clone.k, level, attempt)
        for clone in clones
    ]
    return optimize_many(objective_multi, len(clones), d, lo, hi, params, rngs)


def resample(
    clones: Sequence[CloneState], rng: np.random.Generator
) -> list[CloneState]:
    """Keep the best half, refill the rest with uniform copies of it.

    Clones are ranked ascending by cost with ties broken by clone id; the
    first ceil(n/2) ranks survive, and every other slot receives a full
    copy (state, history, cost) of a uniformly chosen survivor. Clone ids
    are reassigned 0..n-1 in rank order.
    """
    n = len(clones)
    if n == 0:
        raise ValueError("cannot resample an empty clone list")
    order = sorted(range(n), key=lambda j: (clones[j].cost, clones[j].k))
    keep = order[: math.ceil(n / 2)]
    out = []
    for rank in range(n):
        if rank < len(keep):
            src = clones[keep[rank]]
        else:
            src = clones[keep[int(rng.integers(len(keep)))]]
        out.append(replace(src, k=rank))
    return out


def ares_plan(
    mdp: Mdp,
    s0: Any,
    params: AresParams,
    master_seed: int,
    pso_params: Optional[PsoParams] = None,
    budget_s: Optional[float] = None,
) -> AresOutcome:
    """Synthesize a plan from s0 down to cost phi. Failure is a normal
    outcome (schedule exhausted, level budget spent, or wall-clock budget
    hit), never an exception."""
    if pso_params is None:
        pso_params = PsoParams()
    t0 = time.perf_counter()
    j0 = float(mdp.cost(s0))
    if not np.isfinite(j0):
        raise ValueError(f"initial cost must be finite, got {j0!r}")

    def outcome(
        success: bool,
        plan: Optional[Plan],
        levels: list[LevelRecord],
        final_cost: float,
        budget_exhausted: bool = False,
    ) -> AresOutcome:
        recs = tuple(levels)
        mean_h = (
            float(np.mean([r.horizon for r in recs])) if recs else 0.0
        )
        return AresOutcome(
            success=success,
            plan=plan,
            levels=recs,
            wall_time_s=time.perf_counter() - t0,
            mean_horizon=mean_h,
            final_cost=final_cost,
            budget_exhausted=budget_exhausted,
        )

    root = TrajectoryNode(state=s0, cost=j0, level=0)
    if j0 <= params.phi:
        return outcome(True, extract_plan(root), [], j0)

    delta0 = dynamic_threshold(j0, params.m, 1)
    clones = [
        CloneState(k=k, state=s0, cost=j0, prev_cost=j0, threshold=delta0, node=root)
        for k in range(params.n)
    ]
    resample_rng = _resample_stream(master_seed)
    ell = j0
    i = 1
    h = 1
    p = params.p_start
    attempt = 0
    levels: list[LevelRecord] = []
    level_t0 = time.perf_counter()

    while True:
        if budget_s is not None and time.perf_counter() - t0 > budget_s:
            return outcome(False, None, levels, ell, budget_exhausted=True)
        results = simulate(
            clones, mdp, h, p, pso_params, master_seed, i, attempt
        )
        best_j = min(
            range(len(clones)),
            key=lambda j: (results[j].cost, clones[j].k),
        )
        j_hat = results[best_j].cost
        delta1 = clones[best_j].threshold
        if next_level_check(ell, j_hat, delta1):
            committed = []
            for clone, res in zip(clones, results):
                node = TrajectoryNode(
                    state=res.state,
                    cost=res.cost,
                    level=i,
                    action_block=res.actions,
                    parent=clone.node,
                )
                committed.append(
                    replace(clone, state=res.state, cost=res.cost, node=node)
                )
            now = time.perf_counter()
            levels.append(
                LevelRecord(
                    index=i,
                    ell=j_hat,
                    delta1=delta1,
                    horizon=h,
                    particles=p,
                    clone_costs=tuple(r.cost for r in results),
                    wall_ms=(now - level_t0) * 1e3,
                )
            )
            level_t0 = now
            ell = j_hat
            if ell <= params.phi:
                winner = min(committed, key=lambda c: (c.cost, c.k))
                plan = extract_plan(winner.node)
                return outcome(True, plan, levels, float(winner.cost))
            i += 1
            if i > params.m:
                return outcome(False, None, levels, ell)
            clones = resample(committed, resample_rng)
            clones = [
                replace(
                    c,
                    prev_cost=c.cost,
                    threshold=dynamic_threshold(c.cost, params.m, i),
                )
                for c in clones
            ]
            h = 1
            p = params.p_start
            attempt = 0
        else:
            attempt += 1
            if h < params.h_max:
                h += 1
            elif p < params.p_max:
                h = 1
                p = min(p + params.p_inc, params.p_max)
            else:
                return outcome(False, None, levels, ell)


def level_log_rows(levels: Sequence[LevelRecord]) -> list[str]:
    """CSV rows (level, ell, delta1, h, p, best_cost, wall_ms)."""
    rows = ["level,ell,delta1,h,p,best_cost,wall_ms"]
    for r in levels:
        rows.append(
            f"{r.index},{r.ell!r},{r.delta1!r},{r.horizon},{r.particles},"
            f"{r.best_cost!r},{r.wall_ms:.3f}"
        )
    return rows


def write_level_log(path: str, levels: Sequence[LevelRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(level_log_rows(levels)))
        fh.write("\n")
