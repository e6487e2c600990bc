"""Monte-Carlo evaluation of the planner over random initial flocks.

Sample sizes follow the additive (epsilon, delta) scheme
N = ceil(4 ln(2/delta) / epsilon^2); each experiment is a pure function
of (EvalParams, index), so runs are bit-reproducible for a fixed master
seed at any worker count. Wall-time measurement is the one impurity and
can be switched off for byte-stable outputs.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import AresParams, ares_plan
from .flock import FlockParams, flock_mdp, random_initial
from .pso import PsoParams

METRIC_KEYS = ("cost", "time_s", "levels", "actions", "mean_h")
RECORDS_CSV_HEADER = "index,seed,Z,cost,time_s,levels,actions,mean_h"


@dataclass(frozen=True)
class EvalParams:
    """One evaluation campaign: sample sizing, model, planner, dispatch."""

    b: int = 7
    epsilon: float = 0.05
    delta: float = 0.01
    n: Optional[int] = None          # explicit N override; formula N if None
    budget_s: Optional[float] = 120.0  # wall-clock budget per experiment
    workers: int = 1
    master_seed: int = 0
    measure_time: bool = True        # False writes time_s = 0.0 for byte-stable output
    flock: FlockParams = field(default_factory=FlockParams)
    ares: AresParams = field(default_factory=AresParams)
    pso: PsoParams = field(default_factory=PsoParams)

    def __post_init__(self) -> None:
        if self.b < 1:
            raise ValueError("bird count must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.n is not None and self.n < 0:
            raise ValueError("explicit N must be nonnegative")
        if self.budget_s is not None and self.budget_s <= 0:
            raise ValueError("budget_s must be positive when set")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master seed must fit in 64 bits")

    @property
    def phi(self) -> float:
        return self.ares.phi


@dataclass(frozen=True)
class ExperimentRecord:
    index: int
    seed: int
    z: int
    cost: float
    time_s: float
    levels: int
    actions: int
    mean_h: float
    budget_exhausted: bool = False


def required_samples(epsilon: float, delta: float) -> int:
    """Additive-error Bernoulli sample size: N = ceil(4 ln(2/delta) / eps^2)."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.ceil(4.0 * math.log(2.0 / delta) / (epsilon * epsilon))


def epsilon_for_samples(n: int, delta: float) -> float:
    """Invert required_samples: the absolute error N samples buy at delta."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(4.0 * math.log(2.0 / delta) / n)


def success_indicator(record: ExperimentRecord, phi: float) -> int:
    """Bernoulli outcome: 1 iff the final cost reached phi (non-strict)."""
    return 1 if record.cost <= phi else 0


def experiment_seed(master_seed: int, index: int) -> int:
    """64-bit per-experiment seed hashed from (master seed, index).

    Documented so single experiments can be reproduced in isolation:
    first 8 bytes, big-endian, of sha256(b"ares-experiment" || master ||
    index) with both integers as 8-byte big-endian.
    """
    payload = (
        b"ares-experiment"
        + int(master_seed).to_bytes(8, "big")
        + int(index).to_bytes(8, "big")
    )
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def run_experiment(params: EvalParams, index: int) -> ExperimentRecord:
    """One planning experiment; pure function of (params, index)."""
    seed = experiment_seed(params.master_seed, index)
    rng = np.random.default_rng(seed)
    c0 = random_initial(rng, params.b, params.flock)
    mdp = flock_mdp(params.flock, params.b)
    t0 = time.perf_counter()
    out = ares_plan(
        mdp,
        c0,
        params.ares,
        master_seed=seed,
        pso_params=params.pso,
        budget_s=params.budget_s,
    )
    elapsed = time.perf_counter() - t0
    return ExperimentRecord(
        index=index,
        seed=seed,
        z=success_indicator_from_cost(out.final_cost, params.ares.phi),
        cost=float(out.final_cost),
        time_s=elapsed if params.measure_time else 0.0,
        levels=out.levels_used,
        actions=out.total_actions,
        mean_h=out.mean_horizon,
        budget_exhausted=out.budget_exhausted,
    )


def success_indicator_from_cost(cost: float, phi: float) -> int:
    return 1 if cost <= phi else 0


def _run_one(job: tuple[EvalParams, int]) -> ExperimentRecord:
    return run_experiment(job[0], job[1])


def run_experiments(params: EvalParams) -> list[ExperimentRecord]:
    """Run the campaign; records come back in index order regardless of
    scheduling, and are identical for any worker count."""
    n = params.n if params.n is not None else required_samples(
        params.epsilon, params.delta
    )
    if n == 0:
        return []
    if params.workers <= 1:
        return [run_experiment(params, i) for i in range(n)]
    jobs = [(params, i) for i in range(n)]
    chunk = max(1, n // (8 * params.workers))
    with ProcessPoolExecutor(max_workers=params.workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=chunk))


# ---------------------------------------------------------------------------
# aggregation and persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricStats:
    minimum: float
    maximum: float
    average: float
    std: Optional[float]  # sample std (divisor N-1); absent for cohorts < 2


@dataclass(frozen=True)
class SummaryTable:
    total_count: int
    success_count: int
    success_rate: Optional[float]    # the Bernoulli mean estimate; None if no runs
    epsilon: float
    delta: float
    formula_n: int
    budget_exhausted_count: int
    successful: dict[str, MetricStats]
    total: dict[str, MetricStats]
    notes: tuple[str, ...]


def _cohort_stats(records: Sequence[ExperimentRecord]) -> dict[str, MetricStats]:
    if not records:
        return {}
    out = {}
    for key in METRIC_KEYS:
        values = np.array([getattr(r, key) for r in records], float)
        std = float(np.std(values, ddof=1)) if len(values) >= 2 else None
        out[key] = MetricStats(
            minimum=float(values.min()),
            maximum=float(values.max()),
            average=float(values.mean()),
            std=std,
        )
    return out


def summarize(
    records: Sequence[ExperimentRecord], epsilon: float, delta: float
) -> SummaryTable:
    total = list(records)
    successful = [r for r in total if r.z == 1]
    formula_n = required_samples(epsilon, delta)
    notes = [
        f"formula-exact N for (epsilon={epsilon}, delta={delta}) is "
        f"{formula_n}; {len(total)} experiments were run"
    ]
    committed_states = sum(r.levels for r in total)
    if committed_states > 0:
        eps_states = epsilon_for_samples(committed_states, delta)
        notes.append(
            f"reinterpreting each committed level as an independent state "
            f"gives {committed_states} samples, worth epsilon="
            f"{eps_states:.4f} at delta={delta}"
        )
    return SummaryTable(
        total_count=len(total),
        success_count=len(successful),
        success_rate=(len(successful) / len(total)) if total else None,
        epsilon=epsilon,
        delta=delta,
        formula_n=formula_n,
        budget_exhausted_count=sum(1 for r in total if r.budget_exhausted),
        successful=_cohort_stats(successful),
        total=_cohort_stats(total),
        notes=tuple(notes),
    )


def records_csv_lines(records: Sequence[ExperimentRecord]) -> list[str]:
    lines = [RECORDS_CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.index},{r.seed},{r.z},{r.cost!r},{r.time_s!r},"
            f"{r.levels},{r.actions},{r.mean_h!r}"
        )
    return lines


def write_records_csv(path: str, records: Sequence[ExperimentRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(records_csv_lines(records)))
        fh.write("\n")


def summary_to_dict(table: SummaryTable) -> dict:
    def stats_doc(stats: dict[str, MetricStats]) -> dict:
        return {
            key: {
                "min": s.minimum,
                "max": s.maximum,
                "avg": s.average,
                "std": s.std,
            }
            for key, s in stats.items()
        }

    return {
        "total_count": table.total_count,
        "success_count": table.success_count,
        "success_rate": table.success_rate,
        "epsilon": table.epsilon,
        "delta": table.delta,
        "formula_n": table.formula_n,
        "budget_exhausted_count": table.budget_exhausted_count,
        "successful": stats_doc(table.successful),
        "total": stats_doc(table.total),
        "notes": list(table.notes),
    }


def write_summary_json(path: str, table: SummaryTable) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary_to_dict(table), fh, indent=2)
        fh.write("\n")


def format_summary_text(table: SummaryTable) -> str:
    """Fixed-width text table: one row per metric, Successful and Total
    cohorts side by side with Min/Max/Avg/Std columns."""

    def cell(value: Optional[float]) -> str:
        if value is None:
            return "-".rjust(10)
        return f"{value:10.4g}"

    headers = f"{'metric':<8}" + "".join(
        f"{h:>10}" for h in
        ("S.min", "S.max", "S.avg", "S.std", "T.min", "T.max", "T.avg", "T.std")
    )
    lines = [headers]
    for key in METRIC_KEYS:
        s = table.successful.get(key)
        t = table.total.get(key)
        row = f"{key:<8}"
        for stats in (s, t):
            if stats is None:
                row += cell(None) * 4
            else:
                row += (
                    cell(stats.minimum) + cell(stats.maximum)
                    + cell(stats.average) + cell(stats.std)
                )
        lines.append(row)
    rate = "n/a" if table.success_rate is None else f"{table.success_rate:.4f}"
    lines.append(
        f"success: {table.success_count}/{table.total_count} (rate {rate}) "
        f"at (epsilon={table.epsilon}, delta={table.delta})"
    )
    if table.budget_exhausted_count:
        lines.append(f"budget-exhausted runs: {table.budget_exhausted_count}")
    lines.extend(table.notes)
    return "\n".join(lines)
