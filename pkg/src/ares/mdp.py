"""Deterministic decision processes, rollouts, and committed-plan bookkeeping.

States are opaque to this module. Actions are flat float vectors of a fixed
per-step dimensionality declared by each process. Plans are sequences of
action blocks; each block was committed as one unit and carries its horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np

State = Any


def _identity(x: Any) -> Any:
    return x


@dataclass(frozen=True)
class Mdp:
    """A deterministic decision process over opaque states.

    step and cost must be pure functions: same inputs give the same outputs,
    bit for bit. cost must be finite and nonnegative on reachable states.
    action_low/action_high give the per-coordinate search box handed to
    optimizers; step itself accepts any vector of the right length.

    batch_plan_cost, if provided, maps (state, X, h) with X of shape
    (n, h * action_dim) to the n costs reached by applying each row as h
    consecutive actions. It exists so optimizers can evaluate whole swarms
    in one sweep; it must agree with iterating step up to float roundoff,
    so committed results are always recomputed through step.
    """

    action_dim: int
    step: Callable[[State, np.ndarray], State]
    cost: Callable[[State], float]
    action_low: np.ndarray
    action_high: np.ndarray
    batch_plan_cost: Optional[Callable[[State, np.ndarray, int], np.ndarray]] = None
    # Optional wider shortcut: (states, X of shape (len(states), n, h*dim), h)
    # -> (len(states), n) costs, row-identical to batch_plan_cost per state.
    # Lets one sweep score several independent searches at once.
    batch_plan_cost_multi: Optional[
        Callable[[Sequence[State], np.ndarray, int], np.ndarray]
    ] = None
    encode_state: Callable[[State], Any] = _identity
    decode_state: Callable[[Any], State] = _identity

    def __post_init__(self) -> None:
        if self.action_dim < 1:
            raise ValueError(f"action_dim must be >= 1, got {self.action_dim}")
        lo = np.asarray(self.action_low, dtype=float)
        hi = np.asarray(self.action_high, dtype=float)
        if lo.shape != (self.action_dim,) or hi.shape != (self.action_dim,):
            raise ValueError("action bounds must have shape (action_dim,)")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("action bounds must be finite")
        if not (lo < hi).all():
            raise ValueError("action_low must be strictly below action_high")
        object.__setattr__(self, "action_low", lo)
        object.__setattr__(self, "action_high", hi)


def rollout(mdp: Mdp, state: State, actions: Sequence[np.ndarray]) -> State:
    """Apply actions in order; an empty sequence returns the input state."""
    for a in actions:
        arr = np.asarray(a, dtype=float)
        if arr.shape != (mdp.action_dim,):
            raise ValueError(
                f"action has shape {arr.shape}, expected ({mdp.action_dim},)"
            )
        state = mdp.step(state, arr)
    return state


@dataclass(frozen=True)
class TrajectoryNode:
    """One committed point of a clone's history.

    The root node has no parent and no incoming action block; every other
    node records the block of actions that produced its state from the
    parent's. Nodes are shared between clones after resampling, so the
    chain is followed by reference, never mutated.
    """

    state: State
    cost: float
    level: int
    action_block: Optional[tuple[np.ndarray, ...]] = None
    parent: Optional["TrajectoryNode"] = None


@dataclass(frozen=True)
class Plan:
    """A committed action sequence, grouped into per-level blocks."""

    initial_state: State
    blocks: tuple[tuple[np.ndarray, ...], ...]
    final_state: State
    final_cost: float

    @property
    def horizons(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    @property
    def total_actions(self) -> int:
        return sum(len(b) for b in self.blocks)

    def actions(self) -> Iterator[np.ndarray]:
        for block in self.blocks:
            yield from block


def extract_plan(final: TrajectoryNode) -> Plan:
    """Walk parent links back to the root and return the committed plan.

    Raises RuntimeError on a corrupt history: a cycle in the parent chain,
    a non-root node without an action block, or a root carrying one.
    """
    chain: list[TrajectoryNode] = []
    seen: set[int] = set()
    node: Optional[TrajectoryNode] = final
    while node is not None:
        if id(node) in seen:
            raise RuntimeError("cyclic parent chain in trajectory history")
        seen.add(id(node))
        chain.append(node)
        node = node.parent
    chain.reverse()
    root = chain[0]
    if root.action_block is not None:
        raise RuntimeError("history root carries an incoming action block")
    blocks: list[tuple[np.ndarray, ...]] = []
    for item in chain[1:]:
        if item.action_block is None:
            raise RuntimeError("non-root trajectory node lacks an action block")
        blocks.append(tuple(np.asarray(a, dtype=float) for a in item.action_block))
    return Plan(
        initial_state=root.state,
        blocks=tuple(blocks),
        final_state=final.state,
        final_cost=float(final.cost),
    )


def replay_plan(mdp: Mdp, plan: Plan) -> tuple[State, float]:
    """Re-execute a plan from its initial state; returns (state, cost)."""
    state = plan.initial_state
    for block in plan.blocks:
        state = rollout(mdp, state, block)
    return state, float(mdp.cost(state))


def plan_to_doc(plan: Plan, mdp: Mdp, seed: int, params_digest: str) -> dict:
    """JSON-ready document for a plan. Floats round-trip exactly via repr."""
    return {
        "initial_state": mdp.encode_state(plan.initial_state),
        "levels": [
            {
                "horizon": len(block),
                "actions": [[float(x) for x in a] for a in block],
            }
            for block in plan.blocks
        ],
        "final_cost": float(plan.final_cost),
        "seed": int(seed),
        "params_digest": str(params_digest),
    }


def plan_from_doc(doc: dict, mdp: Mdp) -> tuple[Plan, dict]:
    """Parse a plan document and replay it through the process.

    Returns (plan, meta). The plan's final state and cost are recomputed by
    replay; meta holds the document's stored claims ("final_cost", "seed",
    "params_digest") for the caller to verify against. Malformed documents
    raise ValueError.
    """
    try:
        initial = mdp.decode_state(doc["initial_state"])
        levels = doc["levels"]
        blocks = []
        for entry in levels:
            actions = tuple(
                np.asarray(a, dtype=float) for a in entry["actions"]
            )
            if int(entry["horizon"]) != len(actions):
                raise ValueError("level horizon disagrees with action count")
            for a in actions:
                if a.shape != (mdp.action_dim,):
                    raise ValueError("action length disagrees with the process")
            blocks.append(actions)
        meta = {
            "final_cost": float(doc["final_cost"]),
            "seed": int(doc["seed"]),
            "params_digest": str(doc["params_digest"]),
        }
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed plan document: {exc!r}") from exc
    state = initial
    for block in blocks:
        state = rollout(mdp, state, block)
    plan = Plan(
        initial_state=initial,
        blocks=tuple(blocks),
        final_state=state,
        final_cost=float(mdp.cost(state)),
    )
    return plan, meta


def save_plan(path: str, plan: Plan, mdp: Mdp, seed: int, params_digest: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_doc(plan, mdp, seed, params_digest), fh, indent=2)
        fh.write("\n")


def load_plan(path: str, mdp: Mdp) -> tuple[Plan, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("plan document must be a JSON object")
    return plan_from_doc(doc, mdp)


def integrator_mdp() -> Mdp:
    """1-D integrator on the unit action box: x' = x + a, J(x) = |x|.

    Small enough to brute-force, used as a reference problem in tests.
    """

    def step(x: float, a: np.ndarray) -> float:
        return float(x) + float(a[0])

    def cost(x: float) -> float:
        return abs(float(x))

    def batch_plan_cost(x: float, X: np.ndarray, h: int) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(len(X), h)
        return np.abs(float(x) + X.sum(axis=1))

    return Mdp(
        action_dim=1,
        step=step,
        cost=cost,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
        batch_plan_cost=batch_plan_cost,
        encode_state=lambda s: float(s),
        decode_state=lambda d: float(d),
    )
