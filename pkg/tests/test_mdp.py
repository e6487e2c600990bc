import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ares.mdp import (
    Mdp,
    Plan,
    TrajectoryNode,
    extract_plan,
    integrator_mdp,
    load_plan,
    plan_from_doc,
    plan_to_doc,
    replay_plan,
    rollout,
    save_plan,
)


def chain(mdp, start, blocks):
    """Build a committed history by hand: one node per block."""
    state = start
    node = TrajectoryNode(state=state, cost=mdp.cost(state), level=0)
    for i, block in enumerate(blocks, start=1):
        state = rollout(mdp, state, block)
        node = TrajectoryNode(
            state=state,
            cost=mdp.cost(state),
            level=i,
            action_block=tuple(np.asarray(a, float) for a in block),
            parent=node,
        )
    return node


def test_rollout_hand_values():
    mdp = integrator_mdp()
    assert rollout(mdp, 3.0, [np.array([-1.0])] * 3) == 0.0
    assert rollout(mdp, 0.0, [np.array([0.5])]) == 0.5
    assert mdp.cost(-0.5) == 0.5


def test_rollout_empty_is_identity():
    mdp = integrator_mdp()
    assert rollout(mdp, 1.25, []) == 1.25


def test_rollout_rejects_wrong_arity():
    mdp = integrator_mdp()
    with pytest.raises(ValueError):
        rollout(mdp, 0.0, [np.array([0.1, 0.2])])


def test_action_bounds_validated():
    mdp = integrator_mdp()
    with pytest.raises(ValueError):
        Mdp(
            action_dim=1,
            step=mdp.step,
            cost=mdp.cost,
            action_low=np.array([1.0]),
            action_high=np.array([1.0]),
        )


def test_extract_plan_root_only():
    mdp = integrator_mdp()
    root = TrajectoryNode(state=2.0, cost=2.0, level=0)
    plan = extract_plan(root)
    assert plan.blocks == ()
    assert plan.total_actions == 0
    assert plan.final_cost == 2.0
    assert plan.initial_state == plan.final_state == 2.0


def test_extract_plan_hand_chain():
    mdp = integrator_mdp()
    final = chain(mdp, 3.0, [[np.array([-1.0])], [np.array([-1.0])]])
    plan = extract_plan(final)
    assert plan.horizons == (1, 1)
    assert plan.final_cost == 1.0
    assert [list(a) for a in plan.actions()] == [[-1.0], [-1.0]]


def test_extract_plan_preserves_block_grouping():
    mdp = integrator_mdp()
    final = chain(mdp, 3.0, [[np.array([-1.0]), np.array([-1.0])]])
    plan = extract_plan(final)
    assert plan.horizons == (2,)
    assert plan.total_actions == 2


def test_extract_plan_detects_cycle():
    a = TrajectoryNode(state=0.0, cost=0.0, level=0)
    b = TrajectoryNode(
        state=1.0, cost=1.0, level=1, action_block=(np.array([1.0]),), parent=a
    )
    object.__setattr__(a, "parent", b)  # corrupt on purpose
    with pytest.raises(RuntimeError, match="cycl"):
        extract_plan(b)


def test_extract_plan_rejects_blockless_interior_node():
    a = TrajectoryNode(state=0.0, cost=0.0, level=0)
    b = TrajectoryNode(state=1.0, cost=1.0, level=1, parent=a)
    with pytest.raises(RuntimeError, match="block"):
        extract_plan(b)


@given(
    st.lists(
        st.lists(
            st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
            min_size=1,
            max_size=4,
        ),
        min_size=0,
        max_size=5,
    ),
    st.floats(min_value=-10.0, max_value=10.0, allow_nan=False),
)
def test_replay_reproduces_extracted_plan(blocks, x0):
    mdp = integrator_mdp()
    blocks = [[np.array([a]) for a in block] for block in blocks]
    final = chain(mdp, x0, blocks)
    plan = extract_plan(final)
    state, cost = replay_plan(mdp, plan)
    assert state == plan.final_state
    assert cost == plan.final_cost


@given(
    st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), max_size=6),
    st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), max_size=6),
    st.floats(min_value=-5.0, max_value=5.0, allow_nan=False),
)
def test_rollout_splits_exactly(first, second, x0):
    # same op order either way, so equality is exact
    mdp = integrator_mdp()
    a = [np.array([v]) for v in first]
    b = [np.array([v]) for v in second]
    assert rollout(mdp, x0, a + b) == rollout(mdp, rollout(mdp, x0, a), b)


def test_plan_doc_roundtrip(tmp_path):
    mdp = integrator_mdp()
    final = chain(mdp, 3.0, [[np.array([-1.0])], [np.array([-0.5]), np.array([-0.5])]])
    plan = extract_plan(final)
    path = tmp_path / "plan.json"
    save_plan(str(path), plan, mdp, seed=123, params_digest="abc123")
    loaded, meta = load_plan(str(path), mdp)
    assert meta["seed"] == 123
    assert meta["params_digest"] == "abc123"
    assert meta["final_cost"] == plan.final_cost
    assert loaded.final_cost == plan.final_cost  # recomputed by replay
    assert loaded.horizons == plan.horizons
    for a, b in zip(loaded.actions(), plan.actions()):
        assert (a == b).all()


def test_plan_doc_float_roundtrip_is_exact(tmp_path):
    mdp = integrator_mdp()
    odd = 0.1 + 0.2  # not representable prettily; repr must round-trip
    final = chain(mdp, odd, [[np.array([-odd / 3])]])
    plan = extract_plan(final)
    doc = plan_to_doc(plan, mdp, seed=0, params_digest="d")
    parsed = json.loads(json.dumps(doc))
    again, meta = plan_from_doc(parsed, mdp)
    assert again.final_cost == plan.final_cost
    assert next(iter(again.actions()))[0] == -odd / 3


def test_plan_from_doc_rejects_malformed():
    mdp = integrator_mdp()
    with pytest.raises(ValueError):
        plan_from_doc({"initial_state": 0.0}, mdp)
    with pytest.raises(ValueError):
        plan_from_doc(
            {
                "initial_state": 0.0,
                "levels": [{"horizon": 2, "actions": [[0.1]]}],
                "final_cost": 0.0,
                "seed": 0,
                "params_digest": "x",
            },
            mdp,
        )


def test_integrator_batch_matches_scalar():
    mdp = integrator_mdp()
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(50, 3))
    batch = mdp.batch_plan_cost(0.7, X, 3)
    scalar = np.array(
        [mdp.cost(rollout(mdp, 0.7, [X[i, t : t + 1] for t in range(3)])) for i in range(50)]
    )
    assert np.allclose(batch, scalar, rtol=0, atol=1e-12)
