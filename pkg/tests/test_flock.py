import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ares.flock import (
    ConfigGenerationError,
    FlockAction,
    FlockConfig,
    FlockParams,
    SPAWN_MAX_TRIES,
    UPWASH_FEEL_MIN,
    clear_view,
    cv_batch,
    fitness,
    fitness_batch,
    flock_mdp,
    flock_step,
    perfect_v,
    project_action,
    project_batch,
    random_initial,
    step_batch,
    ub_batch,
    unfold,
    upwash_benefit,
    upwash_received,
    velocity_matching,
    vm_batch,
)
from ares.mdp import rollout

P = FlockParams()


def random_config(rng, b, pos_scale=4.0, v_hi=2.0):
    x = rng.uniform(-pos_scale, pos_scale, size=(b, 2))
    v = rng.uniform(-v_hi, v_hi, size=(b, 2))
    # keep speeds comfortably nonzero so headings are stable
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.where(norms < 0.1, v + 0.2, v)
    return FlockConfig(b=b, x=x, v=v)


# ---------------------------------------------------------------------------
# scalar oracles, written independently of the vectorized kernels
# ---------------------------------------------------------------------------

def vm_oracle(c):
    total = 0.0
    for i in range(c.b):
        for j in range(i + 1, c.b):
            total += math.hypot(
                c.v[i, 0] - c.v[j, 0], c.v[i, 1] - c.v[j, 1]
            )
    return total


def upwash_oracle(c, params):
    out = np.zeros(c.b)
    for i in range(c.b):
        acc = 0.0
        for j in range(c.b):
            if j == i:
                continue
            vj = c.v[j]
            sp = math.hypot(vj[0], vj[1])
            e_par = vj / sp if sp > 0 else np.array([1.0, 0.0])
            e_perp = np.array([-e_par[1], e_par[0]])
            d = c.x[i] - c.x[j]
            ell = -(d[0] * e_par[0] + d[1] * e_par[1])
            s = abs(d[0] * e_perp[0] + d[1] * e_perp[1])
            if ell < 0:
                continue
            g_long = math.exp(-(ell * ell) / (2 * params.sigma_long**2))
            lift = math.exp(-((s - params.mu_lat) ** 2) / (2 * params.sigma_lat**2))
            notch = params.lambda_dw * math.exp(-(s * s) / (2 * params.sigma_lat**2))
            acc += g_long * (lift - notch)
        out[i] = min(max(acc, 0.0), 1.0)
    return out


def cv_oracle(c, params):
    """Interval union done the slow way: explicit piece lists per observer."""
    total = 0.0
    half = params.theta / 2
    for i in range(c.b):
        vi = c.v[i]
        head = math.atan2(vi[1], vi[0])
        pieces = []
        for j in range(c.b):
            if j == i:
                continue
            vj = c.v[j]
            sp = math.hypot(vj[0], vj[1])
            unit = vj / sp if sp > 0 else np.array([1.0, 0.0])
            perp = np.array([-unit[1], unit[0]])
            for sign in (1.0, -1.0):
                pass
            p1 = c.x[j] + 0.5 * params.w * perp - c.x[i]
            p2 = c.x[j] - 0.5 * params.w * perp - c.x[i]
            a1 = math.atan2(p1[1], p1[0])
            a2 = math.atan2(p2[1], p2[0])
            d = (a2 - a1 + math.pi) % (2 * math.pi) - math.pi
            lo = min(a1, a1 + d) - head
            hi = max(a1, a1 + d) - head
            # normalize the arc center into (-pi, pi]
            mid = (lo + hi) / 2
            shift = (mid + math.pi) % (2 * math.pi) - math.pi - mid
            lo += shift
            hi += shift
            for offset in (-2 * math.pi, 0.0, 2 * math.pi):
                a = max(lo + offset, -half)
                b_ = min(hi + offset, half)
                if b_ > a:
                    pieces.append((a, b_))
        pieces.sort()
        covered = 0.0
        end = -math.inf
        for a, b_ in pieces:
            if b_ <= end:
                continue
            covered += b_ - max(a, end)
            end = b_
        total += covered / params.theta
    return total


def blocked_fraction_mc(c, i, params, n, rng):
    """Ray-casting Monte Carlo: no angle arithmetic shared with the kernel."""
    vi = c.v[i]
    head = math.atan2(vi[1], vi[0])
    angles = head + rng.uniform(-params.theta / 2, params.theta / 2, size=n)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    blocked = np.zeros(n, dtype=bool)
    for j in range(c.b):
        if j == i:
            continue
        vj = c.v[j]
        sp = math.hypot(vj[0], vj[1])
        unit = vj / sp if sp > 0 else np.array([1.0, 0.0])
        perp = np.array([-unit[1], unit[0]])
        p1 = c.x[j] + 0.5 * params.w * perp
        seg = -params.w * perp  # p2 - p1
        rel = p1 - c.x[i]
        # solve t*dir - s*seg = rel, per ray
        det = dirs[:, 0] * (-seg[1]) - dirs[:, 1] * (-seg[0])
        ok = np.abs(det) > 1e-14
        t = (rel[0] * (-seg[1]) - rel[1] * (-seg[0])) / np.where(ok, det, 1.0)
        s = (dirs[:, 0] * rel[1] - dirs[:, 1] * rel[0]) / np.where(ok, det, 1.0)
        blocked |= ok & (t > 0) & (s >= 0.0) & (s <= 1.0)
    return blocked.mean()


# ---------------------------------------------------------------------------
# metric values against oracles
# ---------------------------------------------------------------------------

def test_cv_directly_ahead_formula():
    for d in (1.0, 2.0, 5.0):
        c = FlockConfig(b=2, x=[[0, 0], [d, 0]], v=[[1, 0], [1, 0]])
        expected = 2 * math.atan(P.w / (2 * d)) / P.theta
        assert clear_view(c, P) == pytest.approx(expected, abs=1e-12)


def test_cv_wraps_around_pi():
    # observer heading -x: the forward cone straddles the +-pi angle cut
    c = FlockConfig(b=2, x=[[0, 0], [-2, 0]], v=[[-1, 0], [-1, 0]])
    expected = 2 * math.atan(P.w / 4) / P.theta
    assert clear_view(c, P) == pytest.approx(expected, abs=1e-12)


def test_cv_half_clipped_at_cone_edge():
    # blocker sits exactly on the cone edge, wing perpendicular to the view
    # ray: exactly half its arc falls inside
    d = 3.0
    ang = P.theta / 2
    pos = [d * math.cos(ang), d * math.sin(ang)]
    c = FlockConfig(b=2, x=[[0, 0], pos], v=[[1, 0], [math.cos(ang), math.sin(ang)]])
    expected = math.atan(P.w / (2 * d)) / P.theta
    got = cv_batch(c.x[None], c.v[None], P)[0]
    # observer's own wing never occludes itself; blocker looks away so sees 0
    assert got == pytest.approx(expected, abs=1e-12)


def test_cv_zero_when_everyone_behind():
    c = FlockConfig(b=3, x=[[0, 0], [-3, 0.5], [-4, -0.5]], v=[[1, 0], [1, 0], [1, 0]])
    assert clear_view(c, P) == 0.0


def test_cv_matches_scalar_oracle_on_random_configs():
    rng = np.random.default_rng(7)
    for b in (2, 3, 5, 7):
        for _ in range(20):
            c = random_config(rng, b)
            assert clear_view(c, P) == pytest.approx(cv_oracle(c, P), abs=1e-10)


def test_cv_matches_ray_casting_monte_carlo():
    rng = np.random.default_rng(11)
    c = random_config(rng, 4, pos_scale=2.0)
    per_bird = cv_batch(c.x[None], c.v[None], P)[0]
    # compare one asymmetric observer's blocked fraction
    kernel_total = per_bird
    mc_total = sum(
        blocked_fraction_mc(c, i, P, 200_000, np.random.default_rng(100 + i))
        for i in range(c.b)
    )
    assert kernel_total == pytest.approx(mc_total, abs=5e-3)


def test_vm_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for b in (1, 2, 5):
        c = random_config(rng, b)
        assert velocity_matching(c) == pytest.approx(vm_oracle(c), abs=1e-12)


def test_vm_zero_iff_equal_velocities():
    c = FlockConfig(b=3, x=[[0, 0], [1, 0], [2, 0]], v=[[0.5, 0.5]] * 3)
    assert velocity_matching(c) == 0.0
    c2 = FlockConfig(b=3, x=[[0, 0], [1, 0], [2, 0]], v=[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5 + 1e-12]])
    assert velocity_matching(c2) > 0.0


def test_upwash_point_value():
    # trailing bird at the sweet spot one wake-length back
    c = FlockConfig(b=2, x=[[-1.0, 1.0], [0, 0]], v=[[1, 0], [1, 0]])
    manual = math.exp(-0.5) * (1 - math.exp(-1 / (2 * P.sigma_lat**2)))
    ub = upwash_received(c, P)
    assert ub[0] == pytest.approx(manual, abs=1e-12)
    assert ub[1] == 0.0  # leader feels nothing from behind


def test_upwash_zero_ahead_of_wake():
    c = FlockConfig(b=2, x=[[1.0, 1.0], [0, 0]], v=[[1, 0], [1, 0]])
    assert upwash_received(c, P)[0] == 0.0


def test_upwash_matches_loop_oracle():
    rng = np.random.default_rng(13)
    for b in (2, 4, 7):
        for _ in range(10):
            c = random_config(rng, b)
            got = upwash_received(c, P)
            want = upwash_oracle(c, P)
            assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_downwash_notch_is_negative_on_centerline():
    # dead behind: lift term exp(-mu^2/2sl^2) is tiny, notch is 1
    c = FlockConfig(b=2, x=[[-1.0, 0.0], [0, 0]], v=[[1, 0], [1, 0]])
    assert upwash_received(c, P)[0] == 0.0  # clamped at zero
    assert upwash_benefit(c, P) == 2.0


def test_fitness_composition():
    rng = np.random.default_rng(17)
    c = random_config(rng, 5)
    j = fitness(c, P)
    manual = (
        clear_view(c, P) ** 2
        + velocity_matching(c) ** 2
        + (upwash_benefit(c, P) - 1.0) ** 2
    )
    assert j == pytest.approx(manual, rel=0, abs=1e-12)


def test_fitness_single_bird_is_zero():
    c = FlockConfig(b=1, x=[[0.3, 0.4]], v=[[0.5, 0.1]])
    assert fitness(c, P) == 0.0


def test_fitness_far_pair_is_one():
    c = FlockConfig(b=2, x=[[0, 0], [0, 100]], v=[[1, 0], [1, 0]])
    assert fitness(c, P) == 1.0


def test_perfect_v_hits_target():
    for b in (1, 3, 5, 7):
        c = perfect_v(b, P)
        assert fitness(c, P) <= 1e-3
        assert clear_view(c, P) == 0.0
        assert velocity_matching(c) == 0.0


def test_perfect_v_wedge_angle_variant():
    c = perfect_v(5, P, wedge_angle=2.8)
    assert fitness(c, P) <= 1e-3


def test_perfect_v_rejects_bad_requests():
    with pytest.raises(ValueError):
        perfect_v(4, P)
    with pytest.raises(ValueError):
        perfect_v(0, P)
    with pytest.raises(ValueError):
        perfect_v(3, P, spacing=2.0)  # wing drifts into the view cone
    with pytest.raises(ValueError):
        perfect_v(3, P, wedge_angle=0.4)  # too narrow: upwash out of reach


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def test_step_speed_clamp_hand_value():
    params = FlockParams(v_max=1.2)
    c = FlockConfig(b=1, x=[[0, 0]], v=[[1, 0]])
    out = flock_step(c, FlockAction([[0.4, 0.0]]), params)
    assert np.allclose(out.v, [[1.2, 0.0]], atol=0, rtol=0)
    assert np.allclose(out.x, [[1.2, 0.0]], atol=0, rtol=0)


def test_step_zero_action_keeps_velocity_bitwise():
    c = FlockConfig(b=2, x=[[0, 0], [1, 1]], v=[[0.3, 0.7], [-0.2, 0.1]])
    out = flock_step(c, FlockAction(np.zeros((2, 2))), P)
    assert (out.v == c.v).all()
    assert (out.x == c.x + c.v).all()


def test_unfold_hand_trace():
    c = FlockConfig(b=1, x=[[0, 0]], v=[[1, 0]])
    r = unfold(c, [FlockAction([[0, 0.2]]), FlockAction([[0, 0.2]])], P)
    assert np.allclose(r.x, [[2.0, 0.6]], atol=1e-15)
    assert np.allclose(r.v, [[1.0, 0.4]], atol=1e-15)


def test_project_action_rescale_and_passthrough():
    c = FlockConfig(b=2, x=[[0, 0], [1, 0]], v=[[1, 0], [0.5, 0]])
    raw = FlockAction([[1.0, 0.0], [0.1, 0.0]])
    out = project_action(raw, c, P)
    # bird 0: cap is rho*1 = 0.5, direction preserved
    assert np.allclose(out.a[0], [0.5, 0.0], atol=1e-15)
    # bird 1: within cap (0.25), untouched bitwise
    assert (out.a[1] == raw.a[1]).all()


def test_project_action_zero_velocity_zeroes_action():
    c = FlockConfig(b=1, x=[[0, 0]], v=[[0, 0]])
    out = project_action(FlockAction([[0.3, 0.4]]), c, P)
    assert (out.a == 0).all()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_project_action_bounds_and_idempotence(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(1, 6))
    c = random_config(rng, b)
    raw = FlockAction(rng.uniform(-3, 3, size=(b, 2)))
    out = project_action(raw, c, P)
    caps = P.rho * np.linalg.norm(c.v, axis=1)
    assert (np.linalg.norm(out.a, axis=1) <= caps * (1 + 1e-12) + 1e-15).all()
    again = project_action(out, c, P)
    assert np.allclose(again.a, out.a, rtol=0, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_speed_cap_invariant(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(1, 6))
    c = random_config(rng, b)
    for _ in range(5):
        a = FlockAction(rng.uniform(-2, 2, size=(b, 2)))
        c = flock_step(c, project_action(a, c, P), P)
        assert (np.linalg.norm(c.v, axis=1) <= P.v_max * (1 + 1e-12)).all()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_velocities_never_vanish_under_projection(seed):
    # ||a|| <= rho*||v|| with rho < 1 keeps speeds at >= (1-rho)*||v|| > 0
    rng = np.random.default_rng(seed)
    c = random_config(rng, 3)
    floor = np.linalg.norm(c.v, axis=1).min()
    for _ in range(6):
        a = FlockAction(rng.uniform(-2, 2, size=(3, 2)))
        c = flock_step(c, project_action(a, c, P), P)
        floor *= 1 - P.rho
        assert (np.linalg.norm(c.v, axis=1) >= floor - 1e-12).all()


# ---------------------------------------------------------------------------
# invariances
# ---------------------------------------------------------------------------

def rotate(c, angle):
    r = np.array(
        [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
    )
    return FlockConfig(b=c.b, x=c.x @ r.T, v=c.v @ r.T)


def translate(c, offset):
    return FlockConfig(b=c.b, x=c.x + offset, v=c.v)


@given(
    st.integers(0, 2**32 - 1),
    st.floats(min_value=-math.pi, max_value=math.pi, allow_nan=False),
)
@settings(max_examples=60, deadline=None)
def test_metrics_invariant_under_rotation(seed, angle):
    rng = np.random.default_rng(seed)
    c = random_config(rng, 4)
    rc = rotate(c, angle)
    assert clear_view(rc, P) == pytest.approx(clear_view(c, P), abs=1e-9)
    assert velocity_matching(rc) == pytest.approx(velocity_matching(c), abs=1e-9)
    assert upwash_benefit(rc, P) == pytest.approx(upwash_benefit(c, P), abs=1e-9)
    assert fitness(rc, P) == pytest.approx(fitness(c, P), abs=1e-9)


@given(
    st.integers(0, 2**32 - 1),
    st.floats(min_value=-50, max_value=50, allow_nan=False),
    st.floats(min_value=-50, max_value=50, allow_nan=False),
)
@settings(max_examples=60, deadline=None)
def test_metrics_invariant_under_translation(seed, dx, dy):
    rng = np.random.default_rng(seed)
    c = random_config(rng, 4)
    tc = translate(c, np.array([dx, dy]))
    assert clear_view(tc, P) == pytest.approx(clear_view(c, P), abs=1e-9)
    assert upwash_benefit(tc, P) == pytest.approx(upwash_benefit(c, P), abs=1e-9)
    assert fitness(tc, P) == pytest.approx(fitness(c, P), abs=1e-9)


# ---------------------------------------------------------------------------
# batch kernels vs scalar routes
# ---------------------------------------------------------------------------

def test_batch_rows_match_scalar_calls():
    rng = np.random.default_rng(23)
    b = 5
    configs = [random_config(rng, b) for _ in range(7)]
    x = np.stack([c.x for c in configs])
    v = np.stack([c.v for c in configs])
    cv = cv_batch(x, v, P)
    vm = vm_batch(v)
    ub = ub_batch(x, v, P)
    j = fitness_batch(x, v, P)
    for i, c in enumerate(configs):
        assert cv[i] == clear_view(c, P)
        assert vm[i] == velocity_matching(c)
        assert ub[i] == upwash_benefit(c, P)
        assert j[i] == fitness(c, P)


def test_project_and_step_batch_match_scalar():
    rng = np.random.default_rng(29)
    b = 4
    configs = [random_config(rng, b) for _ in range(6)]
    actions = rng.uniform(-2, 2, size=(6, b, 2))
    xs = np.stack([c.x for c in configs])
    vs = np.stack([c.v for c in configs])
    pa = project_batch(actions, vs, P.rho)
    x2, v2 = step_batch(xs, vs, pa, P.v_max)
    for i, c in enumerate(configs):
        out = flock_step(c, project_action(FlockAction(actions[i]), c, P), P)
        assert (x2[i] == out.x).all()
        assert (v2[i] == out.v).all()


def test_flock_mdp_contract():
    b = 3
    mdp = flock_mdp(P, b)
    assert mdp.action_dim == 2 * b
    bound = P.rho * P.v_max
    assert (mdp.action_low == -bound).all()
    assert (mdp.action_high == bound).all()
    rng = np.random.default_rng(31)
    c = random_config(rng, b)
    flat = rng.uniform(-2, 2, size=2 * b)
    stepped = mdp.step(c, flat)
    manual = flock_step(
        c, project_action(FlockAction(flat.reshape(b, 2)), c, P), P
    )
    assert (stepped.x == manual.x).all()
    assert (stepped.v == manual.v).all()
    doc = mdp.encode_state(c)
    back = mdp.decode_state(doc)
    assert (back.x == c.x).all() and (back.v == c.v).all() and back.b == c.b


def test_flock_mdp_batch_plan_cost_matches_rollout():
    b = 3
    mdp = flock_mdp(P, b)
    rng = np.random.default_rng(37)
    c = random_config(rng, b)
    h = 3
    X = rng.uniform(-1, 1, size=(8, h * 2 * b))
    batch = mdp.batch_plan_cost(c, X, h)
    for i in range(8):
        state = rollout(mdp, c, X[i].reshape(h, 2 * b))
        assert batch[i] == pytest.approx(mdp.cost(state), abs=1e-12)


def test_flock_mdp_multi_matches_batch_bitwise():
    b = 4
    mdp = flock_mdp(P, b)
    rng = np.random.default_rng(41)
    states = [random_config(rng, b) for _ in range(5)]
    h = 2
    X = rng.uniform(-1, 1, size=(5, 9, h * 2 * b))
    multi = mdp.batch_plan_cost_multi(states, X, h)
    for i, c in enumerate(states):
        single = mdp.batch_plan_cost(c, X[i], h)
        assert (multi[i] == single).all()


# ---------------------------------------------------------------------------
# spawning
# ---------------------------------------------------------------------------

def test_random_initial_respects_constraints():
    rng = np.random.default_rng(43)
    for b in (3, 7):
        c = random_initial(rng, b, P)
        assert c.x.min() >= 0.0 and c.x.max() <= 3.0
        assert c.v.min() >= 0.25 and c.v.max() <= 0.75
        dist = np.linalg.norm(c.x[:, None] - c.x[None, :], axis=-1)
        iu = np.triu_indices(b, k=1)
        assert dist[iu].min() > P.d_min
        ub = upwash_received(c, P)
        assert int(np.sum(ub <= UPWASH_FEEL_MIN)) <= 1


def test_random_initial_deterministic():
    a = random_initial(np.random.default_rng(99), 7, P)
    b = random_initial(np.random.default_rng(99), 7, P)
    assert (a.x == b.x).all() and (a.v == b.v).all()


def test_random_initial_single_bird_trivial():
    c = random_initial(np.random.default_rng(1), 1, P)
    assert c.b == 1
    assert c.x.shape == (1, 2)


def test_random_initial_budget_error_names_constraint():
    # an impossible pairwise distance forces the budget to run out
    tight = FlockParams(d_min=10.0)
    with pytest.raises(ConfigGenerationError, match="distance"):
        random_initial(np.random.default_rng(0), 3, tight)


def test_flock_config_validation():
    with pytest.raises(ValueError):
        FlockConfig(b=2, x=[[0, 0]], v=[[1, 0], [1, 0]])
    with pytest.raises(ValueError):
        FlockConfig(b=1, x=[[np.nan, 0]], v=[[1, 0]])
    with pytest.raises(ValueError):
        FlockConfig(b=0, x=np.zeros((0, 2)), v=np.zeros((0, 2)))


def test_flock_config_arrays_are_frozen():
    c = FlockConfig(b=1, x=[[0, 0]], v=[[1, 0]])
    with pytest.raises(ValueError):
        c.x[0, 0] = 5.0
