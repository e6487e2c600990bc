"""Planar bird-flock dynamics and the V-formation cost function.

A flock state is b birds with positions and velocities in R^2. One step
adds an acceleration to each velocity, clamps speeds radially to v_max,
then moves every bird by its new velocity. The cost of a state is

    J = CV^2 + VM^2 + (UB - 1)^2

where CV is the clear-view penalty (fraction of each bird's forward cone
blocked by other birds' wings, summed), VM is velocity matching (sum of
pairwise velocity differences), and UB is the upwash-benefit metric (sum
over birds of 1 minus the clamped upwash each receives). All three hit
their target (0, 0, 1) exactly in a clean V-formation.

Every metric has a batch form operating on (k, b, 2) arrays so swarm
optimizers can score many candidate states in one numpy sweep; the scalar
forms are thin wrappers over the batch kernels, so both routes agree bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mdp import Mdp

TWO_PI = 2.0 * math.pi

# Spawn box and acceptance thresholds for random initial configurations.
SPAWN_POS_LO = 0.0
SPAWN_POS_HI = 3.0
SPAWN_VEL_LO = 0.25
SPAWN_VEL_HI = 0.75
UPWASH_FEEL_MIN = 1e-3
SPAWN_MAX_TRIES = 100_000


@dataclass(frozen=True)
class FlockParams:
    """Model constants: dynamics limits and cost-field shape."""

    v_max: float = 2.0
    rho: float = 0.5         # per-step accel bound as a fraction of speed
    d_min: float = 0.3       # minimum pairwise spawn distance
    theta: float = TWO_PI / 3.0  # full opening angle of the view cone
    w: float = 1.0           # wing span, perpendicular to the velocity
    mu_lat: float = 1.0      # lateral offset of the upwash sweet spot
    sigma_lat: float = 0.25  # lateral width of the upwash lobes
    sigma_long: float = 1.0  # longitudinal decay length of the wake
    lambda_dw: float = 1.0   # strength of the downwash notch behind a bird

    def __post_init__(self) -> None:
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not self.d_min > 0:
            raise ValueError("d_min must be positive")
        if not 0 < self.theta < TWO_PI:
            raise ValueError("theta must lie in (0, 2*pi)")
        if not self.w > 0:
            raise ValueError("w must be positive")
        if not self.sigma_lat > 0 or not self.sigma_long > 0:
            raise ValueError("upwash widths must be positive")
        if self.mu_lat < 0 or self.lambda_dw < 0:
            raise ValueError("mu_lat and lambda_dw must be nonnegative")


@dataclass(frozen=True, eq=False)
class FlockConfig:
    """An immutable flock state: positions x and velocities v, shape (b, 2)."""

    b: int
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        v = np.array(self.v, dtype=float)
        if self.b < 1:
            raise ValueError("flock needs at least one bird")
        if x.shape != (self.b, 2) or v.shape != (self.b, 2):
            raise ValueError(f"x and v must have shape ({self.b}, 2)")
        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            raise ValueError("positions and velocities must be finite")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_arrays(cls, x: np.ndarray, v: np.ndarray) -> "FlockConfig":
        x = np.asarray(x, dtype=float)
        return cls(b=x.shape[0], x=x, v=v)


@dataclass(frozen=True, eq=False)
class FlockAction:
    """Per-bird accelerations, shape (b, 2)."""

    a: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.a, dtype=float)
        if a.ndim != 2 or a.shape[1] != 2:
            raise ValueError("accelerations must have shape (b, 2)")
        if not np.isfinite(a).all():
            raise ValueError("accelerations must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)


# ---------------------------------------------------------------------------
# batch kernels: leading axis indexes candidate states
# ---------------------------------------------------------------------------

def project_batch(a: np.ndarray, v: np.ndarray, rho: float) -> np.ndarray:
    """Rescale accelerations radially so that ||a_i|| <= rho * ||v_i||.

    Idempotent; a zero velocity forces a zero acceleration.
    """
    speed = np.linalg.norm(v, axis=-1)
    amax = rho * speed
    an = np.linalg.norm(a, axis=-1)
    safe = np.where(an > 0.0, an, 1.0)
    scale = np.where(an > amax, amax / safe, 1.0)
    return a * scale[..., None]


def step_batch(
    x: np.ndarray, v: np.ndarray, a: np.ndarray, v_max: float
) -> tuple[np.ndarray, np.ndarray]:
    """One dynamics step: v' = clamp(v + a), x' = x + v'.

    The speed clamp rescales radially, preserving heading. Accelerations
    are applied as given; run project_batch first to enforce the bound.
    """
    v2 = v + a
    sp = np.linalg.norm(v2, axis=-1)
    factor = np.where(sp > v_max, v_max / np.where(sp > 0.0, sp, 1.0), 1.0)
    v2 = v2 * factor[..., None]
    return x + v2, v2


def cv_batch(x: np.ndarray, v: np.ndarray, params: FlockParams) -> np.ndarray:
    """Clear-view penalty for each state in a (k, b, 2) batch.

    For each bird, every other bird's wing (a segment of length w through
    its position, perpendicular to its velocity) occludes an angular arc.
    The penalty is the measure of the union of those arcs intersected with
    the bird's forward cone of full angle theta, divided by theta, summed
    over birds. Exact interval arithmetic, no sampling.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    k, b, _ = x.shape
    if b == 1:
        return np.zeros(k)
    half = 0.5 * params.theta

    heading = np.arctan2(v[..., 1], v[..., 0])              # (k, b)
    speed = np.linalg.norm(v, axis=-1)
    unit = v / np.where(speed > 0.0, speed, 1.0)[..., None]
    perp = np.stack([-unit[..., 1], unit[..., 0]], axis=-1)  # (k, b, 2)
    tip1 = x + 0.5 * params.w * perp                         # wing endpoints
    tip2 = x - 0.5 * params.w * perp

    # r*[k, i, j] = endpoint of j's wing as seen from bird i
    r1 = tip1[:, None, :, :] - x[:, :, None, :]
    r2 = tip2[:, None, :, :] - x[:, :, None, :]
    a1 = np.arctan2(r1[..., 1], r1[..., 0])
    a2 = np.arctan2(r2[..., 1], r2[..., 0])

    # Arc between the endpoint angles, always the short way around. A wing
    # through the observer's own position subtends a degenerate arc; the
    # diagonal is masked out below along with it.
    d = a2 - a1
    d = (d + math.pi) % TWO_PI - math.pi
    width = np.abs(d)
    center = a1 + 0.5 * d
    rel = center - heading[:, :, None]
    rel = (rel + math.pi) % TWO_PI - math.pi                 # (-pi, pi]
    lo = rel - 0.5 * width
    hi = rel + 0.5 * width

    eye = np.eye(b, dtype=bool)[None, :, :]
    lo = np.where(eye, -half, lo)
    hi = np.where(eye, -half, hi)

    # An arc may wrap past +-pi; its three 2*pi translates cover every way
    # it can meet the cone [-half, half]. Clip each translate to the cone.
    los = np.stack([lo, lo - TWO_PI, lo + TWO_PI], axis=-1)  # (k, b, b, 3)
    his = np.stack([hi, hi - TWO_PI, hi + TWO_PI], axis=-1)
    los = np.maximum(los, -half)
    his = np.minimum(his, half)
    his = np.maximum(his, los)                               # empty -> zero width

    # Union of intervals per observer via sort + running max of right ends.
    los = los.reshape(k, b, 3 * b)
    his = his.reshape(k, b, 3 * b)
    order = np.argsort(los, axis=-1)
    los = np.take_along_axis(los, order, axis=-1)
    his = np.take_along_axis(his, order, axis=-1)
    runmax = np.maximum.accumulate(his, axis=-1)
    prev = np.concatenate(
        [np.full((k, b, 1), -np.inf), runmax[..., :-1]], axis=-1
    )
    covered = np.maximum(0.0, his - np.maximum(los, prev)).sum(axis=-1)
    return covered.sum(axis=-1) / params.theta


def vm_batch(v: np.ndarray) -> np.ndarray:
    """Velocity-matching penalty: sum of ||v_i - v_j|| over unordered pairs."""
    v = np.asarray(v, dtype=float)
    diff = v[:, :, None, :] - v[:, None, :, :]
    norms = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(v.shape[1], k=1)
    return norms[:, iu[0], iu[1]].sum(axis=-1)


def upwash_batch(x: np.ndarray, v: np.ndarray, params: FlockParams) -> np.ndarray:
    """Clamped upwash received by each bird; shape (k, b).

    Bird j's wake acts in j's frame: with d = x_i - x_j, the longitudinal
    coordinate ell = -d . e_par (positive strictly behind j) and lateral
    s = |d . e_perp|. The field is a Gaussian ridge at s = mu_lat minus a
    downwash notch on the centerline, both fading with ell; it is zero at
    and ahead of j's line abreast. Contributions sum over j and clamp to
    [0, 1].
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    k, b, _ = x.shape
    speed = np.linalg.norm(v, axis=-1)
    e_par = v / np.where(speed > 0.0, speed, 1.0)[..., None]   # (k, b, 2)
    e_perp = np.stack([-e_par[..., 1], e_par[..., 0]], axis=-1)

    d = x[:, :, None, :] - x[:, None, :, :]                    # (k, i, j, 2)
    ell = -np.einsum("kijc,kjc->kij", d, e_par)
    s = np.abs(np.einsum("kijc,kjc->kij", d, e_perp))

    g_long = np.where(
        ell >= 0.0, np.exp(-(ell * ell) / (2.0 * params.sigma_long**2)), 0.0
    )
    two_sl2 = 2.0 * params.sigma_lat**2
    lift = np.exp(-((s - params.mu_lat) ** 2) / two_sl2)
    notch = params.lambda_dw * np.exp(-(s * s) / two_sl2)
    u = g_long * (lift - notch)
    u[:, np.arange(b), np.arange(b)] = 0.0                      # no self-wake
    return np.clip(u.sum(axis=-1), 0.0, 1.0)


def ub_batch(x: np.ndarray, v: np.ndarray, params: FlockParams) -> np.ndarray:
    """Upwash-benefit metric: sum over birds of (1 - received upwash)."""
    return (1.0 - upwash_batch(x, v, params)).sum(axis=-1)


def fitness_batch(x: np.ndarray, v: np.ndarray, params: FlockParams) -> np.ndarray:
    cv = cv_batch(x, v, params)
    vm = vm_batch(v)
    ub = ub_batch(x, v, params)
    return cv * cv + vm * vm + (ub - 1.0) ** 2


# ---------------------------------------------------------------------------
# scalar interface
# ---------------------------------------------------------------------------

def project_action(a_raw: FlockAction, c: FlockConfig, params: FlockParams) -> FlockAction:
    """Enforce ||a_i|| <= rho * ||v_i|| against the configuration's velocities."""
    if a_raw.a.shape != (c.b, 2):
        raise ValueError("action and configuration disagree on bird count")
    return FlockAction(project_batch(a_raw.a[None], c.v[None], params.rho)[0])


def flock_step(c: FlockConfig, a: FlockAction, params: FlockParams) -> FlockConfig:
    """One dynamics step. The acceleration is applied as given; callers
    wanting the feasibility bound run project_action first."""
    if a.a.shape != (c.b, 2):
        raise ValueError("action and configuration disagree on bird count")
    x2, v2 = step_batch(c.x[None], c.v[None], a.a[None], params.v_max)
    return FlockConfig(b=c.b, x=x2[0], v=v2[0])


def unfold(c: FlockConfig, actions: list[FlockAction], params: FlockParams) -> FlockConfig:
    """Apply a sequence of accelerations, projecting each before stepping."""
    for a in actions:
        a = project_action(a, c, params)
        c = flock_step(c, a, params)
    return c


def clear_view(c: FlockConfig, params: FlockParams) -> float:
    return float(cv_batch(c.x[None], c.v[None], params)[0])


def velocity_matching(c: FlockConfig) -> float:
    return float(vm_batch(c.v[None])[0])


def upwash_received(c: FlockConfig, params: FlockParams) -> np.ndarray:
    """Per-bird clamped upwash, shape (b,)."""
    return upwash_batch(c.x[None], c.v[None], params)[0]


def upwash_benefit(c: FlockConfig, params: FlockParams) -> float:
    return float(ub_batch(c.x[None], c.v[None], params)[0])


def fitness(c: FlockConfig, params: FlockParams) -> float:
    return float(fitness_batch(c.x[None], c.v[None], params)[0])


# ---------------------------------------------------------------------------
# configuration generators
# ---------------------------------------------------------------------------

class ConfigGenerationError(RuntimeError):
    """Raised when no acceptable random configuration is found in budget."""


def random_initial(
    rng: np.random.Generator, b: int, params: FlockParams
) -> FlockConfig:
    """Rejection-sample a spawn configuration.

    Positions are uniform in the spawn box, velocities uniform in the slow
    forward band. A draw is accepted when all pairwise distances exceed
    d_min and at most one bird receives upwash at or below a small floor;
    more than one upwash-free straggler makes the cost landscape flat at
    the start. The leading bird naturally feels none, hence "at most one".
    """
    if b < 1:
        raise ValueError("flock needs at least one bird")
    last_reason = "no draw attempted"
    for _ in range(SPAWN_MAX_TRIES):
        x = rng.uniform(SPAWN_POS_LO, SPAWN_POS_HI, size=(b, 2))
        v = rng.uniform(SPAWN_VEL_LO, SPAWN_VEL_HI, size=(b, 2))
        if b > 1:
            diff = x[:, None, :] - x[None, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            iu = np.triu_indices(b, k=1)
            if dist[iu].min() <= params.d_min:
                last_reason = f"pairwise distance <= d_min ({params.d_min})"
                continue
            c = FlockConfig(b=b, x=x, v=v)
            ub = upwash_received(c, params)
            if int(np.sum(ub <= UPWASH_FEEL_MIN)) > 1:
                last_reason = "more than one bird feels no upwash"
                continue
            return c
        return FlockConfig(b=b, x=x, v=v)
    raise ConfigGenerationError(
        f"no acceptable configuration in {SPAWN_MAX_TRIES} draws "
        f"(last rejection: {last_reason})"
    )


def perfect_v(
    b: int,
    params: FlockParams,
    wedge_angle: Optional[float] = None,
    spacing: float = 0.05,
) -> FlockConfig:
    """Construct a near-zero-cost V-formation for odd b (or a single bird).

    The leader flies at the origin heading +x; each wing extends back-left
    and back-right with lateral step mu_lat and longitudinal step `spacing`
    between successive birds (or the step implied by wedge_angle). Raises
    ValueError if the requested geometry is not actually clean: any wing
    inside a view cone, or fitness above 1e-3.
    """
    if b != 1 and (b < 3 or b % 2 == 0):
        raise ValueError("formation size must be 1 or an odd number >= 3")
    if wedge_angle is not None:
        if not 0 < wedge_angle < math.pi:
            raise ValueError("wedge_angle must lie in (0, pi)")
        long_step = params.mu_lat / math.tan(0.5 * wedge_angle)
    else:
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        long_step = spacing
    arms = (b - 1) // 2
    xs = [(0.0, 0.0)]
    for k in range(1, arms + 1):
        xs.append((-k * long_step, k * params.mu_lat))
        xs.append((-k * long_step, -k * params.mu_lat))
    x = np.array(xs, dtype=float)
    v = np.tile([1.0, 0.0], (b, 1))
    c = FlockConfig(b=b, x=x, v=v)
    cv = clear_view(c, params)
    if cv > 0.0:
        raise ValueError(
            f"formation geometry blocks a view cone (CV = {cv:.3g}); "
            "increase the wedge angle or shrink the spacing"
        )
    j = fitness(c, params)
    if j > 1e-3:
        raise ValueError(
            f"formation fitness {j:.3g} exceeds 1e-3; birds sit too far "
            "from the upwash sweet spot"
        )
    return c


# ---------------------------------------------------------------------------
# decision-process wrapper
# ---------------------------------------------------------------------------

def flock_mdp(params: FlockParams, b: int) -> Mdp:
    """Wrap the flock as a deterministic decision process.

    Actions are flat vectors of length 2b (per-bird accelerations); the
    feasibility projection runs inside step, so any vector in the box is
    legal. The per-coordinate box is +-rho * v_max, the largest magnitude
    the projection can ever keep.
    """
    if b < 1:
        raise ValueError("flock needs at least one bird")
    dim = 2 * b
    bound = params.rho * params.v_max

    def step(c: FlockConfig, a_flat: np.ndarray) -> FlockConfig:
        a = FlockAction(a_flat.reshape(b, 2))
        return flock_step(c, project_action(a, c, params), params)

    def cost(c: FlockConfig) -> float:
        return fitness(c, params)

    def batch_plan_cost(c: FlockConfig, X: np.ndarray, h: int) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        k = X.shape[0]
        x = np.repeat(c.x[None], k, axis=0)
        v = np.repeat(c.v[None], k, axis=0)
        for t in range(h):
            a = X[:, t * dim : (t + 1) * dim].reshape(k, b, 2)
            a = project_batch(a, v, params.rho)
            x, v = step_batch(x, v, a, params.v_max)
        return fitness_batch(x, v, params)

    def multi_plan_cost(
        states: Sequence[FlockConfig], X: np.ndarray, h: int
    ) -> np.ndarray:
        # X: (len(states), p, h*dim) -> costs (len(states), p). Row results
        # are bit-identical to batch_plan_cost on each state separately.
        X = np.asarray(X, dtype=float)
        n, p_count, _ = X.shape
        x = np.repeat(np.stack([c.x for c in states]), p_count, axis=0)
        v = np.repeat(np.stack([c.v for c in states]), p_count, axis=0)
        flat = X.reshape(n * p_count, h * dim)
        for t in range(h):
            a = flat[:, t * dim : (t + 1) * dim].reshape(n * p_count, b, 2)
            a = project_batch(a, v, params.rho)
            x, v = step_batch(x, v, a, params.v_max)
        return fitness_batch(x, v, params).reshape(n, p_count)

    def encode_state(c: FlockConfig) -> dict:
        return {"b": c.b, "x": c.x.tolist(), "v": c.v.tolist()}

    def decode_state(doc: dict) -> FlockConfig:
        return FlockConfig(b=int(doc["b"]), x=doc["x"], v=doc["v"])

    return Mdp(
        action_dim=dim,
        step=step,
        cost=cost,
        action_low=np.full(dim, -bound),
        action_high=np.full(dim, bound),
        batch_plan_cost=batch_plan_cost,
        batch_plan_cost_multi=multi_plan_cost,
        encode_state=encode_state,
        decode_state=decode_state,
    )
