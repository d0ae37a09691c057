"""Force-controlled 2D point-mass environments.

Four tasks on a desk-scale arena (~1 m, 50 Hz):

- ``bifurcate``: two passages around a central box; the expert picks the
  upper or lower route per episode, making the demonstration data bimodal.
- ``catch``: intercept a target that drifts across the arena with constant
  velocity; requires continuous reactive correction.
- ``dash``: a wall with a narrow gap that slides at constant speed; the
  agent must time its crossing, then reach a goal behind the wall.
- ``relay``: two annotated sub-goals in sequence; used by the remote
  inference demo, where fractional progress matters.

Dynamics: semi-implicit Euler, v += (F/m) dt then x += v dt. Commands are
clipped to the force bound; execution noise sigma * bound * N(0, I) is added
on top. Obstacles stop motion at their faces (the velocity component into
the face is zeroed). Observations are
[px, py, vx, vy, cx, cy, cvx, cvy] where c is the env's cue point (the
current goal, moving target, or gap center).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError

OBS_DIM = 8
ACTION_DIM = 2


@dataclass(frozen=True)
class Box:
    """Axis-aligned obstacle, optionally translating at constant velocity.

    A ``hazard`` box ends the episode as a failure on contact; plain boxes
    just block (the point is pushed back out through the nearest face).
    """

    x0: float
    y0: float
    x1: float
    y1: float
    vx: float = 0.0
    vy: float = 0.0
    hazard: bool = False

    def at(self, t_seconds: float) -> tuple:
        dx, dy = self.vx * t_seconds, self.vy * t_seconds
        return (self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(frozen=True)
class Stage:
    """One sub-goal: where success is measured and what the cue tracks."""

    goal: tuple
    goal_radius: float
    cue_vel: tuple = (0.0, 0.0)
    moving_goal: bool = False  # cue (and goal) translate with cue_vel
    max_speed: float | None = None  # optional arrival speed limit


@dataclass(frozen=True)
class EnvSpec:
    name: str
    start: tuple
    start_jitter: float
    stages: tuple
    obstacles: tuple = ()
    mass: float = 1.0
    force_bound: float = 4.0
    noise_sigma: float = 0.1
    dt: float = 0.02
    tick_limit: int = 300
    expert_modes: int = 1
    variants: int = 1  # mirrored initial conditions sampled at reset
    cue_is_gap: bool = False  # dash: cue tracks the moving gap, not the goal

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ContractError("sigma >= 0")
        if self.dt <= 0 or self.mass <= 0 or self.force_bound <= 0:
            raise ContractError("dt, mass, force_bound > 0")
        if self.tick_limit < 1 or not self.stages:
            raise ContractError("tick_limit >= 1 and at least one stage")
        self._check_goal_clearance()

    def _check_goal_clearance(self):
        """Goal regions must stay disjoint from every obstacle, at every
        tick of the episode (boxes and moving goals both translate)."""
        if not self.obstacles:
            return
        ticks = np.arange(self.tick_limit + 1) * self.dt
        for variant in range(self.variants):
            flip = variant == 1
            for st in self.stages:
                gx, gy = _mirror(st.goal, flip)
                cvx, cvy = _mirror(st.cue_vel, flip) if st.moving_goal else (0.0, 0.0)
                gxs, gys = gx + cvx * ticks, gy + cvy * ticks
                for box in self.obstacles:
                    b = _box_for_variant(box, variant)
                    dx = np.maximum(np.maximum((b.x0 + b.vx * ticks) - gxs,
                                               gxs - (b.x1 + b.vx * ticks)), 0.0)
                    dy = np.maximum(np.maximum((b.y0 + b.vy * ticks) - gys,
                                               gys - (b.y1 + b.vy * ticks)), 0.0)
                    if np.any(np.hypot(dx, dy) <= st.goal_radius):
                        raise ContractError(
                            f"goal region of {self.name!r} intersects an obstacle")


@dataclass
class EnvState:
    pos: np.ndarray
    vel: np.ndarray
    cue_pos: np.ndarray
    cue_vel: np.ndarray
    goal_pos: np.ndarray
    tick: int = 0
    stage: int = 0
    variant: int = 0
    done: bool = False
    success: bool = False
    stage_ticks: list = field(default_factory=list)  # tick at which each stage completed
    clip_count: int = 0
    last_force: np.ndarray | None = None  # force actually applied on the last step

    def copy(self) -> "EnvState":
        return EnvState(
            pos=self.pos.copy(), vel=self.vel.copy(),
            cue_pos=self.cue_pos.copy(), cue_vel=self.cue_vel.copy(),
            goal_pos=self.goal_pos.copy(), tick=self.tick, stage=self.stage,
            variant=self.variant, done=self.done, success=self.success,
            stage_ticks=list(self.stage_ticks), clip_count=self.clip_count,
            last_force=None if self.last_force is None else self.last_force.copy(),
        )


def _mirror(v, flip: bool):
    return (v[0], -v[1]) if flip else v


def _enter_stage(spec: EnvSpec, state: EnvState) -> None:
    st = spec.stages[state.stage]
    flip = state.variant == 1
    goal = np.asarray(_mirror(st.goal, flip), dtype=np.float64)
    cvel = np.asarray(_mirror(st.cue_vel, flip), dtype=np.float64)
    state.goal_pos = goal.copy()
    if spec.cue_is_gap:
        # the cue is the gap center; obstacles carry its motion
        state.cue_pos = _gap_center(spec, state)
        state.cue_vel = cvel
    else:
        state.cue_pos = goal.copy()
        state.cue_vel = cvel


def _gap_center(spec: EnvSpec, state: EnvState) -> np.ndarray:
    """Midpoint of the vertical opening between the two wall boxes."""
    t = state.tick * spec.dt
    a = _box_for_variant(spec.obstacles[0], state.variant).at(t)
    b = _box_for_variant(spec.obstacles[1], state.variant).at(t)
    ys = sorted((a[1], a[3], b[1], b[3]))
    return np.array([0.5 * (a[0] + a[2]), 0.5 * (ys[1] + ys[2])])


def _box_for_variant(box: Box, variant: int) -> Box:
    if variant == 0:
        return box
    return Box(box.x0, -box.y1, box.x1, -box.y0, box.vx, -box.vy)


def reset(spec: EnvSpec, rng: np.random.Generator) -> EnvState:
    variant = int(rng.integers(spec.variants)) if spec.variants > 1 else 0
    jitter = rng.uniform(-spec.start_jitter, spec.start_jitter, size=2)
    state = EnvState(
        pos=np.asarray(spec.start, dtype=np.float64) + jitter,
        vel=np.zeros(2),
        cue_pos=np.zeros(2), cue_vel=np.zeros(2), goal_pos=np.zeros(2),
        variant=variant,
    )
    _enter_stage(spec, state)
    return state


def observe(state: EnvState) -> np.ndarray:
    return np.concatenate([state.pos, state.vel, state.cue_pos, state.cue_vel])


def _resolve_boxes(spec: EnvSpec, state: EnvState) -> None:
    """Push the point out of any box it ended up strictly inside of.

    Entering a hazard box instead terminates the episode as a failure."""
    t = state.tick * spec.dt
    px, py = state.pos
    for box in spec.obstacles:
        x0, y0, x1, y1 = _box_for_variant(box, state.variant).at(t)
        if x0 < px < x1 and y0 < py < y1:
            if box.hazard:
                state.done = True
                state.success = False
                break
            # exit through the nearest face; kill velocity into the face
            exits = (px - x0, x1 - px, py - y0, y1 - py)
            k = int(np.argmin(exits))
            if k == 0:
                px = x0
                state.vel[0] = min(state.vel[0], 0.0)
            elif k == 1:
                px = x1
                state.vel[0] = max(state.vel[0], 0.0)
            elif k == 2:
                py = y0
                state.vel[1] = min(state.vel[1], 0.0)
            else:
                py = y1
                state.vel[1] = max(state.vel[1], 0.0)
    state.pos[0], state.pos[1] = px, py


def step(spec: EnvSpec, state: EnvState, action, rng: np.random.Generator | None) -> EnvState:
    """Advance one tick in place. ``rng=None`` runs the noiseless dynamics
    (used by the scripted experts for planning)."""
    if state.done:
        raise ContractError("step on terminal state")
    a = np.asarray(action, dtype=np.float64)
    clipped = np.clip(a, -spec.force_bound, spec.force_bound)
    if not np.array_equal(clipped, a):
        state.clip_count += 1
    force = clipped
    if rng is not None and spec.noise_sigma > 0:
        force = clipped + spec.noise_sigma * spec.force_bound * rng.standard_normal(2)
    state.last_force = force

    state.vel += (force / spec.mass) * spec.dt
    # substep the translation so fast motion cannot tunnel through a box
    move = state.vel * spec.dt
    n_sub = max(1, int(math.ceil(float(np.abs(move).max()) / 0.04)))
    state.tick += 1
    for _ in range(n_sub):
        state.pos += move / n_sub
        if spec.obstacles:
            _resolve_boxes(spec, state)
            if state.done:  # hazard contact
                return state

    # cue / goal motion
    st = spec.stages[state.stage]
    if spec.cue_is_gap:
        state.cue_pos = _gap_center(spec, state)
    elif st.moving_goal:
        state.cue_pos += state.cue_vel * spec.dt
        state.goal_pos = state.cue_pos

    # stage completion
    if np.linalg.norm(state.pos - state.goal_pos) <= st.goal_radius and (
        st.max_speed is None or float(np.linalg.norm(state.vel)) <= st.max_speed
    ):
        state.stage_ticks.append(state.tick)
        state.stage += 1
        if state.stage == len(spec.stages):
            state.done = True
            state.success = True
            return state
        _enter_stage(spec, state)

    if state.tick >= spec.tick_limit:
        state.done = True
    return state


def progress(spec: EnvSpec, state: EnvState) -> float:
    """Fraction of sub-goals completed, in [0, 1]."""
    return state.stage / len(spec.stages)


# ---------------------------------------------------------------------------
# the environment registry

def _bifurcate() -> EnvSpec:
    return EnvSpec(
        name="bifurcate",
        start=(0.05, 0.0), start_jitter=0.03,
        stages=(Stage(goal=(0.95, 0.0), goal_radius=0.07),),
        # touching the box fails the episode, so a late or indecisive route
        # choice actually costs something
        obstacles=(Box(0.38, -0.14, 0.62, 0.14, hazard=True),),
        tick_limit=250,
        expert_modes=2,
    )


def _catch() -> EnvSpec:
    return EnvSpec(
        name="catch",
        start=(0.1, 0.0), start_jitter=0.03,
        stages=(Stage(goal=(0.9, -0.28), goal_radius=0.08,
                      cue_vel=(-0.12, 0.14), moving_goal=True),),
        tick_limit=250,
        variants=2,
    )


def _dash() -> EnvSpec:
    gap_half = 0.09
    gap_y0 = -0.22
    gap_v = 0.1
    return EnvSpec(
        name="dash",
        start=(0.08, 0.0), start_jitter=0.03,
        stages=(Stage(goal=(0.92, 0.0), goal_radius=0.07, cue_vel=(0.0, gap_v)),),
        obstacles=(
            Box(0.48, -1.2, 0.56, gap_y0 - gap_half, 0.0, gap_v),   # below the gap
            Box(0.48, gap_y0 + gap_half, 0.56, 1.2, 0.0, gap_v),    # above the gap
        ),
        tick_limit=300,
        variants=2,
        cue_is_gap=True,
    )


def _relay() -> EnvSpec:
    return EnvSpec(
        name="relay",
        start=(0.05, 0.0), start_jitter=0.02,
        stages=(
            Stage(goal=(0.5, 0.28), goal_radius=0.07),
            Stage(goal=(0.95, -0.15), goal_radius=0.07),
        ),
        tick_limit=500,
    )


_REGISTRY = {
    "bifurcate": _bifurcate,
    "catch": _catch,
    "dash": _dash,
    "relay": _relay,
}


def make_env(name: str) -> EnvSpec:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ContractError(f"unknown environment {name!r}; choose from {sorted(_REGISTRY)}")


def env_names() -> list:
    return sorted(_REGISTRY)
