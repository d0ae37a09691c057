"""Scripted PD experts used to generate demonstration data.

``expert_force`` is the per-tick control law; ``expert_action_chunk`` rolls
it through the noiseless dynamics to emit an H-step force chunk from a given
state. Experts act on the observed (noisy) state during data collection, so
the datasets reflect closed-loop corrections rather than open-loop replays.

Modes select between discrete strategies where the task has them: in
``bifurcate`` mode 0 routes above the obstacle and mode 1 below. The other
environments have a single mode (0).
"""

from __future__ import annotations

import numpy as np

from ..chunks import ActionChunk
from ..errors import ContractError
from .core import EnvSpec, EnvState, step

KP = 18.0
KD = 7.0


def _pd(spec: EnvSpec, state: EnvState, target, target_vel=(0.0, 0.0)) -> np.ndarray:
    f = KP * (np.asarray(target) - state.pos) + KD * (np.asarray(target_vel) - state.vel)
    return np.clip(f, -spec.force_bound, spec.force_bound)


def _bifurcate_force(spec: EnvSpec, state: EnvState, mode: int) -> np.ndarray:
    # cruise straight at the hazard and commit to a lane only at the last
    # viable moment, so the route stays ambiguous while the box approaches;
    # the swerve overshoots the lane to buy clearance at the near corner
    lane = 0.26 if mode == 0 else -0.26
    swerve = 0.34 if mode == 0 else -0.34
    px = state.pos[0]
    if px < 0.18:
        return _pd(spec, state, (0.26, 0.0), target_vel=(0.45, 0.0))
    if px < 0.40:
        # forward velocity target keeps every mid-course phase non-parking:
        # a slow arrival must still be pushed through the phase boundary,
        # so the data never demonstrates stopping short of the goal
        return _pd(spec, state, (0.40, swerve), target_vel=(0.12, 0.0))
    if px < 0.64:
        return _pd(spec, state, (0.70, lane), target_vel=(0.45, 0.0))
    return _pd(spec, state, state.goal_pos)


def _catch_force(spec: EnvSpec, state: EnvState, mode: int) -> np.ndarray:
    lead = 0.35  # seconds of target motion to aim ahead of
    aim = state.cue_pos + lead * state.cue_vel
    return _pd(spec, state, aim, target_vel=state.cue_vel)


def _dash_force(spec: EnvSpec, state: EnvState, mode: int) -> np.ndarray:
    if state.pos[0] < 0.58:
        # press toward the wall while tracking the gap; contact holds x
        # until the opening arrives, then the press carries us through
        aim_y = state.cue_pos[1] + 0.2 * state.cue_vel[1]
        return _pd(spec, state, (0.70, aim_y), target_vel=(0.0, state.cue_vel[1]))
    return _pd(spec, state, state.goal_pos)


def _relay_force(spec: EnvSpec, state: EnvState, mode: int) -> np.ndarray:
    return _pd(spec, state, state.goal_pos)


_EXPERTS = {
    "bifurcate": _bifurcate_force,
    "catch": _catch_force,
    "dash": _dash_force,
    "relay": _relay_force,
}


def expert_force(spec: EnvSpec, state: EnvState, mode: int = 0) -> np.ndarray:
    """Single-tick expert command (already clipped to the force bound)."""
    if not 0 <= mode < spec.expert_modes:
        raise ContractError(
            f"mode {mode} outside strategy set of {spec.name!r} "
            f"(expert_modes={spec.expert_modes})"
        )
    try:
        law = _EXPERTS[spec.name]
    except KeyError:
        raise ContractError(f"no expert for environment {spec.name!r}")
    return law(spec, state, mode)


def expert_action_chunk(state: EnvState, mode: int, spec: EnvSpec,
                        horizon: int = 8) -> ActionChunk:
    """Emit the next ``horizon`` expert forces by rolling the noiseless
    dynamics forward from ``state``. Terminal states freeze: remaining rows
    repeat the braking command at the final pose."""
    shadow = state.copy()
    forces = np.empty((horizon, 2))
    for i in range(horizon):
        forces[i] = expert_force(spec, shadow, mode)
        if not shadow.done:
            step(spec, shadow, forces[i], rng=None)
    return ActionChunk(forces)
