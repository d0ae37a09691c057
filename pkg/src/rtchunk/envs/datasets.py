"""Demonstration rollouts and dataset generation.

Episodes are collected closed-loop: the expert recomputes its command every
tick from the noisy state. Chunks are sliced from the commanded action
sequence with stride 1 and right-padded by repeating the final action, so
every tick of every successful episode yields one (obs, chunk) sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from ..storage import Dataset, save_dataset
from .core import EnvSpec, observe, progress, reset, step
from .experts import expert_force


@dataclass
class EpisodeRollout:
    obs: np.ndarray        # (T, 8) observation before each action
    actions: np.ndarray    # (T, 2) commanded force before actuation noise
    success: bool
    mode: int
    variant: int
    route: int             # realized route for multimodal envs (+1 upper / -1 lower / 0 n.a.)
    ticks: int
    progress: float


def run_expert_episode(spec: EnvSpec, seed: int, mode: int | None = None,
                       open_loop: bool = False) -> EpisodeRollout:
    """One expert episode under action noise.

    The recorded actions are the expert's *commands*; the actuation noise
    that perturbed the executed forces shows up only through the state the
    closed-loop expert reacted to. Labels therefore stay smooth, and the
    spread the policy learns is the genuine kind: which route the expert
    was committed to.

    ``open_loop=True`` plans the whole command sequence against the
    noiseless dynamics first, then replays it blindly under noise (the last
    command repeats if the plan runs out). Comparing the two isolates the
    value of closed-loop correction.
    """
    rng = np.random.default_rng(seed)
    state = reset(spec, rng)
    if mode is None:
        mode = int(rng.integers(spec.expert_modes)) if spec.expert_modes > 1 else 0

    plan = None
    if open_loop:
        shadow = state.copy()
        plan = []
        while not shadow.done:
            f = expert_force(spec, shadow, mode)
            plan.append(f)
            step(spec, shadow, f, rng=None)
        plan = np.asarray(plan)

    obs_list, act_list = [], []
    route = 0
    while not state.done:
        obs_list.append(observe(state))
        if open_loop:
            t = min(state.tick, len(plan) - 1)
            f = plan[t]
        else:
            f = expert_force(spec, state, mode)
        step(spec, state, f, rng)
        act_list.append(np.asarray(f, dtype=np.float64))
        if route == 0 and state.pos[0] >= 0.5:
            route = 1 if state.pos[1] > 0 else -1
    if spec.expert_modes <= 1:
        route = 0
    return EpisodeRollout(
        obs=np.asarray(obs_list), actions=np.asarray(act_list),
        success=state.success, mode=mode, variant=state.variant,
        route=route, ticks=state.tick, progress=progress(spec, state),
    )


def slice_chunks(rollout: EpisodeRollout, horizon: int) -> tuple:
    """Stride-1 sliding windows over the commanded actions; windows running
    past the end repeat the final action."""
    acts = rollout.actions
    t_total = len(acts)
    if t_total == 0:
        raise ContractError("empty rollout")
    padded = np.concatenate([acts, np.repeat(acts[-1:], horizon - 1, axis=0)], axis=0)
    idx = np.arange(t_total)[:, None] + np.arange(horizon)[None, :]
    return rollout.obs.copy(), padded[idx]


def generate_dataset(spec: EnvSpec, episodes: int, seed: int,
                     horizon: int = 8, min_success_rate: float = 0.95,
                     path=None) -> tuple:
    """Roll out ``episodes`` expert episodes and slice them into a Dataset.

    Only successful episodes contribute samples; if the success rate over
    all attempted episodes falls below ``min_success_rate`` the dataset is
    rejected. Deterministic per seed. Returns (dataset, report dict); the
    dataset is also written to ``path`` when given.
    """
    if episodes < 1:
        raise ConfigError("episodes >= 1 required (empty dataset)")
    seeds = np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint64)
    all_obs, all_chunks = [], []
    successes = 0
    mode_counts = np.zeros(spec.expert_modes, dtype=np.int64)
    route_counts = {1: 0, -1: 0}
    variant_counts = np.zeros(spec.variants, dtype=np.int64)
    for ep_seed in seeds:
        r = run_expert_episode(spec, int(ep_seed))
        if not r.success:
            continue
        successes += 1
        mode_counts[r.mode] += 1
        variant_counts[r.variant] += 1
        if r.route in route_counts:
            route_counts[r.route] += 1
        o, c = slice_chunks(r, horizon)
        all_obs.append(o)
        all_chunks.append(c)
    rate = successes / episodes
    report = {
        "env": spec.name,
        "episodes": episodes,
        "successes": successes,
        "success_rate": rate,
        "mode_counts": mode_counts.tolist(),
        "route_counts": {"upper": route_counts[1], "lower": route_counts[-1]},
        "variant_counts": variant_counts.tolist(),
        "samples": int(sum(len(o) for o in all_obs)),
    }
    if rate < min_success_rate:
        raise ContractError(
            f"expert success rate {rate:.3f} below {min_success_rate:.2f} "
            f"on {spec.name!r}; dataset rejected ({report})"
        )
    dataset = Dataset(obs=np.concatenate(all_obs), chunks=np.concatenate(all_chunks))
    if path is not None:
        save_dataset(path, dataset)
    return dataset, report
