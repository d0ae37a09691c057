from .core import (
    ACTION_DIM,
    OBS_DIM,
    Box,
    EnvSpec,
    EnvState,
    Stage,
    env_names,
    make_env,
    observe,
    progress,
    reset,
    step,
)
from .datasets import EpisodeRollout, generate_dataset, run_expert_episode, slice_chunks
from .experts import expert_action_chunk, expert_force

__all__ = [
    "ACTION_DIM", "OBS_DIM", "Box", "EnvSpec", "EnvState", "Stage",
    "env_names", "make_env", "observe", "progress", "reset", "step",
    "EpisodeRollout", "generate_dataset", "run_expert_episode", "slice_chunks",
    "expert_action_chunk", "expert_force",
]
