"""Core value types for action-chunk policies.

All numeric payloads are float64 numpy arrays. Validation happens at
construction so downstream code can index without re-checking shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def _as_f64(x, shape_hint: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{shape_hint} must be finite")
    return arr


@dataclass(frozen=True)
class ActionChunk:
    """A horizon of actions, shape (horizon, action_dim)."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_f64(self.values, "action chunk")
        if arr.ndim != 2:
            raise ContractError("action chunk must be 2-D (horizon, action_dim)")
        object.__setattr__(self, "values", arr)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def action_dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Observation:
    """A flat observation vector plus the controller tick it was taken at."""

    state: np.ndarray
    tick: int = 0

    def __post_init__(self):
        arr = _as_f64(self.state, "observation")
        if arr.ndim != 1:
            raise ContractError("observation must be 1-D")
        object.__setattr__(self, "state", arr)
        object.__setattr__(self, "tick", int(self.tick))

    @property
    def dim(self) -> int:
        return self.state.shape[0]


@dataclass(frozen=True)
class NoisyChunk:
    """A partially denoised chunk at flow time ``tau`` in [0, 1)."""

    values: np.ndarray
    tau: float

    def __post_init__(self):
        arr = _as_f64(self.values, "noisy chunk")
        if arr.ndim != 2:
            raise ContractError("noisy chunk must be 2-D (horizon, action_dim)")
        object.__setattr__(self, "values", arr)
        tau = float(self.tau)
        if not (0.0 <= tau < 1.0):
            raise ContractError("0 <= tau < 1")
        object.__setattr__(self, "tau", tau)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def action_dim(self) -> int:
        return self.values.shape[1]
