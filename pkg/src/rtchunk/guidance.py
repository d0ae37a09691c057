"""Guided inpainting for asynchronous chunk handoff.

A new chunk is sampled while freezing the ``d`` actions that will execute
before it can land, and softly attracting the remainder toward the previous
chunk's tail so the handoff stays smooth. Guidance follows the
denoising-estimate construction: the error against the inpainting target is
pulled back through one Euler prediction of the clean chunk, scaled by a
clipped time-dependent gain, and folded into the ordinary flow update.

Everything here operates in normalized action coordinates internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunks import ActionChunk, NoisyChunk, Observation
from .errors import ContractError, GuidanceNumericsError
from .policy import (
    VelocityFieldParams,
    _velocity_norm_cached,
    _vjp_chunk,
    as_generator,
    denormalize_actions,
    normalize_actions,
    normalize_obs,
)


@dataclass(frozen=True)
class MaskWeights:
    """Per-horizon-index inpainting weights in [0, 1].

    ``w[i] = 1`` for ``i < d`` (frozen), 0 for ``i >= len(w) - s`` (no
    previous-chunk coverage), strictly decreasing in between.
    """

    w: np.ndarray
    d: int
    s: int

    def __post_init__(self):
        arr = np.asarray(self.w, dtype=np.float64)
        if arr.ndim != 1:
            raise ContractError("mask must be 1-D")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ContractError("mask weights must lie in [0, 1]")
        h = arr.shape[0]
        d, s = int(self.d), int(self.s)
        if not (0 <= d <= h and 0 <= s <= h):
            raise ContractError("0 <= d <= H and 0 <= s <= H")
        if not np.all(arr[:d] == 1.0):
            raise ContractError("w[i] = 1 for i < d")
        if not np.all(arr[h - s:] == 0.0):
            raise ContractError("w[i] = 0 for i >= H - s")
        mid = arr[d:h - s]
        if mid.size > 1 and not np.all(np.diff(mid) < 0.0):
            raise ContractError("w strictly decreasing on d <= i < H - s")
        object.__setattr__(self, "w", arr)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance strength ``beta``, Euler step count ``n_steps``, mask shape.

    ``mask``: "soft" (default), "hard" (ablation), or "null" (all-zero
    weights; diagnostic only — reduces guided inference to unguided
    sampling).
    """

    beta: float = 5.0
    n_steps: int = 5
    mask: str = "soft"

    def __post_init__(self):
        if not (self.beta > 0.0):
            raise ContractError("beta > 0")
        if self.n_steps < 1:
            raise ContractError("n_steps >= 1")
        if self.mask not in ("soft", "hard", "null"):
            raise ContractError(f"mask must be 'soft', 'hard' or 'null', got {self.mask!r}")


def soft_mask(horizon: int, s: int, d: int) -> MaskWeights:
    """Attention schedule over horizon indices for a handoff at offset ``s``.

    The first ``d`` indices (actions committed to execute during inference)
    get weight 1; indices past the previous chunk's remaining coverage
    ``horizon - s`` get 0; between them the weight decays as
    ``c * (exp(c) - 1) / (e - 1)`` where ``c`` ramps linearly from ~1 down
    to 1/(horizon - s - d + 1).

    Requires ``0 <= d <= s <= horizon - d``.
    """
    if horizon < 1:
        raise ContractError("horizon >= 1")
    if d < 0:
        raise ContractError("d >= 0")
    if d > s:
        raise ContractError("d <= s")
    if s > horizon - d:
        raise ContractError("s <= horizon - d")
    w = np.zeros(horizon)
    w[:d] = 1.0
    denom = horizon - s - d + 1
    i = np.arange(d, horizon - s)
    c = (horizon - s - i) / denom
    w[d:horizon - s] = c * np.expm1(c) / (np.e - 1.0)
    return MaskWeights(w, d, s)


def hard_mask(horizon: int, d: int) -> MaskWeights:
    """Binary mask: freeze the first ``d`` indices, ignore the rest."""
    if horizon < 1:
        raise ContractError("horizon >= 1")
    if not (0 <= d <= horizon):
        raise ContractError("0 <= d <= horizon")
    w = np.zeros(horizon)
    w[:d] = 1.0
    return MaskWeights(w, d, horizon - d)


def pigdm_weight(tau: float, beta: float) -> float:
    """Clipped guidance gain at flow time ``tau``.

    The unclipped gain is ``(1 - tau) / (tau * r2)`` with
    ``r2 = (1 - tau)^2 / (tau^2 + (1 - tau)^2)``; it diverges at tau = 0,
    so it is clipped at ``beta``.
    """
    if not (0.0 <= tau < 1.0):
        raise ContractError("0 <= tau < 1")
    if not (beta > 0.0):
        raise ContractError("beta > 0")
    if tau == 0.0:
        return float(beta)
    r2 = (1.0 - tau) ** 2 / (tau * tau + (1.0 - tau) ** 2)
    return float(min(beta, (1.0 - tau) / (tau * r2)))


def denoise_estimate(chunk: NoisyChunk, v: np.ndarray) -> np.ndarray:
    """One-step Euler prediction of the clean chunk from flow time ``tau``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != chunk.values.shape:
        raise ContractError("velocity must match chunk shape")
    return chunk.values + (1.0 - chunk.tau) * v


def guided_inference(params: VelocityFieldParams, obs: Observation, prev_chunk,
                     d: int, s: int, config: GuidanceConfig, rng_seed) -> ActionChunk:
    """Sample a chunk consistent with the tail of the previous one.

    Args:
        params: trained velocity field.
        obs: observation snapshot taken when inference started.
        prev_chunk: not-yet-executed tail of the previous chunk (ActionChunk
            or array), raw action units, shape (horizon - s, action_dim).
        d: forecast number of actions that will execute before this chunk
            lands; the first ``d`` indices are frozen to ``prev_chunk``.
        s: actions already consumed from the previous chunk.
        config: guidance strength / step count / mask shape.
        rng_seed: int seed or numpy Generator for the initial noise draw.

    Returns:
        Denormalized ActionChunk of full horizon.
    """
    horizon, m_dim = params.horizon, params.action_dim
    if obs.dim != params.obs_dim:
        raise ContractError(f"obs dim {obs.dim} != {params.obs_dim}")
    prev = np.asarray(getattr(prev_chunk, "values", prev_chunk), dtype=np.float64)
    if prev.shape != (horizon - s, m_dim):
        raise ContractError(
            f"prev tail shape {prev.shape} != ({horizon - s}, {m_dim})"
        )
    if config.mask == "soft":
        mask = soft_mask(horizon, s, d)
    elif config.mask == "hard":
        if s > horizon - d:
            raise ContractError("s <= horizon - d")
        mask = hard_mask(horizon, d)
    else:
        mask = MaskWeights(np.zeros(horizon), 0, horizon)
    w_col = mask.w[:, None]

    target = np.zeros((horizon, m_dim))
    if prev.shape[0]:
        target[: prev.shape[0]] = normalize_actions(params, prev)

    rng = as_generator(rng_seed)
    a = rng.standard_normal((horizon, m_dim))
    obs_n = normalize_obs(params, obs.state)
    n = config.n_steps
    for k in range(n):
        tau = k / n
        v, cache = _velocity_norm_cached(params, a, obs_n, tau)
        a_hat = a + (1.0 - tau) * v
        err = (target - a_hat) * w_col
        # pullback through A + (1 - tau) v(A): identity term plus the VJP
        grad = err + (1.0 - tau) * _vjp_chunk(params, cache, err)
        a = a + (v + pigdm_weight(tau, config.beta) * grad) / n
        if not np.all(np.isfinite(a)):
            raise GuidanceNumericsError(tau)
    return ActionChunk(denormalize_actions(params, a))
