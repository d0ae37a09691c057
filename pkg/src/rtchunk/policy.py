"""Flow-matching action-chunk policy: model, loss, training, sampling.

The velocity field is an MLP over ``[flattened chunk, normalized obs,
sinusoidal tau features]``. Chunks handed to :func:`velocity` /
:func:`cfm_loss` noise arguments live in normalized action coordinates
(mean zero, unit scale per action dim); :func:`sample_unguided` returns
denormalized chunks ready for an environment.

Training is plain batched numpy with Adam; the per-sample hot path used by
samplers goes through the kernel backend in ``_kernels``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import ACT_IDENTITY, ACT_TANH, Mlp
from .chunks import ActionChunk, NoisyChunk, Observation
from .errors import ContractError, TrainingDivergedError

TAU_FREQS = (1.0, 2.0, 4.0, 8.0)
TAU_DIM = 2 * len(TAU_FREQS)

_ACT_CODES = {"tanh": ACT_TANH, "identity": ACT_IDENTITY}


def tau_embedding(tau: float) -> np.ndarray:
    """Sinusoidal features of the flow time, shape (TAU_DIM,)."""
    ang = 2.0 * np.pi * np.asarray(TAU_FREQS) * float(tau)
    out = np.empty(TAU_DIM)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def _tau_embedding_batch(tau: np.ndarray) -> np.ndarray:
    ang = 2.0 * np.pi * tau[:, None] * np.asarray(TAU_FREQS)[None, :]
    out = np.empty((tau.shape[0], TAU_DIM))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


@dataclass
class VelocityFieldParams:
    """Trained weights plus the normalization statistics baked in at training.

    Treated as immutable after construction; the kernel instance is built
    lazily and cached.
    """

    horizon: int
    action_dim: int
    obs_dim: int
    weights: list
    biases: list
    activation: str
    obs_mean: np.ndarray
    obs_scale: np.ndarray
    act_mean: np.ndarray
    act_scale: np.ndarray
    tau_dim: int = TAU_DIM
    _mlp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.activation not in _ACT_CODES:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.horizon < 1 or self.action_dim < 1 or self.obs_dim < 1:
            raise ContractError("horizon, action_dim, obs_dim must be >= 1")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        in_dim = self.horizon * self.action_dim + self.obs_dim + self.tau_dim
        if self.weights[0].shape[1] != in_dim:
            raise ContractError(
                f"first layer expects {self.weights[0].shape[1]} inputs, "
                f"model geometry implies {in_dim}"
            )
        if self.weights[-1].shape[0] != self.horizon * self.action_dim:
            raise ContractError("last layer width must equal horizon * action_dim")
        for name in ("obs_mean", "obs_scale", "act_mean", "act_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.obs_mean.shape != (self.obs_dim,) or self.obs_scale.shape != (self.obs_dim,):
            raise ContractError("obs stats must have shape (obs_dim,)")
        if self.act_mean.shape != (self.action_dim,) or self.act_scale.shape != (self.action_dim,):
            raise ContractError("action stats must have shape (action_dim,)")
        if np.any(self.obs_scale <= 0) or np.any(self.act_scale <= 0):
            raise ContractError("normalization scales must be strictly positive")

    def kernel(self):
        if self._mlp is None:
            self._mlp = Mlp(self.weights, self.biases, _ACT_CODES[self.activation])
        return self._mlp

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights[:-1])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 16
    batch_size: int = 256
    learning_rate: float = 1e-3
    hidden: tuple = (256, 256, 256)
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ContractError("hidden sizes must be positive")
        if self.activation not in _ACT_CODES:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate > 0")
        if self.batch_size < 1:
            raise ContractError("batch_size >= 1")
        if self.epochs < 1:
            raise ContractError("epochs >= 1")


# ---------------------------------------------------------------------------
# normalization helpers

def normalize_obs(params: VelocityFieldParams, obs: np.ndarray) -> np.ndarray:
    return (np.asarray(obs, dtype=np.float64) - params.obs_mean) / params.obs_scale


def normalize_actions(params: VelocityFieldParams, actions: np.ndarray) -> np.ndarray:
    return (np.asarray(actions, dtype=np.float64) - params.act_mean) / params.act_scale


def denormalize_actions(params: VelocityFieldParams, actions: np.ndarray) -> np.ndarray:
    return np.asarray(actions, dtype=np.float64) * params.act_scale + params.act_mean


# ---------------------------------------------------------------------------
# velocity field evaluation

def _input_vector(params: VelocityFieldParams, a_norm: np.ndarray, obs_n: np.ndarray,
                  tau: float) -> np.ndarray:
    return np.concatenate([a_norm.ravel(), obs_n, tau_embedding(tau)])


def _velocity_norm(params: VelocityFieldParams, a_norm: np.ndarray, obs_n: np.ndarray,
                   tau: float) -> np.ndarray:
    """Velocity at a normalized-space chunk; obs already normalized."""
    y = params.kernel().forward(_input_vector(params, a_norm, obs_n, tau))
    return y.reshape(params.horizon, params.action_dim)


def _velocity_norm_cached(params, a_norm, obs_n, tau):
    y, cache = params.kernel().forward_cached(_input_vector(params, a_norm, obs_n, tau))
    return y.reshape(params.horizon, params.action_dim), cache


def _vjp_chunk(params, cache, cot: np.ndarray) -> np.ndarray:
    """Pull a cotangent on the velocity output back to the chunk input block."""
    dx = params.kernel().vjp_input(cache, np.ascontiguousarray(cot, dtype=np.float64).ravel())
    hm = params.horizon * params.action_dim
    return dx[:hm].reshape(params.horizon, params.action_dim)


def _check_geometry(params: VelocityFieldParams, chunk_values: np.ndarray,
                    obs: Observation) -> None:
    if chunk_values.shape != (params.horizon, params.action_dim):
        raise ContractError(
            f"chunk shape {chunk_values.shape} != ({params.horizon}, {params.action_dim})"
        )
    if obs.dim != params.obs_dim:
        raise ContractError(f"obs dim {obs.dim} != {params.obs_dim}")


def velocity(params: VelocityFieldParams, chunk: NoisyChunk, obs: Observation) -> np.ndarray:
    """Evaluate the learned velocity field.

    Args:
        params: trained model.
        chunk: normalized-space noisy chunk at flow time ``chunk.tau``.
        obs: raw observation (normalized internally).

    Returns:
        Velocity array of shape (horizon, action_dim), normalized units.
    """
    _check_geometry(params, chunk.values, obs)
    return _velocity_norm(params, chunk.values, normalize_obs(params, obs.state), chunk.tau)


def velocity_vjp(params: VelocityFieldParams, chunk: NoisyChunk, obs: Observation,
                 cotangent: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the velocity w.r.t. the chunk input.

    Computes ``cotangent^T (dv/dA)`` for the chunk block only (the obs and
    tau inputs are held fixed), returned as an (horizon, action_dim) array.
    """
    _check_geometry(params, chunk.values, obs)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (params.horizon, params.action_dim):
        raise ContractError("cotangent must match chunk shape")
    obs_n = normalize_obs(params, obs.state)
    _, cache = _velocity_norm_cached(params, chunk.values, obs_n, chunk.tau)
    return _vjp_chunk(params, cache, cot)


def cfm_loss(params: VelocityFieldParams, chunk: ActionChunk, obs: Observation,
             noise: np.ndarray, tau: float) -> float:
    """Conditional flow-matching loss for one sample.

    The target velocity along the linear path from ``noise`` to the
    normalized expert chunk is their difference; the loss is the mean squared
    error over all chunk entries.
    """
    _check_geometry(params, chunk.values, obs)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != chunk.values.shape:
        raise ContractError("noise must match chunk shape")
    if not (0.0 <= tau < 1.0):
        raise ContractError("0 <= tau < 1")
    a1 = normalize_actions(params, chunk.values)
    a_tau = tau * a1 + (1.0 - tau) * noise
    v = _velocity_norm(params, a_tau, normalize_obs(params, obs.state), tau)
    diff = v - (a1 - noise)
    return float(np.mean(diff * diff))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_unguided(params: VelocityFieldParams, obs: Observation, n: int,
                    rng_seed) -> ActionChunk:
    """Draw one chunk by Euler integration of the flow from pure noise.

    ``n`` left-endpoint Euler steps on the tau grid {0, 1/n, ..., (n-1)/n}.
    Deterministic given the seed.
    """
    if n < 1:
        raise ContractError("n >= 1")
    if obs.dim != params.obs_dim:
        raise ContractError(f"obs dim {obs.dim} != {params.obs_dim}")
    rng = as_generator(rng_seed)
    a = rng.standard_normal((params.horizon, params.action_dim))
    obs_n = normalize_obs(params, obs.state)
    for k in range(n):
        tau = k / n
        v = _velocity_norm(params, a, obs_n, tau)
        a = a + v / n
    return ActionChunk(denormalize_actions(params, a))


# ---------------------------------------------------------------------------
# training

def _init_layers(dims, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _batch_forward(weights, biases, x, use_tanh):
    """Returns (output, per-layer inputs) for the backward pass."""
    caches = [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.T + b
        if i < last:
            if use_tanh:
                h = np.tanh(h)
            caches.append(h)
    return h, caches


def _batch_backward(weights, caches, g, use_tanh):
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = g.T @ caches[i]
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ weights[i]
            if use_tanh:
                g = g * (1.0 - caches[i] * caches[i])
    return grads_w, grads_b


def _dataset_arrays(dataset):
    """Accepts a list of (Observation, ActionChunk) pairs or any object with
    ``obs`` / ``chunks`` array attributes; returns (obs (N,K), acts (N,H,M))."""
    if hasattr(dataset, "obs") and hasattr(dataset, "chunks"):
        return (np.asarray(dataset.obs, dtype=np.float64),
                np.asarray(dataset.chunks, dtype=np.float64))
    obs = np.stack([o.values for o, _ in dataset])
    acts = np.stack([c.values for _, c in dataset])
    return obs, acts


def train(dataset, config: TrainConfig, loss_log: list | None = None) -> VelocityFieldParams:
    """Fit the velocity field with conditional flow matching.

    Args:
        dataset: (Observation, ActionChunk) pairs, or a container exposing
            ``obs`` (N, K) and ``chunks`` (N, H, M) arrays.
        config: optimizer and architecture settings.
        loss_log: optional list; per-step losses are appended.

    Returns:
        Trained :class:`VelocityFieldParams` with normalization stats from
        the dataset baked in.

    Raises:
        TrainingDivergedError: if the loss becomes non-finite.
    """
    obs_raw, acts_raw = _dataset_arrays(dataset)
    n, k_dim = obs_raw.shape
    horizon, action_dim = acts_raw.shape[1], acts_raw.shape[2]

    obs_mean = obs_raw.mean(axis=0)
    obs_scale = np.maximum(obs_raw.std(axis=0), 1e-6)
    act_mean = acts_raw.reshape(-1, action_dim).mean(axis=0)
    act_scale = np.maximum(acts_raw.reshape(-1, action_dim).std(axis=0), 1e-6)

    obs_n = (obs_raw - obs_mean) / obs_scale
    a1 = ((acts_raw - act_mean) / act_scale).reshape(n, horizon * action_dim)

    hm = horizon * action_dim
    dims = [hm + k_dim + TAU_DIM, *config.hidden, hm]
    rng = np.random.Generator(np.random.PCG64(config.seed))
    weights, biases = _init_layers(dims, rng)
    use_tanh = config.activation == "tanh"

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    bsz = config.batch_size
    step = 0
    total_steps = config.epochs * max(n // bsz, 1)
    for _ in range(config.epochs):
        if n < bsz:
            # tiny dataset: one full-size batch per epoch, drawn with
            # replacement, so gradient noise comes only from (tau, noise)
            batches = [rng.integers(0, n, size=bsz)]
        else:
            order = rng.permutation(n)
            batches = [order[lo:lo + bsz] for lo in range(0, n - bsz + 1, bsz)]
        for idx in batches:
            step += 1
            tau = rng.random(bsz)
            noise = rng.standard_normal((bsz, hm))
            a1_b = a1[idx]
            a_tau = tau[:, None] * a1_b + (1.0 - tau[:, None]) * noise
            x = np.concatenate([a_tau, obs_n[idx], _tau_embedding_batch(tau)], axis=1)
            target = a1_b - noise

            out, caches = _batch_forward(weights, biases, x, use_tanh)
            diff = out - target
            loss = float(np.mean(diff * diff))
            if loss_log is not None:
                loss_log.append(loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(step, loss)

            g = (2.0 / diff.size) * diff
            grads_w, grads_b = _batch_backward(weights, caches, g, use_tanh)

            c1 = 1.0 - beta1 ** step
            c2 = 1.0 - beta2 ** step
            # cosine decay to a 5% floor; late-stage velocity accuracy is
            # what bounds how tightly guidance can pin the prefix
            frac = step / total_steps
            lr = config.learning_rate * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * min(frac, 1.0))))
            for i in range(len(weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * grads_w[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * grads_w[i] ** 2
                weights[i] -= lr * (m_w[i] / c1) / (np.sqrt(v_w[i] / c2) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * grads_b[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * grads_b[i] ** 2
                biases[i] -= lr * (m_b[i] / c1) / (np.sqrt(v_b[i] / c2) + eps)

    return VelocityFieldParams(
        horizon=horizon, action_dim=action_dim, obs_dim=k_dim,
        weights=weights, biases=biases, activation=config.activation,
        obs_mean=obs_mean, obs_scale=obs_scale,
        act_mean=act_mean, act_scale=act_scale,
    )
