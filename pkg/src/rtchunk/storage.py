"""Binary containers for datasets and checkpoints.

Both formats are little-endian with an 8-byte magic and a u32 version so
they can be validated before any payload is touched. Layouts are documented
in docs/FORMATS.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .policy import VelocityFieldParams

DATASET_MAGIC = b"RTCDSET\x00"
CHECKPOINT_MAGIC = b"RTCCKPT\x00"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1

_ACT_TO_CODE = {"tanh": 0, "identity": 1}
_CODE_TO_ACT = {v: k for k, v in _ACT_TO_CODE.items()}


@dataclass
class Dataset:
    """Expert chunks paired with the observations they were computed from."""

    obs: np.ndarray      # (N, obs_dim)
    chunks: np.ndarray   # (N, horizon, action_dim)

    def __post_init__(self):
        self.obs = np.ascontiguousarray(self.obs, dtype=np.float64)
        self.chunks = np.ascontiguousarray(self.chunks, dtype=np.float64)
        if self.obs.ndim != 2 or self.chunks.ndim != 3:
            raise ConfigError("dataset arrays must be (N, K) and (N, H, M)")
        if self.obs.shape[0] != self.chunks.shape[0]:
            raise ConfigError("sample count mismatch between obs and chunks")

    def __len__(self) -> int:
        return self.obs.shape[0]

    @property
    def horizon(self) -> int:
        return self.chunks.shape[1]

    @property
    def action_dim(self) -> int:
        return self.chunks.shape[2]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]


def save_dataset(path, ds: Dataset) -> None:
    n, k = ds.obs.shape
    _, h, m = ds.chunks.shape
    header = DATASET_MAGIC + struct.pack("<IIIIQ", DATASET_VERSION, h, m, k, n)
    payload = np.concatenate(
        [ds.obs, ds.chunks.reshape(n, h * m)], axis=1
    ).astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < 32 or data[:8] != DATASET_MAGIC:
        raise ConfigError(f"{path}: not a dataset file")
    version, h, m, k, n = struct.unpack_from("<IIIIQ", data, 8)
    if version != DATASET_VERSION:
        raise ConfigError(f"{path}: unsupported dataset version {version}")
    row = k + h * m
    expected = 32 + n * row * 8
    if len(data) != expected:
        raise ConfigError(f"{path}: truncated dataset ({len(data)} != {expected} bytes)")
    flat = np.frombuffer(data, dtype="<f8", count=n * row, offset=32).reshape(n, row)
    return Dataset(obs=flat[:, :k].copy(), chunks=flat[:, k:].reshape(n, h, m).copy())


def save_checkpoint(path, params: VelocityFieldParams) -> None:
    dims = [params.weights[0].shape[1]] + [w.shape[0] for w in params.weights]
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(
            "<IIIIIII",
            CHECKPOINT_VERSION,
            params.horizon,
            params.action_dim,
            params.obs_dim,
            params.tau_dim,
            _ACT_TO_CODE[params.activation],
            len(params.weights),
        ),
        struct.pack(f"<{len(dims)}I", *dims),
    ]
    for w, b in zip(params.weights, params.biases):
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    for arr in (params.obs_mean, params.obs_scale, params.act_mean, params.act_scale):
        parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> VelocityFieldParams:
    data = Path(path).read_bytes()
    if len(data) < 36 or data[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, h, m, k, tau_dim, act_code, n_layers = struct.unpack_from("<IIIIIII", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    if act_code not in _CODE_TO_ACT:
        raise ConfigError(f"{path}: unknown activation code {act_code}")
    off = 36
    dims = struct.unpack_from(f"<{n_layers + 1}I", data, off)
    off += 4 * (n_layers + 1)

    def take(count):
        nonlocal off
        end = off + count * 8
        if end > len(data):
            raise ConfigError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy()
        off = end
        return arr

    weights, biases = [], []
    for i in range(n_layers):
        weights.append(take(dims[i + 1] * dims[i]).reshape(dims[i + 1], dims[i]))
        biases.append(take(dims[i + 1]))
    obs_mean, obs_scale = take(k), take(k)
    act_mean, act_scale = take(m), take(m)
    if off != len(data):
        raise ConfigError(f"{path}: trailing bytes in checkpoint")
    return VelocityFieldParams(
        horizon=h, action_dim=m, obs_dim=k,
        weights=weights, biases=biases, activation=_CODE_TO_ACT[act_code],
        obs_mean=obs_mean, obs_scale=obs_scale,
        act_mean=act_mean, act_scale=act_scale, tau_dim=tau_dim,
    )
