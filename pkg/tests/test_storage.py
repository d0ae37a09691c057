"""Binary container round-trips and corruption handling."""

import numpy as np
import pytest

from rtchunk.errors import ConfigError
from rtchunk.storage import (
    Dataset,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from conftest import random_params


def make_dataset(rng, n=40, h=8, m=2, k=8):
    return Dataset(obs=rng.standard_normal((n, k)), chunks=rng.standard_normal((n, h, m)))


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = make_dataset(rng)
    path = tmp_path / "d.bin"
    save_dataset(path, ds)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.obs, ds.obs)
    np.testing.assert_array_equal(back.chunks, ds.chunks)
    assert (back.horizon, back.action_dim, back.obs_dim) == (8, 2, 8)


def test_dataset_rewrite_identical_bytes(tmp_path):
    rng = np.random.default_rng(1)
    ds = make_dataset(rng)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_dataset(p1, ds)
    save_dataset(p2, load_dataset(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_corruption(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "d.bin"
    save_dataset(path, make_dataset(rng))
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"

    bad.write_bytes(b"XXXXXXXX" + bytes(raw[8:]))
    with pytest.raises(ConfigError, match="not a dataset"):
        load_dataset(bad)

    bad.write_bytes(bytes(raw[:-16]))
    with pytest.raises(ConfigError, match="truncated"):
        load_dataset(bad)

    mangled = bytearray(raw)
    mangled[8] = 99  # version field
    bad.write_bytes(bytes(mangled))
    with pytest.raises(ConfigError, match="version"):
        load_dataset(bad)


def test_checkpoint_round_trip(tmp_path):
    p = random_params(4, hidden=(24, 16))
    p.obs_mean[:] = np.random.default_rng(0).standard_normal(8)
    p.act_scale[:] = [1.5, 0.4]
    path = tmp_path / "ck.bin"
    save_checkpoint(path, p)
    back = load_checkpoint(path)
    assert back.horizon == p.horizon and back.action_dim == p.action_dim
    assert back.obs_dim == p.obs_dim and back.activation == p.activation
    assert back.tau_dim == p.tau_dim
    for wa, wb in zip(back.weights, p.weights):
        np.testing.assert_array_equal(wa, wb)
    for ba, bb in zip(back.biases, p.biases):
        np.testing.assert_array_equal(ba, bb)
    np.testing.assert_array_equal(back.obs_mean, p.obs_mean)
    np.testing.assert_array_equal(back.act_scale, p.act_scale)


def test_checkpoint_corruption(tmp_path):
    p = random_params(5)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, p)
    raw = path.read_bytes()
    bad = tmp_path / "bad.bin"

    bad.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(ConfigError, match="not a checkpoint"):
        load_checkpoint(bad)

    bad.write_bytes(raw[:-8])
    with pytest.raises(ConfigError, match="truncated|trailing"):
        load_checkpoint(bad)

    bad.write_bytes(raw + b"\x00" * 8)
    with pytest.raises(ConfigError, match="trailing"):
        load_checkpoint(bad)
