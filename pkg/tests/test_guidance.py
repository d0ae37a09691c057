"""Guided inference mechanics (policy-independent parts)."""

import numpy as np
import pytest

from rtchunk.chunks import ActionChunk, Observation
from rtchunk.errors import ContractError, GuidanceNumericsError
from rtchunk.guidance import GuidanceConfig, guided_inference
from rtchunk.policy import sample_unguided
from conftest import random_params


def test_null_mask_bitwise_equals_unguided():
    """d=0, s=H gives an all-zero mask; guidance must vanish exactly."""
    p = random_params(1, hidden=(32, 32))
    rng = np.random.default_rng(2)
    obs = Observation(rng.standard_normal(8))
    cfg = GuidanceConfig(beta=5.0, n_steps=5)
    prev = np.zeros((0, 2))
    for seed in range(10):
        guided = guided_inference(p, obs, prev, d=0, s=8, config=cfg, rng_seed=seed)
        plain = sample_unguided(p, obs, 5, seed)
        assert np.array_equal(guided.values, plain.values)


def test_null_mask_mode_equals_unguided_any_ds():
    p = random_params(3, hidden=(24,))
    rng = np.random.default_rng(5)
    obs = Observation(rng.standard_normal(8))
    cfg = GuidanceConfig(beta=5.0, n_steps=5, mask="null")
    prev = rng.standard_normal((4, 2))
    guided = guided_inference(p, obs, prev, d=2, s=4, config=cfg, rng_seed=11)
    plain = sample_unguided(p, obs, 5, 11)
    assert np.array_equal(guided.values, plain.values)


def test_guided_deterministic():
    p = random_params(6, hidden=(24, 24))
    rng = np.random.default_rng(1)
    obs = Observation(rng.standard_normal(8))
    prev = rng.standard_normal((4, 2))
    cfg = GuidanceConfig()
    a = guided_inference(p, obs, prev, 2, 4, cfg, 42)
    b = guided_inference(p, obs, prev, 2, 4, cfg, 42)
    assert a.values.tobytes() == b.values.tobytes()


def test_guided_accepts_action_chunk_prev():
    p = random_params(6, hidden=(24,))
    rng = np.random.default_rng(4)
    obs = Observation(rng.standard_normal(8))
    prev = rng.standard_normal((4, 2))
    cfg = GuidanceConfig()
    a = guided_inference(p, obs, prev, 2, 4, cfg, 7)
    b = guided_inference(p, obs, ActionChunk(prev), 2, 4, cfg, 7)
    assert np.array_equal(a.values, b.values)


def test_guided_contract_errors():
    p = random_params(0)
    obs = Observation(np.zeros(8))
    cfg = GuidanceConfig()
    with pytest.raises(ContractError, match="prev"):
        guided_inference(p, obs, np.zeros((3, 2)), 2, 4, cfg, 0)
    with pytest.raises(ContractError, match="d <= s"):
        guided_inference(p, obs, np.zeros((5, 2)), 4, 3, cfg, 0)
    with pytest.raises(ContractError, match="horizon - d"):
        guided_inference(p, obs, np.zeros((1, 2)), 3, 7, cfg, 0)


def test_guided_pulls_prefix_toward_target():
    """Even on an untrained net, guidance moves the frozen prefix toward
    the previous chunk relative to unguided sampling."""
    p = random_params(9, hidden=(32, 32), w_scale=0.5)
    rng = np.random.default_rng(3)
    obs = Observation(rng.standard_normal(8))
    d, s = 2, 4
    cfg = GuidanceConfig(beta=5.0, n_steps=5)
    gaps_guided, gaps_plain = [], []
    for seed in range(30):
        prev = np.random.default_rng(1000 + seed).standard_normal((4, 2))
        guided = guided_inference(p, obs, prev, d, s, cfg, seed)
        plain = sample_unguided(p, obs, 5, seed)
        gaps_guided.append(np.abs(guided.values[:d] - prev[:d]).max())
        gaps_plain.append(np.abs(plain.values[:d] - prev[:d]).max())
    assert np.mean(gaps_guided) < 0.5 * np.mean(gaps_plain)


def test_non_finite_aborts_with_tau():
    """A pathologically scaled net makes the guided iterate blow up."""
    p = random_params(2, hidden=(16,), w_scale=600.0)
    obs = Observation(np.zeros(8))
    cfg = GuidanceConfig(beta=1e6, n_steps=5)
    prev = np.full((4, 2), 1e308)
    with pytest.raises(GuidanceNumericsError) as exc:
        guided_inference(p, obs, prev, 2, 4, cfg, 0)
    assert 0.0 <= exc.value.tau < 1.0


def test_guidance_config_validation():
    with pytest.raises(ContractError):
        GuidanceConfig(beta=0.0)
    with pytest.raises(ContractError):
        GuidanceConfig(n_steps=0)
    with pytest.raises(ContractError):
        GuidanceConfig(mask="fuzzy")
