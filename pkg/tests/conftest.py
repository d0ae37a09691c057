"""Shared fixtures: parameter factories and cached trained policies.

Trained policies used by the slower suites are built once per session and
cached on disk under ``.cache/`` keyed by a digest of everything that
determines them, so repeated test runs skip training.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from rtchunk.policy import TAU_DIM, VelocityFieldParams

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache"


def random_params(seed, horizon=8, action_dim=2, obs_dim=8, hidden=(32, 32),
                  activation="tanh", w_scale=1.0):
    """Random (untrained) params with unit normalization stats."""
    rng = np.random.default_rng(seed)
    hm = horizon * action_dim
    dims = [hm + obs_dim + TAU_DIM, *hidden, hm]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * w_scale / np.sqrt(fan_in))
        biases.append(rng.standard_normal(fan_out) * 0.05)
    return VelocityFieldParams(
        horizon=horizon, action_dim=action_dim, obs_dim=obs_dim,
        weights=weights, biases=biases, activation=activation,
        obs_mean=np.zeros(obs_dim), obs_scale=np.ones(obs_dim),
        act_mean=np.zeros(action_dim), act_scale=np.ones(action_dim),
    )


@pytest.fixture
def params_factory():
    return random_params


def cached(key_obj, builder, loader, saver):
    """Build-or-load an artifact keyed by the digest of ``key_obj``."""
    CACHE_DIR.mkdir(exist_ok=True)
    digest = hashlib.sha256(json.dumps(key_obj, sort_keys=True).encode()).hexdigest()[:16]
    path = CACHE_DIR / f"{key_obj['kind']}-{digest}.bin"
    if path.exists():
        return loader(path)
    artifact = builder()
    saver(path, artifact)
    return artifact


def dataset_with_report(env_name, episodes, seed, horizon=8):
    """Cached expert dataset + generation report for an environment."""
    from rtchunk.envs import generate_dataset, make_env
    from rtchunk.storage import load_dataset, save_dataset

    key = {"kind": "dataset", "env": env_name, "episodes": episodes,
           "seed": seed, "horizon": horizon}

    def build():
        return generate_dataset(make_env(env_name), episodes, seed, horizon=horizon)

    def save(path, artifact):
        ds, report = artifact
        save_dataset(path, ds)
        Path(str(path) + ".json").write_text(json.dumps(report))

    def load(path):
        return load_dataset(path), json.loads(Path(str(path) + ".json").read_text())

    return cached(key, build, load, save)


@pytest.fixture(scope="session")
def bifurcate_data():
    return dataset_with_report("bifurcate", 2000, seed=0)


def trained_policy(env_name, episodes=2000, data_seed=0, **cfg_kwargs):
    """Cached policy trained on the cached dataset with TrainConfig(**cfg_kwargs)."""
    from rtchunk.policy import TrainConfig, train
    from rtchunk.storage import load_checkpoint, save_checkpoint

    config = TrainConfig(**cfg_kwargs)
    key = {"kind": "policy", "env": env_name, "episodes": episodes,
           "data_seed": data_seed,
           "cfg": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in vars(config).items()}}

    def build():
        dataset, _ = dataset_with_report(env_name, episodes, data_seed)
        return train(dataset, config)

    return cached(key, build, load_checkpoint,
                  lambda path, params: save_checkpoint(path, params))


@pytest.fixture(scope="session")
def bifurcate_policy():
    """The canonical benchmark policy: bifurcate, 2000 episodes, defaults."""
    return trained_policy("bifurcate")


# ---------------------------------------------------------------------------
# measurement protocols shared between unit and acceptance tests


def policy_rollout_to_fork(params, rng, spec, trigger=0.33, exec_h=4, n=5):
    """Drive the policy closed-loop (receding horizon) until it crosses
    ``trigger`` in x; returns (state, prev) where prev is the unexecuted
    tail of the last chunk, or (state, None) if the episode ended first."""
    from rtchunk.chunks import Observation
    from rtchunk.envs import observe, reset, step
    from rtchunk.policy import sample_unguided

    st = reset(spec, rng)
    prev = None
    while not st.done:
        o = Observation(observe(st), tick=st.tick)
        c = sample_unguided(params, o, n=n, rng_seed=int(rng.integers(2**63)))
        for a in c.values[:exec_h]:
            if st.done:
                break
            step(spec, st, a, rng)
        prev = c.values[exec_h:]
        if st.pos[0] >= trigger:
            return st, prev
    return st, None


def fork_prefix_mismatch(params, seed0, n_episodes, trigger=0.33, d=2, s=4,
                         beta=5.0, n=5):
    """Mean max-abs prefix mismatch (normalized units) of guided vs unguided
    generation against the previous chunk, measured at the route decision
    region where cross-chunk consistency is under the most stress.

    Returns (guided_mean, unguided_mean)."""
    import numpy as np

    from rtchunk.chunks import Observation
    from rtchunk.envs import make_env, observe
    from rtchunk.guidance import GuidanceConfig, guided_inference
    from rtchunk.policy import normalize_actions, sample_unguided

    spec = make_env("bifurcate")
    cfg = GuidanceConfig(beta=beta, n_steps=n)
    gs, us = [], []
    attempt = 0
    while len(gs) < n_episodes and attempt < n_episodes * 4:
        rng = np.random.default_rng(seed0 + attempt)
        attempt += 1
        st, prev = policy_rollout_to_fork(params, rng, spec, trigger, exec_h=s, n=n)
        if prev is None:
            continue
        o = Observation(observe(st), tick=st.tick)
        seed = int(rng.integers(2**63))
        g = guided_inference(params, o, prev, d=d, s=s,
                             config=cfg, rng_seed=seed)
        u = sample_unguided(params, o, n=n, rng_seed=seed)
        pn = normalize_actions(params, prev)
        gn = normalize_actions(params, g.values)
        un = normalize_actions(params, u.values)
        gs.append(np.abs(gn[:d] - pn[:d]).max())
        us.append(np.abs(un[:d] - pn[:d]).max())
    return float(np.mean(gs)), float(np.mean(us))


def reference_trace(h, s_min, d, n_ticks):
    """Closed-form oracle for the async schedule under constant delay.

    Derivation, without simulating the executor's state machine: the first
    inference triggers at tick s_min - 1 (the cursor reaches s_min there);
    each later trigger follows the previous by max(s_min, d) ticks (d ticks
    of flight, then max(0, s_min - d) more for the rebased cursor to reach
    s_min again); a chunk triggered at tick T lands in the epilogue of tick
    T + d, so swap i completes at S_i = (s_min - 1) + i*max(s_min, d) + d.
    At tick k, the number of landed swaps is the count of S_i <= k - 1, and
    the intra-chunk index is k for the initial chunk or d + (k - S_last - 1)
    after a swap.

    Returns [(chunk_id, index)] for ticks 0..n_ticks-1.
    """
    period = max(s_min, d)
    first_swap = s_min - 1 + d
    out = []
    for k in range(n_ticks):
        if k - 1 < first_swap:
            out.append((0, k))
        else:
            n_swaps = (k - 1 - first_swap) // period + 1
            last_swap = first_swap + (n_swaps - 1) * period
            out.append((n_swaps, d + k - last_swap - 1))
    return out
