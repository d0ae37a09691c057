"""Asynchronous execution of action chunks on a virtual clock.

The controller consumes one action per tick; inference for the next chunk
runs "in the background" and lands a fixed number of ticks after it starts.
Virtual mode co-simulates that background thread on a logical clock — an
inference triggered at tick k completes in the bookkeeping just after the
get_action call at tick k+d — so every schedule is a deterministic,
single-threaded function of the seed.

The shared-state protocol: get_action increments the cursor t and returns
A_cur[t-1]; the inference cycle fires once t >= s_min, snapshots s = t,
passes the un-executed tail A_cur[s:] and the conservative delay forecast
max(Q) to the strategy, and on completion swaps chunks, rebases t -= s, and
records the observed delay (the rebased t) onto Q.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .chunks import Observation
from .errors import ConfigError, ContractError, StallError
from .envs import observe, progress, reset, step
from .guidance import GuidanceConfig, guided_inference
from .policy import sample_unguided


# ---------------------------------------------------------------------------
# execution strategies

@dataclass(frozen=True)
class RTC:
    """Guided inpainting against the previous chunk's tail."""

    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    name: str = "rtc"

    def validate(self, horizon: int, s_min: int, d_ticks: int) -> None:
        # first cycle has s = s_min, and the soft mask needs d <= s
        if d_ticks > s_min:
            raise ConfigError(f"rtc needs d <= s_min (got d={d_ticks}, s_min={s_min})")
        if d_ticks > horizon - s_min:
            raise ConfigError(
                f"rtc needs d <= H - s_min (got d={d_ticks}, H={horizon}, s_min={s_min})"
            )

    def effective_s_min(self, s_min: int) -> int:
        return s_min

    def infer(self, params, obs: Observation, prev_tail, d: int, s: int, rng_seed):
        return guided_inference(params, obs, prev_tail, d, s, self.guidance, rng_seed).values


@dataclass(frozen=True)
class NaiveAsync:
    """Swap to each new chunk as soon as it is ready, no consistency term."""

    n_steps: int = 5
    name: str = "naive_async"

    def validate(self, horizon: int, s_min: int, d_ticks: int) -> None:
        if max(s_min, d_ticks) + d_ticks > horizon:
            raise ConfigError(
                f"max(s_min, d) + d <= H required (s_min={s_min}, d={d_ticks}, H={horizon})"
            )

    def effective_s_min(self, s_min: int) -> int:
        return s_min

    def infer(self, params, obs: Observation, prev_tail, d: int, s: int, rng_seed):
        return sample_unguided(params, obs, self.n_steps, rng_seed).values


@dataclass(frozen=True)
class TemporalEnsemble:
    """Average every buffered chunk's prediction for the current tick.

    ``s_min=None`` is the dense cadence (replan every tick, so s == d each
    cycle); a fixed value replans every s_min ticks.
    """

    s_min: int | None = None
    n_steps: int = 5

    @property
    def name(self) -> str:
        return "te_dense" if self.s_min is None else f"te_sparse_{self.s_min}"

    def validate(self, horizon: int, s_min: int, d_ticks: int) -> None:
        s_min = self.effective_s_min(s_min)
        if max(s_min, d_ticks) + d_ticks > horizon:
            raise ConfigError(
                f"max(s_min, d) + d <= H required (s_min={s_min}, d={d_ticks}, H={horizon})"
            )

    def effective_s_min(self, s_min: int) -> int:
        return 1 if self.s_min is None else self.s_min

    def infer(self, params, obs: Observation, prev_tail, d: int, s: int, rng_seed):
        return sample_unguided(params, obs, self.n_steps, rng_seed).values


@dataclass(frozen=True)
class Synchronous:
    """Execute s actions, then halt the controller while replanning.

    Only meaningful against a wall clock, so the service harness is the one
    consumer; the virtual-time executor rejects it.
    """

    s: int = 25
    n_steps: int = 5
    name: str = "synchronous"

    def validate(self, horizon: int, s_min: int, d_ticks: int) -> None:
        if not (1 <= self.s <= horizon):
            raise ConfigError(f"1 <= s <= H required (s={self.s}, H={horizon})")

    def infer(self, params, obs: Observation, prev_tail, d: int, s: int, rng_seed):
        return sample_unguided(params, obs, self.n_steps, rng_seed).values


@dataclass(frozen=True)
class BidStub:
    """Placeholder for bidirectional decoding; the rejection sampler over
    candidate chunks is out of scope, only the interface is reserved."""

    name: str = "bid"

    def effective_s_min(self, s_min: int) -> int:
        return s_min

    def validate(self, horizon: int, s_min: int, d_ticks: int) -> None:
        raise ConfigError("bid is an interface stub; no sampler is implemented")

    def infer(self, params, obs, prev_tail, d, s, rng_seed):
        raise NotImplementedError("bid rejection sampling is not implemented")


def make_strategy(name: str, **kwargs):
    """CLI-facing factory; see STRATEGY_NAMES for the accepted names."""
    if name == "rtc":
        return RTC(guidance=GuidanceConfig(**kwargs)) if kwargs else RTC()
    if name == "naive_async":
        return NaiveAsync(**kwargs)
    if name == "te_dense":
        return TemporalEnsemble(s_min=None, **kwargs)
    if name == "te_sparse":
        return TemporalEnsemble(**kwargs)
    if name == "synchronous":
        return Synchronous(**kwargs)
    if name == "bid":
        return BidStub()
    raise ConfigError(f"unknown strategy {name!r}")


STRATEGY_NAMES = ("rtc", "naive_async", "te_dense", "te_sparse", "synchronous", "bid")


# ---------------------------------------------------------------------------
# temporal ensembling

def te_combine(buffer, t: int) -> np.ndarray:
    """Unweighted mean over all buffered chunks' predictions for tick ``t``.

    ``buffer`` holds (chunk values, birth tick) pairs where row j of a chunk
    is the action for absolute tick ``birth + j``.
    """
    acc = None
    hits = 0
    for values, birth in buffer:
        j = t - birth
        if 0 <= j < len(values):
            acc = values[j].copy() if acc is None else acc + values[j]
            hits += 1
    if not hits:
        raise ContractError(f"no buffered chunk covers tick {t}")
    return acc / hits


# ---------------------------------------------------------------------------
# virtual-time executor

@dataclass
class TickEvent:
    """One controller tick: what was consumed and what the scheduler did."""

    tick: int
    chunk_id: int
    index: int
    action: np.ndarray
    swap: bool = False
    inf_start: bool = False
    inf_end: bool = False
    delay_ticks: int | None = None


class _Pending:
    __slots__ = ("countdown", "obs", "prev_tail", "d", "s", "seed")

    def __init__(self, countdown, obs, prev_tail, d, s, seed):
        self.countdown = countdown
        self.obs = obs
        self.prev_tail = prev_tail
        self.d = d
        self.s = s
        self.seed = seed


def validate_cell(strategy, horizon: int, s_min: int, d_ticks: int) -> int:
    """Check one (strategy, s_min, d) cell against a chunk horizon.

    Returns the strategy's effective s_min; raises ConfigError for any cell
    the virtual-time executor would reject.
    """
    if isinstance(strategy, Synchronous):
        raise ConfigError("synchronous strategy runs only in the service harness")
    s_min = strategy.effective_s_min(s_min)
    if s_min < 1:
        raise ConfigError("s_min >= 1")
    if d_ticks < 0:
        raise ConfigError("d_ticks >= 0")
    strategy.validate(horizon, s_min, d_ticks)
    return s_min


class VirtualExecutor:
    """Single-threaded co-simulation of the controller/inference pair.

    An inference triggered in the epilogue of tick k runs "during" ticks
    k+1 .. k+d (which consume the old chunk) and its swap is visible from
    tick k+d+1 on.  d_ticks = 0 means the swap lands before the next tick.
    """

    def __init__(self, params, strategy, a_init: np.ndarray, s_min: int,
                 d_ticks: int, *, d_init: int | None = None, buffer_size: int = 10,
                 rng=None, record_events: bool = True):
        s_min = validate_cell(strategy, len(a_init), s_min, d_ticks)
        if buffer_size < 1:
            raise ConfigError("delay buffer size >= 1")
        if d_init is None:
            d_init = d_ticks
        self.params = params
        self.strategy = strategy
        self.h = len(a_init)
        self.s_min = s_min
        self.d_ticks = d_ticks
        self.a_cur = np.asarray(a_init, dtype=np.float64)
        self.chunk_id = 0
        self.t = 0
        self.o_cur = None
        self.q = deque([d_init], maxlen=buffer_size)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.pending = None
        self.abs_tick = -1
        self.ensemble = isinstance(strategy, TemporalEnsemble)
        self.te_buffer = [(self.a_cur, 0)] if self.ensemble else None
        self.record_events = record_events
        self.events: list[TickEvent] = []
        # cheap per-tick trace for tests that cannot afford event objects
        self.last_chunk_id = -1
        self.last_index = -1

    def get_action(self, o_next: Observation) -> np.ndarray:
        """Consume one action; never runs the model before returning it."""
        if self.t >= self.h:
            raise StallError(f"chunk exhausted at t={self.t} (H={self.h})")
        self.abs_tick += 1
        self.t += 1
        self.o_cur = o_next
        idx = self.t - 1
        self.last_chunk_id = self.chunk_id
        self.last_index = idx
        if self.ensemble:
            self._prune_te()
            action = te_combine(self.te_buffer, self.abs_tick)
        else:
            action = self.a_cur[idx]
        ev = None
        if self.record_events:
            ev = TickEvent(self.abs_tick, self.chunk_id, idx, np.array(action))
            self.events.append(ev)
        # between this tick and the next: first any landing chunk, then
        # (possibly immediately) the next trigger
        if self.pending is not None:
            self.pending.countdown -= 1
            if self.pending.countdown <= 0:
                self._complete(ev)
        if self.pending is None and self.t >= self.s_min:
            self._trigger(ev)
            if self.pending.countdown <= 0:
                self._complete(ev)
        return action

    def _trigger(self, ev):
        s = self.t
        prev_tail = self.a_cur[s:]
        d = max(self.q)
        seed = int(self.rng.integers(2 ** 63))
        self.pending = _Pending(self.d_ticks, self.o_cur, prev_tail, d, s, seed)
        if ev is not None:
            ev.inf_start = True

    def _complete(self, ev):
        p = self.pending
        a_new = self.strategy.infer(self.params, p.obs, p.prev_tail, p.d, p.s, p.seed)
        a_new = np.asarray(a_new, dtype=np.float64)
        if a_new.shape != self.a_cur.shape:
            raise ContractError(f"strategy returned shape {a_new.shape}")
        self.a_cur = a_new
        self.chunk_id += 1
        self.t -= p.s
        self.q.append(self.t)  # rebased t is the observed delay in ticks
        if self.ensemble:
            # row j of the new chunk is the action for the tick at which
            # t == j+1, i.e. absolute tick (trigger tick + 1) + j
            self.te_buffer.append((self.a_cur, self.abs_tick + 1 - self.t))
        self.pending = None
        if ev is not None:
            ev.swap = True
            ev.inf_end = True
            ev.delay_ticks = self.t

    def _prune_te(self):
        self.te_buffer = [
            (v, b) for v, b in self.te_buffer if b + len(v) > self.abs_tick
        ]


# ---------------------------------------------------------------------------
# episode driver

@dataclass
class EpisodeRecord:
    """Outcome plus the per-tick trace of one executed episode."""

    env: str
    strategy: str
    mode: str
    seed: int
    d_ticks: int | None
    s_min: int
    horizon: int
    success: bool
    stalled: bool
    ticks: int
    progress: float
    duration_s: float
    clip_count: int
    events: list[TickEvent] = field(default_factory=list, repr=False)


def run_episode(spec, params, strategy, *, d_ticks: int, s_min: int, seed: int,
                tick_limit: int | None = None, record_events: bool = True,
                buffer_size: int = 10) -> EpisodeRecord:
    """Drive one environment episode under the virtual-time schedule.

    The episode seed splits into independent env-noise and inference-seed
    streams, so two strategies with the same cadence see identical
    environment randomness.
    """
    ss = np.random.SeedSequence(seed)
    env_ss, inf_ss = ss.spawn(2)
    env_rng = np.random.default_rng(env_ss)
    inf_rng = np.random.default_rng(inf_ss)

    state = reset(spec, env_rng)
    obs0 = Observation(observe(state), tick=0)
    a_init = sample_unguided(
        params, obs0, _n_steps(strategy), int(inf_rng.integers(2 ** 63))
    ).values
    ex = VirtualExecutor(
        params, strategy, a_init, s_min, d_ticks,
        buffer_size=buffer_size, rng=inf_rng, record_events=record_events,
    )

    limit = spec.tick_limit if tick_limit is None else tick_limit
    stalled = False
    while not state.done and state.tick < limit:
        obs = Observation(observe(state), tick=state.tick)
        try:
            action = ex.get_action(obs)
        except StallError:
            stalled = True
            break
        step(spec, state, action, env_rng)

    # virtual mode measures duration on the logical clock, which also keeps
    # downstream throughput numbers reproducible
    return EpisodeRecord(
        env=spec.name, strategy=strategy.name, mode="virtual", seed=seed,
        d_ticks=d_ticks, s_min=ex.s_min, horizon=ex.h,
        success=bool(state.success) and not stalled, stalled=stalled,
        ticks=state.tick, progress=progress(spec, state),
        duration_s=state.tick * spec.dt,
        clip_count=state.clip_count, events=ex.events,
    )


def _n_steps(strategy) -> int:
    if isinstance(strategy, RTC):
        return strategy.guidance.n_steps
    return getattr(strategy, "n_steps", 5)


# ---------------------------------------------------------------------------
# trace serialization (one line per record; bench consumes this)

def save_episode_jsonl(record: EpisodeRecord, fp) -> None:
    """Header line with episode fields, then one line per tick."""
    meta = {k: getattr(record, k) for k in (
        "env", "strategy", "mode", "seed", "d_ticks", "s_min", "horizon",
        "success", "stalled", "ticks", "progress", "duration_s", "clip_count",
    )}
    fp.write(json.dumps({"type": "episode", **meta}) + "\n")
    for ev in record.events:
        fp.write(json.dumps({
            "type": "tick", "tick": ev.tick, "chunk_id": ev.chunk_id,
            "index": ev.index, "action": [float(a) for a in ev.action],
            "swap": ev.swap, "inf_start": ev.inf_start, "inf_end": ev.inf_end,
            "delay_ticks": ev.delay_ticks,
        }) + "\n")


def load_episode_jsonl(fp) -> EpisodeRecord:
    head = json.loads(fp.readline())
    if head.get("type") != "episode":
        raise ContractError("episode log must start with an episode line")
    events = []
    for line in fp:
        if not line.strip():
            continue
        row = json.loads(line)
        if row.get("type") != "tick":
            raise ContractError(f"unexpected record type {row.get('type')!r}")
        events.append(TickEvent(
            tick=row["tick"], chunk_id=row["chunk_id"], index=row["index"],
            action=np.asarray(row["action"]), swap=row["swap"],
            inf_start=row["inf_start"], inf_end=row["inf_end"],
            delay_ticks=row["delay_ticks"],
        ))
    head.pop("type")
    return EpisodeRecord(events=events, **head)
