"""Asynchronous execution of action chunks against a wall clock.

Two threads share one executor state under a single lock with a single
condition variable: the controller calls get_action every dt seconds, the
background loop waits for t >= s_min, snapshots (s, tail, obs, forecast),
runs the model with the lock released, then swaps chunks and rebases t.

Differences from the virtual-time executor follow from losing the logical
clock.  Delays are measured, not scripted: each cycle enqueues
max(ceil(delta/dt), ticks actually consumed during inference) so the
forecast stays conservative even when the controller out-paces the wall
measurement; the definitional floor(delta/dt) is kept separately for
reporting.  Chunk exhaustion cannot be ruled out up front, so instead of
raising, get_action repeats the last action and marks the episode.  A
forecast larger than the remaining tail is likewise a runtime event, not a
config error: it is logged and the forecast is clamped to the tail length
so inference stays feasible.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from .chunks import Observation
from .errors import ConfigError, ContractError
from .envs import observe, progress, reset, step
from .executor import EpisodeRecord, TemporalEnsemble, _n_steps, te_combine, validate_cell
from .policy import sample_unguided


@dataclass
class SwapEvent:
    """Bookkeeping snapshot for one completed inference cycle."""

    chunk_id: int
    s: int                  # actions consumed from the old chunk at trigger time
    d_forecast: int         # what the strategy was told to protect
    q_before: tuple         # delay-buffer contents the forecast was drawn from
    delta_s: float          # wall-clock inference time
    elapsed_ticks: int      # controller ticks consumed while inference ran
    d_enqueued: int         # conservative value pushed onto the buffer
    d_reported: int         # floor(delta/dt), the definitional delay
    forecast_clamped: bool = False


class RealtimeExecutor:
    """Controller-facing half of the two-thread protocol.

    get_action holds the lock only to move the cursor and copy references;
    it never runs the model.  The inference loop owns its RNG and all model
    calls.  Lock holds are instrumented per thread so liveness is checkable
    from outside (max_lock_hold_s property).
    """

    def __init__(self, params, strategy, a_init: np.ndarray, s_min: int, *,
                 dt: float, d_init: int, buffer_size: int = 10, rng=None,
                 lock_hold_bound: float | None = None):
        # startup validation mirrors the virtual executor but with d = 0:
        # in real time the delay is a measurement, so delay-dependent
        # constraints become runtime stall events rather than config errors
        self.s_min = validate_cell(strategy, len(a_init), s_min, 0)
        if dt <= 0:
            raise ConfigError("dt > 0 required")
        if d_init < 0:
            raise ConfigError("d_init >= 0")
        if buffer_size < 1:
            raise ConfigError("delay buffer size >= 1")
        self.params = params
        self.strategy = strategy
        self.h = len(a_init)
        self.dt = dt
        self.lock_hold_bound = dt / 10.0 if lock_hold_bound is None else lock_hold_bound
        self._rng = rng if rng is not None else np.random.default_rng(0)

        self._cond = threading.Condition()
        self._a_cur = np.asarray(a_init, dtype=np.float64)
        self._t = 0
        self._o_cur = None
        self._q = _BoundedMaxQueue(d_init, buffer_size)
        self._chunk_id = 0
        self._abs_tick = -1
        self._stop = False

        self._ensemble = isinstance(strategy, TemporalEnsemble)
        self._te_buffer = [(self._a_cur, 0)] if self._ensemble else None

        # instrumentation; each field has a single writer thread
        self.calls = 0
        self.stall_count = 0
        self.forecast_overflows = 0
        self.swaps: list[SwapEvent] = []
        self._hold_ctrl = 0.0
        self._hold_inf = 0.0

        self._thread = threading.Thread(
            target=self._inference_loop, name="rtchunk-inference", daemon=True
        )

    # -- lifecycle ----------------------------------------------------------

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        with self._cond:
            self._stop = True
            self._cond.notify()
        self._thread.join(timeout=5.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- controller side ----------------------------------------------------

    def get_action(self, o_next: Observation) -> np.ndarray:
        """Consume one action; bounded time, no model call, one lock hold."""
        with self._cond:
            t0 = time.perf_counter()
            self._abs_tick += 1
            self._o_cur = o_next
            if self._t >= len(self._a_cur):
                # no "hold position" under force control: repeat and mark
                self.stall_count += 1
                action = self._a_cur[-1]
            else:
                action = self._a_cur[self._t]
                self._t += 1
            if self._ensemble:
                self._te_buffer = [
                    (v, b) for v, b in self._te_buffer if b + len(v) > self._abs_tick
                ]
                action = te_combine(self._te_buffer, self._abs_tick)
            self._cond.notify()
            hold = time.perf_counter() - t0
        self.calls += 1
        if hold > self._hold_ctrl:
            self._hold_ctrl = hold
        return action

    @property
    def max_lock_hold_s(self) -> float:
        return max(self._hold_ctrl, self._hold_inf)

    # -- inference side -----------------------------------------------------

    def _inference_loop(self):
        while True:
            with self._cond:
                while not self._stop and self._t < self.s_min:
                    self._cond.wait()
                t0 = time.perf_counter()
                if self._stop:
                    return
                s = self._t
                prev_tail = self._a_cur[s:]
                obs = self._o_cur
                q_before = self._q.snapshot()
                d_hat = max(q_before)
                clamped = d_hat > self.h - s
                if clamped:
                    # forecast exceeds what the tail can protect; log and
                    # clamp so the cycle still produces a chunk
                    self.forecast_overflows += 1
                    d_hat = self.h - s
                self._bump_inf_hold(t0)
            seed = int(self._rng.integers(2 ** 63))
            t_inf = time.perf_counter()
            a_new = self.strategy.infer(self.params, obs, prev_tail, d_hat, s, seed)
            delta = time.perf_counter() - t_inf
            a_new = np.asarray(a_new, dtype=np.float64)
            if a_new.shape != self._a_cur.shape:
                raise ContractError(f"strategy returned shape {a_new.shape}")
            with self._cond:
                t0 = time.perf_counter()
                if self._stop:
                    return
                elapsed = self._t - s
                enqueued = max(math.ceil(delta / self.dt), elapsed)
                self._q.push(enqueued)
                self._a_cur = a_new
                self._chunk_id += 1
                self._t = elapsed
                if self._ensemble:
                    self._te_buffer.append((a_new, self._abs_tick + 1 - elapsed))
                self.swaps.append(SwapEvent(
                    chunk_id=self._chunk_id, s=s, d_forecast=d_hat,
                    q_before=q_before, delta_s=delta, elapsed_ticks=elapsed,
                    d_enqueued=enqueued, d_reported=int(delta / self.dt),
                    forecast_clamped=clamped,
                ))
                self._bump_inf_hold(t0)

    def _bump_inf_hold(self, t0: float):
        hold = time.perf_counter() - t0
        if hold > self._hold_inf:
            self._hold_inf = hold


class _BoundedMaxQueue:
    """Delay buffer: at most ``cap`` entries, oldest evicted first."""

    def __init__(self, seed_value: int, cap: int):
        self._items = [seed_value]
        self._cap = cap

    def push(self, value: int):
        self._items.append(value)
        if len(self._items) > self._cap:
            self._items.pop(0)

    def snapshot(self) -> tuple:
        return tuple(self._items)


# ---------------------------------------------------------------------------
# episode driver

def run_episode_realtime(spec, params, strategy, *, s_min: int, seed: int,
                         d_init: int = 1, tick_limit: int | None = None,
                         buffer_size: int = 10, dt: float | None = None,
                         pace: bool = True) -> EpisodeRecord:
    """Drive one environment episode against the wall clock.

    The controller paces itself at ``dt`` (default: the env's own period)
    with an absolute-deadline loop, so sleep jitter does not accumulate.
    The episode runs to its natural end even if a stall occurs; the record
    carries the stall mark and wall-clock duration (which is what
    throughput in real-time mode is measured against).
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
    dt = spec.dt if dt is None else dt
    limit = spec.tick_limit if tick_limit is None else tick_limit

    with RealtimeExecutor(params, strategy, a_init, s_min, dt=dt,
                          d_init=d_init, buffer_size=buffer_size,
                          rng=inf_rng) as ex:
        start = time.perf_counter()
        k = 0
        while not state.done and state.tick < limit:
            obs = Observation(observe(state), tick=state.tick)
            action = ex.get_action(obs)
            step(spec, state, action, env_rng)
            k += 1
            if pace:
                deadline = start + k * dt
                lag = deadline - time.perf_counter()
                if lag > 0:
                    time.sleep(lag)
        duration = time.perf_counter() - start

    return EpisodeRecord(
        env=spec.name, strategy=strategy.name, mode="realtime", seed=seed,
        d_ticks=None, s_min=ex.s_min, horizon=ex.h,
        success=bool(state.success), stalled=ex.stall_count > 0,
        ticks=state.tick, progress=progress(spec, state),
        duration_s=duration, clip_count=state.clip_count, events=[],
    )
