"""Metrics, Wilson intervals, and deterministic benchmark sweeps.

A sweep runs every (env, strategy, delay, execution-horizon) cell with
episode seeds derived from the base seed and the cell coordinate only —
never the strategy — so strategies within a cell see paired environment
randomness. Results merge by coordinate, not completion order, and the CSV
emitted for a given config and seed is byte-identical across runs.
"""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .envs import make_env
from .errors import ConfigError, ContractError
from .executor import run_episode, validate_cell

WILSON_Z = 1.96  # 95% score interval
CSV_SCHEMA = "rtchunk.sweep.v1"


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z):
    """Wilson score interval for a binomial rate; exact 0/1 at the edges."""
    if trials < 1:
        raise ContractError("wilson_interval needs trials >= 1")
    if not 0 <= successes <= trials:
        raise ContractError("successes must lie in [0, trials]")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    lo = 0.0 if successes == 0 else max(center - half, 0.0)
    hi = 1.0 if successes == trials else min(center + half, 1.0)
    return lo, hi


def throughput(record) -> float:
    """Progress fraction per second of episode duration."""
    if record.duration_s <= 0:
        raise ContractError("zero-duration episode")
    return record.progress / record.duration_s


def max_accel(series) -> float:
    """Max absolute second discrete difference over time and coordinates."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 3:
        raise ContractError("max_accel needs at least 3 samples")
    dd = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return float(np.max(np.abs(dd)))


def action_trace(record) -> np.ndarray:
    """(T, M) commanded-action series of an episode run with events on."""
    if not record.events:
        raise ContractError("episode was recorded without events")
    return np.stack([e.action for e in record.events])


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class MetricRow:
    env: str
    strategy: str
    d_ticks: int
    s_min: int
    horizon: int
    trials: int
    successes: int
    solve_rate: float
    wilson_lo: float
    wilson_hi: float
    throughput_mean: float
    throughput_sem: float
    max_accel_mean: float
    max_accel_max: float
    stall_count: int
    status: str = "ok"

    def __post_init__(self):
        if self.status != "ok":
            return
        if not 0 <= self.successes <= self.trials:
            raise ContractError("successes outside [0, trials]")
        if not self.wilson_lo <= self.solve_rate <= self.wilson_hi:
            raise ContractError("interval does not bracket the point estimate")


@dataclass(frozen=True)
class SweepConfig:
    """One benchmark lattice: envs x strategies x (delay, exec-horizon) cells.

    ``exec_horizons=None`` couples the execution horizon to the delay as
    s = max(d, 1), the delay-sweep convention; a tuple gives the full cross
    product instead (e.g. a horizon sweep at fixed delay).
    """

    envs: tuple
    strategies: tuple
    delays: tuple
    exec_horizons: tuple | None = None
    episodes_per_cell: int = 500
    base_seed: int = 0
    tick_limit: int | None = None
    n_workers: int = 1

    def __post_init__(self):
        if self.episodes_per_cell < 1:
            raise ConfigError("episodes_per_cell >= 1")
        if not (self.envs and self.strategies and self.delays):
            raise ConfigError("envs, strategies and delays must be non-empty")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ConfigError(f"strategy labels must be unique, got {names}")

    def cells(self):
        if self.exec_horizons is None:
            return [(d, max(d, 1)) for d in self.delays]
        return [(d, s) for d in self.delays for s in self.exec_horizons]


class _CellStats:
    __slots__ = ("successes", "trials", "stalls", "throughputs", "accels")

    def __init__(self):
        self.successes = 0
        self.trials = 0
        self.stalls = 0
        self.throughputs = []
        self.accels = []

    def absorb(self, other):
        self.successes += other.successes
        self.trials += other.trials
        self.stalls += other.stalls
        self.throughputs += other.throughputs
        self.accels += other.accels


def episode_seed(base_seed: int, env: str, d: int, s: int, ep: int) -> int:
    """Deterministic per-episode seed; strategy-independent so strategies
    compared within a cell run against paired environment noise."""
    tag = zlib.crc32(env.encode("utf-8"))
    ss = np.random.SeedSequence([base_seed, tag, d, s, ep])
    return int(ss.generate_state(1)[0])


def _run_cell(spec, params, strategy, d, s, cfg: SweepConfig) -> _CellStats:
    st = _CellStats()
    for ep in range(cfg.episodes_per_cell):
        seed = episode_seed(cfg.base_seed, spec.name, d, s, ep)
        rec = run_episode(spec, params, strategy, d_ticks=d, s_min=s,
                          seed=seed, tick_limit=cfg.tick_limit)
        st.trials += 1
        st.successes += rec.success
        st.stalls += rec.stalled
        st.throughputs.append(throughput(rec))
        if len(rec.events) >= 3:
            st.accels.append(max_accel(action_trace(rec)))
    return st


def _finish_row(env, strategy, d, s, h, st: _CellStats) -> MetricRow:
    lo, hi = wilson_interval(st.successes, st.trials)
    thr = np.asarray(st.throughputs)
    sem = float(np.std(thr, ddof=1) / math.sqrt(len(thr))) if len(thr) > 1 else 0.0
    acc = np.asarray(st.accels) if st.accels else np.zeros(1)
    return MetricRow(
        env=env, strategy=strategy, d_ticks=d, s_min=s, horizon=h,
        trials=st.trials, successes=st.successes,
        solve_rate=st.successes / st.trials, wilson_lo=lo, wilson_hi=hi,
        throughput_mean=float(thr.mean()), throughput_sem=sem,
        max_accel_mean=float(acc.mean()), max_accel_max=float(acc.max()),
        stall_count=st.stalls,
    )


def _skip_row(env, strategy, d, s, h, reason) -> MetricRow:
    return MetricRow(
        env=env, strategy=strategy, d_ticks=d, s_min=s, horizon=h,
        trials=0, successes=0, solve_rate=0.0, wilson_lo=0.0, wilson_hi=0.0,
        throughput_mean=0.0, throughput_sem=0.0, max_accel_mean=0.0,
        max_accel_max=0.0, stall_count=0, status=f"skipped: {reason}",
    )


def run_sweep(config: SweepConfig, params, *, out_dir=None, log=None):
    """Run the full lattice and return MetricRows sorted by coordinate.

    ``params`` is either one policy (single-env sweeps) or a mapping
    env name -> policy. When more than one env runs, per-(strategy, cell)
    rows pooled over envs are appended under the pseudo-env "pooled".
    With ``out_dir`` set, writes sweep.csv and a solve-rate SVG there.
    """
    params_by_env = params if isinstance(params, dict) else {e: params for e in config.envs}
    for env in config.envs:
        if env not in params_by_env:
            raise ConfigError(f"no policy provided for env '{env}'")

    jobs, skipped, seen = [], [], set()
    for env in config.envs:
        h = params_by_env[env].horizon
        for d, s in config.cells():
            for strat in config.strategies:
                try:
                    s_eff = validate_cell(strat, h, s, d)
                except ConfigError as e:
                    skipped.append(_skip_row(env, strat.name, d, s, h, e))
                    continue
                # strategies with a fixed internal cadence (dense TE) can
                # collapse several requested s onto one effective cell
                key = (env, strat.name, d, s_eff)
                if key in seen:
                    skipped.append(_skip_row(env, strat.name, d, s, h,
                                             f"duplicate effective cell s_min={s_eff}"))
                    continue
                seen.add(key)
                jobs.append((env, strat, d, s, s_eff, h))

    def work(job):
        env, strat, d, s, s_eff, h = job
        spec = make_env(env)
        st = _run_cell(spec, params_by_env[env], strat, d, s, config)
        if log is not None:
            log(f"{env} {strat.name} d={d} s={s}: "
                f"{st.successes}/{st.trials} solved")
        return job, st

    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            done = list(pool.map(work, jobs))
    else:
        done = [work(j) for j in jobs]

    rows = [_finish_row(env, strat.name, d, s_eff, h, st)
            for (env, strat, d, s, s_eff, h), st in done]
    rows += skipped

    if len(config.envs) > 1:
        pooled = {}
        for (env, strat, d, s, s_eff, h), st in done:
            pooled.setdefault((strat.name, d, s_eff, h), _CellStats()).absorb(st)
        rows += [_finish_row("pooled", name, d, s, h, st)
                 for (name, d, s, h), st in pooled.items()]

    rows.sort(key=lambda r: (r.env == "pooled", r.env, r.strategy, r.d_ticks, r.s_min))

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(rows, out_dir / "sweep.csv")
        x_field = "d_ticks" if len(config.delays) > 1 else "s_min"
        xlabel = "inference delay (ticks)" if x_field == "d_ticks" else "execution horizon s"
        svg = plot_solve_rate(rows, x_field=x_field, xlabel=xlabel)
        (out_dir / "solve_rate.svg").write_text(svg)
    return rows


# ---------------------------------------------------------------------------
# CSV round trip

_COLUMNS = [f.name for f in fields(MetricRow)]
_INT_COLS = {"d_ticks", "s_min", "horizon", "trials", "successes", "stall_count"}
_FLOAT_COLS = {"solve_rate", "wilson_lo", "wilson_hi", "throughput_mean",
               "throughput_sem", "max_accel_mean", "max_accel_max"}


def write_metrics_csv(rows, path) -> None:
    """Floats are written with repr (shortest round trip), so identical rows
    always serialize to identical bytes."""
    with open(path, "w", newline="") as f:
        f.write(f"# {CSV_SCHEMA}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v
                        for v in (getattr(r, c) for c in _COLUMNS)])


def read_metrics_csv(path):
    with open(path, newline="") as f:
        body = [ln for ln in f if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(body):
        kw = {}
        for col in _COLUMNS:
            if col not in rec or rec[col] is None:
                raise ContractError(f"CSV missing column '{col}'")
            v = rec[col]
            kw[col] = int(v) if col in _INT_COLS else float(v) if col in _FLOAT_COLS else v
        rows.append(MetricRow(**kw))
    return rows


# ---------------------------------------------------------------------------
# SVG line plots (hand-rolled: deterministic output, no plotting dependency)

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


@dataclass(frozen=True)
class Series:
    label: str
    x: tuple
    y: tuple
    lo: tuple | None = None  # optional confidence band
    hi: tuple | None = None


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def svg_line_plot(series, *, title="", xlabel="", ylabel="",
                  y_range=None, width=640, height=420) -> str:
    """Render line series (optionally banded) to an SVG string."""
    if not series:
        raise ContractError("nothing to plot")
    ml, mr, mt, mb = 62, 160, 34, 48
    pw, ph = width - ml - mr, height - mt - mb

    xs = sorted({v for s in series for v in s.x})
    x0, x1 = min(xs), max(xs)
    if y_range is None:
        ys = [v for s in series for v in s.y]
        ys += [v for s in series if s.lo for v in s.lo]
        ys += [v for s in series if s.hi for v in s.hi]
        y0, y1 = min(ys), max(ys)
        pad = 0.05 * (y1 - y0 or 1.0)
        y0, y1 = y0 - pad, y1 + pad
    else:
        y0, y1 = y_range

    def px(v):
        return ml + (pw / 2 if x1 == x0 else (v - x0) / (x1 - x0) * pw)

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="20" text-anchor="middle" '
           f'font-size="14">{title}</text>']

    # axes and ticks
    out.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>')
    for v in xs:
        out.append(f'<line x1="{px(v):.1f}" y1="{mt + ph}" x2="{px(v):.1f}" '
                   f'y2="{mt + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 18}" '
                   f'text-anchor="middle">{_fmt(v)}</text>')
    for i in range(6):
        v = y0 + (y1 - y0) * i / 5
        out.append(f'<line x1="{ml - 4}" y1="{py(v):.1f}" x2="{ml}" '
                   f'y2="{py(v):.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{py(v) + 4:.1f}" '
                   f'text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')

    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        order = np.argsort(np.asarray(s.x, dtype=np.float64))
        sx = [s.x[j] for j in order]
        sy = [s.y[j] for j in order]
        if s.lo is not None and s.hi is not None:
            lo = [s.lo[j] for j in order]
            hi = [s.hi[j] for j in order]
            band = " ".join(f"{px(x):.1f},{py(h):.1f}" for x, h in zip(sx, hi))
            band += " " + " ".join(f"{px(x):.1f},{py(l):.1f}"
                                   for x, l in zip(reversed(sx), reversed(lo)))
            out.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(sx, sy))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="2"/>')
        for x, y in zip(sx, sy):
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 34}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 40}" y="{ly}">{s.label}</text>')

    out.append("</svg>")
    return "\n".join(out)


def plot_solve_rate(rows, *, x_field="d_ticks", xlabel="inference delay (ticks)",
                    title="solve rate") -> str:
    """Wilson-banded solve-rate curves, one series per (env, strategy)."""
    groups = {}
    for r in rows:
        if r.status != "ok":
            continue
        groups.setdefault((r.env, r.strategy), []).append(r)
    many_envs = len({env for env, _ in groups}) > 1
    series = []
    for (env, strat), rs in sorted(groups.items()):
        rs.sort(key=lambda r: getattr(r, x_field))
        series.append(Series(
            label=f"{env}/{strat}" if many_envs else strat,
            x=tuple(getattr(r, x_field) for r in rs),
            y=tuple(r.solve_rate for r in rs),
            lo=tuple(r.wilson_lo for r in rs),
            hi=tuple(r.wilson_hi for r in rs),
        ))
    return svg_line_plot(series, title=title, xlabel=xlabel,
                         ylabel="solve rate", y_range=(0.0, 1.0))
