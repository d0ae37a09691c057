"""Metrics, sweep machinery, CSV round trip, SVG rendering."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rtchunk.bench import (
    MetricRow,
    Series,
    SweepConfig,
    action_trace,
    episode_seed,
    max_accel,
    plot_solve_rate,
    read_metrics_csv,
    run_sweep,
    svg_line_plot,
    throughput,
    wilson_interval,
    write_metrics_csv,
)
from rtchunk.envs import make_env
from rtchunk.errors import ConfigError, ContractError
from rtchunk.executor import EpisodeRecord, NaiveAsync, RTC, run_episode
from rtchunk.guidance import GuidanceConfig


# ---------------------------------------------------------------------------
# wilson intervals

def test_wilson_boundaries_exact():
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0


def test_wilson_8_of_10():
    # z = 1.96; cross-checked against an independent score-interval
    # implementation (matches to 7e-6, the z-rounding difference)
    lo, hi = wilson_interval(8, 10)
    assert lo == pytest.approx(0.4901, abs=1e-3)
    assert hi == pytest.approx(0.9433, abs=1e-3)


def test_wilson_brackets_and_shrinks():
    for n in (1, 3, 10, 100):
        for k in range(n + 1):
            lo, hi = wilson_interval(k, n)
            assert 0.0 <= lo <= k / n <= hi <= 1.0
    widths = [np.diff(wilson_interval(8 * m, 10 * m))[0] for m in (1, 10, 100)]
    assert widths[0] > widths[1] > widths[2]


def test_wilson_contract_errors():
    with pytest.raises(ContractError):
        wilson_interval(0, 0)
    with pytest.raises(ContractError):
        wilson_interval(11, 10)
    with pytest.raises(ContractError):
        wilson_interval(-1, 10)


# ---------------------------------------------------------------------------
# throughput and smoothness

def _rec(progress, duration_s):
    return EpisodeRecord(env="e", strategy="s", mode="virtual", seed=0,
                         d_ticks=0, s_min=1, horizon=8, success=progress >= 1,
                         stalled=False, ticks=int(duration_s / 0.02),
                         progress=progress, duration_s=duration_s,
                         clip_count=0, events=[])


def test_throughput_failed_episode_is_zero():
    assert throughput(_rec(0.0, 2.0)) == 0.0


def test_throughput_success_in_100_ticks():
    # 100 ticks at 20 ms of virtual time
    assert throughput(_rec(1.0, 2.0)) == 0.5


def test_throughput_zero_duration():
    with pytest.raises(ContractError):
        throughput(_rec(1.0, 0.0))


def test_max_accel_linear_ramp_is_zero():
    # slope and offset chosen exactly representable so second differences
    # are identically zero, not just tiny
    assert max_accel(-3.0 + 0.25 * np.arange(40.0)) == 0.0


def test_max_accel_step_sequence():
    assert max_accel([0.0, 0.0, 1.0, 1.0]) == 1.0


def test_max_accel_is_max_over_coordinates():
    x = np.zeros((6, 2))
    x[3, 1] = 2.0  # second difference picks up 2 around the spike
    assert max_accel(x) == 4.0


def test_max_accel_needs_three_samples():
    with pytest.raises(ContractError):
        max_accel([0.0, 1.0])


def test_naive_jumps_exceed_rtc_at_high_delay(bifurcate_policy):
    # chunk swaps without consistency produce jump discontinuities in the
    # commanded force; guided inpainting suppresses them
    spec = make_env("bifurcate")
    naive, rtc = [], []
    for ep in range(60):
        seed = episode_seed(0, "bifurcate", 4, 4, ep)
        for strat, out in ((NaiveAsync(), naive), (RTC(), rtc)):
            r = run_episode(spec, bifurcate_policy, strat, d_ticks=4, s_min=4,
                            seed=seed)
            out.append(max_accel(action_trace(r)))
    assert float(np.mean(naive)) > float(np.mean(rtc))


# ---------------------------------------------------------------------------
# sweep config and seeds

def test_sweep_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(envs=("bifurcate",), strategies=(RTC(),), delays=(0,),
                    episodes_per_cell=0)
    with pytest.raises(ConfigError):
        SweepConfig(envs=(), strategies=(RTC(),), delays=(0,))
    with pytest.raises(ConfigError):  # duplicate labels
        SweepConfig(envs=("bifurcate",), strategies=(RTC(), RTC()), delays=(0,))


def test_cells_couple_s_to_delay_by_default():
    cfg = SweepConfig(envs=("bifurcate",), strategies=(RTC(),),
                      delays=(0, 1, 2, 3, 4))
    assert cfg.cells() == [(0, 1), (1, 1), (2, 2), (3, 3), (4, 4)]
    crossed = SweepConfig(envs=("bifurcate",), strategies=(RTC(),),
                          delays=(1,), exec_horizons=(1, 2, 3))
    assert crossed.cells() == [(1, 1), (1, 2), (1, 3)]


def test_episode_seed_depends_on_cell_not_strategy():
    a = episode_seed(7, "bifurcate", 1, 2, 0)
    assert a == episode_seed(7, "bifurcate", 1, 2, 0)
    others = {episode_seed(7, "bifurcate", 1, 2, 1),
              episode_seed(7, "bifurcate", 2, 2, 0),
              episode_seed(7, "catch", 1, 2, 0),
              episode_seed(8, "bifurcate", 1, 2, 0)}
    assert a not in others and len(others) == 4


# ---------------------------------------------------------------------------
# run_sweep

def test_single_cell_single_episode(bifurcate_policy):
    cfg = SweepConfig(envs=("bifurcate",), strategies=(NaiveAsync(),),
                      delays=(0,), exec_horizons=(2,), episodes_per_cell=1)
    rows = run_sweep(cfg, bifurcate_policy)
    assert len(rows) == 1
    r = rows[0]
    assert (r.trials, r.status) == (1, "ok")
    assert (r.wilson_lo, r.wilson_hi) == wilson_interval(r.successes, 1)


def test_sweep_pairs_seeds_across_strategies(bifurcate_policy):
    # a null-mask rtc is bitwise-identical to naive async, so paired seeds
    # must give exactly equal success counts
    cfg = SweepConfig(
        envs=("bifurcate",),
        strategies=(NaiveAsync(), RTC(GuidanceConfig(mask="null"), name="rtc_null")),
        delays=(1,), exec_horizons=(2,), episodes_per_cell=5)
    rows = run_sweep(cfg, bifurcate_policy)
    assert len(rows) == 2
    assert rows[0].successes == rows[1].successes
    assert rows[0].throughput_mean == rows[1].throughput_mean


def test_sweep_skips_invalid_cells_with_warning_rows(bifurcate_policy):
    # d=2 > s=1 violates the inpainting constraint for rtc only
    cfg = SweepConfig(envs=("bifurcate",), strategies=(NaiveAsync(), RTC()),
                      delays=(2,), exec_horizons=(1,), episodes_per_cell=1)
    rows = run_sweep(cfg, bifurcate_policy)
    by_strat = {r.strategy: r for r in rows}
    assert by_strat["naive_async"].status == "ok"
    assert by_strat["rtc"].status.startswith("skipped:")
    assert by_strat["rtc"].trials == 0


def test_sweep_pools_rows_across_envs(bifurcate_policy):
    cfg = SweepConfig(envs=("bifurcate", "catch"), strategies=(NaiveAsync(),),
                      delays=(0,), exec_horizons=(2,), episodes_per_cell=2)
    rows = run_sweep(cfg, {"bifurcate": bifurcate_policy,
                           "catch": bifurcate_policy})
    envs = [r.env for r in rows]
    assert envs == ["bifurcate", "catch", "pooled"]
    pooled = rows[-1]
    assert pooled.trials == 4
    assert pooled.successes == rows[0].successes + rows[1].successes


def test_sweep_csv_is_byte_identical(bifurcate_policy, tmp_path):
    cfg = SweepConfig(envs=("bifurcate",), strategies=(NaiveAsync(), RTC()),
                      delays=(0, 1), episodes_per_cell=2, base_seed=3)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_sweep(cfg, bifurcate_policy, out_dir=out_a)
    run_sweep(cfg, bifurcate_policy, out_dir=out_b)
    a = (out_a / "sweep.csv").read_bytes()
    assert a == (out_b / "sweep.csv").read_bytes()
    assert (out_a / "solve_rate.svg").read_text() == \
           (out_b / "solve_rate.svg").read_text()


def test_sweep_rows_round_trip_through_csv(bifurcate_policy, tmp_path):
    cfg = SweepConfig(envs=("bifurcate",), strategies=(RTC(),), delays=(0, 2),
                      episodes_per_cell=2)
    rows = run_sweep(cfg, bifurcate_policy, out_dir=tmp_path)
    assert read_metrics_csv(tmp_path / "sweep.csv") == rows


def test_read_handwritten_csv(tmp_path):
    p = tmp_path / "hand.csv"
    cols = ("env,strategy,d_ticks,s_min,horizon,trials,successes,solve_rate,"
            "wilson_lo,wilson_hi,throughput_mean,throughput_sem,"
            "max_accel_mean,max_accel_max,stall_count,status")
    p.write_text(cols + "\n"
                 "bifurcate,rtc,0,1,8,10,8,0.8,0.49,0.95,0.4,0.01,0.5,0.9,0,ok\n"
                 "bifurcate,naive_async,0,1,8,10,5,0.5,0.2,0.8,0.3,0.01,0.9,1.9,1,ok\n")
    rows = read_metrics_csv(p)
    assert len(rows) == 2 and rows[0].successes == 8
    assert rows[1].strategy == "naive_async"


def test_duplicate_effective_cells_collapse(bifurcate_policy):
    # dense TE ignores the requested cadence, so a horizon sweep leaves one
    # effective cell and marks the rest
    from rtchunk.executor import TemporalEnsemble
    cfg = SweepConfig(envs=("bifurcate",), strategies=(TemporalEnsemble(),),
                      delays=(1,), exec_horizons=(1, 2, 3), episodes_per_cell=1)
    rows = run_sweep(cfg, bifurcate_policy)
    ok = [r for r in rows if r.status == "ok"]
    dup = [r for r in rows if "duplicate" in r.status]
    assert len(ok) == 1 and len(dup) == 2
    assert ok[0].s_min == 1


# ---------------------------------------------------------------------------
# plots

def _parse(svg):
    return ET.fromstring(svg)


def test_svg_plot_renders_series_and_bands():
    s = [Series("a", (0, 1, 2), (0.2, 0.5, 0.9), (0.1, 0.4, 0.8), (0.3, 0.6, 1.0)),
         Series("b", (0, 1, 2), (0.9, 0.6, 0.1))]
    svg = svg_line_plot(s, title="t", xlabel="x", ylabel="y", y_range=(0, 1))
    root = _parse(svg)
    ns = "{http://www.w3.org/2000/svg}"
    polylines = root.findall(f"{ns}polyline")
    polygons = root.findall(f"{ns}polygon")
    assert len(polylines) == 2
    assert len(polygons) == 1  # only series a has a band
    texts = [t.text for t in root.findall(f"{ns}text")]
    assert "a" in texts and "b" in texts


def test_svg_plot_rejects_empty():
    with pytest.raises(ContractError):
        svg_line_plot([])


def test_plot_solve_rate_from_rows():
    def row(strat, d, rate):
        lo, hi = wilson_interval(int(rate * 10), 10)
        return MetricRow(env="bifurcate", strategy=strat, d_ticks=d, s_min=max(d, 1),
                         horizon=8, trials=10, successes=int(rate * 10),
                         solve_rate=rate, wilson_lo=lo, wilson_hi=hi,
                         throughput_mean=0.1, throughput_sem=0.0,
                         max_accel_mean=0.2, max_accel_max=0.4, stall_count=0)

    rows = [row("rtc", d, 0.9 - 0.1 * d) for d in range(3)]
    rows += [row("naive_async", d, 0.9 - 0.3 * d) for d in range(3)]
    rows.append(MetricRow(env="bifurcate", strategy="rtc", d_ticks=9, s_min=9,
                          horizon=8, trials=0, successes=0, solve_rate=0.0,
                          wilson_lo=0.0, wilson_hi=0.0, throughput_mean=0.0,
                          throughput_sem=0.0, max_accel_mean=0.0,
                          max_accel_max=0.0, stall_count=0, status="skipped: x"))
    svg = plot_solve_rate(rows)
    root = _parse(svg)
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}polyline")) == 2
    # the skipped row's x=9 must not widen the axis
    labels = {t.text for t in root.findall(f"{ns}text")}
    assert "9" not in labels
