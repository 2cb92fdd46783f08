import math
import re

import numpy as np
import pytest

from fedsim import RunConfig, preset
from fedsim.harness import (
    AGGREGATE_HEADER,
    NO_STABLE_LR,
    ExperimentSuite,
    bound_overlay,
    final_window_gap,
    grid_search,
    run_suite,
    seed_list,
)
from fedsim.objectives import ConfigurationError
from fedsim.plotting import HEIGHT, MARGIN, Series, plot_files, read_series, render_svg


def small(name="group3", **kw):
    base = kw.pop("base", RunConfig(R=50, K=2))
    return ExperimentSuite(preset(name), base=base, **kw)


def test_seed_list():
    assert seed_list(1234, 3) == [1234, 1235, 1236]
    with pytest.raises(ConfigurationError):
        seed_list(0, 0)


def test_cells_cover_the_grid_once():
    s = small(etas=(0.01, 0.1), seeds=(1, 2, 3))
    cells = s.cells()
    assert len(cells) == len(set(cells)) == 2 * 2 * 3
    with pytest.raises(ConfigurationError):
        small(etas=(0.1, 0.1))


def test_single_grid_point_is_best():
    gr = grid_search(small(etas=(0.03,), seeds=(1,)))
    assert all(b.eta == 0.03 and b.status == "ok" for b in gr.best.values())


def test_all_diverged_reports_no_stable_rate():
    s = small("group4", etas=(5.0,), seeds=(1, 2), base=RunConfig(R=200, K=10))
    gr = grid_search(s)
    for b in gr.best.values():
        assert b.eta is None and b.status == NO_STABLE_LR and b.metric == math.inf
    assert all(r.diverged_seeds == 2 for r in gr.table)


def test_diverged_rate_ranks_last():
    s = small("group4", etas=(0.01, 5.0), seeds=(1,), base=RunConfig(R=200, K=10))
    gr = grid_search(s)
    assert all(b.eta == 0.01 for b in gr.best.values())
    assert "inf" in gr.to_csv()


def test_final_window_metric():
    res = run_suite(small(etas=(0.01,), seeds=(7,)), write=False)
    r = res.runs("sfl", 0.01)[0]
    assert final_window_gap(r) == pytest.approx(np.mean(r.gap[-5:]))
    assert final_window_gap(r, window=1.0) == pytest.approx(np.mean(r.gap[-50:]))


def test_one_seed_band_collapses():
    agg = run_suite(small(etas=(0.01,), seeds=(3,)), write=False).aggregate("sfl", 0.01)
    assert np.array_equal(agg.gap[0], agg.gap[1]) and np.array_equal(agg.gap[1], agg.gap[2])


def test_pfl_band_has_zero_width_without_noise():
    res = run_suite(small(etas=(0.03,), seeds=(1, 2, 3, 4, 5)), write=False)
    pfl = res.aggregate("pfl", 0.03)
    assert np.array_equal(pfl.gap[1], pfl.gap[2]) and np.array_equal(pfl.dist_sq[1], pfl.dist_sq[2])
    sfl = res.aggregate("sfl", 0.03)
    assert np.any(sfl.gap[2] > sfl.gap[1])


def test_aggregate_csv_schema():
    agg = run_suite(small(etas=(0.01,), seeds=(1, 2)), write=False).aggregate("pfl", 0.01)
    lines = agg.to_csv().splitlines()
    assert lines[0] == ",".join(AGGREGATE_HEADER)
    assert lines[0] == "round,median_gap,min_gap,max_gap,median_dist_sq,min_dist_sq,max_dist_sq"
    assert len(lines) == 52 and lines[1].startswith("0,")


def test_failures_are_recorded_per_cell(tmp_path):
    s = small(etas=(0.01,), seeds=(1,), base=RunConfig(R=20, K=2, S=5), out_dir=tmp_path)
    res = run_suite(s)
    assert len(res.failures) == 2 and not res.results
    assert (tmp_path / "failures.txt").read_text().count("ConfigurationError") == 2


def test_group4_sfl_below_pfl_at_best_rates():
    s = ExperimentSuite(preset("group4"), base=RunConfig(R=1000))
    gr = grid_search(s)
    assert gr.best["sfl"].metric < gr.best["pfl"].metric
    res = gr.suite_result
    sfl = res.aggregate("sfl", gr.best["sfl"].eta).gap[0, -1]
    pfl = res.aggregate("pfl", gr.best["pfl"].eta).gap[0, -1]
    assert sfl < pfl


@pytest.mark.parametrize("name", ["group1", "group2", "group3"])
@pytest.mark.parametrize("algo", ["sfl", "pfl"])
def test_bound_overlay_dominates_measurement(name, algo):
    spec = preset(name)
    cfg = RunConfig(algorithm=algo, R=300, K=5, seed=1234)
    eta = 1 / (6 * 2.0 * cfg.K * (spec.M if algo == "sfl" else 1))  # eta_tilde = 1/(6L), L <= 2
    from fedsim import run
    ov = bound_overlay(spec, run(spec, cfg.with_(eta=eta)))
    ok = ov.in_domain
    assert ok.any()
    assert np.all(ov.measured[ok] <= ov.bound[ok])
    assert ov.to_csv().startswith("round,measured_avg_gap,bound,in_domain\n1,")


def test_suite_outputs_are_reproducible(tmp_path):
    outs = []
    for i in range(2):
        d = tmp_path / str(i)
        run_suite(small(etas=(0.01, 0.1), seeds=(1, 2), base=RunConfig(R=30, K=2, noise=0.3), out_dir=d))
        svg = plot_files(sorted(d.glob("*.csv")), d / "fig.svg")
        outs.append({p.relative_to(d): p.read_bytes() for p in d.rglob("*") if p.is_file()})
        assert svg == (d / "fig.svg").read_text()
    assert outs[0] == outs[1] and len(outs[0]) == 2 * 2 * 2 + 4 + 1


# -- plotting ---------------------------------------------------------------

def _synthetic_series(label, scale):
    r = np.arange(3)
    c = scale * np.array([1.0, 0.1, 0.01])
    return Series(label, r, c, c / 2, c * 2)


def test_svg_structure():
    svg = render_svg([_synthetic_series("a", 1.0), _synthetic_series("b", 0.5)], title="t")
    assert svg.count("<polyline") == 2 and svg.count("<polygon") == 2
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def _points(svg):
    return [[tuple(map(float, p.split(","))) for p in m.split()]
            for m in re.findall(r'<polyline points="([^"]+)"', svg)]


def test_log_axis_geometry():
    s = Series("s", np.arange(3), np.array([1e-1, 1e-2, 1e-3]), np.array([1e-1, 1e-2, 1e-3]),
               np.array([1e-1, 1e-2, 1e-3]))
    svg = render_svg([s])
    (pts,) = _points(svg)
    ticks = sorted({float(y) for y in re.findall(r'<text x="\d+" y="([\d.]+)" text-anchor="end"', svg)})
    spacing = ticks[1] - ticks[0]
    assert pts[2][1] - pts[0][1] == pytest.approx(2 * spacing, abs=0.02)
    assert pts[1][1] - pts[0][1] == pytest.approx(spacing, abs=0.02)
    assert spacing == pytest.approx((HEIGHT - MARGIN["top"] - MARGIN["bottom"]) / 2, abs=0.01)


def test_zero_values_are_plotted_on_the_floor():
    z = np.array([1.0, 0.0, 0.0])
    svg = render_svg([Series("z", np.arange(3), z, z, z)])
    (pts,) = _points(svg)
    ys = [y for _, y in pts]
    assert all(math.isfinite(y) for y in ys)
    assert ys[1] == ys[2] == HEIGHT - MARGIN["bottom"]


def test_read_series_from_trace_and_empty(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("round,dist_sq,gap,grad_norm_sq,diverged\n0,1,0.5,1,0\n1,0.5,0.25,0.5,0\n")
    s = read_series(p)
    assert s.center.tolist() == [0.5, 0.25] and s.label == "t"
    assert read_series(p, "dist_sq").center[0] == 1.0
    e = tmp_path / "e.csv"
    e.write_text("round,gap\n")
    with pytest.raises(ConfigurationError):
        read_series(e)
    with pytest.raises(ConfigurationError):
        read_series(p, "nope")
