import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixident.experiments import (ADVERSARIAL_KINDS, RATE_HEADER, SCATTER_HEADER, ScatterConfig, check_ratios,
                                  fit_envelope, fit_slope, format_value, gaussian_weak_g0, mp_wasserstein,
                                  rate_preset, read_csv_body, run_adversarial, run_rate_sweep, run_scatter,
                                  scatter_measure, scatter_preset, svg_loglog, write_csv)
from mixident.measures import wasserstein_value


@given(st.floats(0.5, 5.0), st.floats(-2.0, 2.0))
def test_envelope_recovers_power_law(k, c):
    rng = np.random.default_rng(0)
    x = np.exp(rng.uniform(-8, 0, 400))
    y = np.exp(c) * x ** k * np.exp(rng.uniform(0, 2, 400))
    lower = fit_envelope(x, y, lower=True)
    assert lower.slope == pytest.approx(k, abs=0.15)
    assert fit_envelope(x, y, lower=False).slope == pytest.approx(k, abs=0.15)


def test_envelope_degenerate_inputs():
    assert math.isnan(fit_envelope([], []).slope)
    assert math.isnan(fit_envelope([1.0, 1.0], [1.0, 2.0]).slope)


def test_slope_fit_on_synthetic_rates():
    rng = np.random.default_rng(1)
    rows = [[n, r, 3.0 * n ** -0.5 * math.exp(rng.normal(0, 0.1)), True]
            for n in (1000, 2000, 5000, 10000, 20000, 50000) for r in range(7)]
    rows.append([1000, 7, float("nan"), False])
    fit = fit_slope(rows, bootstrap=300)
    assert fit.slope == pytest.approx(-0.5, abs=0.05)
    assert fit.ci[0] < fit.slope < fit.ci[1]
    assert fit.failures == 1
    assert not fit.nonpolynomial


def test_slope_fit_flags_slowing_decay():
    rows = [[n, r, 1.0 / math.log(n) ** 2 * (1 + 0.01 * r), True]
            for n in np.logspace(2, 8, 10).astype(int).tolist() for r in range(5)]
    assert fit_slope(rows, bootstrap=200).nonpolynomial


def test_check_ratios():
    ns = [10, 50, 100, 1000, 10000]
    assert check_ratios(ns, [5.0, 9.0, 1.0, 1e-2, 1e-4])["pass"]
    assert not check_ratios(ns, [5.0, 9.0, 1.0, 2.0, 1e-4])["pass"]
    assert not check_ratios(ns, [5.0, 9.0, 1.0, 0.5, 0.1])["pass"]


def test_csv_writer_round_trip(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, RATE_HEADER, [[1000, 0, 0.25, True], [1000, 1, float("nan"), False]], {"version": "v", "seed": 3})
    text = path.read_text()
    assert text.startswith("# version=v\n# seed=3\n")
    body = read_csv_body(path)
    assert body[0].strip() == "n,rep,Wr,converged"
    assert body[1].strip() == "1000,0,0.25,true"
    assert format_value("gamma") == "gamma"


def test_svg_is_well_formed():
    svg = svg_loglog([("V", [1e-3, 1e-2, 1e-1], [1e-6, 1e-4, 1e-2], "#000000")], "t", "x", "y", [(2.0, 0.0)])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    ET.fromstring(svg_loglog([("V", [], [], "#000000")], "empty", "x", "y"))


def test_scatter_config_validation():
    fam, G0 = gaussian_weak_g0()
    ScatterConfig(fam, G0, (-6, 6), M=0)
    with pytest.raises(ValueError):
        ScatterConfig(fam, G0, (-6, 6), M=50)
    with pytest.raises(ValueError):
        ScatterConfig(fam, G0, (-6, 6), k=1)
    with pytest.raises(ValueError):
        ScatterConfig(fam, G0, (0, 6))


def test_empty_scatter_has_no_rows():
    cfg = scatter_preset("gaussian_weak_over1", M=0)
    res = run_scatter(cfg)
    assert res.rows == [] and math.isnan(res.lower.slope)


def test_scatter_samples_respect_configuration():
    cfg = scatter_preset("gaussian_weak_over1", M=100, seed=4)
    for i in range(20):
        strategy, G = scatter_measure(cfg, i)
        assert strategy in cfg.strategies
        assert G.k == cfg.k
        assert all(-10 <= p.loc[0] <= 10 for p in G.points)


def test_scatter_rows_are_seeded_and_thread_independent():
    a = run_scatter(scatter_preset("gaussian_weak_over1", M=100, seed=2, threads=1))
    b = run_scatter(scatter_preset("gaussian_weak_over1", M=100, seed=2, threads=2))
    assert a.rows == b.rows
    assert len(a.rows[0]) == len(SCATTER_HEADER)
    c = run_scatter(scatter_preset("gaussian_weak_over1", M=100, seed=3))
    assert a.rows != c.rows


def test_rate_sweep_small_grid_is_thread_independent():
    kw = dict(n_grid=(300, 600), R=3, restarts=2, bootstrap=50)
    a = run_rate_sweep(rate_preset("gamma_generic_rate", threads=1, **kw))
    b = run_rate_sweep(rate_preset("gamma_generic_rate", threads=2, **kw))
    assert a.rows == b.rows
    assert json.dumps(a.fit.to_dict()) == json.dumps(b.fit.to_dict())


def test_mp_wasserstein_agrees_with_float_transport():
    import mpmath as mp

    from mixident.divergences import mp_atoms
    fam, G0 = gaussian_weak_g0()
    _, H = scatter_measure(scatter_preset("gaussian_weak_over1", M=100), 0)
    with mp.workdps(30):
        val = mp_wasserstein(mp_atoms(fam, H), mp_atoms(fam, G0), 2.0)
    assert float(val) == pytest.approx(wasserstein_value(H, G0, 2.0), rel=1e-9)


def test_adversarial_short_run():
    res = run_adversarial("gamma_pathological", n_list=[10, 100, 1000, 10000])
    assert {row[1] for row in res.rows} == {1, 2}
    assert all(v["monotone"] for v in res.verdicts)
    assert "location_exponential" in ADVERSARIAL_KINDS
