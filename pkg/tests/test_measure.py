import warnings

import numpy as np
import pytest

from gridutil import WORKED
from sorteq.errors import PanelError
from sorteq.measure import (
    cluster_jackknife, expected_survivor_fraction, firm_statistics, firm_table, measure_moments,
    measured_standard_errors, resample, vov_adjustment,
)
from sorteq.model import ModelParams, solve_equilibrium
from sorteq.simulate import Panel, simulate_homogeneous_panel, simulate_panel


def toy(wages_by_firm):
    fid, lw = [], []
    for f, ws in enumerate(wages_by_firm):
        fid += [f] * len(ws)
        lw += list(ws)
    return Panel.from_workers(np.arange(len(lw)), fid, lw)


@pytest.fixture(scope="module")
def worked_panel():
    p = ModelParams(**WORKED)
    eq = solve_equilibrium(p)
    return p, eq, simulate_panel(p, eq, 60_000, 1_500, seed=8)


def test_degenerate_firm_variance():
    stats = firm_statistics(toy([[1.0, 1.0, 1.0]]), min_firm_size=2)
    assert stats[0].var_lw == 0.0 and stats[0].size == 3


def test_bessel_and_plugin_variance():
    (s,) = firm_statistics(toy([[0.0, 1.0]]), min_firm_size=2)
    assert s.var_lw == 0.5 and s.mu2_hat == 0.25 and s.mu4_hat == 0.0625
    assert s.mean_lw == 0.5


def test_two_firm_toy_panel():
    m = measure_moments(toy([[0.0, 1.0], [2.0, 3.0]]), min_firm_size=2)
    assert m.var_log_wage == pytest.approx(5 / 3, rel=1e-15)
    assert m.wfwi == m.wfwi_weighted == 0.5
    assert m.bfwi == pytest.approx(7 / 6, rel=1e-15)
    assert m.mean_log_wage == 1.5
    assert m.wfwi_unweighted == 0.5
    assert m.n_workers == 4 and m.n_firms == 2


def test_adjustment_normal_population_identity():
    for n in (2, 3, 5, 40, 1000):
        mu2 = 0.7
        assert vov_adjustment(mu2, 3 * mu2**2, n) == pytest.approx(2 * mu2**2 / (n - 1), rel=1e-14)


def test_adjustment_matches_sampling_variance_by_monte_carlo():
    # firms of n normal wages: the mean plug-in adjustment estimates Var(var_lw)
    rng = np.random.default_rng(0)
    n, j = 40, 50_000
    panel = Panel.from_workers(np.arange(n * j), np.repeat(np.arange(j), n), rng.normal(0, 1, n * j))
    tab = firm_table(panel, 2)
    truth = 2.0 / (n - 1)
    assert np.var(tab.var_lw, ddof=1) == pytest.approx(truth, rel=0.03)
    # plug-in moments bias the adjustment by O(1/n)
    assert np.mean(tab.vov_adjustment) == pytest.approx(truth, rel=5.0 / n)


def test_min_firm_size_filter():
    panel = toy([[0.0, 1.0], [2.0, 3.0, 4.0], [5.0]])
    m = measure_moments(panel, min_firm_size=3)
    assert m.n_firms == 1 and m.n_workers == 3 and m.n_excluded_firms == 2
    # a floor below 2 is raised to 2 so that Bessel's correction is defined
    assert measure_moments(panel, min_firm_size=1).n_firms == 2
    with pytest.raises(PanelError):
        measure_moments(panel, min_firm_size=10)


def test_worker_level_wfwi_equals_firm_weighted():
    rng = np.random.default_rng(1)
    sizes = rng.integers(2, 30, 200)
    fid = np.repeat(np.arange(200), sizes)
    lw = rng.normal(fid * 0.01, 1 + 0.001 * fid)
    m = measure_moments(Panel.from_workers(np.arange(fid.size), fid, lw), 2)
    means = np.bincount(fid, lw) / sizes
    dev2 = (lw - means[fid]) ** 2
    bessel = (sizes / (sizes - 1.0))[fid]
    assert m.wfwi_weighted == pytest.approx(np.mean(dev2 * bessel), rel=1e-12)


def test_measured_moments_ignore_latent_columns(worked_panel):
    p, eq, panel = worked_panel
    bare = Panel.from_workers(panel.worker_id, panel.firm_id, panel.log_wage)
    assert measure_moments(bare).to_dict() == measure_moments(panel).to_dict()


def test_standard_errors_agree_with_point_estimates(worked_panel):
    p, eq, panel = worked_panel
    m = measure_moments(panel)
    se = measured_standard_errors(panel)
    for name in ("wfwi_weighted", "wfwi_unweighted", "var_log_wage", "mean_log_wage", "bfwi"):
        assert se[name][0] == pytest.approx(getattr(m, name), rel=1e-9, abs=1e-12), name
        assert se[name][1] > 0
    assert se["var_of_within_var"][0] == pytest.approx(m.var_of_within_var, rel=1e-8)


def test_cluster_jackknife_mean_matches_classical_se():
    rng = np.random.default_rng(2)
    y = rng.normal(size=500)
    totals = np.column_stack([np.ones_like(y), y])
    est, se = cluster_jackknife(totals, lambda t: (t[..., 1] / t[..., 0])[..., None])
    assert est[0] == pytest.approx(y.mean())
    assert se[0] == pytest.approx(y.std(ddof=1) / np.sqrt(y.size), rel=1e-10)


def test_clamp_flag_and_warning():
    # two identical two-worker firms: raw dispersion is zero
    with pytest.warns(RuntimeWarning):
        m = measure_moments(toy([[0.0, 1.0], [5.0, 6.0]]), 2)
    assert m.var_of_within_var == 0.0 and m.var_of_within_var_raw == 0.0
    # small firms with nearly equal variances: adjustment exceeds the raw value
    with pytest.warns(RuntimeWarning, match="clamped"):
        m = measure_moments(toy([[0.0, 1.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.1]]), 2)
    assert m.vov_clamped and m.var_of_within_var == 0.0 and m.var_of_within_var_raw > 0


def test_homogeneous_firms_denoise_towards_zero():
    p = ModelParams(**WORKED)
    eq = solve_equilibrium(p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        small = measure_moments(simulate_homogeneous_panel(p, eq, 2_000, 20, seed=1))
        large = measure_moments(simulate_homogeneous_panel(p, eq, 2_000, 200, seed=1))
    assert small.var_of_within_var_raw > 5 * large.var_of_within_var_raw > 0
    assert abs(small.var_of_within_var_raw - small.var_of_within_var) > 0.5 * small.var_of_within_var_raw


# ---------------------------------------------------------------------------
# resampling


def test_resample_properties(worked_panel):
    p, eq, panel = worked_panel
    a, b = resample(panel, 7), resample(panel, 7)
    assert np.array_equal(a.worker_id, b.worker_id)
    assert np.unique(a.worker_id).size == a.n_workers
    assert set(a.worker_id) <= set(panel.worker_id)
    assert not np.array_equal(resample(panel, 8).worker_id, a.worker_id)
    assert a.firm_size.sum() == a.n_workers and a.firm_size.min() >= 1
    # worker-firm matches are preserved
    lookup = dict(zip(panel.worker_id, panel.firm_id))
    assert all(lookup[w] == f for w, f in zip(a.worker_id[:500], a.firm_id[:500]))
    assert a.n_workers / panel.n_workers == pytest.approx(expected_survivor_fraction(panel.n_workers), abs=0.01)


def test_survivor_fraction_formula():
    assert expected_survivor_fraction(1) == 1.0
    assert expected_survivor_fraction(2) == 0.75
    assert expected_survivor_fraction(10**9) == pytest.approx(1 - np.exp(-1), rel=1e-8)


def test_empty_panel_rejected():
    empty = Panel.from_workers([], [], [])
    with pytest.raises(PanelError):
        resample(empty, 0)
    with pytest.raises(PanelError):
        measure_moments(empty)
