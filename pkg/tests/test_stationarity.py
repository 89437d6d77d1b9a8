"""Windowed marginals, TV surrogate, waiting-time detection, scaling sweeps."""

import math

import numpy as np
import pytest

from mglab.ergodicity import ScenarioSpec
from mglab.rng import make_rng
from mglab.stationarity import (
    EmpiricalWindow,
    alpha_sweep,
    detect_waiting_time,
    first_sustained_crossing,
    gamma_doubling_ratio,
    linear_fit,
    scaling_experiment,
    shared_bin_edges,
    tv_distance,
)
from mglab.trajectory import TrajectoryEnsemble


def window_pair(a, b, n_bins=64):
    """Two windows on edges shared across both sample sets."""
    edges = shared_bin_edges([a, b], n_bins=n_bins)
    wa = EmpiricalWindow.from_samples(0.0, a, edges)
    wb = EmpiricalWindow.from_samples(1.0, b, edges)
    return wa, wb


def synthetic_ensemble(values, t_end=10.0, gamma_rate=1.0):
    values = np.asarray(values, dtype=np.float64)
    times = np.linspace(0.0, t_end, values.shape[0])
    return TrajectoryEnsemble(
        times=times,
        values=values,
        coords=list(range(values.shape[2])),
        meta={"gamma_rate": gamma_rate},
    )


# --- histogram windows ---------------------------------------------------------


def test_shared_bin_edges_layout():
    rng = make_rng(0, 50)
    a = rng.standard_normal((500, 3))
    edges = shared_bin_edges([a], n_bins=10)
    assert edges.shape == (3, 11)
    assert np.all(np.diff(edges, axis=1) > 0)
    lo = np.percentile(a, 0.5, axis=0)
    hi = np.percentile(a, 99.5, axis=0)
    assert np.allclose(edges[:, 0], lo)
    assert np.allclose(edges[:, -1], hi)


def test_shared_bin_edges_degenerate_coordinate():
    a = np.zeros((100, 1)) + 3.0
    edges = shared_bin_edges([a], n_bins=4)
    assert edges[0, 0] == 2.5
    assert edges[0, -1] == 3.5


def test_shared_bin_edges_validation():
    with pytest.raises(ValueError, match="2 bins"):
        shared_bin_edges([np.zeros((10, 1))], n_bins=1)
    with pytest.raises(ValueError):
        shared_bin_edges([np.zeros(10)])


def test_window_rows_are_distributions():
    rng = make_rng(1, 50)
    a = rng.standard_normal((400, 2))
    edges = shared_bin_edges([a], n_bins=16)
    w = EmpiricalWindow.from_samples(0.0, a, edges)
    assert w.histograms.shape == (2, 16)
    assert np.allclose(w.histograms.sum(axis=1), 1.0)
    assert w.n_samples == 400
    assert w.n_coords == 2


def test_window_clips_out_of_range_mass():
    # the 0.5% percentile trim puts some samples outside the edges; the end
    # bins must absorb them so each row still sums to one
    rng = make_rng(2, 50)
    a = rng.standard_normal((2000, 1))
    edges = shared_bin_edges([a], n_bins=8)
    w = EmpiricalWindow.from_samples(0.0, a, edges)
    assert np.allclose(w.histograms.sum(axis=1), 1.0)
    outside = np.mean((a[:, 0] < edges[0, 0]) | (a[:, 0] > edges[0, -1]))
    assert outside > 0


def test_window_validation():
    edges = shared_bin_edges([np.zeros((10, 1)) + 1.0], n_bins=4)
    with pytest.raises(ValueError, match="samples must be"):
        EmpiricalWindow.from_samples(0.0, np.zeros(5), edges)
    with pytest.raises(ValueError, match="empty"):
        EmpiricalWindow.from_samples(0.0, np.zeros((0, 1)), edges)
    with pytest.raises(ValueError, match="bin_edges"):
        EmpiricalWindow.from_samples(0.0, np.zeros((5, 2)), edges)


# --- the TV surrogate ----------------------------------------------------------


def test_tv_identical_windows():
    rng = make_rng(3, 50)
    a = rng.standard_normal((300, 2))
    edges = shared_bin_edges([a], n_bins=12)
    w = EmpiricalWindow.from_samples(0.0, a, edges)
    assert tv_distance(w, w) == 0.0


def test_tv_disjoint_supports():
    a = np.full((200, 1), -5.0) + 0.01 * make_rng(4, 50).standard_normal((200, 1))
    b = np.full((200, 1), 5.0) + 0.01 * make_rng(5, 50).standard_normal((200, 1))
    wa, wb = window_pair(a, b, n_bins=16)
    assert tv_distance(wa, wb) == 1.0


def test_tv_is_a_metric_on_shared_edges():
    rng = make_rng(6, 50)
    sets = [rng.standard_normal((250, 2)) + shift for shift in (0.0, 0.7, 1.5)]
    edges = shared_bin_edges(sets, n_bins=20)
    wins = [EmpiricalWindow.from_samples(0.0, s, edges) for s in sets]
    d01 = tv_distance(wins[0], wins[1])
    d12 = tv_distance(wins[1], wins[2])
    d02 = tv_distance(wins[0], wins[2])
    for d in (d01, d12, d02):
        assert 0.0 <= d <= 1.0
    assert d01 == tv_distance(wins[1], wins[0])
    assert d02 <= d01 + d12 + 1e-15


def test_tv_rejects_mismatched_edges():
    rng = make_rng(7, 50)
    a = rng.standard_normal((100, 1))
    b = rng.standard_normal((100, 1))
    wa = EmpiricalWindow.from_samples(0.0, a, shared_bin_edges([a], n_bins=8))
    wb = EmpiricalWindow.from_samples(0.0, b, shared_bin_edges([b], n_bins=8))
    with pytest.raises(ValueError, match="different bin edges"):
        tv_distance(wa, wb)
    wc = EmpiricalWindow.from_samples(0.0, a, shared_bin_edges([a], n_bins=16))
    with pytest.raises(ValueError, match="shapes differ"):
        tv_distance(wa, wc)


def test_tv_between_unit_gaussians_one_apart():
    # closed form for N(0,1) vs N(1,1): erf(1 / (2 sqrt(2)))
    exact = math.erf(0.5 / math.sqrt(2.0))
    assert abs(exact - 0.38292492254802624) < 1e-15
    rng = make_rng(8, 50)
    a = rng.standard_normal((100_000, 1))
    b = rng.standard_normal((100_000, 1)) + 1.0
    wa, wb = window_pair(a, b, n_bins=64)
    assert abs(tv_distance(wa, wb) - exact) < 0.02


def test_tv_same_distribution_decays_at_clt_rate():
    rng = make_rng(9, 50)
    sizes = [512, 2048, 8192, 32768]
    tvs = []
    for n in sizes:
        a = rng.standard_normal((n, 1))
        b = rng.standard_normal((n, 1))
        wa, wb = window_pair(a, b, n_bins=32)
        tvs.append(tv_distance(wa, wb))
    slope = np.polyfit(np.log(sizes), np.log(tvs), 1)[0]
    assert -0.65 < slope < -0.35


# --- crossing detection ---------------------------------------------------------


def test_first_sustained_crossing_basics():
    curve = [0.5, 0.3, 0.1, 0.1, 0.2, 0.05]
    assert first_sustained_crossing(curve, 0.15, confirm=1) == 2
    assert first_sustained_crossing(curve, 0.15, confirm=2) == 2
    assert first_sustained_crossing(curve, 0.15, confirm=3) is None
    assert first_sustained_crossing(curve, 0.01, confirm=1) is None
    with pytest.raises(ValueError):
        first_sustained_crossing(curve, 0.15, confirm=0)


def test_crossing_monotone_in_epsilon_and_confirm():
    rng = make_rng(10, 50)
    for _ in range(50):
        curve = rng.random(12)
        for confirm in (1, 2, 3):
            i_tight = first_sustained_crossing(curve, 0.2, confirm)
            i_loose = first_sustained_crossing(curve, 0.5, confirm)
            if i_tight is not None:
                assert i_loose is not None and i_loose <= i_tight
        i1 = first_sustained_crossing(curve, 0.4, 1)
        i3 = first_sustained_crossing(curve, 0.4, 3)
        if i3 is not None:
            assert i1 is not None and i1 <= i3


# --- waiting-time detection ------------------------------------------------------


def test_detect_on_iid_stationary_data():
    rng = make_rng(11, 50)
    values = rng.standard_normal((41, 256, 2))
    ens = synthetic_ensemble(values)
    rep = detect_waiting_time(ens, epsilon_target=0.2, window=2.0, confirm=2, n_bins=16)
    assert rep.verdict == "converged"
    assert rep.t_hat == rep.tv_times[0]
    assert rep.noise_floor < 0.15
    assert np.all(rep.tv_values < 0.2)
    assert rep.meta["n_tracked"] == 2
    assert rep.tv_curve() == list(zip(rep.tv_times.tolist(), rep.tv_values.tolist()))


def test_detect_default_window_is_a_twentieth_of_the_pretail_span():
    rng = make_rng(12, 50)
    ens = synthetic_ensemble(rng.standard_normal((41, 64, 1)))
    rep = detect_waiting_time(ens, epsilon_target=0.5, n_bins=8)
    # tail starts at record 31 of 41, so the fit span is 7.5 recorded units
    assert rep.window == pytest.approx(7.5 / 20.0)


def test_detect_drops_underfilled_trailing_window():
    rng = make_rng(13, 50)
    ens = synthetic_ensemble(rng.standard_normal((41, 64, 1)))
    # pre-tail records cover 7.5 units; width 1.75 leaves a 3-record remainder
    rep = detect_waiting_time(ens, epsilon_target=0.5, window=1.75, confirm=1, n_bins=8)
    assert rep.n_windows == 4
    assert len(rep.tv_times) == 4
    assert np.all(np.isfinite(rep.tv_values))


def test_detect_validation():
    rng = make_rng(14, 50)
    good = synthetic_ensemble(rng.standard_normal((41, 8, 1)))
    with pytest.raises(ValueError, match="2 replicas"):
        detect_waiting_time(synthetic_ensemble(rng.standard_normal((41, 1, 1))))
    with pytest.raises(ValueError, match="too few records"):
        detect_waiting_time(synthetic_ensemble(rng.standard_normal((6, 8, 1))))
    with pytest.raises(ValueError, match="marginal"):
        detect_waiting_time(good, marginal="sign")
    with pytest.raises(ValueError, match="tail_fraction"):
        detect_waiting_time(good, tail_fraction=1.0)
    with pytest.raises(ValueError, match="epsilon_target"):
        detect_waiting_time(good, epsilon_target=0.0)
    with pytest.raises(ValueError, match="window"):
        detect_waiting_time(good, window=-1.0)


def ou_ensemble(n_replicas, n_steps, x0=3.0, dt=0.01, record_every=10, seed=0):
    """Mean-reverting diffusion with unit stationary variance, from a point."""
    rng = make_rng(seed, 40)
    x = np.full(n_replicas, float(x0))
    records = [x.copy()]
    for step in range(1, n_steps + 1):
        x = x - x * dt + math.sqrt(2.0 * dt) * rng.standard_normal(n_replicas)
        if step % record_every == 0:
            records.append(x.copy())
    values = np.stack(records)[:, :, None]
    times = np.arange(values.shape[0]) * dt * record_every
    return TrajectoryEnsemble(times=times, values=values, coords=[0], meta={"gamma_rate": 1.0})


def test_detect_times_the_ou_relaxation():
    # from x0 = 3 the mean decays as 3 exp(-t); TV against the stationary
    # Gaussian crosses 0.05 near t = 3.2
    ens = ou_ensemble(16384, 1200)
    rep = detect_waiting_time(ens, epsilon_target=0.05, window=0.5, confirm=2, marginal="y")
    assert rep.verdict == "converged"
    assert 1.0 <= rep.t_hat <= 9.0
    assert rep.noise_floor < 0.05


def test_detect_stays_open_when_run_is_too_short():
    ens = ou_ensemble(4096, 200)
    rep = detect_waiting_time(ens, epsilon_target=0.05, window=0.5, confirm=2, marginal="y")
    assert rep.verdict == "open"
    assert rep.t_hat is None


def test_tanh_marginal_sees_through_score_escape():
    """Coordinates that run away linearly have a stationary tanh image."""
    rng = make_rng(15, 50)
    n_rec, n_rep = 41, 64
    t = np.linspace(0.0, 10.0, n_rec)
    signs = np.where(np.arange(n_rep) % 2 == 0, 1.0, -1.0)
    base = signs[None, :] * (4.0 + 0.3 * t[:, None])
    values = (base + 0.2 * rng.standard_normal((n_rec, n_rep)))[:, :, None]
    ens = synthetic_ensemble(values)
    kw = dict(epsilon_target=0.2, window=2.0, confirm=2, n_bins=64)
    assert detect_waiting_time(ens, marginal="tanh", **kw).verdict == "converged"
    assert detect_waiting_time(ens, marginal="y", **kw).verdict == "open"


# --- fits and sweeps -------------------------------------------------------------


def test_linear_fit_exact_line():
    fit = linear_fit([0.0, 1.0, 2.0, 3.0], [1.0, 3.0, 5.0, 7.0])
    assert fit["slope"] == pytest.approx(2.0)
    assert fit["intercept"] == pytest.approx(1.0)
    assert fit["r2"] == pytest.approx(1.0)
    assert fit["n_points"] == 4


def test_linear_fit_degenerate_inputs():
    assert math.isnan(linear_fit([1.0], [2.0])["slope"])
    assert math.isnan(linear_fit([1.0, 1.0], [2.0, 3.0])["slope"])
    flat = linear_fit([0.0, 1.0, 2.0], [4.0, 4.0, 4.0])
    assert flat["slope"] == pytest.approx(0.0)
    assert flat["r2"] == 1.0


FAST_SWEEP = dict(
    epsilon_target=0.9,
    dt=0.05,
    record_every=10,
    n_replicas=8,
    window=2.0,
    confirm=1,
)


def finite_scenario():
    return ScenarioSpec("finite", beta=1.0, gamma_frac=1.0)


def test_scaling_experiment_smoke_and_seed_order():
    kw = dict(FAST_SWEEP, t_end_base=8.0, t_end_per_agent=0.25)
    rep = scaling_experiment((16, 24), 1.0, 1.0, finite_scenario(), seeds=(1, 0), **kw)
    rep2 = scaling_experiment((24, 16), 1.0, 1.0, finite_scenario(), seeds=(0, 1), **kw)
    assert rep.n_grid == [16, 24]
    assert rep.seeds == [0, 1]
    assert len(rep.cells) == 4
    assert rep.n_open == 0
    assert set(rep.per_n_median) == {16, 24}
    assert all(np.isfinite(m) for m in rep.per_n_median.values())
    assert rep.fit_vs_n["n_points"] == 4
    # seed and grid order must not change anything
    assert rep2.per_n_median == rep.per_n_median
    assert [c.t_hat for c in rep2.cells] == [c.t_hat for c in rep.cells]
    assert rep2.fit_vs_n == rep.fit_vs_n


def test_scaling_experiment_rejects_maximal_scenario():
    with pytest.raises(ValueError, match="finite scenario"):
        scaling_experiment((16,), 1.0, 1.0, ScenarioSpec("maximal"), seeds=(0,))


def test_alpha_sweep_matches_realized_ratios():
    # alpha = 0.55 at N = 24 realizes as 13/24; the median bookkeeping must
    # still file those cells under the requested 0.55
    rep = alpha_sweep(
        24, (1.0, 0.55), 1.0, finite_scenario(), seeds=(0, 1), t_end=12.0, **FAST_SWEEP
    )
    assert rep.alphas == [1.0, 0.55]
    assert len(rep.cells) == 4
    assert rep.n_open == 0
    assert not math.isnan(rep.per_alpha_median[0.55])
    assert not math.isnan(rep.per_alpha_median[1.0])
    assert isinstance(rep.medians_non_decreasing, bool)
    realized = sorted({c.alpha for c in rep.cells})
    assert realized == [13.0 / 24.0, 1.0]


def test_alpha_sweep_rejects_unknown_options():
    with pytest.raises(TypeError, match="unknown options"):
        alpha_sweep(16, (1.0,), 1.0, finite_scenario(), seeds=(0,), bogus=1)


def test_gamma_doubling_spans_match():
    out = gamma_doubling_ratio(
        16,
        1.0,
        1.0,
        finite_scenario(),
        seeds=(0,),
        tau_end=12.0,
        dt=0.05,
        record_every=10,
        n_replicas=8,
        epsilon_target=0.9,
        window=2.0,
        confirm=1,
    )
    assert out["base"]["gamma_rate"] == 1.0
    assert out["doubled"]["gamma_rate"] == 2.0
    assert out["base"]["n_open"] == 0
    assert out["doubled"]["n_open"] == 0
    # same recorded span on both legs
    assert out["base"]["cells"][0].t_end == 12.0
    assert out["doubled"]["cells"][0].t_end == 24.0
    assert np.isfinite(out["ratio"])
