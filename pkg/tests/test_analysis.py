import math

import numpy as np
import pytest

from qdcascade.analysis import (
    concurrence_regimes,
    fit_fss,
    fit_lifetime,
    max_window_concurrence,
    oscillation_series,
    peak_concurrence,
    pre_pulse_background,
    scenario_compare,
    weighted_average_concurrence,
)
from qdcascade.cascade import CascadeParams, HistogramSet, TimeGrid, expected_histograms, pair_count, sample_histograms
from qdcascade.errors import FitError, ParameterError
from qdcascade.polarization import BASIS_PAIRS
from qdcascade.tomography import TomographyResult, TomographySeries, windowed_tomography


def swap_circular(hist, first=True, second=True):
    """Relabel R <-> L on the chosen photons (opposite handedness convention)."""
    swap = {"R": "L", "L": "R"}
    idx = [
        BASIS_PAIRS.index((swap.get(i, i) if first else i, swap.get(j, j) if second else j)) for i, j in BASIS_PAIRS
    ]
    return HistogramSet(hist.grid, hist.counts[:, idx], hist.params, hist.kind)


def fake_series(values, counts):
    items = []
    for k, (c, w) in enumerate(zip(values, counts)):
        items.append(TomographyResult(100.0 * k, 100.0, np.eye(4) / 4, np.eye(4) / 4, c, c, c, w))
    return TomographySeries(items)


# --- lifetime --------------------------------------------------------------------


def test_lifetime_from_noiseless_data(apd_expected):
    fit = fit_lifetime(apd_expected)
    assert fit.value == pytest.approx(847.0, rel=1e-6)
    assert fit.stderr > 0
    assert fit.fit_window[0] >= 380.0


def test_lifetime_753_recovered():
    h = expected_histograms(CascadeParams(tau_x=753.0))
    assert fit_lifetime(h).value == pytest.approx(753.0, rel=0.02)


def test_lifetime_from_sampled_high_statistics():
    p = CascadeParams(integration_time=370.0 * 40)
    assert pair_count(p) > 1e5
    fit = fit_lifetime(sample_histograms(expected_histograms(p), 1))
    assert fit.value == pytest.approx(847.0, abs=10.0)
    assert abs(fit.value - 847.0) < 4 * fit.stderr


def test_lifetime_scale_invariant(apd_expected):
    hist = sample_histograms(apd_expected, 4)
    a = fit_lifetime(hist, series="all").value
    for k in (0.5, 7.0, 1e4):
        assert fit_lifetime(hist.scaled(k), series="all").value == pytest.approx(a, rel=1e-6)


def test_lifetime_background_only_raises():
    grid = TimeGrid(-2000.0, 16.0, 750)
    flat = np.random.default_rng(0).poisson(5.0, size=(750, 36)).astype(float)
    with pytest.raises(FitError):
        fit_lifetime(HistogramSet(grid, flat, CascadeParams()))


def test_lifetime_unknown_series(apd_expected):
    with pytest.raises(ParameterError):
        fit_lifetime(apd_expected, series="rr")


# --- oscillation -----------------------------------------------------------------


def test_oscillation_without_splitting_is_flat():
    h = expected_histograms(CascadeParams(fss_frequency=0.0, dark_rate_x=0.0, dark_rate_xx=0.0))
    osc = oscillation_series(h)
    on = osc.total > 1e-6 * osc.total.max()
    assert np.allclose(osc.normalized[on], 1.0, atol=1e-9)
    assert np.allclose(osc.raw, osc.total, rtol=1e-9, atol=1e-12)


def test_oscillation_values_bounded_and_flagged(apd_expected):
    osc = oscillation_series(apd_expected)
    ok = np.isfinite(osc.normalized)
    assert np.all(np.abs(osc.normalized[ok]) <= 1 + 1e-12)
    assert not np.any(osc.valid[osc.t < -600])
    assert np.all(osc.valid[(osc.t > 0) & (osc.t < 3000)])


def test_oscillation_contrast(apd_params):
    h = expected_histograms(apd_params.replace(dark_rate_x=0.0, dark_rate_xx=0.0))
    osc = oscillation_series(h)
    flat = (osc.t > 1000) & (osc.t < 3000)
    assert np.max(np.abs(osc.normalized[flat])) == pytest.approx(0.922, abs=0.01)


def test_fss_from_noiseless_data(apd_expected):
    fit = fit_fss(oscillation_series(apd_expected))
    assert fit.value == pytest.approx(795.52, abs=0.5)
    assert fit.stderr > 0
    assert fit.fit_window[0] > 190.0


def test_handedness_convention_on_both_photons_leaves_signal_unchanged(apd_expected):
    hist = sample_histograms(apd_expected, 9)
    assert np.array_equal(oscillation_series(swap_circular(hist)).raw, oscillation_series(hist).raw)


def test_fss_invariant_under_sign_flip(apd_expected):
    hist = sample_histograms(apd_expected, 9)
    flipped = swap_circular(hist, second=False)
    assert np.allclose(oscillation_series(flipped).raw, -oscillation_series(hist).raw)
    a = fit_fss(oscillation_series(hist))
    b = fit_fss(oscillation_series(flipped))
    assert b.value == pytest.approx(a.value, rel=1e-6)
    assert b.extras["amplitude"] == pytest.approx(a.extras["amplitude"], rel=1e-6)
    dphi = (b.extras["phase"] - a.extras["phase"]) % (2 * math.pi)
    assert dphi == pytest.approx(math.pi, abs=1e-3)


def test_fss_zero_splitting_raises():
    h = expected_histograms(CascadeParams(fss_frequency=0.0))
    with pytest.raises(FitError):
        fit_fss(oscillation_series(h))


def test_dephasing_knob_detected(apd_params):
    free = fit_fss(oscillation_series(expected_histograms(apd_params)))
    damped = fit_fss(oscillation_series(expected_histograms(apd_params.replace(dephasing_time=1000.0))))
    assert damped.extras["damping_rate"] > 3 * damped.extras["damping_rate_err"]
    assert free.extras["damping_rate"] < 2 * free.extras["damping_rate_err"]


# --- concurrence summaries -----------------------------------------------------------


def test_weighted_average_of_constant_series():
    s = fake_series([0.7] * 5, [10, 1, 100, 3, 8])
    w = weighted_average_concurrence(s)
    assert w.value == pytest.approx(0.7)
    assert w.low == w.high == pytest.approx(0.7)


def test_weighted_average_uses_counts():
    s = fake_series([1.0, 0.0], [3.0, 1.0])
    assert weighted_average_concurrence(s).value == pytest.approx(0.75)


def test_weighted_average_between_extremes():
    rng = np.random.default_rng(1)
    for _ in range(20):
        c = rng.random(8)
        s = fake_series(c, rng.random(8) * 100 + 1)
        v = weighted_average_concurrence(s).value
        assert c.min() <= v <= c.max()


def test_weighted_average_errors():
    with pytest.raises(ParameterError):
        weighted_average_concurrence(fake_series([], []))
    with pytest.raises(ParameterError):
        weighted_average_concurrence(fake_series([0.5], [0.0]))


def test_max_window():
    assert max_window_concurrence(fake_series([0.2, 0.9, 0.4], [1, 1, 1])) == 0.9


def test_weighted_average_mc_band(apd_expected):
    s = windowed_tomography(apd_expected, 200.0, 400.0, 0.1, repetitions=20, seed=1)
    w = weighted_average_concurrence(s)
    assert w.low <= w.value <= w.high
    assert w.std > 0


def test_peak_of_ideal_source_is_one(ideal_params):
    res = peak_concurrence(expected_histograms(ideal_params), 0.0, repetitions=50, seed=1)
    assert res.window_width == 200.0
    assert res.concurrence >= res.concurrence_low
    assert 1.0 - res.concurrence < 0.011


def test_peak_is_rewindowed_not_series_max(apd_expected):
    res = peak_concurrence(apd_expected, 0.1, repetitions=2)
    assert res.window_center == 0.0
    # bins whose centers lie in [-100, 100) on the 16 ps grid
    assert res.edges == (-96.0, 96.0)


# --- regimes ------------------------------------------------------------------------


def test_regimes_on_synthetic_series():
    c = np.r_[0.95, 0.9, np.full(15, 0.8), 0.6, 0.4]
    items = []
    for k, v in enumerate(c):
        items.append(TomographyResult(100.0 * k, 100.0, None, None, v, v - 0.01, v + 0.01, 1000.0))
    reg = concurrence_regimes(TomographySeries(items), irf_fwhm=50.0, tau_x=800.0)
    assert reg["top"] and reg["rolloff"]
    assert reg["flat_mean"] == pytest.approx(0.8)


def test_regimes_ignore_sparse_windows():
    c = np.r_[np.full(17, 0.8), 0.0]
    items = [
        TomographyResult(100.0 * k, 100.0, None, None, v, v - 0.01, v + 0.01, 0.5 if v == 0 else 1000.0)
        for k, v in enumerate(c)
    ]
    reg = concurrence_regimes(TomographySeries(items), 50.0, 800.0, min_counts=1.0)
    assert not reg["rolloff"]


def test_regimes_need_flat_region():
    with pytest.raises(ParameterError):
        concurrence_regimes(fake_series([0.5], [10]), 190.0, 847.0)


def test_pre_pulse_background(apd_expected, apd_params):
    from qdcascade.cascade import accidental_background

    assert pre_pulse_background(apd_expected, 190.0) == pytest.approx(accidental_background(apd_params), rel=1e-9)


# --- scenario comparison -------------------------------------------------------------


SETTINGS = {"window_width": 400.0, "window_step": 800.0, "repetitions": 3, "seed": 5, "lifetime_series": "all"}


def test_variant_equal_to_base_gives_identical_outputs(apd_params):
    out = scenario_compare(apd_params, [("a", {}), ("b", apd_params)], SETTINGS)
    a, b = out
    assert a.error is None and b.error is None
    assert np.array_equal(a.series.concurrences, b.series.concurrences)
    assert a.peak.concurrence == b.peak.concurrence
    assert a.weighted == b.weighted


def test_failing_variant_does_not_stop_others(apd_params):
    out = scenario_compare(apd_params, [("bad", {"tau_x": -1.0}), ("ok", {"g2_xx": 0.0})], SETTINGS)
    assert out[0].error and "tau_x" in out[0].error
    assert out[1].error is None and out[1].peak.concurrence > 0.8


def test_scenario_compare_needs_variants(apd_params):
    with pytest.raises(ParameterError):
        scenario_compare(apd_params, [], SETTINGS)
