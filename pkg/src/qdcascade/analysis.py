"""Physics-level analysis of histograms and concurrence series."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit, minimize

from .cascade import accidental_background, expected_histograms, sample_histograms
from .errors import FitError, ParameterError, QDCascadeError
from .tomography import (
    DEFAULT_REPETITIONS,
    SINGLE_WINDOW_INDEX,
    analyse_window,
    window_counts,
    windowed_tomography,
)

MIN_FIT_COUNTS = 100


@dataclass
class FitResult:
    value: float
    stderr: float
    fit_window: tuple
    reduced_deviance: float
    extras: dict = field(default_factory=dict)


@dataclass
class OscillationSeries:
    """``raw = (RL+LR) - (RR+LL)``, ``total = (RL+LR) + (RR+LL)``, ``normalized = raw/total``.

    ``background`` is the flat per-bin accidental level expected in ``total``.
    ``valid`` flags bins where ``total`` clearly exceeds that background.
    """

    t: np.ndarray
    raw: np.ndarray
    total: np.ndarray
    normalized: np.ndarray
    background: float
    valid: np.ndarray
    irf_fwhm: float = 0.0


@dataclass
class WeightedConcurrence:
    value: float
    low: float
    high: float
    std: float


def _background_per_bin(hist):
    """Flat background per bin and per basis pair.

    Taken from the parameters when present, otherwise from the signal-free
    bins before the pulse.
    """
    if hist.params is not None:
        return accidental_background(hist.params)
    return pre_pulse_background(hist, 0.0)


def pre_pulse_background(hist, irf_fwhm):
    """Mean counts per bin and basis pair in the region ``t < -3 * FWHM``."""
    mask = hist.grid.bin_center < -3.0 * max(irf_fwhm, hist.grid.bin_width)
    if not mask.any():
        return 0.0
    return float(hist.counts[mask].mean())


def _series(hist, which):
    if which == "hh_vv":
        return hist["H", "H"] + hist["V", "V"]
    if which == "all":
        return hist.total()
    raise ParameterError(f"unknown lifetime series {which!r}; use 'hh_vv' or 'all'")


def fit_lifetime(hist, fit_start=None, series="hh_vv", fit_end=None):
    """Poisson maximum-likelihood fit of ``A exp(-t/tau) + b`` to the decay tail.

    ``series="hh_vv"`` fits HH+VV; ``"all"`` fits the sum of all 36 bases,
    which traces the same decay with nine times the statistics. The fit
    starts at twice the IRF FWHM unless ``fit_start`` is given. Returns tau
    in ps with its standard error from the Fisher information.
    """
    params = hist.params
    fwhm = params.irf_fwhm if params is not None else 0.0
    if fit_start is None:
        fit_start = 2.0 * fwhm
    t = hist.grid.bin_center
    y = _series(hist, series)
    mask = t >= fit_start
    if fit_end is not None:
        mask &= t <= fit_end
    t, y = t[mask], y[mask]
    if t.size < 4 or y.sum() < MIN_FIT_COUNTS:
        raise FitError(f"insufficient counts for a lifetime fit ({y.sum():.1f} < {MIN_FIT_COUNTS})")

    scale = y.mean()
    yn = y / scale
    x = t - t[0]
    tail = yn[-max(3, yn.size // 10):]
    b0 = max(float(np.median(tail)), 1e-6)
    a0 = max(float(yn[: max(1, yn.size // 20)].mean()) - b0, 1e-3)
    excess = np.clip(yn - b0, 0.0, None)
    tau0 = float(np.clip(np.dot(excess, x) / max(excess.sum(), 1e-12), 10.0, 1e5))

    def nll(p):
        a, tau, b = p
        e = np.exp(-x / tau)
        mu = np.maximum(a * e + b, 1e-300)
        r = yn / mu - 1.0
        f = -(np.dot(yn, np.log(mu)) - mu.sum()) / yn.size
        g = -np.array([np.dot(r, e), np.dot(r, a * e * x / tau**2), r.sum()]) / yn.size
        return f, g

    res = minimize(
        nll,
        [a0, tau0, b0],
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None), (1.0, 1e6), (0.0, None)],
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000},
    )
    a, tau, b = res.x
    e = np.exp(-x / tau)
    mu = a * e + b
    jac = np.column_stack([e, a * e * x / tau**2, np.ones_like(x)]) * scale
    mu_s = mu * scale
    fisher = (jac / mu_s[:, None]).T @ jac
    try:
        cov = np.linalg.inv(fisher)
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        err = np.full(3, np.inf)
    if not res.success and res.status != 2:
        raise FitError(f"lifetime fit failed: {res.message}", {"tau": tau})
    if a <= 0 or not err[0] > 0 or a * scale < 3.0 * err[0] or tau >= 1e6 * 0.999 or not np.isfinite(err[1]):
        raise FitError(
            "no significant exponential decay in the fit range",
            {"amplitude": a * scale, "amplitude_err": err[0], "tau": tau},
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu_s), 0.0)
    dev = 2.0 * np.sum(term - (y - mu_s)) / max(y.size - 3, 1)
    return FitResult(
        value=float(tau),
        stderr=float(err[1]),
        fit_window=(float(t[0]), float(t[-1])),
        reduced_deviance=float(dev),
        extras={"amplitude": float(a * scale), "background": float(b * scale), "series": series},
    )


def oscillation_series(hist, background=None):
    """Quantum-oscillation signal ``(RL+LR) - (RR+LL)`` and its normalized form."""
    plus = hist["R", "L"] + hist["L", "R"]
    minus = hist["R", "R"] + hist["L", "L"]
    raw = plus - minus
    total = plus + minus
    if background is None:
        background = 4.0 * _background_per_bin(hist)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(total > 0, raw / total, np.nan)
    valid = total > max(10.0 * background, 0.0) + 1e-12
    fwhm = hist.params.irf_fwhm if hist.params is not None else 0.0
    return OscillationSeries(hist.grid.bin_center, raw, total, norm, float(background), valid, fwhm)


def _damped_cosine(t, amp, rate, freq, phase, offset):
    return amp * np.exp(-rate * t) * np.cos(2.0 * np.pi * freq * 1e-6 * t + phase) + offset


def fit_fss(osc, fit_start=None, min_periods=3.0):
    """Fit ``C exp(-t/tau_d) cos(2 pi f t + phi) + c0`` to the normalized oscillation.

    The denominator is corrected for the flat accidental background so late
    bins do not mimic damping. Only ``t > IRF FWHM`` is used. Returns the
    frequency in MHz; ``extras`` holds the damping rate ``1/tau_d`` (1/ps,
    constrained >= 0) with its error.
    """
    if fit_start is None:
        fit_start = osc.irf_fwhm
    den = osc.total - osc.background
    mask = (osc.t > fit_start) & (den > 0)
    if mask.sum() < 10:
        raise FitError("too few bins with signal for an oscillation fit")
    t = osc.t[mask]
    y = osc.raw[mask] / den[mask]
    # Poisson variance of the difference is the sum; floor at one count
    sigma = np.sqrt(np.maximum(osc.total[mask], 1.0)) / den[mask]
    t0 = t[0]
    x = t - t0
    span = x[-1] - x[0]

    # frequency guess from a weighted periodogram above min_periods/span
    w = 1.0 / sigma**2
    yc = y - np.average(y, weights=w)
    freqs = np.linspace(min_periods / span, 0.5 / np.median(np.diff(t)), 4000) * 1e6  # MHz
    ph = 2.0 * np.pi * np.outer(freqs * 1e-6, x)
    power = np.abs((np.exp(-1j * ph) * (w * yc)).sum(axis=1))
    f0 = freqs[np.argmax(power)]
    c = (w * yc * np.cos(2 * np.pi * f0 * 1e-6 * x)).sum() / (w * np.cos(2 * np.pi * f0 * 1e-6 * x) ** 2).sum()
    s = (w * yc * np.sin(2 * np.pi * f0 * 1e-6 * x)).sum() / (w * np.sin(2 * np.pi * f0 * 1e-6 * x) ** 2).sum()
    amp0 = max(math.hypot(c, s), 1e-3)
    phase0 = math.atan2(-s, c)
    p0 = [amp0, 1e-5, f0, phase0, float(np.average(y, weights=w))]
    bounds = ([0.0, 0.0, 0.0, -4 * math.pi, -2.0], [2.0, 1.0, np.inf, 4 * math.pi, 2.0])
    try:
        popt, pcov = curve_fit(
            _damped_cosine, x, y, p0=p0, sigma=sigma, absolute_sigma=True, bounds=bounds, max_nfev=20_000
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"oscillation fit did not converge: {exc}", {"f0": f0}) from exc
    err = np.sqrt(np.clip(np.diag(pcov), 0.0, None))
    amp, rate, freq, phase, offset = popt
    resid = (y - _damped_cosine(x, *popt)) / sigma
    red = float(np.sum(resid**2) / max(y.size - 5, 1))
    if not np.all(np.isfinite(err)) or amp < 5.0 * max(err[0], 1e-12) or freq * 1e-6 * span < min_periods:
        raise FitError(
            "no resolvable oscillation in the fit window",
            {"amplitude": amp, "amplitude_err": err[0], "frequency": freq, "span_ps": span},
        )
    return FitResult(
        value=float(freq),
        stderr=float(err[2]),
        fit_window=(float(t[0]), float(t[-1])),
        reduced_deviance=red,
        extras={
            "damping_rate": float(rate),
            "damping_rate_err": float(err[1]),
            "amplitude": float(amp),
            "amplitude_err": float(err[0]),
            "phase": float(phase + 2 * math.pi * freq * 1e-6 * (-t0)),
            "offset": float(offset),
        },
    )


def peak_concurrence(hist, g2_xx, width=200.0, repetitions=DEFAULT_REPETITIONS, seed=0, background=0.0):
    """Tomography of the single window of ``width`` centered at ``t = 0``."""
    wc = window_counts(hist, 0.0, width)
    return analyse_window(wc, g2_xx, repetitions, seed, SINGLE_WINDOW_INDEX, background)


def max_window_concurrence(series):
    if not len(series):
        raise ParameterError("empty concurrence series")
    return float(max(r.concurrence for r in series))


def weighted_average_concurrence(series):
    """Counts-weighted mean concurrence with Monte-Carlo bounds (mean +/- 2 std)."""
    if not len(series):
        raise ParameterError("empty concurrence series")
    c = np.array([r.concurrence for r in series])
    w = np.array([r.total_counts for r in series])
    if not w.sum() > 0:
        raise ParameterError("total weight of the series is zero")
    value = float(np.dot(c, w) / w.sum())
    have_mc = all(r.mc_concurrence is not None for r in series)
    if not have_mc:
        return WeightedConcurrence(value, value, value, 0.0)
    mc = np.array([r.mc_concurrence for r in series])
    tot = np.array([r.mc_totals for r in series])
    ok = np.isfinite(mc)
    num = np.where(ok, mc * tot, 0.0).sum(axis=0)
    den = np.where(ok, tot, 0.0).sum(axis=0)
    reps = num[den > 0] / den[den > 0]
    if reps.size < 2:
        return WeightedConcurrence(value, 0.0, 1.0, math.nan)
    mean, std = reps.mean(), reps.std(ddof=1)
    low = min(max(0.0, mean - 2 * std), value)
    high = max(min(1.0, mean + 2 * std), value)
    return WeightedConcurrence(value, float(low), float(high), float(std))


def concurrence_regimes(series, irf_fwhm, tau_x, rolloff_margin=0.02, min_counts=1.0):
    """Locate the `top`, `flat` and `roll-off` parts of a concurrence series.

    The flat part is the mean over windows centered in
    ``[max(3 FWHM, width), 2 tau_x]``. A top is reported when any earlier
    window exceeds that mean by more than its own Monte-Carlo half-band
    (the most significant such window is returned);
    a roll-off when a later window falls more than ``rolloff_margin`` below.
    Windows with fewer than ``min_counts`` counts are ignored.
    """
    if not len(series):
        raise ParameterError("empty concurrence series")
    width = series[0].window_width
    series = [r for r in series if r.total_counts >= min_counts]
    centers = np.array([r.window_center for r in series])
    conc = np.array([r.concurrence for r in series])
    flat_lo = max(3.0 * irf_fwhm, width)
    flat_hi = 2.0 * tau_x
    flat = (centers >= flat_lo) & (centers <= flat_hi)
    if not len(series) or not flat.any():
        raise ParameterError("series has no windows in the flat region")
    flat_mean = float(conc[flat].mean())
    early = np.flatnonzero(centers < flat_lo)
    top_excess = 0.0
    top = False
    top_center = None
    if early.size:
        band = np.array([0.5 * (series[k].concurrence_high - series[k].concurrence_low) for k in early])
        margin = conc[early] - flat_mean - band
        k = early[np.argmax(margin)]
        top_excess = float(conc[k] - flat_mean)
        top = bool(margin.max() > 0)
        top_center = float(centers[k])
    late = np.flatnonzero(centers > flat_hi)
    rolloff = False
    rolloff_min = None
    if late.size:
        rolloff_min = float(conc[late].min())
        rolloff = rolloff_min < flat_mean - rolloff_margin
    return {
        "flat_mean": flat_mean,
        "flat_window": (flat_lo, flat_hi),
        "top": bool(top),
        "top_excess": top_excess,
        "top_center": top_center,
        "rolloff": bool(rolloff),
        "rolloff_min": rolloff_min,
    }


@dataclass
class ScenarioResult:
    name: str
    params: object
    series: object = None
    peak: object = None
    max_window: float = math.nan
    weighted: object = None
    lifetime: object = None
    fss: object = None
    regimes: dict = None
    error: str = None


def analyse_histograms(hist, settings, name="scenario"):
    """Full analysis chain on one histogram set.

    ``settings`` keys: ``window_width``, ``window_step``, ``repetitions``,
    ``seed``, ``peak_width``, ``lifetime_series``, ``lifetime_fit_start``,
    ``background``, ``workers``.
    """
    params = hist.params
    g2 = params.g2_xx
    bg = settings.get("background", 0.0)
    out = ScenarioResult(name=name, params=params)
    out.series = windowed_tomography(
        hist,
        settings.get("window_width", 100.0),
        settings.get("window_step", 100.0),
        g2,
        repetitions=settings.get("repetitions", DEFAULT_REPETITIONS),
        seed=settings.get("seed", 0),
        background=bg,
        workers=settings.get("workers"),
    )
    out.peak = peak_concurrence(
        hist,
        g2,
        settings.get("peak_width", 200.0),
        settings.get("repetitions", DEFAULT_REPETITIONS),
        settings.get("seed", 0),
        bg,
    )
    out.max_window = max_window_concurrence(out.series)
    out.weighted = weighted_average_concurrence(out.series)
    try:
        out.lifetime = fit_lifetime(
            hist, settings.get("lifetime_fit_start"), series=settings.get("lifetime_series", "hh_vv")
        )
    except FitError as exc:
        out.lifetime = exc
    try:
        out.fss = fit_fss(oscillation_series(hist))
    except FitError as exc:
        out.fss = exc
    try:
        out.regimes = concurrence_regimes(out.series, params.irf_fwhm, params.tau_x)
    except ParameterError:
        out.regimes = None
    return out


def scenario_compare(base, variants, settings, sampled=False):
    """Run the full pipeline for each variant of ``base``.

    ``variants`` is a list of ``(name, CascadeParams)`` pairs or of
    ``(name, overrides_dict)``. A failing variant is reported through
    ``ScenarioResult.error`` and does not stop the others.
    """
    if not variants:
        raise ParameterError("scenario comparison needs at least one variant")
    results = []
    for name, variant in variants:
        try:
            params = base.replace(**variant) if isinstance(variant, dict) else variant
            hist = expected_histograms(params)
            if sampled:
                hist = sample_histograms(hist, settings.get("seed", 0))
            results.append(analyse_histograms(hist, settings, name))
        except (QDCascadeError, TypeError) as exc:
            results.append(ScenarioResult(name=name, params=None, error=str(exc)))
    return results
