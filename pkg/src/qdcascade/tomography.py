"""Windowed maximum-likelihood state reconstruction from 36-basis counts."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from . import likelihood
from .errors import ConvergenceError, ParameterError, QDCascadeError
from .polarization import BASIS_PAIRS, concurrence, mix_uncorrelated, product_vector, setting_of

log = logging.getLogger(__name__)

N_PAIRS = len(BASIS_PAIRS)
DEFAULT_REPETITIONS = 1000
MAX_ITER = 100_000
FTOL = 1e-10
GTOL = 1e-8
# seed-stream tag for windows analysed outside a sliding series (e.g. peak)
SINGLE_WINDOW_INDEX = 2**31 - 1

_PSI = np.array([product_vector(i, j) for i, j in BASIS_PAIRS])
_PSI_RE = np.ascontiguousarray(_PSI.real)
_PSI_IM = np.ascontiguousarray(_PSI.imag)
# setting-pair index (0..8) of each of the 36 entries
_SETTING = np.array([3 * setting_of(i) + setting_of(j) for i, j in BASIS_PAIRS])


def _pauli_basis():
    s = [
        np.eye(2),
        np.array([[0, 1], [1, 0]]),
        np.array([[0, -1j], [1j, 0]]),
        np.array([[1, 0], [0, -1]]),
    ]
    return np.array([np.kron(a, b) / 2.0 for a in s for b in s])


_GAMMA = _pauli_basis()


@dataclass
class WindowCounts:
    """Counts summed over one time window, one total per basis pair."""

    window_center: float
    window_width: float
    counts: np.ndarray
    edges: tuple = (math.nan, math.nan)
    n_bins: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (N_PAIRS,):
            raise ParameterError(f"expected {N_PAIRS} counts, got shape {self.counts.shape}")
        if self.window_width <= 0:
            raise ParameterError("window width must be > 0")
        if np.any(self.counts < 0):
            raise ParameterError("window counts must be >= 0")

    @property
    def total(self):
        return float(self.counts.sum())


@dataclass
class TomographyResult:
    window_center: float
    window_width: float
    rho: np.ndarray
    rho_dc: np.ndarray
    concurrence: float
    concurrence_low: float
    concurrence_high: float
    total_counts: float
    edges: tuple = (math.nan, math.nan)
    mc_concurrence: np.ndarray = field(default=None, repr=False)
    mc_totals: np.ndarray = field(default=None, repr=False)


class TomographySeries(list):
    """List of :class:`TomographyResult`; windows that failed are in ``failures``."""

    def __init__(self, items=(), failures=None):
        super().__init__(items)
        self.failures = dict(failures or {})

    @property
    def centers(self):
        return np.array([r.window_center for r in self])

    @property
    def concurrences(self):
        return np.array([r.concurrence for r in self])


@dataclass
class MLEFit:
    rho: np.ndarray
    x: np.ndarray
    loglik: float
    n_iter: int
    grad_norm: float
    history: list = None


def window_counts(hist, center, width):
    """Sum the bins whose centers fall in ``[center - width/2, center + width/2)``."""
    if width <= 0:
        raise ParameterError(f"window width must be > 0, got {width}")
    centers = hist.grid.bin_center
    lo, hi = center - 0.5 * width, center + 0.5 * width
    mask = (centers >= lo) & (centers < hi)
    if not mask.any():
        raise ParameterError(f"window [{lo}, {hi}) ps contains no histogram bins")
    idx = np.flatnonzero(mask)
    starts = hist.grid.bin_start
    edges = (float(starts[idx[0]]), float(starts[idx[-1]] + hist.grid.bin_width))
    return WindowCounts(center, width, hist.counts[mask].sum(axis=0), edges=edges, n_bins=int(mask.sum()))


def setting_totals(counts, setting=None):
    """Per-entry sum of the four outcomes sharing its analyzer setting pair."""
    setting = _SETTING if setting is None else setting
    per_setting = np.bincount(setting, weights=counts, minlength=9)
    return per_setting[setting]


def _operators(pairs):
    if pairs is None:
        return _PSI, _SETTING
    pairs = [tuple(p) for p in pairs]
    if sorted(pairs) != sorted(BASIS_PAIRS):
        raise ParameterError("pairs must be a permutation of the 36 basis pairs")
    psi = np.array([product_vector(i, j) for i, j in pairs])
    setting = np.array([3 * setting_of(i) + setting_of(j) for i, j in pairs])
    return psi, setting


def predicted_counts(rho, nset, background=0.0):
    """Model means ``nset * <ij|rho|ij> + background`` for all 36 entries."""
    p = np.einsum("ka,ab,kb->k", _PSI.conj(), rho, _PSI).real
    return nset * p + background


def linear_inversion(counts, nset=None, pairs=None):
    """Least-squares estimate from normalized frequencies; may be unphysical."""
    psi, setting = _operators(pairs)
    counts = np.asarray(counts, dtype=float)
    if nset is None:
        nset = setting_totals(counts, setting)
    ok = nset > 0
    freq = np.zeros_like(counts)
    freq[ok] = counts[ok] / nset[ok]
    design = np.einsum("ka,mab,kb->km", psi.conj(), _GAMMA, psi).real
    coef, *_ = np.linalg.lstsq(design[ok], freq[ok], rcond=None)
    rho = np.einsum("m,mab->ab", coef, _GAMMA)
    return 0.5 * (rho + rho.conj().T)


def project_psd(rho):
    """Clip negative eigenvalues and renormalize; falls back to ``1/4``."""
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return np.eye(4) / 4.0
    out = (v * w) @ v.conj().T
    return out / np.trace(out).real


def cholesky_params(rho, floor=1e-3):
    """Parameter vector whose ``T^dagger T`` reproduces ``rho`` (lightly mixed with 1/4)."""
    rho = (1.0 - floor) * project_psd(rho) + floor * np.eye(4) / 4.0
    flip = rho[::-1, ::-1]
    low = np.linalg.cholesky(flip)
    upper = low[::-1, ::-1]
    return likelihood.pack(upper.conj().T)


def rho_from_params(x):
    t = likelihood.unpack(x)
    a = t.conj().T @ t
    a = 0.5 * (a + a.conj().T)
    return a / np.trace(a).real


def _fit(counts, nset, background, x0, record=False, psi=_PSI, max_iter=MAX_ITER):
    psi_re = np.ascontiguousarray(psi.real)
    psi_im = np.ascontiguousarray(psi.imag)
    n = np.ascontiguousarray(counts, dtype=float)
    ns = np.ascontiguousarray(nset, dtype=float)
    b = float(background)
    grad = np.empty(16)
    history = [] if record else None
    # saturated-model constant: the shifted objective is the half-deviance, ~0
    # at the optimum, so the relative ftol test acts as an absolute one
    saturated = float(np.sum(xlogy(n, n) - n))

    def fun(x):
        f = likelihood.nll_grad(np.ascontiguousarray(x), n, ns, b, psi_re, psi_im, grad)
        return f + saturated, grad.copy()

    def callback(xk):
        history.append(fun(xk)[0])

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback if record else None,
        options={"maxiter": max_iter, "maxfun": 2 * max_iter, "ftol": FTOL, "gtol": GTOL, "maxcor": 20},
    )
    x = res.x / math.sqrt(max(np.dot(res.x, res.x), 1e-300))
    f, g = fun(x)
    rho = rho_from_params(x)
    gnorm = float(np.linalg.norm(g))
    if record:
        history.insert(0, fun(x0)[0])
    if res.status == 1:
        raise ConvergenceError(
            f"MLE did not converge within {max_iter} iterations", best_rho=rho, grad_norm=gnorm, n_iter=res.nit
        )
    # a line-search stop is accepted only when the gradient is negligible on the count scale
    if res.status not in (0, 2) or gnorm > 1e-4 * (n.sum() + 1.0):
        raise ConvergenceError(
            f"MLE stopped early: {res.message}", best_rho=rho, grad_norm=gnorm, n_iter=res.nit
        )
    return MLEFit(rho, x, saturated - f, res.nit, gnorm, history)


def mle_fit(counts, background=0.0, x0=None, record=False, pairs=None, max_iter=MAX_ITER):
    """Maximum-likelihood fit returning the full optimizer record.

    ``background`` is the expected flat background per entry. The per-setting
    normalization is the sum of the four outcomes minus the background share.
    ``pairs`` gives the basis pair of each entry when ``counts`` is not in
    ``BASIS_PAIRS`` order. ``record=True`` keeps the objective of every iterate
    in ``history``: the negative log-likelihood offset by its saturated-model
    value (half the Poisson deviance).
    """
    psi, setting = _operators(pairs)
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (N_PAIRS,):
        raise ParameterError(f"expected {N_PAIRS} counts, got shape {counts.shape}")
    if not counts.sum() > 0:
        raise ParameterError("maximum-likelihood reconstruction needs a positive total count")
    if background < 0:
        raise ParameterError("background must be >= 0")
    nset = np.clip(setting_totals(counts, setting) - 4.0 * background, 0.0, None)
    if x0 is None:
        x0 = cholesky_params(linear_inversion(counts, nset, pairs))
    return _fit(counts, nset, background, np.asarray(x0, dtype=float), record, psi, max_iter)


def mle_reconstruct(wc, background=0.0):
    """Density matrix maximizing the Poisson likelihood of the window counts."""
    counts = wc.counts if isinstance(wc, WindowCounts) else wc
    return mle_fit(counts, background).rho


def _concurrence_of(rho_dc, g2_xx):
    return concurrence(mix_uncorrelated(rho_dc, g2_xx))


def monte_carlo_errors(
    wc, g2_xx, repetitions=DEFAULT_REPETITIONS, seed=0, window_index=0, background=0.0, x0=None, samples=False
):
    """Concurrence bounds ``mean +/- 2 std`` from Poisson-resampled counts, clipped to [0, 1].

    Repetition ``r`` draws from a stream seeded by ``(seed, window_index, r)``.
    With ``samples=True`` also returns the per-repetition concurrences and
    resampled totals (NaN concurrence where a resample had no counts).
    """
    if repetitions < 2:
        raise ParameterError("Monte-Carlo error estimation needs at least 2 repetitions")
    counts = wc.counts if isinstance(wc, WindowCounts) else np.asarray(wc, dtype=float)
    conc = np.full(repetitions, np.nan)
    totals = np.zeros(repetitions)
    if counts.sum() > 0:
        if x0 is None:
            x0 = mle_fit(counts, background).x
        for r in range(repetitions):
            rng = np.random.default_rng([int(seed), int(window_index), r])
            draw = rng.poisson(counts).astype(float)
            totals[r] = draw.sum()
            if totals[r] == 0:
                continue
            try:
                fit = mle_fit(draw, background, x0=x0)
            except ConvergenceError as exc:
                fit = None
                if exc.best_rho is not None:
                    conc[r] = _concurrence_of(exc.best_rho, g2_xx)
            if fit is not None:
                conc[r] = _concurrence_of(fit.rho, g2_xx)
    valid = conc[np.isfinite(conc)]
    if valid.size < 2:
        bounds = (0.0, 1.0)
    else:
        mean, std = valid.mean(), valid.std(ddof=1)
        bounds = (float(max(0.0, mean - 2 * std)), float(min(1.0, mean + 2 * std)))
    if samples:
        return bounds, conc, totals
    return bounds


def analyse_window(wc, g2_xx, repetitions=DEFAULT_REPETITIONS, seed=0, window_index=0, background=0.0):
    """Point estimate plus Monte-Carlo bounds for one window."""
    fit = mle_fit(wc.counts, background)
    c = _concurrence_of(fit.rho, g2_xx)
    if repetitions >= 2:
        (lo, hi), mc, totals = monte_carlo_errors(
            wc, g2_xx, repetitions, seed, window_index, background, x0=fit.x, samples=True
        )
    else:
        lo, hi, mc, totals = c, c, None, None
    return TomographyResult(
        window_center=float(wc.window_center),
        window_width=float(wc.window_width),
        rho=mix_uncorrelated(fit.rho, g2_xx),
        rho_dc=fit.rho,
        concurrence=c,
        # the point estimate always lies inside its own error band
        concurrence_low=min(lo, c),
        concurrence_high=max(hi, c),
        total_counts=wc.total,
        edges=wc.edges,
        mc_concurrence=mc,
        mc_totals=totals,
    )


def window_centers(grid, width, step):
    """Centers ``k * step`` whose full window lies inside the grid."""
    if width <= 0 or step <= 0:
        raise ParameterError("window width and step must be > 0")
    lo = grid.start + 0.5 * width
    hi = grid.end - 0.5 * width
    k0 = math.ceil(lo / step - 1e-9)
    k1 = math.floor(hi / step + 1e-9)
    return [k * step for k in range(k0, k1 + 1)]


def _window_task(args):
    wc, g2_xx, repetitions, seed, index, background = args
    try:
        return index, analyse_window(wc, g2_xx, repetitions, seed, index, background), None
    except QDCascadeError as exc:
        return index, None, str(exc)


def windowed_tomography(
    hist, width, step, g2_xx, repetitions=DEFAULT_REPETITIONS, seed=0, background=0.0, workers=None
):
    """Slide windows over the histogram and reconstruct each one.

    Dark counts are already part of ``hist``; the uncorrelated-light admixture
    ``g2_xx`` is applied to each reconstructed state. Windows that fail are
    left out of the series and listed in ``series.failures``. Results do not
    depend on ``workers``.
    """
    if not 0.0 <= g2_xx <= 1.0:
        raise ParameterError(f"g2_xx must lie in [0, 1], got {g2_xx}")
    tasks = []
    failures = {}
    for index, center in enumerate(window_centers(hist.grid, width, step)):
        try:
            wc = window_counts(hist, center, width)
        except ParameterError as exc:
            failures[center] = str(exc)
            continue
        if wc.total <= 0:
            failures[center] = "window has no counts"
            continue
        tasks.append((wc, g2_xx, repetitions, seed, index, background))

    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_window_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        outcomes = [_window_task(t) for t in tasks]

    results = []
    for (index, res, err), task in zip(outcomes, tasks):
        if res is None:
            log.warning("window at %.1f ps failed: %s", task[0].window_center, err)
            failures[task[0].window_center] = err
        else:
            results.append(res)
    return TomographySeries(results, failures)
