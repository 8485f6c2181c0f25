"""Forward model of time-resolved coincidence histograms from the cascade.

Times are in ps, the fine-structure splitting in MHz, detector and singles
rates in 1/s, the laser repetition rate in MHz and integration times in s.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .polarization import BASIS_PAIRS, product_vector

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
KERNEL_HALF_WIDTH_SIGMAS = 5.0
MIN_SAMPLES_PER_FWHM = 7

# MHz * ps -> cycles
_MHZ_PS = 1e-6

_PSI = np.array([product_vector(i, j) for i, j in BASIS_PAIRS])


@dataclass(frozen=True)
class CascadeParams:
    """Physical source and detection parameters for one simulated dataset."""

    fss_frequency: float = 795.52
    tau_x: float = 847.0
    g2_xx: float = 0.1
    g2_x: float = 0.0
    dark_rate_x: float = 36.3
    dark_rate_xx: float = 18.2
    irf_fwhm: float = 190.0
    rep_rate: float = 76.2
    rate_x: float = 71e3
    rate_xx: float = 8e3
    integration_time: float = 370.0
    bin_width: float = 16.0
    window_start: float = -2000.0
    window_end: float = 10000.0
    dephasing_time: float = math.inf

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterError(f"{f.name} must be a number, got {value!r}")
            if math.isnan(value):
                raise ParameterError(f"{f.name} is NaN")
            object.__setattr__(self, f.name, float(value))
        if self.tau_x <= 0:
            raise ParameterError(f"tau_x must be > 0, got {self.tau_x}")
        if self.bin_width <= 0:
            raise ParameterError(f"bin_width must be > 0, got {self.bin_width}")
        if self.window_end <= self.window_start:
            raise ParameterError("window_end must exceed window_start")
        for name in ("g2_xx", "g2_x"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        for name in ("dark_rate_x", "dark_rate_xx", "rate_x", "rate_xx", "integration_time", "irf_fwhm"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.rep_rate <= 0:
            raise ParameterError(f"rep_rate must be > 0, got {self.rep_rate}")
        if self.dephasing_time <= 0:
            raise ParameterError(f"dephasing_time must be > 0, got {self.dephasing_time}")
        if not math.isfinite(self.window_start) or not math.isfinite(self.window_end):
            raise ParameterError("window bounds must be finite")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        """Plain dict; an infinite dephasing time is written as ``None``."""
        d = dataclasses.asdict(self)
        if math.isinf(d["dephasing_time"]):
            d["dephasing_time"] = None
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown CascadeParams field(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        if data.get("dephasing_time", 0) is None:
            data["dephasing_time"] = math.inf
        return cls(**data)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform histogram bins, identified by their start times."""

    start: float
    bin_width: float
    n_bins: int

    @classmethod
    def from_params(cls, params):
        n = int(round((params.window_end - params.window_start) / params.bin_width))
        return cls(params.window_start, params.bin_width, max(n, 1))

    @property
    def bin_start(self):
        return self.start + self.bin_width * np.arange(self.n_bins)

    @property
    def bin_center(self):
        return self.bin_start + 0.5 * self.bin_width

    @property
    def end(self):
        return self.start + self.bin_width * self.n_bins


class HistogramSet:
    """Coincidence counts for all 36 basis pairs on a shared time grid.

    ``counts`` has shape ``(n_bins, 36)`` with columns in ``BASIS_PAIRS``
    order. ``kind`` is ``"expected"`` (real means) or ``"sampled"``.
    """

    def __init__(self, grid, counts, params=None, kind="expected"):
        counts = np.asarray(counts, dtype=float)
        if counts.shape != (grid.n_bins, len(BASIS_PAIRS)):
            raise ParameterError(
                f"counts shape {counts.shape} does not match grid ({grid.n_bins}, {len(BASIS_PAIRS)})"
            )
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ParameterError("histogram counts must be finite and >= 0")
        self.grid = grid
        self.counts = counts
        self.params = params
        self.kind = kind

    def __getitem__(self, pair):
        return self.counts[:, BASIS_PAIRS.index(tuple(pair))]

    def __len__(self):
        return len(BASIS_PAIRS)

    def total(self):
        """Sum over all 36 series per bin."""
        return self.counts.sum(axis=1)

    def scaled(self, factor):
        return HistogramSet(self.grid, self.counts * factor, self.params, self.kind)


def pair_count(params):
    """Expected number of detected true pairs per basis, ``N0``.

    ``rate_x * rate_xx / rep_rate * integration_time``: the coincidence
    estimate for a pulsed source with one pair per pulse at most.
    """
    return params.rate_x * params.rate_xx / (params.rep_rate * 1e6) * params.integration_time


def accidental_background(params):
    """Flat accidental coincidences per bin from detector dark counts."""
    rate = (
        params.dark_rate_x * params.rate_xx
        + params.dark_rate_xx * params.rate_x
        + params.dark_rate_x * params.dark_rate_xx
    )
    return rate * params.bin_width * 1e-12 * params.integration_time


def two_photon_state(t, fss_frequency):
    """Cascade state ``(|HH> + exp(-i 2 pi f t)|VV>)/sqrt(2)``, zero for ``t < 0``.

    Accepts scalar or array ``t``; returns shape ``(..., 4)``.
    """
    t = np.asarray(t, dtype=float)
    phase = np.exp(-2j * np.pi * fss_frequency * _MHZ_PS * t)
    on = (t >= 0).astype(float) / math.sqrt(2.0)
    psi = np.zeros(t.shape + (4,), dtype=complex)
    psi[..., 0] = on
    psi[..., 3] = on * phase
    return psi


def _coherence_factor(t, params):
    """Complex HH-VV coherence multiplier ``exp(i w t) exp(-t/T2)``."""
    w = 2.0 * np.pi * params.fss_frequency * _MHZ_PS
    decay = 0.0 if math.isinf(params.dephasing_time) else 1.0 / params.dephasing_time
    return np.exp((1j * w - decay) * t)


def coincidence_density(i, j, t, params):
    """Coincidence probability density (1/ps) for analyzers ``(i, j)`` at delay ``t``.

    ``|<ij|Psi(t)>|^2 * exp(-t/tau_x)/tau_x`` before the detector response.
    A finite ``dephasing_time`` damps the HH-VV coherence.
    """
    t = np.asarray(t, dtype=float)
    v = product_vector(i, j)
    tt = np.clip(t, 0.0, None)
    coh = _coherence_factor(tt, params)
    # <v|rho|v> for rho = 1/2 [[1, c], [c*, 1]] on the HH/VV block
    proj = 0.5 * (abs(v[0]) ** 2 + abs(v[3]) ** 2) + np.real(np.conj(v[0]) * v[3] * coh)
    decay = np.exp(-tt / params.tau_x) / params.tau_x
    return np.where(t >= 0, proj * decay, 0.0)


def gaussian_irf(fwhm, grid):
    """Normalized Gaussian timing-jitter kernel sampled at the grid spacing.

    ``grid`` may be a ``TimeGrid`` or a bin width in ps. The kernel has odd
    length, is truncated at five standard deviations and sums to one.
    """
    if not fwhm > 0:
        raise ParameterError(f"IRF FWHM must be > 0, got {fwhm}")
    dt = grid.bin_width if isinstance(grid, TimeGrid) else float(grid)
    sigma = fwhm * FWHM_TO_SIGMA
    half = int(math.floor(KERNEL_HALF_WIDTH_SIGMAS * sigma / dt + 1e-9))
    x = dt * np.arange(-half, half + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def convolve(signal, kernel):
    """Linear convolution with a centered odd-length kernel, output on the input grid."""
    signal = np.asarray(signal)
    kernel = np.asarray(kernel)
    if kernel.size % 2 != 1:
        raise ParameterError("kernel length must be odd so it has a center sample")
    full = np.convolve(signal, kernel)
    h = kernel.size // 2
    return full[h : h + signal.size]


def _cell_averages(edges, params):
    """Exact bin averages of the decay envelope and of the decaying coherence.

    Returns ``(diag, coh)`` such that the two-photon density matrix averaged
    over a bin is ``1/2 [[diag, coh], [coh*, diag]]`` on the HH/VV block.
    """
    a = np.clip(edges[:-1], 0.0, None)
    b = np.clip(edges[1:], 0.0, None)
    width = edges[1:] - edges[:-1]
    tau = params.tau_x
    diag = (np.exp(-a / tau) - np.exp(-b / tau)) / width
    w = 2.0 * np.pi * params.fss_frequency * _MHZ_PS
    decay = 0.0 if math.isinf(params.dephasing_time) else 1.0 / params.dephasing_time
    kappa = 1.0 / tau + decay - 1j * w
    coh = (np.exp(-kappa * a) - np.exp(-kappa * b)) / (tau * kappa * width)
    return diag, coh


def oversampling_factor(params):
    """Sub-bins per output bin so the IRF FWHM spans at least seven samples."""
    if params.irf_fwhm <= 0:
        return 1
    return max(1, int(math.ceil(MIN_SAMPLES_PER_FWHM * params.bin_width / params.irf_fwhm - 1e-9)))


def signal_density_matrix(params):
    """Detector-convolved, bin-integrated pair density matrix per output bin.

    Returns an array of shape ``(n_bins, 4, 4)`` whose traces give the
    fraction of all pairs landing in each bin.
    """
    grid = TimeGrid.from_params(params)
    m = oversampling_factor(params)
    h = params.bin_width / m
    if params.irf_fwhm > 0:
        kernel = gaussian_irf(params.irf_fwhm, h)
        pad = kernel.size // 2
    else:
        kernel = None
        pad = 0
    n_fine = grid.n_bins * m + 2 * pad
    edges = grid.start - pad * h + h * np.arange(n_fine + 1)
    diag, coh = _cell_averages(edges, params)
    if kernel is not None:
        diag = convolve(diag, kernel)
        coh = convolve(coh, kernel)
    sl = slice(pad, pad + grid.n_bins * m)
    diag = diag[sl].reshape(grid.n_bins, m).sum(axis=1) * h
    coh = coh[sl].reshape(grid.n_bins, m).sum(axis=1) * h
    rho = np.zeros((grid.n_bins, 4, 4), dtype=complex)
    rho[:, 0, 0] = rho[:, 3, 3] = 0.5 * diag
    rho[:, 0, 3] = 0.5 * coh
    rho[:, 3, 0] = 0.5 * np.conj(coh)
    return rho


def expected_histograms(params):
    """Expected coincidence counts for all 36 basis pairs.

    ``N0 * (density * irf) * bin_width`` plus the flat accidental background.
    """
    grid = TimeGrid.from_params(params)
    rho = signal_density_matrix(params)
    probs = np.einsum("ka,tab,kb->tk", _PSI.conj(), rho, _PSI).real
    counts = pair_count(params) * np.clip(probs, 0.0, None) + accidental_background(params)
    return HistogramSet(grid, counts, params, kind="expected")


def sample_histograms(expected, seed):
    """Poisson-sample every bin of ``expected``.

    Each basis pair draws from its own stream seeded by ``(seed, pair_index)``
    so the result does not depend on evaluation order.
    """
    if int(seed) != seed or seed < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed!r}")
    out = np.empty_like(expected.counts)
    for k in range(expected.counts.shape[1]):
        rng = np.random.default_rng([int(seed), k])
        out[:, k] = rng.poisson(expected.counts[:, k])
    return HistogramSet(expected.grid, out, expected.params, kind="sampled")
