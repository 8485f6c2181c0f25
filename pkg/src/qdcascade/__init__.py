"""Quantum-dot cascade entanglement: forward model, windowed MLE tomography, analysis."""

__version__ = "0.1.0"

from .cascade import (  # noqa: E402
    CascadeParams,
    HistogramSet,
    TimeGrid,
    accidental_background,
    expected_histograms,
    pair_count,
    sample_histograms,
)
from .polarization import bell_phi, concurrence, jones_vector, mix_uncorrelated, projector  # noqa: E402
from .tomography import mle_reconstruct, monte_carlo_errors, window_counts, windowed_tomography  # noqa: E402

__all__ = [
    "CascadeParams",
    "HistogramSet",
    "TimeGrid",
    "accidental_background",
    "bell_phi",
    "concurrence",
    "expected_histograms",
    "jones_vector",
    "mix_uncorrelated",
    "mle_reconstruct",
    "monte_carlo_errors",
    "pair_count",
    "projector",
    "sample_histograms",
    "window_counts",
    "windowed_tomography",
]
