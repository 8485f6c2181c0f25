"""Polarization and two-qubit state algebra.

Basis ordering for two-photon vectors is ``(HH, HV, VH, VV)`` where the first
factor is the exciton (X) photon and the second the biexciton (XX) photon.

The circular states use ``R = (H - iV)/sqrt(2)`` and ``L = (H + iV)/sqrt(2)``.
With this choice ``(|RL> + |LR>)/sqrt(2) == (|HH> + |VV>)/sqrt(2)``. The
opposite handedness only flips the sign of the (RL+LR)-(RR+LL) oscillation.
"""

import itertools

import numpy as np

from .errors import InvalidStateError, ParameterError

LABELS = ("H", "V", "D", "A", "R", "L")

#: analyzer settings, each a pair of orthogonal outcomes
SETTINGS = (("H", "V"), ("D", "A"), ("R", "L"))

#: the 36 (X analyzer, XX analyzer) combinations in canonical order
BASIS_PAIRS = tuple(itertools.product(LABELS, LABELS))

_S = 1.0 / np.sqrt(2.0)
_JONES = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_S, _S], dtype=complex),
    "A": np.array([_S, -_S], dtype=complex),
    "R": np.array([_S, -1j * _S], dtype=complex),
    "L": np.array([_S, 1j * _S], dtype=complex),
}

_SIGMA_Y = np.array([[0.0, -1j], [1j, 0.0]])
_YY = np.kron(_SIGMA_Y, _SIGMA_Y)

HERMITIAN_TOL = 1e-6
TRACE_TOL = 1e-6
CLAMP_TOL = 1e-9


def _check_label(label):
    if label not in _JONES:
        raise ParameterError(f"unknown polarization label {label!r}; expected one of {LABELS}")


def jones_vector(label):
    """Return the unit Jones vector ``(a_H, a_V)`` for a polarization label."""
    _check_label(label)
    return _JONES[label].copy()


def setting_of(label):
    """Index (0, 1, 2) of the analyzer setting a label belongs to."""
    _check_label(label)
    return LABELS.index(label) // 2


def product_vector(i, j):
    """Two-photon product vector ``|i> (x) |j>`` in the HH..VV basis."""
    return np.kron(jones_vector(i), jones_vector(j))


def projector(i, j):
    """Rank-one projector ``|ij><ij|``; ``i`` is the X analyzer, ``j`` the XX analyzer."""
    v = product_vector(i, j)
    return np.outer(v, v.conj())


def pure_density(psi):
    """Density matrix of a (not necessarily normalized) state vector."""
    psi = np.asarray(psi, dtype=complex)
    norm = np.vdot(psi, psi).real
    if norm <= 0:
        raise InvalidStateError("zero state vector has no density matrix")
    return np.outer(psi, psi.conj()) / norm


def bell_phi(sign):
    """Bell state ``(|HH> + sign |VV>)/sqrt(2)``.

    ``sign=-1`` equals ``(|RR> + |LL>)/sqrt(2)`` under the R/L convention of
    this module.
    """
    if sign not in (1, -1):
        raise ParameterError(f"sign must be +1 or -1, got {sign!r}")
    return np.array([_S, 0.0, 0.0, sign * _S], dtype=complex)


def werner(p):
    """``p |Phi+><Phi+| + (1 - p) 1/4``."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"Werner weight must lie in [0, 1], got {p}")
    return p * pure_density(bell_phi(+1)) + (1.0 - p) * np.eye(4) / 4.0


def validate_density(rho, tol=HERMITIAN_TOL):
    """Check shape, Hermiticity and unit trace; return ``rho`` as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"density matrix must be 4x4, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InvalidStateError("density matrix contains non-finite entries")
    herm_err = np.max(np.abs(rho - rho.conj().T))
    if herm_err > tol:
        raise InvalidStateError(f"density matrix is not Hermitian (max deviation {herm_err:.3g})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"density matrix trace is {tr:.9g}, expected 1")
    return rho


def is_density_matrix(rho, herm_tol=1e-10, trace_tol=1e-10, eig_tol=1e-9):
    """True when ``rho`` satisfies the density-matrix invariants."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        return False
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        return False
    if abs(np.trace(rho).real - 1.0) > trace_tol:
        return False
    return np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() >= -eig_tol


def clamp_density(rho):
    """Symmetrize, zero eigenvalues in ``[-1e-9, 0)`` and renormalize the trace.

    Larger negative eigenvalues signal an invalid state and raise.
    """
    rho = validate_density(rho)
    rho = 0.5 * (rho + rho.conj().T)
    w, v = np.linalg.eigh(rho)
    if w.min() < -CLAMP_TOL:
        raise InvalidStateError(f"density matrix has negative eigenvalue {w.min():.3g}")
    if w.min() >= 0.0:
        return rho / np.trace(rho).real
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    return out / np.trace(out).real


def spin_flip(rho):
    """Wootters spin-flipped state ``(sy x sy) rho* (sy x sy)``."""
    return _YY @ np.conj(rho) @ _YY


def concurrence(rho):
    """Wootters concurrence of a two-qubit density matrix, in ``[0, 1]``.

    The ``lambda_i`` (square roots of the eigenvalues of ``rho @ spin_flip(rho)``)
    are taken as the singular values of ``sqrt(rho) @ sqrt(spin_flip(rho))``,
    which keeps full precision for rank-deficient states.
    """
    rho = clamp_density(rho)
    w, v = np.linalg.eigh(rho)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    lam = np.linalg.svd(root @ spin_flip(root), compute_uv=False)
    c = lam[0] - lam[1] - lam[2] - lam[3]
    return float(min(1.0, max(0.0, c)))


def mix_uncorrelated(rho, g2):
    """Admix uncorrelated light: ``(1 - g2) rho + g2/4 * 1``."""
    if not 0.0 <= g2 <= 1.0:
        raise ParameterError(f"g2 must lie in [0, 1], got {g2}")
    rho = validate_density(rho)
    return (1.0 - g2) * rho + (g2 / 4.0) * np.eye(4)


def trace_distance(a, b):
    """Half the trace norm of ``a - b``."""
    d = np.asarray(a) - np.asarray(b)
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(d)).sum())
