"""Pure NumPy Poisson likelihood for the Cholesky-parametrized density matrix.

Parameter layout (16 reals): ``x[:10]`` are the real parts of the lower
triangle of ``T`` in ``np.tril_indices(4)`` order, ``x[10:]`` the imaginary
parts of the strict lower triangle in ``np.tril_indices(4, -1)`` order.
``rho = T^dagger T / tr(T^dagger T)``.
"""

import numpy as np

TRIL = np.tril_indices(4)
STRICT = np.tril_indices(4, -1)
MU_FLOOR = 1e-300


def unpack(x):
    t = np.zeros((4, 4), dtype=complex)
    t[TRIL] = x[:10]
    t[STRICT] += 1j * np.asarray(x[10:16])
    return t


def pack(t):
    return np.concatenate([t[TRIL].real, t[STRICT].imag])


def nll_grad(x, n, nset, b, psi_re, psi_im, grad):
    """Negative log-likelihood; writes its gradient into ``grad``.

    ``psi_re + 1j * psi_im`` holds one product analyzer vector per row;
    the predicted mean of row ``k`` is ``nset[k] * <psi_k|rho|psi_k> + b``.
    """
    t = unpack(x)
    psi = psi_re + 1j * psi_im
    v = psi @ t.T  # row k is T psi_k
    q = np.einsum("ka,ka->k", v.conj(), v).real
    norm = np.einsum("ab,ab->", t.conj(), t).real
    p = q / norm
    mu = np.maximum(nset * p + b, MU_FLOOR)
    loglik = np.dot(n, np.log(mu)) - mu.sum()
    w = (n / mu - 1.0) * nset
    s = np.dot(w, p)
    g = (2.0 * (v.T * w) @ psi.conj() - 2.0 * s * t) / norm
    grad[:10] = -g[TRIL].real
    grad[10:] = -g[STRICT].imag
    return -loglik
