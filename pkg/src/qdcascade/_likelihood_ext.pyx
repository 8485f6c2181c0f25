# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Poisson likelihood kernel; same contract as ``_likelihood_py.nll_grad``."""

from libc.math cimport log

cdef double MU_FLOOR = 1e-300

# (row, col) of x[0:10] and of x[10:16]
cdef int TR_R[10]
cdef int TR_C[10]
cdef int ST_R[6]
cdef int ST_C[6]

TR_R[:] = [0, 1, 1, 2, 2, 2, 3, 3, 3, 3]
TR_C[:] = [0, 0, 1, 0, 1, 2, 0, 1, 2, 3]
ST_R[:] = [1, 2, 2, 3, 3, 3]
ST_C[:] = [0, 0, 1, 0, 1, 2]


def nll_grad(const double[::1] x, const double[::1] n, const double[::1] nset, double b,
             const double[:, ::1] psi_re, const double[:, ::1] psi_im, double[::1] grad):
    cdef double tr[4][4]
    cdef double ti[4][4]
    cdef double gr[4][4]
    cdef double gi[4][4]
    cdef double vr[4]
    cdef double vi[4]
    cdef double norm = 0.0, loglik = 0.0, s = 0.0
    cdef double q, p, mu, w, pr, pi
    cdef Py_ssize_t k, a, c, K = n.shape[0]

    for a in range(4):
        for c in range(4):
            tr[a][c] = 0.0
            ti[a][c] = 0.0
            gr[a][c] = 0.0
            gi[a][c] = 0.0
    for a in range(10):
        tr[TR_R[a]][TR_C[a]] = x[a]
    for a in range(6):
        ti[ST_R[a]][ST_C[a]] = x[10 + a]
    for a in range(4):
        for c in range(a + 1):
            norm += tr[a][c] * tr[a][c] + ti[a][c] * ti[a][c]

    for k in range(K):
        q = 0.0
        for a in range(4):
            vr[a] = 0.0
            vi[a] = 0.0
            for c in range(a + 1):
                vr[a] += tr[a][c] * psi_re[k, c] - ti[a][c] * psi_im[k, c]
                vi[a] += tr[a][c] * psi_im[k, c] + ti[a][c] * psi_re[k, c]
            q += vr[a] * vr[a] + vi[a] * vi[a]
        p = q / norm
        mu = nset[k] * p + b
        if mu < MU_FLOOR:
            mu = MU_FLOOR
        if n[k] > 0.0:
            loglik += n[k] * log(mu)
        loglik -= mu
        w = (n[k] / mu - 1.0) * nset[k]
        s += w * p
        # accumulate 2 w (T psi) psi^dagger on the lower triangle
        for a in range(4):
            for c in range(a + 1):
                pr = psi_re[k, c]
                pi = psi_im[k, c]
                gr[a][c] += 2.0 * w * (vr[a] * pr + vi[a] * pi)
                gi[a][c] += 2.0 * w * (vi[a] * pr - vr[a] * pi)

    for a in range(10):
        grad[a] = -(gr[TR_R[a]][TR_C[a]] - 2.0 * s * tr[TR_R[a]][TR_C[a]]) / norm
    for a in range(6):
        grad[10 + a] = -(gi[ST_R[a]][ST_C[a]] - 2.0 * s * ti[ST_R[a]][ST_C[a]]) / norm
    return -loglik
