# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: regression normal equations, basis evaluation and the
fused stochastic-exponential / compensator recursion.

Reductions are split into fixed chunks of ``CHUNK`` paths and the chunk
partials are summed in chunk order, so the result never depends on the
number of OpenMP threads.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport exp
from libc.stdlib cimport free, malloc

NAME = "cython"
cdef Py_ssize_t _CHUNK = 4096
CHUNK = _CHUNK


cdef inline void _features(const double[:, ::1] V, Py_ssize_t i,
                           const int[:, ::1] powers, int F, int m, int deg,
                           double* pw, double* phi) noexcept nogil:
    cdef int v, e, f
    cdef int stride = deg + 1
    for v in range(m):
        pw[v * stride] = 1.0
        for e in range(1, stride):
            pw[v * stride + e] = pw[v * stride + e - 1] * V[i, v]
    for f in range(F):
        phi[f] = 1.0
        for v in range(m):
            phi[f] = phi[f] * pw[v * stride + powers[f, v]]


cdef void _gram_chunk(const double[:, ::1] V, const int[:, ::1] powers,
                      const double[:, ::1] Y, double[:, :, ::1] G,
                      double[:, :, ::1] R, Py_ssize_t c, Py_ssize_t N,
                      int F, int m, int q, int deg, bint want_gram) noexcept nogil:
    cdef double* pw = <double*> malloc(m * (deg + 1) * sizeof(double))
    cdef double* phi = <double*> malloc(F * sizeof(double))
    cdef Py_ssize_t i, start = c * _CHUNK
    cdef Py_ssize_t stop = start + _CHUNK
    cdef int f, g, j
    if stop > N:
        stop = N
    for i in range(start, stop):
        _features(V, i, powers, F, m, deg, pw, phi)
        if want_gram:
            for f in range(F):
                for g in range(f, F):
                    G[c, f, g] += phi[f] * phi[g]
        for f in range(F):
            for j in range(q):
                R[c, f, j] += phi[f] * Y[i, j]
    free(pw)
    free(phi)


def gram(const double[:, ::1] V, const int[:, ::1] powers,
         const double[:, ::1] Y, bint want_gram=True, int nthreads=1):
    """Return (sum phi phi^T, sum phi y^T) over paths, phi the monomial
    features of the rows of ``V`` given by ``powers``."""
    cdef Py_ssize_t N = V.shape[0]
    cdef int m = V.shape[1]
    cdef int F = powers.shape[0]
    cdef int q = Y.shape[1]
    cdef int deg = int(np.max(powers)) if F and m else 0
    cdef Py_ssize_t nchunks = (N + _CHUNK - 1) // _CHUNK
    cdef Py_ssize_t c
    Gc = np.zeros((nchunks if want_gram else 1, F, F))
    Rc = np.zeros((nchunks, F, q))
    cdef double[:, :, ::1] Gv = Gc
    cdef double[:, :, ::1] Rv = Rc
    for c in prange(nchunks, nogil=True, num_threads=max(nthreads, 1), schedule="static"):
        _gram_chunk(V, powers, Y, Gv, Rv, c, N, F, m, q, deg, want_gram)
    R = np.zeros((F, q))
    for c in range(nchunks):
        R += Rc[c]
    if not want_gram:
        return None, R
    G = np.zeros((F, F))
    for c in range(nchunks):
        G += Gc[c]
    iu = np.triu_indices(F, 1)
    G[(iu[1], iu[0])] = G[iu]
    return G, R


cdef void _predict_chunk(const double[:, ::1] V, const int[:, ::1] powers,
                         const double[:, ::1] coef, double[:, ::1] out,
                         Py_ssize_t c, Py_ssize_t N, int F, int m, int q,
                         int deg) noexcept nogil:
    cdef double* pw = <double*> malloc(m * (deg + 1) * sizeof(double))
    cdef double* phi = <double*> malloc(F * sizeof(double))
    cdef Py_ssize_t i, start = c * _CHUNK
    cdef Py_ssize_t stop = start + _CHUNK
    cdef int f, j
    cdef double acc
    if stop > N:
        stop = N
    for i in range(start, stop):
        _features(V, i, powers, F, m, deg, pw, phi)
        for j in range(q):
            acc = 0.0
            for f in range(F):
                acc = acc + phi[f] * coef[f, j]
            out[i, j] = acc
    free(pw)
    free(phi)


def predict(const double[:, ::1] V, const int[:, ::1] powers,
            const double[:, ::1] coef, int nthreads=1):
    cdef Py_ssize_t N = V.shape[0]
    cdef int m = V.shape[1]
    cdef int F = powers.shape[0]
    cdef int q = coef.shape[1]
    cdef int deg = int(np.max(powers)) if F and m else 0
    cdef Py_ssize_t nchunks = (N + _CHUNK - 1) // _CHUNK
    cdef Py_ssize_t c
    out = np.empty((N, q))
    cdef double[:, ::1] ov = out
    for c in prange(nchunks, nogil=True, num_threads=max(nthreads, 1), schedule="static"):
        _predict_chunk(V, powers, coef, ov, c, N, F, m, q, deg)
    return out


def stoch_exp(const double[:, ::1] dB, const double[::1] slope,
              const double[::1] drift, const double[::1] dt, int nthreads=1):
    """k_{j+1} = k_j exp(slope_j dB_j - drift_j), K_{j+1} = K_j + k_{j+1} dt_j."""
    cdef Py_ssize_t N = dB.shape[0]
    cdef Py_ssize_t n = dB.shape[1]
    cdef Py_ssize_t i, j
    cdef double logk, kv
    k = np.empty((N, n + 1))
    K = np.empty((N, n + 1))
    cdef double[:, ::1] kv_ = k
    cdef double[:, ::1] Kv = K
    for i in prange(N, nogil=True, num_threads=max(nthreads, 1), schedule="static"):
        logk = 0.0
        kv_[i, 0] = 1.0
        Kv[i, 0] = 0.0
        for j in range(n):
            logk = logk + (slope[j] * dB[i, j] - drift[j])
            kv = exp(logk)
            kv_[i, j + 1] = kv
            Kv[i, j + 1] = Kv[i, j] + kv * dt[j]
    return k, K
