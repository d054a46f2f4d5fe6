"""Pure numpy twin of the compiled kernels (same signatures, same chunking).

Used when the extension is not built or when ``ZBSDE_BACKEND=python``.
``einsum`` is used instead of ``@`` so that no multithreaded BLAS call can
reorder a reduction.
"""
import numpy as np

NAME = "python"
CHUNK = 4096


def _features(V, powers):
    deg = int(powers.max()) if powers.size else 0
    pw = [[np.ones(V.shape[0])] for _ in range(V.shape[1])]
    for v in range(V.shape[1]):
        for _ in range(deg):
            pw[v].append(pw[v][-1] * V[:, v])
    X = np.ones((V.shape[0], powers.shape[0]))
    for f, row in enumerate(powers):
        for v, e in enumerate(row):
            X[:, f] *= pw[v][e]
    return X


def gram(V, powers, Y, want_gram=True, nthreads=1):
    N = V.shape[0]
    F = powers.shape[0]
    G = np.zeros((F, F)) if want_gram else None
    R = np.zeros((F, Y.shape[1]))
    for start in range(0, N, CHUNK):
        X = _features(V[start:start + CHUNK], powers)
        if want_gram:
            G += np.einsum("if,ig->fg", X, X)
        R += np.einsum("if,iq->fq", X, Y[start:start + CHUNK])
    return G, R


def predict(V, powers, coef, nthreads=1):
    out = np.empty((V.shape[0], coef.shape[1]))
    for start in range(0, V.shape[0], CHUNK):
        X = _features(V[start:start + CHUNK], powers)
        out[start:start + CHUNK] = np.einsum("if,fq->iq", X, coef)
    return out


def stoch_exp(dB, slope, drift, dt, nthreads=1):
    N, n = dB.shape
    logk = np.zeros((N, n + 1))
    np.cumsum(dB * slope - drift, axis=1, out=logk[:, 1:])
    k = np.exp(logk)
    K = np.zeros((N, n + 1))
    np.cumsum(k[:, 1:] * dt, axis=1, out=K[:, 1:])
    return k, K
