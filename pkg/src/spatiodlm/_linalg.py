"""Small dense kernels compiled with numba for the likelihood hot path."""
import math

import numba as nb
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

EXPONENTIAL = 0
SQUARED_EXPONENTIAL = 1


@nb.njit(cache=True)
def cholesky_lower(A, L):
    """Cholesky factor of ``A`` written into ``L``; returns False if not PD."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
        for i in range(j):
            L[i, j] = 0.0
    return True


@nb.njit(cache=True)
def forward_subst(L, b, out):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]


@nb.njit(cache=True)
def kernel_fill(dist, sigma, phi, form, out):
    n = dist.shape[0]
    s2 = sigma * sigma
    for i in range(n):
        for j in range(n):
            d = dist[i, j]
            if form == 0:
                out[i, j] = s2 * math.exp(-phi * d)
            else:
                out[i, j] = s2 * math.exp(-phi * d * d)


@nb.njit(cache=True)
def jittered_cholesky(K, sigma2, L):
    """Factor ``K`` adding escalating diagonal jitter in place.

    Jitter starts at 1e-9 * sigma2 and grows by 10x up to 1e-3 * sigma2.
    Returns the jitter used, or -1.0 if every attempt failed.
    """
    n = K.shape[0]
    jitter = 1e-9 * sigma2
    added = 0.0
    for _ in range(7):
        for i in range(n):
            K[i, i] += jitter - added
        added = jitter
        if cholesky_lower(K, L):
            return jitter
        jitter *= 10.0
    return -1.0


@nb.njit(cache=True)
def mvn_logpdf_chol(x, mean, L, work):
    n = x.shape[0]
    for i in range(n):
        work[i] = x[i] - mean[i]
    z = np.empty(n)
    forward_subst(L, work, z)
    q = 0.0
    logdet = 0.0
    for i in range(n):
        q += z[i] * z[i]
        logdet += math.log(L[i, i])
    return -0.5 * (n * LOG_2PI + q) - logdet
