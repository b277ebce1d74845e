"""Batched covariance + 3x3 symmetric eigendecomposition (cyclic Jacobi), compiled with numba."""

from __future__ import annotations

import numpy as np

from icpviz._accel import njit

_MAX_SWEEPS = 32


@njit(cache=True, nogil=True)
def _jacobi3(A, V):
    for i in range(3):
        for j in range(3):
            V[i, j] = 1.0 if i == j else 0.0
    for _ in range(_MAX_SWEEPS):
        off = A[0, 1] * A[0, 1] + A[0, 2] * A[0, 2] + A[1, 2] * A[1, 2]
        diag = A[0, 0] * A[0, 0] + A[1, 1] * A[1, 1] + A[2, 2] * A[2, 2]
        if off == 0.0 or off <= 1e-36 * diag:
            return
        for p in range(2):
            for q in range(p + 1, 3):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(3):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq


@njit(cache=True, nogil=True)
def covariance_eigen_kernel(nb):
    m, k, _ = nb.shape
    evals = np.empty((m, 3))
    evecs = np.empty((m, 3, 3))
    A = np.empty((3, 3))
    V = np.empty((3, 3))
    mean = np.empty(3)
    for i in range(m):
        for d in range(3):
            acc = 0.0
            for j in range(k):
                acc += nb[i, j, d]
            mean[d] = acc / k
        for a in range(3):
            for b in range(a, 3):
                acc = 0.0
                for j in range(k):
                    acc += (nb[i, j, a] - mean[a]) * (nb[i, j, b] - mean[b])
                A[a, b] = acc / k
                A[b, a] = A[a, b]
        _jacobi3(A, V)
        # descending order; the stable comparison keeps ties in input order
        o0, o1, o2 = 0, 1, 2
        if A[o1, o1] > A[o0, o0]:
            o0, o1 = o1, o0
        if A[o2, o2] > A[o1, o1]:
            o1, o2 = o2, o1
        if A[o1, o1] > A[o0, o0]:
            o0, o1 = o1, o0
        evals[i, 0] = A[o0, o0]
        evals[i, 1] = A[o1, o1]
        evals[i, 2] = A[o2, o2]
        for r in range(3):
            evecs[i, r, 0] = V[r, o0]
            evecs[i, r, 1] = V[r, o1]
        e = evecs[i]
        e[0, 2] = e[1, 0] * e[2, 1] - e[2, 0] * e[1, 1]
        e[1, 2] = e[2, 0] * e[0, 1] - e[0, 0] * e[2, 1]
        e[2, 2] = e[0, 0] * e[1, 1] - e[1, 0] * e[0, 1]
    return evals, evecs
