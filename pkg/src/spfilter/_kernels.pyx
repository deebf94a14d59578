# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Signatures and results match the numpy versions up to floating point
rounding; ``tests/test_kernels.py`` checks the pair against each other.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, lgamma, tanh, isfinite, isnan, INFINITY, NAN, M_PI

from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "compiled"


def beta_logpdf(z, double alpha, double beta):
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t n = zv.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double norm = lgamma(alpha + beta) - lgamma(alpha) - lgamma(beta)
    cdef double am1 = alpha - 1.0, bm1 = beta - 1.0
    for i in range(n):
        o[i] = norm + am1 * log(zv[i]) + bm1 * log1p(-zv[i])
    return out.reshape(np.shape(z))


def gauss_logpdf(z, double mean, double variance):
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t n = zv.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double c = log(2.0 * M_PI * variance)
    cdef double d
    for i in range(n):
        d = zv[i] - mean
        o[i] = -0.5 * (c + d * d / variance)
    return out.reshape(np.shape(z))


def responsibilities(logp1, logp2, double gamma1, double gamma2):
    cdef const double[::1] l1 = np.ascontiguousarray(logp1, dtype=np.float64)
    cdef const double[::1] l2 = np.ascontiguousarray(logp2, dtype=np.float64)
    cdef Py_ssize_t n = l1.shape[0], i
    W = np.empty((n, 2))
    cdef double[:, ::1] w = W
    cdef double lg1 = log(gamma1) if gamma1 > 0 else -INFINITY
    cdef double lg2 = log(gamma2) if gamma2 > 0 else -INFINITY
    cdef double prior = lg1 - lg2
    cdef double d, e, w1
    cdef int bad = 0
    for i in range(n):
        d = prior + (l1[i] - l2[i])
        if isnan(d):
            w[i, 0] = gamma1
            w[i, 1] = gamma2
            bad += 1
            continue
        e = exp(-fabs(d))
        w1 = 1.0 / (1.0 + e) if d >= 0 else e / (1.0 + e)
        w[i, 0] = w1
        w[i, 1] = 1.0 - w1
    return W, bad


def weighted_moments(z, W):
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], i, j
    totals = np.zeros(2)
    means = np.empty(2)
    variances = np.empty(2)
    cdef double[::1] t = totals, m = means, v = variances
    cdef double s, d
    for j in range(2):
        s = 0.0
        for i in range(n):
            t[j] += w[i, j]
            s += w[i, j] * zv[i]
        m[j] = s / t[j] if t[j] != 0.0 else NAN
        s = 0.0
        for i in range(n):
            d = zv[i] - m[j]
            s += w[i, j] * d * d
        v[j] = s / t[j] if t[j] != 0.0 else NAN
    return totals, means, variances


def midrank_auroc(scores, positives):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    pos_arr = np.ascontiguousarray(positives, dtype=np.uint8)
    cdef const unsigned char[::1] p = pos_arr
    cdef Py_ssize_t n = s.shape[0], i, j, k
    cdef const long[::1] order = np.argsort(scores, kind="mergesort").astype(np.int_)
    cdef long n_pos = 0
    for i in range(n):
        n_pos += p[i] != 0
    cdef long n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return NAN
    cdef double rank_sum = 0.0, mid
    cdef long group_pos
    i = 0
    while i < n:
        j = i
        while j + 1 < n and s[order[j + 1]] == s[order[i]]:
            j += 1
        mid = (i + j + 2) / 2.0
        group_pos = 0
        for k in range(i, j + 1):
            group_pos += p[order[k]] != 0
        rank_sum += mid * group_pos
        i = j + 1
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (<double>n_pos * n_neg)


cdef void _gemm_rowmajor(int m, int n, int k, const double* A, int lda, bint trans_a,
                         const double* B, int ldb, bint trans_b, double beta,
                         double* C, int ldc) noexcept nogil:
    # C (m x n, row-major) = op(A) @ op(B) + beta * C, via column-major BLAS on transposes
    cdef char ta = b'T' if trans_b else b'N'
    cdef char tb = b'T' if trans_a else b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &n, &m, &k, &one, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


def mlp_forward(params, x):
    cdef Py_ssize_t n_layers = len(params) // 2, layer, r, j
    h_arr = np.ascontiguousarray(x, dtype=np.float64)
    activations = [h_arr]
    cdef int n = h_arr.shape[0], fi, fo
    cdef double[:, ::1] h
    cdef double[:, ::1] W
    cdef double[::1] bias
    cdef double[:, ::1] out
    cdef double* row
    cdef double top, total
    for layer in range(n_layers):
        W = params[2 * layer]
        bias = params[2 * layer + 1]
        h = h_arr
        fi, fo = W.shape[0], W.shape[1]
        z_arr = np.empty((n, fo))
        out = z_arr
        for r in range(n):
            row = &out[r, 0]
            for j in range(fo):
                row[j] = bias[j]
        if n > 0:
            _gemm_rowmajor(n, fo, fi, &h[0, 0], fi, False, &W[0, 0], fo, False, 1.0, &out[0, 0], fo)
        if layer < n_layers - 1:
            for r in range(n):
                row = &out[r, 0]
                for j in range(fo):
                    row[j] = tanh(row[j])
            activations.append(z_arr)
        h_arr = z_arr
    # softmax in place on the logits
    for r in range(n):
        row = &out[r, 0]
        top = row[0]
        for j in range(1, fo):
            if row[j] > top:
                top = row[j]
        total = 0.0
        for j in range(fo):
            row[j] = exp(row[j] - top)
            total += row[j]
        for j in range(fo):
            row[j] /= total
    return h_arr, activations


def mlp_backward(params, activations, dlogits):
    cdef Py_ssize_t n_layers = len(params) // 2, layer, r, i, j
    delta_arr = np.ascontiguousarray(dlogits, dtype=np.float64)
    grads = [None] * len(params)
    cdef double[:, ::1] h
    cdef double[:, ::1] W
    cdef double[:, ::1] delta
    cdef double[:, ::1] gw
    cdef double[::1] gb
    cdef double[:, ::1] nd
    cdef double hv
    cdef double* drow
    cdef double* ndrow
    cdef int n, fi, fo
    for layer in range(n_layers - 1, -1, -1):
        h = activations[layer]
        W = params[2 * layer]
        delta = delta_arr
        n, fi, fo = h.shape[0], W.shape[0], W.shape[1]
        gw_arr = np.zeros((fi, fo))
        gb_arr = np.zeros(fo)
        gw = gw_arr
        gb = gb_arr
        if n > 0:
            # dW = h^T @ delta
            _gemm_rowmajor(fi, fo, n, &h[0, 0], fi, True, &delta[0, 0], fo, False, 0.0, &gw[0, 0], fo)
        for r in range(n):
            drow = &delta[r, 0]
            for j in range(fo):
                gb[j] += drow[j]
        grads[2 * layer] = gw_arr
        grads[2 * layer + 1] = gb_arr
        if layer > 0:
            nd_arr = np.empty((n, fi))
            nd = nd_arr
            if n > 0:
                # delta @ W^T, then the tanh derivative
                _gemm_rowmajor(n, fi, fo, &delta[0, 0], fo, False, &W[0, 0], fo, True, 0.0, &nd[0, 0], fi)
            for r in range(n):
                ndrow = &nd[r, 0]
                for i in range(fi):
                    hv = h[r, i]
                    ndrow[i] *= 1.0 - hv * hv
            delta_arr = nd_arr
    return grads


def sgd_update(params, grads, buffers, double lr, double momentum, double weight_decay, bint nesterov):
    """In-place momentum SGD step with decoupled decay. Returns False, touching
    nothing, if any gradient entry is not finite."""
    cdef Py_ssize_t k, i, n
    cdef double[::1] p, b
    cdef const double[::1] g
    cdef double shrink = 1.0 - lr * weight_decay, step
    for k in range(len(grads)):
        g = grads[k].reshape(-1)
        for i in range(g.shape[0]):
            if not isfinite(g[i]):
                return False
    for k in range(len(params)):
        p = params[k].reshape(-1)
        g = grads[k].reshape(-1)
        b = buffers[k].reshape(-1)
        n = p.shape[0]
        for i in range(n):
            b[i] = momentum * b[i] + g[i]
            step = g[i] + momentum * b[i] if nesterov else b[i]
            p[i] = p[i] * shrink - lr * step
    return True
