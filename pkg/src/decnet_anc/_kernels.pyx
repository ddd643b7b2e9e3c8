# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sample loops. Mirrors ``_fallback``; see its docstring for the argument contract."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite

cnp.import_array()


def fir_filter(const double[::1] x, const double[::1] h):
    cdef Py_ssize_t N = x.shape[0], M = h.shape[0], n, m, top
    cdef double acc
    out = np.zeros(N)
    cdef double[::1] y = out
    for n in range(N):
        acc = 0.0
        top = M if M <= n + 1 else n + 1
        for m in range(top):
            acc += h[m] * x[n - m]
        y[n] = acc
    return out


cdef inline double _step(double alpha, bint normalized, double beta, double energy) nogil:
    if normalized:
        return alpha / (energy + beta)
    return alpha


cdef inline bint _bad(double v, double guard) nogil:
    return not isfinite(v) or fabs(v) > guard


def fxlms_loop(const double[::1] x, xf_in, const double[:, ::1] d, const double[:, ::1] eta,
               const double[:, :, ::1] S, w_in, double alpha, bint normalized, double beta,
               bint centralized, bint adapt, double guard):
    cdef Py_ssize_t K = d.shape[0], N = d.shape[1]
    w_arr = np.array(w_in, dtype=np.float64, order="C")
    cdef double[:, ::1] w = w_arr
    cdef Py_ssize_t L = w.shape[1], Ls = S.shape[2]
    xpad_arr = np.concatenate([np.zeros(L - 1), np.asarray(x)])
    cdef double[::1] xpad = xpad_arr
    cdef double[:, :, ::1] xfpad
    if adapt:
        xfpad = np.ascontiguousarray(np.concatenate([np.zeros((K, K, L - 1)), np.asarray(xf_in)], axis=2))
    else:
        xfpad = np.zeros((1, 1, 1))
    u_arr = np.zeros((K, N + Ls - 1))
    cdef double[:, ::1] u_hist = u_arr
    e_arr = np.zeros((K, N))
    cdef double[:, ::1] e = e_arr
    en_arr = np.zeros(K)
    cdef double[::1] en = en_arr
    cdef Py_ssize_t n, k, l, i, m, base
    cdef double acc, energy, mu, g, v
    with nogil:
        for n in range(N):
            base = n + L - 1
            for k in range(K):
                acc = 0.0
                for i in range(L):
                    acc += w[k, i] * xpad[base - i]
                u_hist[k, n + Ls - 1] = acc
            for k in range(K):
                acc = d[k, n] + eta[k, n]
                for l in range(K):
                    for m in range(Ls):
                        acc += S[k, l, m] * u_hist[l, n + Ls - 1 - m]
                en[k] = acc
                e[k, n] = acc
            for k in range(K):
                if _bad(en[k], guard):
                    with gil:
                        return e_arr, w_arr, n
            if not adapt:
                continue
            if centralized:
                for l in range(K):
                    energy = 0.0
                    if normalized:
                        for k in range(K):
                            for i in range(L):
                                v = xfpad[k, l, base - i]
                                energy += v * v
                    mu = _step(alpha, normalized, beta, energy)
                    for i in range(L):
                        g = 0.0
                        for k in range(K):
                            g += en[k] * xfpad[k, l, base - i]
                        w[l, i] -= mu * g
            else:
                for k in range(K):
                    energy = 0.0
                    if normalized:
                        for i in range(L):
                            v = xfpad[k, k, base - i]
                            energy += v * v
                    mu = _step(alpha, normalized, beta, energy)
                    for i in range(L):
                        w[k, i] -= mu * (en[k] * xfpad[k, k, base - i])
    return e_arr, w_arr, N


cdef inline void _delayed_update(double[:, ::1] w, double[::1] en, double[::1] xpad, Py_ssize_t n,
                                 Py_ssize_t K, Py_ssize_t L, double alpha, bint normalized,
                                 double beta) nogil:
    # xpad offset is L - 1 + delay, so the regressor x(n - delay - i) sits at n + L - 1 - i
    cdef Py_ssize_t k, i, base = n + L - 1
    cdef double energy = 0.0, mu, v
    if normalized:
        for i in range(L):
            v = xpad[base - i]
            energy += v * v
    mu = _step(alpha, normalized, beta, energy)
    for k in range(K):
        for i in range(L):
            w[k, i] -= mu * en[k] * xpad[base - i]


def inverse_lms_loop(const double[::1] x, const double[:, ::1] d, const double[:, ::1] eta,
                     const double[:, :, ::1] S, const double[:, :, ::1] F, w_in, Py_ssize_t delay,
                     double alpha, bint normalized, double beta, bint adapt, double guard):
    cdef Py_ssize_t K = d.shape[0], N = d.shape[1]
    w_arr = np.array(w_in, dtype=np.float64, order="C")
    cdef double[:, ::1] w = w_arr
    cdef Py_ssize_t L = w.shape[1], Ls = S.shape[2], Lf = F.shape[2]
    xpad_arr = np.concatenate([np.zeros(L - 1 + delay), np.asarray(x)])
    cdef double[::1] xpad = xpad_arr
    yw_arr = np.zeros((K, N + Lf - 1))
    cdef double[:, ::1] yw = yw_arr
    u_arr = np.zeros((K, N + Ls - 1))
    cdef double[:, ::1] u_hist = u_arr
    e_arr = np.zeros((K, N))
    cdef double[:, ::1] e = e_arr
    en_arr = np.zeros(K)
    cdef double[::1] en = en_arr
    cdef Py_ssize_t n, k, j, i, m, base
    cdef double acc
    with nogil:
        for n in range(N):
            base = n + delay + L - 1
            for k in range(K):
                acc = 0.0
                for i in range(L):
                    acc += w[k, i] * xpad[base - i]
                yw[k, n + Lf - 1] = acc
            for i in range(K):
                acc = 0.0
                for j in range(K):
                    for m in range(Lf):
                        acc += F[i, j, m] * yw[j, n + Lf - 1 - m]
                u_hist[i, n + Ls - 1] = acc
            for k in range(K):
                acc = d[k, n] + eta[k, n]
                for j in range(K):
                    for m in range(Ls):
                        acc += S[k, j, m] * u_hist[j, n + Ls - 1 - m]
                en[k] = acc
                e[k, n] = acc
            for k in range(K):
                if _bad(en[k], guard):
                    with gil:
                        return e_arr, w_arr, n
            if adapt:
                _delayed_update(w, en, xpad, n, K, L, alpha, normalized, beta)
    return e_arr, w_arr, N


def decnet_lms_loop(const double[::1] x, const double[:, ::1] d, const double[:, ::1] eta,
                    const double[:, :, ::1] S, const double[:, :, :, ::1] W1,
                    const double[:, :, ::1] b1, const double[:, :, ::1] W2,
                    const double[:, ::1] b2, w_in, Py_ssize_t delay, double alpha,
                    bint normalized, double beta, bint adapt, double guard):
    cdef Py_ssize_t K = d.shape[0], N = d.shape[1]
    w_arr = np.array(w_in, dtype=np.float64, order="C")
    cdef double[:, ::1] w = w_arr
    cdef Py_ssize_t L = w.shape[1], Ls = S.shape[2], D = W1.shape[2], H = W1.shape[3]
    xpad_arr = np.concatenate([np.zeros(L - 1 + delay), np.asarray(x)])
    cdef double[::1] xpad = xpad_arr
    yw_arr = np.zeros((K, N + D - 1))
    cdef double[:, ::1] yw = yw_arr
    u_arr = np.zeros((K, N + Ls - 1))
    cdef double[:, ::1] u_hist = u_arr
    e_arr = np.zeros((K, N))
    cdef double[:, ::1] e = e_arr
    en_arr = np.zeros(K)
    cdef double[::1] en = en_arr
    z_arr = np.zeros(H)
    cdef double[::1] z = z_arr
    cdef Py_ssize_t n, k, i, j, q, h, m, base
    cdef double acc, fr
    with nogil:
        for n in range(N):
            base = n + delay + L - 1
            for k in range(K):
                acc = 0.0
                for q in range(L):
                    acc += w[k, q] * xpad[base - q]
                yw[k, n + D - 1] = acc
            for i in range(K):
                acc = 0.0
                for j in range(K):
                    acc += b2[i, j]
                for j in range(K):
                    for h in range(H):
                        z[h] = b1[i, j, h]
                    for q in range(D):
                        fr = yw[j, n + D - 1 - q]
                        for h in range(H):
                            z[h] += fr * W1[i, j, q, h]
                    for h in range(H):
                        acc += W2[i, j, h] / (1.0 + exp(-z[h]))
                u_hist[i, n + Ls - 1] = acc
            for k in range(K):
                acc = d[k, n] + eta[k, n]
                for j in range(K):
                    for m in range(Ls):
                        acc += S[k, j, m] * u_hist[j, n + Ls - 1 - m]
                en[k] = acc
                e[k, n] = acc
            for k in range(K):
                if _bad(en[k], guard):
                    with gil:
                        return e_arr, w_arr, n
            if adapt:
                _delayed_update(w, en, xpad, n, K, L, alpha, normalized, beta)
    return e_arr, w_arr, N
