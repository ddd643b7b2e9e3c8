"""Pure-numpy implementations of the sample loops.

Same signatures and semantics as the compiled ``_kernels`` module. Every
loop takes pre-padded inputs so that index ``n + offset - i`` addresses the
sample ``i`` steps in the past without bounds checks.

Shared loop arguments:

* ``x``: reference, shape (N,)
* ``d``, ``eta``: disturbance and mic noise, shape (K, N)
* ``S``: secondary taps (K, K, Ls)
* ``w``: initial controllers (K, L); a copy is adapted and returned
* ``alpha``: step size; with ``normalized`` it is divided by the regressor
  energy plus ``beta``
* ``guard``: abort once any |e_k(n)| exceeds it (or is not finite)

Each loop returns ``(e, w, n_done)`` where ``n_done < N`` flags divergence.
"""

import numpy as np


def fir_filter(x, h):
    N = x.shape[0]
    M = h.shape[0]
    y = np.zeros(N)
    for m in range(min(M, N)):
        if h[m] != 0.0:
            y[m:] += h[m] * x[: N - m]
    return y


def _step_size(alpha, normalized, beta, energy):
    if normalized:
        return alpha / (energy + beta)
    return alpha


def fxlms_loop(x, xf, d, eta, S, w, alpha, normalized, beta, centralized, adapt, guard):
    K, N = d.shape
    L = w.shape[1]
    Ls = S.shape[2]
    w = np.array(w, dtype=float)
    xpad = np.concatenate([np.zeros(L - 1), x])
    xfpad = np.concatenate([np.zeros((K, K, L - 1)), xf], axis=2) if adapt else None
    u_hist = np.zeros((K, N + Ls - 1))
    Srev = S[:, :, ::-1]
    e = np.zeros((K, N))
    for n in range(N):
        xv = xpad[n : n + L][::-1]
        u_hist[:, n + Ls - 1] = w @ xv
        y = np.einsum("klm,lm->k", Srev, u_hist[:, n : n + Ls])
        en = d[:, n] + y + eta[:, n]
        e[:, n] = en
        if not np.all(np.abs(en) <= guard):
            return e, w, n
        if not adapt:
            continue
        if centralized:
            # regressor for w_l: sum_k e_k x_kl
            vecs = xfpad[:, :, n : n + L][:, :, ::-1]
            for l in range(K):
                grad = en @ vecs[:, l, :]
                mu = _step_size(alpha, normalized, beta, sum(vecs[k, l] @ vecs[k, l] for k in range(K)))
                w[l] -= mu * grad
        else:
            for k in range(K):
                v = xfpad[k, k, n : n + L][::-1]
                mu = _step_size(alpha, normalized, beta, v @ v)
                w[k] -= mu * (en[k] * v)
    return e, w, N


def _delayed_lms_update(w, en, xpad, n, delay, L, alpha, normalized, beta):
    # xpad is offset by L - 1 + delay; regressor is x(n - delay - i)
    v = xpad[n : n + L][::-1]
    mu = _step_size(alpha, normalized, beta, v @ v)
    w -= mu * np.outer(en, v)


def inverse_lms_loop(x, d, eta, S, F, w, delay, alpha, normalized, beta, adapt, guard):
    K, N = d.shape
    L = w.shape[1]
    Ls = S.shape[2]
    Lf = F.shape[2]
    w = np.array(w, dtype=float)
    xpad = np.concatenate([np.zeros(L - 1 + delay), x])
    yw_hist = np.zeros((K, N + Lf - 1))
    u_hist = np.zeros((K, N + Ls - 1))
    Srev = S[:, :, ::-1]
    Frev = F[:, :, ::-1]
    e = np.zeros((K, N))
    for n in range(N):
        xv = xpad[n + delay : n + delay + L][::-1]
        yw_hist[:, n + Lf - 1] = w @ xv
        u_hist[:, n + Ls - 1] = np.einsum("ijm,jm->i", Frev, yw_hist[:, n : n + Lf])
        y = np.einsum("klm,lm->k", Srev, u_hist[:, n : n + Ls])
        en = d[:, n] + y + eta[:, n]
        e[:, n] = en
        if not np.all(np.abs(en) <= guard):
            return e, w, n
        if adapt:
            _delayed_lms_update(w, en, xpad, n, delay, L, alpha, normalized, beta)
    return e, w, N


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def decnet_lms_loop(x, d, eta, S, W1, b1, W2, b2, w, delay, alpha, normalized, beta, adapt, guard):
    K, N = d.shape
    L = w.shape[1]
    Ls = S.shape[2]
    D = W1.shape[2]
    w = np.array(w, dtype=float)
    xpad = np.concatenate([np.zeros(L - 1 + delay), x])
    yw_hist = np.zeros((K, N + D - 1))
    u_hist = np.zeros((K, N + Ls - 1))
    Srev = S[:, :, ::-1]
    b2sum = b2.sum(axis=1)
    e = np.zeros((K, N))
    for n in range(N):
        xv = xpad[n + delay : n + delay + L][::-1]
        yw_hist[:, n + D - 1] = w @ xv
        frames = yw_hist[:, n : n + D][:, ::-1]
        u = b2sum.copy()
        for i in range(K):
            for j in range(K):
                u[i] += W2[i, j] @ _sigmoid(frames[j] @ W1[i, j] + b1[i, j])
        u_hist[:, n + Ls - 1] = u
        y = np.einsum("klm,lm->k", Srev, u_hist[:, n : n + Ls])
        en = d[:, n] + y + eta[:, n]
        e[:, n] = en
        if not np.all(np.abs(en) <= guard):
            return e, w, n
        if adapt:
            _delayed_lms_update(w, en, xpad, n, delay, L, alpha, normalized, beta)
    return e, w, N
