"""Second-order analysis of decentralized filtered-x control.

Closed forms assume a zero-mean white reference of variance ``var``.
Index alignment (fixes what the notation leaves implicit):

* ``x_p(n)[i] = x(n - i)``, i < L_p
* ``x_kl(n)[j] = sum_m s_kl[m] x(n - j - m)``, j < L
* ``x_L(n - tau)[i] = x(n - tau - i)``

so for white input every correlation is a lag-correlation of two tap
vectors, and the matrices are Toeplitz.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from .errors import InvalidArgumentError, PartitionPremiseError, SingularMatrixError
from .paths import AcousticScene

DIAGONAL_LOADING = 1e-10


@dataclass
class CorrelationSet:
    R_p: np.ndarray
    R_pk: np.ndarray
    R_kk: np.ndarray
    R_kl: np.ndarray
    r_k: np.ndarray
    R_xx: np.ndarray
    r_delta: np.ndarray
    var: float


@dataclass
class PartitionedPrimary:
    p_0k: np.ndarray
    p_1k: np.ndarray
    A: np.ndarray
    B: np.ndarray


# -- lag helpers ---------------------------------------------------------------

def lag_corr(a, b, lags) -> np.ndarray:
    """c[lag] = sum_m a[m] b[m + lag] for each requested lag (out-of-range taps zero)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    full = np.correlate(b, a, mode="full")  # index lag + len(a) - 1
    lags = np.asarray(lags)
    idx = lags + a.size - 1
    ok = (idx >= 0) & (idx < full.size)
    out = np.zeros(lags.shape)
    out[ok] = full[idx[ok]]
    return out


def toeplitz_from_lags(c_of_lag, n_rows, n_cols) -> np.ndarray:
    """Matrix M[i, j] = c(i - j) from a callable over integer lag arrays."""
    col = c_of_lag(np.arange(n_rows))
    row = c_of_lag(-np.arange(n_cols))
    return linalg.toeplitz(col, row)


def filtered_cov(a, b, L, var=1.0) -> np.ndarray:
    """E[(a * x)_vec (b * x)_vec^T] for white x: [i, j] = var * sum_m a[m] b[m + i - j]."""
    return var * toeplitz_from_lags(lambda lag: lag_corr(a, b, lag), L, L)


def filtered_xcorr(a, p, L, var=1.0) -> np.ndarray:
    """E[(a * x)_vec d] with d = p * x: [i] = var * sum_m a[m] p[m + i]."""
    return var * lag_corr(a, p, np.arange(L))


# -- correlation sets ----------------------------------------------------------

def correlations_white(scene: AcousticScene, k, l, L, var=1.0, tau=0) -> CorrelationSet:
    if L < 1:
        raise InvalidArgumentError("L must be >= 1")
    if not var > 0:
        raise InvalidArgumentError("input variance must be positive")
    skk = scene.secondary[k][k].taps
    skl = scene.secondary[k][l].taps
    p = scene.primary[k].taps
    Lp = scene.Lp
    R_pk = var * toeplitz_from_lags(lambda lag: _tap_at(skk, lag), Lp, L)
    return CorrelationSet(
        R_p=var * np.eye(Lp),
        R_pk=R_pk,
        R_kk=filtered_cov(skk, skk, L, var),
        R_kl=filtered_cov(skk, skl, L, var),
        r_k=filtered_xcorr(skk, p, L, var),
        R_xx=var * np.eye(L),
        r_delta=var * _tap_at(p, np.arange(L) + tau),
        var=float(var),
    )


def _tap_at(taps, idx):
    idx = np.asarray(idx)
    ok = (idx >= 0) & (idx < taps.size)
    out = np.zeros(idx.shape)
    out[ok] = taps[idx[ok]]
    return out


def sample_correlations(x, scene: AcousticScene, k, l, L, tau=0) -> CorrelationSet:
    """Time-average estimates of the :class:`CorrelationSet` expectations.

    Stationary lag estimator: every matrix entry [i, j] is the sample
    cross-correlation of the underlying scalar signals at lag i - j,
    averaged over the samples after the longest filter has filled.
    """
    x = np.asarray(x, dtype=float)
    Lp, Ls = scene.Lp, scene.Ls
    if x.size <= L + Ls:
        raise InvalidArgumentError(f"trace length {x.size} too short for L={L}, L_s={Ls}")
    xkk = signal.lfilter(scene.secondary[k][k].taps, [1.0], x)
    xkl = signal.lfilter(scene.secondary[k][l].taps, [1.0], x)
    d = signal.lfilter(scene.primary[k].taps, [1.0], x)
    start = max(Lp, Ls)
    if x.size - start < 1:
        raise InvalidArgumentError("trace too short for the scene")
    max_lag = max(L, Lp) + tau + 1

    def xc(a, b):
        return sample_lag_corr(a, b, max_lag, start)

    c_x_xkk = xc(x, xkk)        # E[x(n) xkk(n + lag)]
    c_xkk_xkl = xc(xkk, xkl)
    c_xkk_xkk = xc(xkk, xkk)
    c_xkk_d = xc(xkk, d)
    c_x_x = xc(x, x)
    c_x_d = xc(x, d)
    # [x_p]_i = x(n - i), [x_kk]_j = xkk(n - j): E = c_x_xkk(i - j)
    R_pk = toeplitz_from_lags(c_x_xkk, Lp, L)
    return CorrelationSet(
        R_p=toeplitz_from_lags(c_x_x, Lp, Lp),
        R_pk=R_pk,
        R_kk=toeplitz_from_lags(c_xkk_xkk, L, L),
        R_kl=toeplitz_from_lags(c_xkk_xkl, L, L),
        r_k=c_xkk_d(np.arange(L)),
        R_xx=toeplitz_from_lags(c_x_x, L, L),
        r_delta=c_x_d(np.arange(L) + tau),
        var=float(np.mean(x[start:] ** 2)),
    )


def sample_lag_corr(a, b, max_lag, start=0):
    """Return c(lag) ~ mean_n a(n) b(n + lag) as a callable over |lag| <= max_lag.

    Sign convention matches the vector form: E[a(n - i) b(n - j)] = c(i - j).
    """
    a = np.asarray(a, dtype=float)[start:]
    b = np.asarray(b, dtype=float)[start:]
    n = a.size
    full = signal.correlate(b, a, mode="full", method="fft")  # index lag + n - 1
    centre = n - 1
    table = full[centre - max_lag : centre + max_lag + 1] / n

    def c(lag):
        lag = np.asarray(lag)
        if np.any(np.abs(lag) > max_lag):
            raise InvalidArgumentError("lag outside estimated range")
        return table[lag + max_lag]

    return c


# -- solves --------------------------------------------------------------------

def regularized_solve(R, b, loading=DIAGONAL_LOADING):
    """Solve R w = b by Cholesky of R + loading * tr(R)/n * I, with one refinement step."""
    R = np.asarray(R, dtype=float)
    b = np.asarray(b, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] != b.shape[0]:
        raise InvalidArgumentError(f"shape mismatch: R {R.shape}, b {b.shape}")
    n = R.shape[0]
    tr = np.trace(R)
    if not tr > 0:
        raise SingularMatrixError("matrix is singular (zero trace)")
    A = R + (loading * tr / n) * np.eye(n)
    try:
        cf = linalg.cho_factor(A, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from None
    w = linalg.cho_solve(cf, b)
    # one refinement step against the unloaded R: the loading bias drops to
    # second order while near-null directions stay damped
    return w + linalg.cho_solve(cf, b - R @ w)


def wiener_decentralized(R_kk, r_k) -> np.ndarray:
    """w_k0 = -R_kk^{-1} r_k."""
    return -regularized_solve(R_kk, r_k)


def wiener_delayed(R_xx, r_delta) -> np.ndarray:
    """Wiener solution of the delayed-regressor LMS: -R_xx^{-1} r_delta."""
    return -regularized_solve(R_xx, r_delta)


# -- modeling error ------------------------------------------------------------

def disturbance_power(scene, k, var=1.0) -> float:
    p = scene.primary[k].taps
    return float(var * (p @ p))


def modeling_error(scene: AcousticScene, k, L, var=1.0) -> float:
    """eps_k = Tr[R_p p p^T] - Tr[R_pk R_kk^{-1} R_pk^T p p^T]."""
    cs = correlations_white(scene, k, k, L, var)
    p = scene.primary[k].taps
    q = cs.R_pk.T @ p
    return float(p @ cs.R_p @ p - q @ regularized_solve(cs.R_kk, q))


def partition_primary(scene: AcousticScene, k, L, var=1.0) -> PartitionedPrimary:
    p = scene.primary[k].taps
    Lp = p.size
    skk = scene.secondary[k][k].taps
    if L >= Lp:
        split = 0
        p_pad = np.concatenate([p, np.zeros(L - Lp)])
        # zero-patched x_p: rows beyond L_p carry no signal
        B = var * toeplitz_from_lags(lambda lag: _tap_at(skk, lag), L, L)
        B[Lp:, :] = 0.0
        return PartitionedPrimary(np.zeros(0), p_pad, np.zeros((0, L)), B)
    split = Lp - L
    # x_0p = x(n - i), i < split; x_1p[i] = x(n - split - i)
    A = var * toeplitz_from_lags(lambda lag: _tap_at(skk, lag), split, L)
    B = var * toeplitz_from_lags(lambda lag: _tap_at(skk, lag + split), L, L)
    return PartitionedPrimary(p[:split].copy(), p[split:].copy(), A, B)


def modeling_error_partitioned(scene: AcousticScene, k, L, var=1.0, tol=1e-12) -> float:
    """eps_k = Tr[R_kk p_1k p_1k^T] - Tr[B R_kk^{-1} B^T p_1k p_1k^T], valid when p_0k = 0."""
    part = partition_primary(scene, k, L, var)
    norm0 = float(np.linalg.norm(part.p_0k))
    scale = float(np.linalg.norm(scene.primary[k].taps)) or 1.0
    if norm0 > tol * scale:
        raise PartitionPremiseError(norm0, tol * scale)
    R_kk = correlations_white(scene, k, k, L, var).R_kk
    p1 = part.p_1k
    q = part.B.T @ p1
    return float(p1 @ R_kk @ p1 - q @ regularized_solve(R_kk, q))


def crosstalk_term(w_k, w_l, R_kl) -> float:
    w_k = np.asarray(w_k, dtype=float)
    w_l = np.asarray(w_l, dtype=float)
    R_kl = np.asarray(R_kl, dtype=float)
    if R_kl.shape != (w_k.size, w_l.size):
        raise InvalidArgumentError(f"R_kl shape {R_kl.shape} does not match ({w_k.size}, {w_l.size})")
    return float(2.0 * w_k @ R_kl @ w_l)


def residual_mse_decentralized(scene: AcousticScene, L, var=1.0, noise_var=None) -> np.ndarray:
    """Per-channel E[e_k^2] at the decentralized Wiener controllers in crosstalk-penalty form:

    eps_k + 2 sum_{l != k} r_l^T R_ll^{-1} R_kl R_kk^{-1} r_k + sigma_eta,k^2.
    """
    K = scene.K
    nv = scene.noise_variance if noise_var is None else np.broadcast_to(noise_var, (K,))
    own = [correlations_white(scene, k, k, L, var) for k in range(K)]
    Rinv_r = [regularized_solve(cs.R_kk, cs.r_k) for cs in own]
    out = np.zeros(K)
    for k in range(K):
        eps = modeling_error(scene, k, L, var)
        cross = 0.0
        for l in range(K):
            if l == k:
                continue
            R_kl = correlations_white(scene, k, l, L, var).R_kl
            cross += 2.0 * Rinv_r[l] @ R_kl @ Rinv_r[k]
        out[k] = eps + cross + nv[k]
    return out


def epsilon_sweep(scene: AcousticScene, k, L_list, var=1.0) -> list[dict]:
    """Rows of (L, eps in dB re E[d_k^2]) by the general and partitioned forms.

    ``eps_db_partitioned`` is None where the partition premise fails; the
    difference between the two forms is reported, never assumed away.
    """
    L_list = list(L_list)
    if not L_list:
        raise InvalidArgumentError("L_list must be nonempty")
    ref = disturbance_power(scene, k, var)
    rows = []
    for L in L_list:
        eps_gen = modeling_error(scene, k, L, var)
        try:
            eps_part = modeling_error_partitioned(scene, k, L, var)
        except PartitionPremiseError:
            eps_part = None
        rows.append({
            "L": int(L),
            "eps": eps_gen,
            "eps_db": to_db(eps_gen / ref),
            "eps_partitioned": eps_part,
            "eps_db_partitioned": None if eps_part is None else to_db(eps_part / ref),
            "general_minus_partitioned": None if eps_part is None else eps_gen - eps_part,
        })
    return rows


def write_sweep_csv(rows, path, simulated_db=None):
    """Columns: L, epsilon_db_theory, epsilon_db_theory_partitioned, epsilon_db_simulated."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["L", "epsilon_db_theory", "epsilon_db_theory_partitioned", "epsilon_db_simulated"])
        for i, r in enumerate(rows):
            sim = "" if simulated_db is None else _fmt(simulated_db[i])
            wr.writerow([r["L"], _fmt(r["eps_db"]), _fmt(r["eps_db_partitioned"]), sim])


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def to_db(ratio, floor=1e-300) -> float:
    return 10.0 * math.log10(max(float(ratio), floor))


# -- exact full-covariance tools -----------------------------------------------
# Complete quadratic forms for coupled scenes, used to cross-check the
# per-channel expressions above.

def exact_residual_power(scene: AcousticScene, W, var=1.0, alternate=False) -> np.ndarray:
    """E[e_k^2] for fixed controllers W (K, L) driving the plant directly, white input."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    K, L = W.shape
    S = scene.secondary_taps()
    P = scene.primary_taps(alternate)
    out = np.zeros(K)
    for k in range(K):
        v = var * (P[k] @ P[k])
        for l in range(K):
            v += 2.0 * filtered_xcorr(S[k, l], P[k], L, var) @ W[l]
            for m in range(K):
                v += W[l] @ filtered_cov(S[k, l], S[k, m], L, var) @ W[m]
        out[k] = v + scene.noise_variance[k]
    return out


def decentralized_fixed_point(scene: AcousticScene, L, var=1.0) -> np.ndarray:
    """Stationary point of decentralized FxLMS: E[x_kk(n) e_k(n)] = 0 for every k."""
    K = scene.K
    S = scene.secondary_taps()
    P = scene.primary_taps()
    A = np.block([[filtered_cov(S[k, k], S[k, l], L, var) for l in range(K)] for k in range(K)])
    b = np.concatenate([filtered_xcorr(S[k, k], P[k], L, var) for k in range(K)])
    return -_block_solve(A, b).reshape(K, L)


def centralized_wiener(scene: AcousticScene, L, var=1.0, alternate=False) -> np.ndarray:
    """Controllers minimizing sum_k E[e_k^2] for white input (K, L)."""
    K = scene.K
    S = scene.secondary_taps()
    P = scene.primary_taps(alternate)
    A = np.block([[sum(filtered_cov(S[k, l], S[k, m], L, var) for k in range(K)) for m in range(K)]
                  for l in range(K)])
    b = np.concatenate([sum(filtered_xcorr(S[k, l], P[k], L, var) for k in range(K)) for l in range(K)])
    return -regularized_solve(A, b).reshape(K, L)


def _block_solve(A, b, loading=DIAGONAL_LOADING):
    # non-symmetric in general (coupled stationarity conditions)
    n = A.shape[0]
    A = A + loading * np.trace(A) / n * np.eye(n)
    try:
        return linalg.solve(A, b)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from None


def centralized_wiener_sampled(x, scene: AcousticScene, L, alternate=False) -> np.ndarray:
    """Centralized Wiener controllers from lag-correlation estimates on a reference trace.

    Used for colored references, where the white-input closed forms do not apply.
    """
    x = np.asarray(x, dtype=float)
    K = scene.K
    if x.size <= L + scene.Ls + scene.Lp:
        raise InvalidArgumentError(f"trace length {x.size} too short for L={L}")
    S = scene.secondary_taps()
    P = scene.primary_taps(alternate)
    xf = [[signal.lfilter(S[k, l], [1.0], x) for l in range(K)] for k in range(K)]
    d = [signal.lfilter(P[k], [1.0], x) for k in range(K)]
    start = max(scene.Lp, scene.Ls)
    A = np.zeros((K * L, K * L))
    b = np.zeros(K * L)
    lags = np.arange(L)
    for k in range(K):
        for l in range(K):
            b[l * L : (l + 1) * L] += sample_lag_corr(xf[k][l], d[k], L, start)(lags)
            for m in range(K):
                c = sample_lag_corr(xf[k][l], xf[k][m], L, start)
                A[l * L : (l + 1) * L, m * L : (m + 1) * L] += toeplitz_from_lags(c, L, L)
    A = 0.5 * (A + A.T)
    return -regularized_solve(A, b).reshape(K, L)
