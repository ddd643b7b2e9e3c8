"""Adaptive control laws: LMS on a delayed reference, decentralized and
centralized filtered-x LMS, and the least-squares MIMO inverse bank used by
the inverse-structure baseline.

The step functions here are the reference semantics; the simulator runs
the same arithmetic through :mod:`decnet_anc.kernels`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import DivergenceError, InvalidArgumentError

DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 1e-6


@dataclass(frozen=True)
class FirController:
    w: np.ndarray
    mu: float

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise DivergenceError("controller taps are not finite")
        if not self.mu > 0:
            raise InvalidArgumentError("step size must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def L(self):
        return self.w.size

    @classmethod
    def zeros(cls, L, mu):
        return cls(np.zeros(L), mu)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError("non-finite error or regressor")


def lms_step(ctrl: FirController, x_vec, e) -> FirController:
    """w <- w - mu * e * x(n - tau)."""
    x_vec = np.asarray(x_vec, dtype=float)
    if x_vec.shape != ctrl.w.shape:
        raise InvalidArgumentError(f"regressor length {x_vec.size} != controller length {ctrl.L}")
    _check_finite(x_vec, np.asarray(e, dtype=float))
    return FirController(ctrl.w - ctrl.mu * e * x_vec, ctrl.mu)


def fxlms_step_decentralized(ctrl: FirController, xf_vec, e_k) -> FirController:
    """Own-channel filtered-x update: w_k <- w_k - mu * e_k * x_kk(n)."""
    return lms_step(ctrl, xf_vec, e_k)


def fxlms_step_centralized(ctrls, xf, e):
    """Multiple-error update: w_l <- w_l - mu * sum_k e_k x_kl(n).

    ``xf`` has shape (K, K, L) with ``xf[k, l]`` the filtered-reference
    vector x_kl(n); ``e`` has shape (K,).
    """
    xf = np.asarray(xf, dtype=float)
    e = np.asarray(e, dtype=float)
    K = len(ctrls)
    if xf.shape[:2] != (K, K) or e.shape != (K,):
        raise InvalidArgumentError("centralized step needs xf (K, K, L) and e (K,)")
    _check_finite(xf, e)
    out = []
    for l, c in enumerate(ctrls):
        g = np.tensordot(e, xf[:, l, :], axes=1)
        out.append(FirController(c.w - c.mu * g, c.mu))
    return out


def filter_reference(x_history, s) -> float:
    """x_kl(n) = sum_m s[m] x(n - m); ``x_history[m]`` holds x(n - m)."""
    s = np.asarray(getattr(s, "taps", s), dtype=float)
    x_history = np.asarray(x_history, dtype=float)
    if x_history.size < s.size:
        raise InvalidArgumentError(f"history depth {x_history.size} < path length {s.size}")
    return float(s @ x_history[: s.size])


class FilteredReferenceState:
    """Per-(k, l) filtered-reference vectors, newest sample first, depth L."""

    def __init__(self, S, L):
        self.S = np.asarray(S, dtype=float)
        K, _, Ls = self.S.shape
        self.L = L
        self.x_hist = np.zeros(Ls)
        self.buffers = np.zeros((K, K, L))

    def push(self, x_n):
        self.x_hist = np.roll(self.x_hist, 1)
        self.x_hist[0] = x_n
        self.buffers = np.roll(self.buffers, 1, axis=2)
        self.buffers[:, :, 0] = self.S @ self.x_hist
        return self.buffers


# -- inverse filter bank ---------------------------------------------------------

@dataclass
class InverseFilterBank:
    F: np.ndarray          # (K, K, L_f); F[l, j] maps channel j's signal to loudspeaker l
    delay: int
    residual: float
    regularized: bool = False


def _conv_matrix(s, Lf):
    Ls = s.size
    M = np.zeros((Lf + Ls - 1, Lf))
    for j in range(Lf):
        M[j : j + Ls, j] = s
    return M


def design_inverse_bank(S, L_f, d_inv) -> InverseFilterBank:
    """Least-squares MIMO inverse: S * F ~ delta(n - d_inv) I.

    Minimizes sum_{k,j} sum_n ([S*F]_kj(n) - delta_kj delta(n - d_inv))^2
    through the block normal equations, one right-hand side per column j.
    """
    S = np.asarray(getattr(S, "secondary_taps", lambda: S)(), dtype=float)
    K, K2, Ls = S.shape
    if K != K2:
        raise InvalidArgumentError("secondary matrix must be square")
    # S * F has L_f + L_s - 1 output taps; a target beyond them is unreachable
    if L_f < 1 or not 0 <= d_inv < L_f + Ls - 1:
        raise InvalidArgumentError(f"need L_f >= 1 and 0 <= d_inv < L_f + L_s - 1, got {L_f}, {d_inv}")
    n_out = L_f + Ls - 1
    A = np.block([[_conv_matrix(S[k, l], L_f) for l in range(K)] for k in range(K)])
    Bt = np.zeros((K * n_out, K))
    for j in range(K):
        Bt[j * n_out + d_inv, j] = 1.0
    G = A.T @ A
    rhs = A.T @ Bt
    regularized = False
    try:
        sol = linalg.cho_solve(linalg.cho_factor(G), rhs)
    except linalg.LinAlgError:
        regularized = True
        G = G + 1e-10 * np.trace(G) / G.shape[0] * np.eye(G.shape[0])
        sol = linalg.cho_solve(linalg.cho_factor(G), rhs)
    F = sol.reshape(K, L_f, K).transpose(0, 2, 1)   # rows indexed (l, tap), columns j
    err = A @ sol - Bt
    return InverseFilterBank(np.ascontiguousarray(F), int(d_inv), float(np.sum(err**2)), regularized)


# -- snapshots -------------------------------------------------------------------

def save_controllers(path, W, meta=None):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    doc = {"kind": "fir-controllers", "version": 1, "taps": W.tolist(), "meta": meta or {}}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_controllers(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "fir-controllers":
        raise InvalidArgumentError(f"{path} is not a controller snapshot")
    return np.array(doc["taps"], dtype=float), doc.get("meta", {})
