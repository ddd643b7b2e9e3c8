"""K x K grid of dense decoupling subnetworks.

Subnetwork ``nn_ij`` maps the newest-first frame of channel j's controller
output, ``[y_wj(n), ..., y_wj(n-D+1)]``, to a scalar contribution to
loudspeaker i; contributions are summed per loudspeaker. Training pushes
the network output through the fixed secondary-path matrix so that mic k
receives ``y_wk(n - tau)``.

Parameter layout: ``W1 (K, K, D, H)``, ``b1 (K, K, H)``, ``W2 (K, K, H)``,
``b2 (K, K)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, TrainingDivergedError
from .paths import AcousticScene, propagate

CHECKPOINT_VERSION = 1


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class SubNetwork:
    W1: np.ndarray   # (D, H)
    b1: np.ndarray   # (H,)
    W2: np.ndarray   # (H,)
    b2: float


@dataclass
class DecNetParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    tau: int

    def __post_init__(self):
        K, K2, D, H = self.W1.shape
        if K != K2:
            raise InvalidArgumentError("subnetwork grid must be square")
        if self.b1.shape != (K, K, H) or self.W2.shape != (K, K, H) or self.b2.shape != (K, K):
            raise InvalidArgumentError("inconsistent DecNet parameter shapes")
        if D < 1 or self.tau < 0:
            raise InvalidArgumentError("need D >= 1 and tau >= 0")

    @property
    def K(self):
        return self.W1.shape[0]

    @property
    def D(self):
        return self.W1.shape[2]

    @property
    def H(self):
        return self.W1.shape[3]

    def subnet(self, i, j) -> SubNetwork:
        return SubNetwork(self.W1[i, j], self.b1[i, j], self.W2[i, j], float(self.b2[i, j]))

    def arrays(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self):
        return DecNetParams(*(a.copy() for a in self.arrays()), tau=self.tau)

    @classmethod
    def initialize(cls, K, D, H, tau, seed=0):
        """Fan-based uniform hidden weights; zero output weights and biases (silent start)."""
        rng = np.random.default_rng(seed)
        lim = math.sqrt(6.0 / (D + H))
        return cls(
            W1=rng.uniform(-lim, lim, size=(K, K, D, H)),
            b1=np.zeros((K, K, H)),
            W2=np.zeros((K, K, H)),
            b2=np.zeros((K, K)),
            tau=int(tau),
        )

    @classmethod
    def zeros(cls, K, D, H, tau):
        return cls(np.zeros((K, K, D, H)), np.zeros((K, K, H)), np.zeros((K, K, H)), np.zeros((K, K)), int(tau))


def subnet_forward(nn: SubNetwork, frame) -> float:
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (nn.W1.shape[0],):
        raise InvalidArgumentError(f"frame length {frame.size} != D = {nn.W1.shape[0]}")
    return float(nn.W2 @ sigmoid(frame @ nn.W1 + nn.b1) + nn.b2)


def decnet_forward(params: DecNetParams, frames) -> np.ndarray:
    """u_i(n) = sum_j nn_ij(frame_j); ``frames`` is (K, D), newest sample first."""
    frames = np.asarray(frames, dtype=float)
    if frames.shape != (params.K, params.D):
        raise InvalidArgumentError(f"expected frames of shape {(params.K, params.D)}, got {frames.shape}")
    z = np.einsum("jd,ijdh->ijh", frames, params.W1) + params.b1
    return np.einsum("ijh,ijh->i", params.W2, sigmoid(z)) + params.b2.sum(axis=1)


def decnet_loss(y, y_target) -> float:
    """(1/K) sum_l (y_target_l - y_l)^2 for one time step."""
    y = np.asarray(y, dtype=float)
    y_target = np.asarray(y_target, dtype=float)
    if y.shape != y_target.shape:
        raise InvalidArgumentError("loss inputs must have equal length")
    return float(np.mean((y_target - y) ** 2))


def make_frames(yw, D):
    """(..., T) signal -> (..., T - D + 1, D) newest-first frames."""
    return sliding_window_view(yw, D, axis=-1)[..., ::-1]


def decnet_apply(params: DecNetParams, yw, chunk=4096) -> np.ndarray:
    """Open-loop inference over whole signals: yw (K, N) -> u (K, N), zero history."""
    yw = np.atleast_2d(np.asarray(yw, dtype=float))
    K, N = yw.shape
    D = params.D
    padded = np.concatenate([np.zeros((K, D - 1)), yw], axis=1)
    u = np.empty((K, N))
    for start in range(0, N, chunk):
        stop = min(N, start + chunk)
        fr = make_frames(padded[:, start : stop + D - 1], D)   # (K, T, D)
        u[:, start:stop] = _forward_frames(params, fr[None])[0][0]
    return u


def _forward_frames(params, frames):
    """frames (B, K, T, D) -> u (B, K, T) and cached activations A[i][j] (B, T, H)."""
    K = params.K
    acts = [[None] * K for _ in range(K)]
    u = np.zeros(frames.shape[:3])
    for i in range(K):
        for j in range(K):
            a = sigmoid(frames[:, j] @ params.W1[i, j] + params.b1[i, j])
            acts[i][j] = a
            u[:, i] += a @ params.W2[i, j] + params.b2[i, j]
    return u, acts


def _window_layout(D, Ls, tau):
    """History samples needed before the first loss sample of a window."""
    return max(Ls + D - 2, tau)


def decnet_backward(params: DecNetParams, yw_windows, S, target=None):
    """Loss and exact parameter gradients for a batch of windows.

    ``yw_windows`` is (B, K, T_in) network input. With ``h = max(L_s + D - 2, tau)``
    history samples, loss is taken at window samples ``h .. T_in - 1``:
    mic signals ``y = S * u`` against ``target`` (default: the input delayed by
    tau). The mic-to-output Jacobian is the fixed tap set: dy_k(n)/du_l(n-m) = s_kl[m].

    Returns ``(loss, [dW1, db1, dW2, db2])``.
    """
    S = np.asarray(S, dtype=float)
    yw = np.asarray(yw_windows, dtype=float)
    if yw.ndim == 2:
        yw = yw[None]
    B, K, T_in = yw.shape
    Ls = S.shape[2]
    D, tau = params.D, params.tau
    h = _window_layout(D, Ls, tau)
    T = T_in - h
    if T < 1 or T_in < Ls:
        raise InvalidArgumentError(f"window of {T_in} samples is shorter than the required {h + 1} (L_s = {Ls})")
    u_start = h - Ls + 1                      # first u sample needed
    frames = make_frames(yw[:, :, u_start - D + 1 :], D)   # (B, K, T + Ls - 1, D)
    u, acts = _forward_frames(params, frames)
    T_u = u.shape[2]
    y = np.zeros((B, K, T))
    for k in range(K):
        for l in range(K):
            for m in range(Ls):
                if S[k, l, m] != 0.0:
                    y[:, k] += S[k, l, m] * u[:, l, Ls - 1 - m : Ls - 1 - m + T]
    if target is None:
        target = yw[:, :, h - tau : h - tau + T]
    else:
        target = np.asarray(target, dtype=float).reshape(B, K, T)
    diff = y - target
    loss = float(np.mean(diff**2))

    g_y = 2.0 * diff / diff.size
    g_u = np.zeros((B, K, T_u))
    for k in range(K):
        for l in range(K):
            for m in range(Ls):
                if S[k, l, m] != 0.0:
                    g_u[:, l, Ls - 1 - m : Ls - 1 - m + T] += S[k, l, m] * g_y[:, k]
    dW1 = np.zeros_like(params.W1)
    db1 = np.zeros_like(params.b1)
    dW2 = np.zeros_like(params.W2)
    db2 = np.zeros_like(params.b2)
    for i in range(K):
        gu = g_u[:, i]                                   # (B, T_u)
        gsum = gu.sum()
        for j in range(K):
            a = acts[i][j]                               # (B, T_u, H)
            dW2[i, j] = np.einsum("bt,bth->h", gu, a)
            db2[i, j] = gsum
            gz = gu[..., None] * params.W2[i, j] * a * (1.0 - a)
            dW1[i, j] = np.einsum("btd,bth->dh", frames[:, j], gz)
            db1[i, j] = gz.sum(axis=(0, 1))
    return loss, [dW1, db1, dW2, db2]


def windowed_loss(params, yw_windows, S, target=None):
    """Loss only (same windowing as :func:`decnet_backward`); used by gradient checks."""
    return decnet_backward(params, yw_windows, S, target)[0]


# -- training ------------------------------------------------------------------

def default_tau(scene: AcousticScene) -> int:
    """Secondary direct delay + 1, clamped below the primary direct delay."""
    tau = scene.secondary_direct_delay() + 1
    return max(0, min(tau, scene.primary_direct_delay() - 1))


def check_tau(scene: AcousticScene, tau):
    pd = scene.primary_direct_delay()
    if not 0 <= tau < pd:
        raise InvalidArgumentError(
            f"tau={tau} violates causality: must be below the primary direct delay ({pd} samples)"
        )


class Adam:
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlainGD:
    def __init__(self, params, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train_decnet(
    scene: AcousticScene,
    tau=None,
    epochs=40,
    batch=64,
    lr=1e-3,
    seed=0,
    frame_length=32,
    hidden=512,
    steps_per_epoch=50,
    window=32,
    optimizer="adam",
    excitation_variance=1.0,
    init=None,
    log=None,
):
    """Offline training on independent white excitation per channel.

    Each step draws ``batch`` windows with ``window`` loss samples each.
    Returns ``(params, loss_history)`` with one mean loss per epoch.
    """
    if tau is None:
        tau = default_tau(scene)
    check_tau(scene, tau)
    if epochs < 0 or batch < 1 or window < 1 or steps_per_epoch < 1:
        raise InvalidArgumentError("epochs >= 0, batch >= 1, window >= 1, steps_per_epoch >= 1 required")
    K, Ls = scene.K, scene.Ls
    params = init.copy() if init is not None else DecNetParams.initialize(K, frame_length, hidden, tau, seed)
    if params.tau != tau:
        params = DecNetParams(*params.arrays(), tau=int(tau))
    S = scene.secondary_taps()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    opt = {"adam": Adam, "sgd": PlainGD}[optimizer](params.arrays(), lr=lr)
    T_in = _window_layout(params.D, Ls, tau) + window
    sd = math.sqrt(excitation_variance)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for _ in range(steps_per_epoch):
            yw = sd * rng.standard_normal((batch, K, T_in))
            loss, grads = decnet_backward(params, yw, S)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            opt.step(params.arrays(), grads)
            total += loss
        history.append(total / steps_per_epoch)
        if log is not None:
            log(epoch, history[-1])
    return params, history


# -- playback probes -------------------------------------------------------------

def decoupling_residual_db(params: DecNetParams, scene: AcousticScene, n=1 << 15, seed=12345):
    """Per-channel 10 log10(E[(y_k - y_wk(n - tau))^2] / E[y_wk^2]) on fresh white input."""
    rng = np.random.default_rng(seed)
    yw = rng.standard_normal((scene.K, n))
    y = propagate(scene.secondary_taps(), decnet_apply(params, yw))
    skip = params.D + scene.Ls + params.tau
    tgt = np.zeros_like(yw)
    tgt[:, params.tau :] = yw[:, : n - params.tau]
    err = np.mean((y[:, skip:] - tgt[:, skip:]) ** 2, axis=1)
    ref = np.mean(yw[:, skip:] ** 2, axis=1)
    return 10.0 * np.log10(np.maximum(err, 1e-300) / ref)


def leakage_db(params, scene: AcousticScene, n=1 << 15, seed=54321):
    """Cross-channel leakage matrix in dB: power at mic k per unit excitation of channel l only.

    ``params=None`` bypasses the network (u = y_w), the uncompensated plant.
    Diagonal entries are NaN.
    """
    K = scene.K
    S = scene.secondary_taps()
    rng = np.random.default_rng(seed)
    out = np.full((K, K), np.nan)
    for l in range(K):
        yw = np.zeros((K, n))
        yw[l] = rng.standard_normal(n)
        u = yw if params is None else decnet_apply(params, yw)
        y = propagate(S, u)
        skip = scene.Ls + (0 if params is None else params.D)
        for k in range(K):
            if k != l:
                out[k, l] = 10.0 * np.log10(max(np.mean(y[k, skip:] ** 2), 1e-300) / np.mean(yw[l, skip:] ** 2))
    return out


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(params: DecNetParams, path, meta=None):
    doc = {
        "format": "decnet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "K": params.K,
        "D": params.D,
        "H": params.H,
        "tau": params.tau,
        "W1": params.W1.tolist(),
        "b1": params.b1.tolist(),
        "W2": params.W2.tolist(),
        "b2": params.b2.tolist(),
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path) -> DecNetParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "decnet-checkpoint":
        raise InvalidArgumentError(f"{path} is not a DecNet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {doc.get('version')}")
    p = DecNetParams(
        W1=np.array(doc["W1"], dtype=float),
        b1=np.array(doc["b1"], dtype=float),
        W2=np.array(doc["W2"], dtype=float),
        b2=np.array(doc["b2"], dtype=float),
        tau=int(doc["tau"]),
    )
    if (p.K, p.D, p.H) != (doc["K"], doc["D"], doc["H"]):
        raise InvalidArgumentError("checkpoint header does not match parameter shapes")
    return p
