"""Sample-by-sample closed-loop simulation, noise sources, EMSE metrics,
Monte Carlo averaging and complexity accounting.

Per sample n: x(n) is drawn; d_k(n) = p_k^T x_p(n); the algorithm produces
loudspeaker signals u(n); mic k records e_k(n) = d_k(n) + sum_l s_kl * u_l(n)
+ eta_k(n); the controllers are then updated from e(n).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from . import analysis, kernels
from .controllers import DEFAULT_ALPHA, DEFAULT_BETA, design_inverse_bank
from .decnet import DecNetParams, decnet_apply
from .errors import InvalidArgumentError
from .paths import AcousticScene, propagate

ALGORITHMS = ("DCFxLMS", "CFxLMS", "InverseFxLMS", "FixedWiener", "DecNetLMS")
NOISE_KINDS = ("white", "car", "file")
DIVERGENCE_FACTOR = 1e3

TRACE_MAGIC = b"ANCTRACE"
TRACE_VERSION = 1


def _seed_seq(seed, stream):
    base = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.SeedSequence([int(s) for s in base] + [int(stream)])


# -- noise -----------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSource:
    kind: str = "white"
    variance: float = 1.0
    seed: object = 0
    taps: tuple | None = None     # shaping FIR for "car"; default from car_shaping_taps
    path: str | None = None       # samples for "file" (.npy or whitespace text)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidArgumentError(f"unknown noise kind {self.kind!r}")
        if not self.variance > 0:
            raise InvalidArgumentError("noise variance must be positive")


def car_shaping_taps(sample_rate_hz=2000.0, corner_hz=100.0, length=128) -> np.ndarray:
    """First-order Butterworth low-pass (-6 dB/octave above the corner), truncated, unit energy."""
    b, a = signal.butter(1, corner_hz, fs=sample_rate_hz)
    imp = np.zeros(length)
    imp[0] = 1.0
    h = signal.lfilter(b, a, imp)
    return h / np.sqrt(h @ h)


def make_noise(spec: NoiseSource, n, sample_rate_hz=2000.0) -> np.ndarray:
    if spec.kind == "file":
        if spec.path is None:
            raise InvalidArgumentError("file-backed noise needs a path")
        p = Path(spec.path)
        data = np.load(p) if p.suffix == ".npy" else np.loadtxt(p)
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.size < n:
            raise OSError(f"{p}: {data.size} samples available, {n} requested")
        return data[:n].copy()
    rng = np.random.default_rng(_seed_seq(spec.seed, 0))
    sd = np.sqrt(spec.variance)
    if spec.kind == "white":
        return sd * rng.standard_normal(n)
    taps = np.asarray(spec.taps, dtype=float) if spec.taps is not None else car_shaping_taps(sample_rate_hz)
    taps = taps / np.sqrt(taps @ taps)
    # burn-in so the shaped signal starts stationary
    w = rng.standard_normal(n + taps.size)
    return sd * kernels.fir_filter(w, np.ascontiguousarray(taps))[taps.size :]


# -- configuration types -----------------------------------------------------------

@dataclass(frozen=True)
class ScenarioEvent:
    at_sample: int
    action: str = "switch-primary"

    def __post_init__(self):
        if self.action != "switch-primary":
            raise InvalidArgumentError(f"unsupported event action {self.action!r}")
        if self.at_sample < 0:
            raise InvalidArgumentError("event sample must be nonnegative")


@dataclass
class AlgorithmConfig:
    name: str
    L: int = 160
    mu: float | None = None          # raw constant step; None selects normalized alpha
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    delay: int | None = None         # regressor delay (d_inv for InverseFxLMS; DecNet uses its tau)
    L_f: int = 32
    adapt: bool = True
    W0: np.ndarray | None = None
    label: str | None = None

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise InvalidArgumentError(f"unknown algorithm {self.name!r}; choose from {ALGORITHMS}")
        if self.L < 1:
            raise InvalidArgumentError("controller length must be >= 1")
        if self.mu is not None and not self.mu > 0:
            raise InvalidArgumentError("mu must be positive")

    @property
    def tag(self):
        return self.label or self.name


@dataclass
class RunResult:
    e: np.ndarray
    d: np.ndarray
    algorithm: str
    seed: object
    sample_rate_hz: float
    noise_variance: np.ndarray
    events: list = field(default_factory=list)
    diverged: bool = False
    W: np.ndarray | None = None

    @property
    def n_samples(self):
        return self.e.shape[1]

    def emse_db(self, window=400):
        return emse_curve(self, window)

    def time_s(self):
        return np.arange(self.n_samples) / self.sample_rate_hz


# -- the loop --------------------------------------------------------------------

def disturbance(scene: AcousticScene, x, events=()):
    """d_k(n) = p_k^T x_p(n), switching to the alternate primary set at each event."""
    P = scene.primary_taps()
    d = np.stack([kernels.fir_filter(x, np.ascontiguousarray(p)) for p in P])
    switch = sorted(ev.at_sample for ev in events)
    use_alt = False
    for k, at in enumerate(switch):
        use_alt = not use_alt
        src = scene.primary_taps(alternate=use_alt)
        nxt = switch[k + 1] if k + 1 < len(switch) else x.size
        for ch, p in enumerate(src):
            d[ch, at:nxt] = kernels.fir_filter(x[:nxt], np.ascontiguousarray(p))[at:nxt]
    return d


def mic_noise(scene: AcousticScene, n, seed):
    rng = np.random.default_rng(_seed_seq(seed, 1))
    return np.sqrt(scene.noise_variance)[:, None] * rng.standard_normal((scene.K, n))


def run_closed_loop(
    scene: AcousticScene,
    algo: AlgorithmConfig,
    noise: NoiseSource,
    n_samples,
    events=(),
    seed=0,
    decnet: DecNetParams | None = None,
    inverse_bank=None,
    fixed_W=None,
    x=None,
):
    """Simulate one algorithm on one noise realization; see module docstring."""
    K = scene.K
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    for ev in events:
        if ev.at_sample >= n_samples:
            raise InvalidArgumentError(f"event at {ev.at_sample} beyond run length {n_samples}")
        if scene.primary_alternate is None:
            raise InvalidArgumentError("switch-primary event needs a scene with an alternate primary set")
    if x is None:
        x = make_noise(replace(noise, seed=_seed_list(seed)), n_samples, scene.sample_rate_hz)
    x = np.ascontiguousarray(x, dtype=float)
    d = disturbance(scene, x, events)
    eta = mic_noise(scene, n_samples, seed)
    S = np.ascontiguousarray(scene.secondary_taps())
    init = min(n_samples, max(scene.Lp, int(scene.sample_rate_hz)))
    guard = DIVERGENCE_FACTOR * max(float(np.sqrt(np.mean(d[:, :init] ** 2))), 1e-12)
    if algo.mu is not None:
        step, normalized = float(algo.mu), False
    else:
        step, normalized = float(algo.alpha), True
    W0 = np.zeros((K, algo.L)) if algo.W0 is None else np.array(algo.W0, dtype=float).reshape(K, algo.L)

    name = algo.name
    if name == "FixedWiener":
        if fixed_W is None:
            raise InvalidArgumentError("FixedWiener needs precomputed controllers (fixed_W)")
        W = np.asarray(fixed_W, dtype=float).reshape(K, algo.L)
        y = propagate(S, np.stack([kernels.fir_filter(x, np.ascontiguousarray(w)) for w in W]))
        e, n_done = _finish_open_loop(d + y + eta, guard)
    elif name in ("DCFxLMS", "CFxLMS"):
        if algo.adapt:
            xf = np.stack([np.stack([kernels.fir_filter(x, np.ascontiguousarray(S[k, l])) for l in range(K)])
                           for k in range(K)])
        else:
            xf = np.zeros((K, K, 1))
        e, W, n_done = kernels.fxlms_loop(x, np.ascontiguousarray(xf), d, eta, S, W0, step, normalized,
                                          algo.beta, name == "CFxLMS", algo.adapt, guard)
    elif name == "InverseFxLMS":
        if inverse_bank is None:
            delay = algo.delay if algo.delay is not None else scene.secondary_direct_delay() + 1
            inverse_bank = design_inverse_bank(S, algo.L_f, delay)
        F = np.ascontiguousarray(inverse_bank.F)
        delay = inverse_bank.delay
        if algo.adapt:
            e, W, n_done = kernels.inverse_lms_loop(x, d, eta, S, F, W0, delay, step, normalized,
                                                    algo.beta, True, guard)
        else:
            W = W0
            yw = np.stack([kernels.fir_filter(x, np.ascontiguousarray(w)) for w in W0])
            u = np.stack([sum(kernels.fir_filter(yw[j], np.ascontiguousarray(F[i, j])) for j in range(K))
                          for i in range(K)])
            e, n_done = _finish_open_loop(d + propagate(S, u) + eta, guard)
    else:  # DecNetLMS
        if decnet is None:
            raise InvalidArgumentError("DecNet-LMS needs a trained DecNet checkpoint")
        if decnet.K != K:
            raise InvalidArgumentError("DecNet channel count does not match the scene")
        if algo.adapt:
            e, W, n_done = kernels.decnet_lms_loop(
                x, d, eta, S,
                np.ascontiguousarray(decnet.W1), np.ascontiguousarray(decnet.b1),
                np.ascontiguousarray(decnet.W2), np.ascontiguousarray(decnet.b2),
                W0, decnet.tau, step, normalized, algo.beta, True, guard,
            )
        else:
            W = W0
            yw = np.stack([kernels.fir_filter(x, np.ascontiguousarray(w)) for w in W0])
            e, n_done = _finish_open_loop(d + propagate(S, decnet_apply(decnet, yw)) + eta, guard)
    diverged = n_done < n_samples
    return RunResult(
        e=np.asarray(e)[:, :n_done],
        d=d[:, :n_done],
        algorithm=algo.tag,
        seed=seed,
        sample_rate_hz=scene.sample_rate_hz,
        noise_variance=scene.noise_variance.copy(),
        events=[ev.at_sample for ev in events],
        diverged=diverged,
        W=np.asarray(W) if name != "FixedWiener" else W,
    )


def _seed_list(seed):
    return list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]


def _finish_open_loop(e, guard):
    bad = ~(np.abs(e) <= guard)
    if bad.any():
        return e, int(np.argmax(bad.any(axis=0)))
    return e, e.shape[1]


def fixed_wiener_controller(scene: AcousticScene, noise: NoiseSource, L, n_train=200_000, seed=("train",)):
    """Offline centralized Wiener controllers for the (initial) primary set.

    White input uses the closed form; other inputs use lag-correlation
    estimates from an independent training realization.
    """
    if noise.kind == "white":
        return analysis.centralized_wiener(scene, L, noise.variance)
    seed = [sum(map(ord, str(s))) if not isinstance(s, int) else s for s in _seed_list_any(seed)]
    x = make_noise(replace(noise, seed=seed), n_train, scene.sample_rate_hz)
    return analysis.centralized_wiener_sampled(x, scene, L)


def _seed_list_any(seed):
    return list(seed) if isinstance(seed, (tuple, list)) else [seed]


# -- metrics -----------------------------------------------------------------------

def ema(v, window):
    """Exponential moving average y(n) = (1 - a) y(n - 1) + a v(n), a = 1/window, y(-1) = 0."""
    if window < 1:
        raise InvalidArgumentError("window must be >= 1")
    a = 1.0 / window
    return signal.lfilter([a], [1.0, -(1.0 - a)], np.asarray(v, dtype=float), axis=-1)


def emse_components(e, d, window, noise_var):
    """Channel-averaged linear numerator and denominator of the EMSE ratio."""
    e = np.atleast_2d(e)
    d = np.atleast_2d(d)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), (e.shape[0],))
    pe = ema(e**2, window)
    pd = ema(d**2, window)
    num = np.maximum(pe - nv[:, None], 1e-12 * pd)
    return num.mean(axis=0), pd.mean(axis=0)


def emse_curve(result_or_e, window=400, noise_var=None, d=None):
    """10 log10(max(<e^2> - sigma_eta^2, floor) / <d^2>), channel-averaged."""
    if isinstance(result_or_e, RunResult):
        e, d = result_or_e.e, result_or_e.d
        nv = result_or_e.noise_variance if noise_var is None else noise_var
    else:
        e = result_or_e
        nv = 0.0 if noise_var is None else noise_var
    num, den = emse_components(e, d, window, nv)
    return to_db(num, den)


def to_db(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return 10.0 * np.log10(np.maximum(r, 1e-300))


def window_level_db(num, den, start, stop):
    """EMSE level over samples [start, stop): ratio of mean linear powers."""
    return float(to_db(np.mean(num[start:stop]), np.mean(den[start:stop])))


def convergence_time(emse_db, sample_rate_hz, final_db, margin_db=3.0, hold_s=1.0):
    """First time the curve stays within ``margin_db`` of ``final_db`` for ``hold_s``; None if never."""
    hold = max(1, int(round(hold_s * sample_rate_hz)))
    ok = np.asarray(emse_db) <= final_db + margin_db
    if ok.size < hold:
        return None
    # run-length of consecutive True values ending at each index
    run = np.zeros(ok.size, dtype=np.int64)
    count = 0
    for i, flag in enumerate(ok):
        count = count + 1 if flag else 0
        run[i] = count
    hit = np.flatnonzero(run >= hold)
    if hit.size == 0:
        return None
    return (hit[0] - hold + 1) / sample_rate_hz


# -- Monte Carlo -------------------------------------------------------------------

@dataclass
class AveragedCurve:
    algorithm: str
    num: np.ndarray
    den: np.ndarray
    n_runs: int
    n_diverged: int

    @property
    def emse_db(self):
        return to_db(self.num, self.den)


def run_seeds(master_seed, n_runs):
    return [(int(master_seed), i) for i in range(n_runs)]


def monte_carlo(scene, algos, noise, n_samples, n_runs, master_seed=0, events=(), window=400,
                seeds=None, **run_kwargs):
    """Average EMSE numerators and denominators over runs before the dB conversion.

    All algorithms see the same per-run noise realizations. Diverged runs
    are excluded and counted.
    """
    if n_runs < 1:
        raise InvalidArgumentError("n_runs must be >= 1")
    seeds = list(seeds) if seeds is not None else run_seeds(master_seed, n_runs)
    out = {}
    for algo in algos:
        num = np.zeros(n_samples)
        den = np.zeros(n_samples)
        ok = 0
        bad = 0
        for s in seeds:
            res = run_closed_loop(scene, algo, noise, n_samples, events, seed=s, **run_kwargs)
            if res.diverged:
                bad += 1
                continue
            a, b = emse_components(res.e, res.d, window, res.noise_variance)
            num += a
            den += b
            ok += 1
        if ok:
            num /= ok
            den /= ok
        out[algo.tag] = AveragedCurve(algo.tag, num, den, ok, bad)
    return out


# -- complexity ------------------------------------------------------------------

REPORTED_COMPLEXITY = {
    "DecNetLMS": (76000, "reported DecNet complexity; counting convention not stated"),
    "CFxLMS": (516, "reported centralized FxLMS complexity; counting convention not stated"),
}


def complexity_report(name, K, L, Ls, D=32, H=512, L_f=32) -> dict:
    """Multiply-accumulate operations per output sample under this package's counting rule.

    FxLMS family: K L (control filtering) + K^2 L_s (reference filtering)
    + K L (decentralized update) or K^2 L (centralized update).
    DecNet-LMS: K^2 (D H + H) network MACs + K L filtering + K L update.
    Inverse FxLMS: K L filtering + K^2 L_f inverse bank + K L update.
    Fixed Wiener: K L filtering only.
    Plant propagation (acoustics) is not counted.
    """
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    if name not in ALGORITHMS:
        raise InvalidArgumentError(f"unknown algorithm {name!r}")
    parts = {"filtering": K * L}
    if name in ("DCFxLMS", "CFxLMS"):
        parts["reference_filtering"] = K * K * Ls
        parts["update"] = K * L if name == "DCFxLMS" else K * K * L
    elif name == "DecNetLMS":
        parts["network"] = K * K * (D * H + H)
        parts["update"] = K * L
    elif name == "InverseFxLMS":
        parts["inverse_bank"] = K * K * L_f
        parts["update"] = K * L
    rep = {"algorithm": name, "macs_per_sample": int(sum(parts.values())), "breakdown": parts}
    if name in REPORTED_COMPLEXITY:
        value, note = REPORTED_COMPLEXITY[name]
        rep["reported_reference"] = value
        rep["note"] = note + "; cited, not asserted"
    return rep


# -- export ------------------------------------------------------------------------

def write_run_csv(result: RunResult, path, window=400, decimate=20):
    """Columns: time_s, emse_db, e_rms_ch1..K (EMA-smoothed residual RMS)."""
    emse = emse_curve(result, window)
    rms = np.sqrt(ema(result.e**2, window))
    t = result.time_s()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_s", "emse_db"] + [f"e_rms_ch{k + 1}" for k in range(result.e.shape[0])])
        for n in range(0, result.n_samples, decimate):
            wr.writerow([f"{t[n]:.6f}", f"{emse[n]:.6f}"] + [f"{v:.8e}" for v in rms[:, n]])


def write_trace(result: RunResult, path):
    """Binary trace: magic, u32 version, u32 K, f64 fs, u64 length, then e and d as little-endian f64."""
    K, N = result.e.shape
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<IIdQ", TRACE_VERSION, K, float(result.sample_rate_hz), N))
        fh.write(np.ascontiguousarray(result.e, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(result.d, dtype="<f8").tobytes())


def read_trace(path):
    raw = Path(path).read_bytes()
    if raw[:8] != TRACE_MAGIC:
        raise InvalidArgumentError(f"{path}: not a trace file")
    version, K, fs, N = struct.unpack_from("<IIdQ", raw, 8)
    if version != TRACE_VERSION:
        raise InvalidArgumentError(f"unsupported trace version {version}")
    off = 8 + struct.calcsize("<IIdQ")
    body = np.frombuffer(raw, dtype="<f8", offset=off)
    if body.size != 2 * K * N:
        raise InvalidArgumentError(f"{path}: truncated trace")
    return {"K": K, "sample_rate_hz": fs, "e": body[: K * N].reshape(K, N).copy(),
            "d": body[K * N :].reshape(K, N).copy()}
