"""FIR acoustic paths: construction, validation, application and JSON I/O.

Index conventions used everywhere in the package:

* ``scene.secondary[k][l]`` is the path from loudspeaker ``l`` to error
  microphone ``k``.
* signals are 1-D float64 arrays, causal (samples before index 0 are zero).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InvalidArgumentError

DEFAULT_SAMPLE_RATE = 2000.0
T60_DB = 60.0


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float).reshape(-1)
        if taps.size < 1:
            raise InvalidArgumentError("impulse response needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise InvalidArgumentError("impulse response taps must be finite")
        if not self.sample_rate_hz > 0:
            raise InvalidArgumentError("sample rate must be positive")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    def __len__(self):
        return self.taps.size

    @property
    def direct_delay(self) -> int:
        """Index of the first nonzero tap (length if all taps are zero)."""
        nz = np.flatnonzero(self.taps)
        return int(nz[0]) if nz.size else len(self)

    @property
    def is_free_field(self) -> bool:
        return np.count_nonzero(self.taps) == 1

    @property
    def energy(self) -> float:
        return float(self.taps @ self.taps)


@dataclass(frozen=True)
class AcousticScene:
    """K-channel plant: primary paths, K x K secondary matrix, mic noise."""

    primary: tuple
    secondary: tuple
    noise_variance: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    primary_alternate: tuple | None = field(default=None)

    def __post_init__(self):
        primary = tuple(_as_ir(p, self.sample_rate_hz) for p in self.primary)
        secondary = tuple(tuple(_as_ir(s, self.sample_rate_hz) for s in row) for row in self.secondary)
        K = len(primary)
        if K < 1:
            raise InvalidArgumentError("scene needs at least one channel")
        if len(secondary) != K or any(len(row) != K for row in secondary):
            raise InvalidArgumentError(f"secondary matrix must be {K}x{K}")
        if len({len(p) for p in primary}) != 1:
            raise InvalidArgumentError("all primary paths must share one length")
        if len({len(s) for row in secondary for s in row}) != 1:
            raise InvalidArgumentError("all secondary paths must share one length")
        nv = np.broadcast_to(np.asarray(self.noise_variance, dtype=float), (K,)).copy()
        if np.any(nv < 0) or not np.all(np.isfinite(nv)):
            raise InvalidArgumentError("noise variances must be finite and nonnegative")
        alt = self.primary_alternate
        if alt is not None:
            alt = tuple(_as_ir(p, self.sample_rate_hz) for p in alt)
            if len(alt) != K or any(len(p) != len(primary[0]) for p in alt):
                raise InvalidArgumentError("alternate primary set must match the primary set shape")
        object.__setattr__(self, "primary", primary)
        object.__setattr__(self, "secondary", secondary)
        object.__setattr__(self, "noise_variance", nv)
        object.__setattr__(self, "primary_alternate", alt)

    @property
    def K(self) -> int:
        return len(self.primary)

    @property
    def Lp(self) -> int:
        return len(self.primary[0])

    @property
    def Ls(self) -> int:
        return len(self.secondary[0][0])

    def primary_taps(self, alternate=False) -> np.ndarray:
        src = self.primary_alternate if alternate else self.primary
        if src is None:
            raise InvalidArgumentError("scene has no alternate primary set")
        return np.stack([p.taps for p in src])

    def secondary_taps(self) -> np.ndarray:
        """(K, K, Ls) array, ``[k, l]`` = loudspeaker l -> mic k."""
        return np.array([[s.taps for s in row] for row in self.secondary])

    def primary_direct_delay(self) -> int:
        sets = [self.primary] + ([self.primary_alternate] if self.primary_alternate else [])
        return min(p.direct_delay for ps in sets for p in ps)

    def secondary_direct_delay(self) -> int:
        return min(self.secondary[k][k].direct_delay for k in range(self.K))

    def with_secondary(self, secondary) -> "AcousticScene":
        return AcousticScene(self.primary, secondary, self.noise_variance, self.sample_rate_hz, self.primary_alternate)

    def with_noise_variance(self, noise_variance) -> "AcousticScene":
        return AcousticScene(self.primary, self.secondary, noise_variance, self.sample_rate_hz, self.primary_alternate)

    def summary(self) -> dict:
        return {
            "K": self.K,
            "L_p": self.Lp,
            "L_s": self.Ls,
            "sample_rate_hz": self.sample_rate_hz,
            "primary_direct_delays": [p.direct_delay for p in self.primary],
            "secondary_direct_delays": [[s.direct_delay for s in row] for row in self.secondary],
            "noise_variance": self.noise_variance.tolist(),
        }


def _as_ir(obj, fs):
    if isinstance(obj, ImpulseResponse):
        return obj
    return ImpulseResponse(np.asarray(obj, dtype=float), fs)


def synth_free_field(delay: int, length: int, gain: float = 1.0, sample_rate_hz=DEFAULT_SAMPLE_RATE):
    if length < 1 or not 0 <= delay < length:
        raise InvalidArgumentError(f"need 0 <= delay < length, got delay={delay}, length={length}")
    taps = np.zeros(length)
    taps[delay] = gain
    return ImpulseResponse(taps, sample_rate_hz)


def decay_for_t60(t60_taps: float) -> float:
    """Per-sample amplitude decay rate giving a 60 dB level drop after ``t60_taps``."""
    return math.log(10.0 ** (T60_DB / 20.0)) / t60_taps


def synth_reverberant(seed, length, direct_delay, decay_rate=None, sample_rate_hz=DEFAULT_SAMPLE_RATE):
    """Exponentially decaying Gaussian FIR, zero before ``direct_delay``, unit energy.

    ``decay_rate`` defaults to the rate that drops the tail by 60 dB over
    ``length`` taps. Draws come from ``numpy.random.default_rng(seed)``:
    one standard normal per tap at or after the direct delay.
    """
    if length < 1 or not 0 <= direct_delay < length:
        raise InvalidArgumentError(f"need 0 <= direct_delay < length, got {direct_delay}, {length}")
    if decay_rate is None:
        decay_rate = decay_for_t60(length)
    if not decay_rate > 0:
        raise InvalidArgumentError("decay_rate must be positive")
    rng = np.random.default_rng(seed)
    n = np.arange(length - direct_delay)
    taps = np.zeros(length)
    taps[direct_delay:] = rng.standard_normal(n.size) * np.exp(-decay_rate * n)
    taps /= math.sqrt(taps @ taps)
    return ImpulseResponse(taps, sample_rate_hz)


def convolve_fir(x, h) -> np.ndarray:
    """Causal FIR filtering by direct summation; output has the length of ``x``."""
    taps = h.taps if isinstance(h, ImpulseResponse) else np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.size == 0 or taps.size == 0:
        raise InvalidArgumentError("convolve_fir needs nonempty inputs")
    return kernels.fir_filter(np.ascontiguousarray(x), np.ascontiguousarray(taps))


def apply_secondary(scene_or_taps, u_history) -> np.ndarray:
    """Mic control signals y(n) from driving history.

    ``u_history`` has shape (K, depth) with column m holding u(n - m).
    """
    S = scene_or_taps.secondary_taps() if isinstance(scene_or_taps, AcousticScene) else np.asarray(scene_or_taps)
    u = np.asarray(u_history, dtype=float)
    K, K2, Ls = S.shape
    if K != K2 or u.ndim != 2 or u.shape[0] != K:
        raise InvalidArgumentError(f"driving history must have shape ({K}, >= {Ls}), got {u.shape}")
    if u.shape[1] < Ls:
        raise InvalidArgumentError(f"driving history depth {u.shape[1]} < L_s = {Ls}")
    return np.einsum("klm,lm->k", S, u[:, :Ls])


def propagate(S, u) -> np.ndarray:
    """Whole-signal form of :func:`apply_secondary`: y_k = sum_l s_kl * u_l."""
    S = np.asarray(S, dtype=float)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    K = S.shape[0]
    y = np.zeros((K, u.shape[1]))
    for k in range(K):
        for l in range(S.shape[1]):
            if np.any(S[k, l]):
                y[k] += kernels.fir_filter(np.ascontiguousarray(u[l]), np.ascontiguousarray(S[k, l]))
    return y


# -- serialization -----------------------------------------------------------

def scene_to_dict(scene: AcousticScene) -> dict:
    d = {
        "sample_rate_hz": scene.sample_rate_hz,
        "primary": [p.taps.tolist() for p in scene.primary],
        "secondary": [[s.taps.tolist() for s in row] for row in scene.secondary],
        "noise_variance": scene.noise_variance.tolist(),
    }
    if scene.primary_alternate is not None:
        d["primary_alternate"] = [p.taps.tolist() for p in scene.primary_alternate]
    return d


def scene_from_dict(d: dict) -> AcousticScene:
    allowed = {"sample_rate_hz", "primary", "secondary", "noise_variance", "primary_alternate"}
    unknown = set(d) - allowed
    if unknown:
        raise InvalidArgumentError(f"unknown scene keys: {sorted(unknown)}")
    try:
        fs = float(d["sample_rate_hz"])
        return AcousticScene(
            primary=tuple(d["primary"]),
            secondary=tuple(tuple(row) for row in d["secondary"]),
            noise_variance=d.get("noise_variance", 0.0),
            sample_rate_hz=fs,
            primary_alternate=tuple(d["primary_alternate"]) if d.get("primary_alternate") else None,
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"scene is missing field {exc}") from None


def save_scene(scene: AcousticScene, path) -> None:
    text = json.dumps(scene_to_dict(scene), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_scene(path) -> AcousticScene:
    return scene_from_dict(json.loads(Path(path).read_text()))
