"""Scene recipes and orchestration for the three experiments: modeling-error
sweep, learning-curve comparison and primary-path switch tracking.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import analysis
from .controllers import design_inverse_bank
from .errors import InvalidArgumentError
from .paths import AcousticScene, decay_for_t60, synth_free_field, synth_reverberant
from .simulate import (
    AlgorithmConfig,
    NoiseSource,
    ScenarioEvent,
    convergence_time,
    fixed_wiener_controller,
    make_noise,
    monte_carlo,
    run_closed_loop,
    window_level_db,
)

CANONICAL_TAU = 12


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a seeded synthetic scene. Defaults give the canonical 2-channel plant."""

    K: int = 2
    Lp: int = 128
    Ls: int = 32
    seed: int = 38
    secondary_t60_taps: float | None = 28.0   # None: 60 dB decay across Ls
    primary_t60_taps: float | None = 48.0     # None: 60 dB decay across Lp
    direct_delay: int = 2
    cross_delay: int = 3
    cross_gain: float = 0.5
    primary_delay: int = 16
    noise_variance: float = 1e-5
    free_field: bool = False
    alternate: bool = True
    sample_rate_hz: float = 2000.0

    def to_dict(self):
        return asdict(self)


def synth_scene(spec: SceneSpec = SceneSpec()) -> AcousticScene:
    if spec.K < 1:
        raise InvalidArgumentError("K must be >= 1")
    fs = spec.sample_rate_hz
    sdec = decay_for_t60(spec.secondary_t60_taps) if spec.secondary_t60_taps else None
    pdec = decay_for_t60(spec.primary_t60_taps) if spec.primary_t60_taps else None
    base = 1000 * spec.seed
    sec = []
    for k in range(spec.K):
        row = []
        for l in range(spec.K):
            delay = spec.direct_delay if k == l else spec.cross_delay
            gain = 1.0 if k == l else spec.cross_gain
            if spec.free_field:
                row.append(synth_free_field(delay, spec.Ls, gain, fs))
            else:
                ir = synth_reverberant(base + 10 * k + l, spec.Ls, delay, sdec, fs)
                row.append(ir.taps * gain)
        sec.append(row)
    prim = [synth_reverberant(base + 100 + k, spec.Lp, spec.primary_delay, pdec, fs) for k in range(spec.K)]
    alt = None
    if spec.alternate:
        alt = [synth_reverberant(base + 200 + k, spec.Lp, spec.primary_delay, pdec, fs) for k in range(spec.K)]
    return AcousticScene(prim, sec, spec.noise_variance, fs, primary_alternate=alt)


def canonical_scene(seed=38) -> AcousticScene:
    """Coupled 2-channel plant whose own-channel secondary paths are non-minimum phase.

    Their modeling error levels off with controller length, while a delayed
    MIMO inverse inside the 16-sample primary lead still reaches about -27 dB.
    """
    return synth_scene(SceneSpec(seed=seed))


def analysis_scene(seed=0, free_field=False) -> AcousticScene:
    """Single-channel plant for the modeling-error sweep, no background noise."""
    return synth_scene(SceneSpec(K=1, seed=seed, secondary_t60_taps=None, primary_t60_taps=None, direct_delay=2,
                                 primary_delay=4, noise_variance=0.0, free_field=free_field, alternate=False))


def pure_delay_scene(K=2, delay=2, Lp=128, Ls=32, primary_delay=12, seed=0, noise_variance=1e-3):
    """Diagonal pure-delay secondary matrix, reverberant primaries."""
    spec = SceneSpec(K=K, Lp=Lp, Ls=Ls, seed=seed, direct_delay=delay, cross_gain=0.0, primary_t60_taps=None,
                     primary_delay=primary_delay, noise_variance=noise_variance, free_field=True)
    return synth_scene(spec)


# -- modeling-error sweep --------------------------------------------------------

def simulate_wiener_residual_db(scene: AcousticScene, L, n_samples=1_000_000, n_runs=1, seed=0, var=1.0):
    """Excess residual power of the loop held at each channel's decentralized Wiener controller.

    Returns per-channel 10 log10((<e_k^2> - sigma_eta^2) / <d_k^2>) from
    time averages after the warm-up max(L_p, L + L_s).
    """
    W = np.stack([analysis.wiener_decentralized(c.R_kk, c.r_k)
                  for c in (analysis.correlations_white(scene, k, k, L, var) for k in range(scene.K))])
    algo = AlgorithmConfig("FixedWiener", L=L, adapt=False)
    noise = NoiseSource("white", var)
    warm = max(scene.Lp, L + scene.Ls)
    if n_samples <= warm:
        raise InvalidArgumentError("run too short for the warm-up")
    pe = np.zeros(scene.K)
    pd = np.zeros(scene.K)
    for r in range(n_runs):
        res = run_closed_loop(scene, algo, noise, n_samples, seed=(int(seed), r), fixed_W=W)
        pe += np.mean(res.e[:, warm:] ** 2, axis=1)
        pd += np.mean(res.d[:, warm:] ** 2, axis=1)
    excess = pe / n_runs - scene.noise_variance
    return 10.0 * np.log10(np.maximum(excess, 1e-300) / (pd / n_runs))


def analyze(scene: AcousticScene, L_list, k=0, simulate=True, n_samples=1_000_000, n_runs=1, seed=0):
    """Theory sweep plus (optionally) the simulated Wiener-loop column, one row per L."""
    L_list = list(L_list)
    if not L_list:
        raise InvalidArgumentError("L_list must be nonempty")
    rows = analysis.epsilon_sweep(scene, k, L_list)
    sim = None
    if simulate:
        one = AcousticScene([scene.primary[k]], [[scene.secondary[k][k]]], scene.noise_variance[k],
                            scene.sample_rate_hz)
        sim = [float(simulate_wiener_residual_db(one, L, n_samples, n_runs, seed)[0]) for L in L_list]
    return rows, sim


# -- learning-curve comparison ---------------------------------------------------

def default_algorithms(L=160, tau=CANONICAL_TAU, L_f=32, names=None, mu=None):
    names = names or ["DCFxLMS", "CFxLMS", "InverseFxLMS", "FixedWiener", "DecNetLMS"]
    out = []
    for name in names:
        out.append(AlgorithmConfig(name, L=L, mu=mu, delay=tau if name == "InverseFxLMS" else None, L_f=L_f,
                                   adapt=name != "FixedWiener"))
    return out


@dataclass
class CurveSummary:
    algorithm: str
    steady_state_db: float
    convergence_time_s: float | None
    pre_event_db: float | None
    n_runs: int
    n_diverged: int


def summarize(curves, sample_rate_hz, events=(), final_window_s=1.0):
    """Steady-state level (final window), convergence time and pre-event level per algorithm."""
    out = []
    win = int(round(final_window_s * sample_rate_hz))
    first = min((ev.at_sample for ev in events), default=None)
    for tag, c in curves.items():
        n = c.num.size
        if c.n_runs == 0:
            out.append(CurveSummary(tag, float("nan"), None, None, 0, c.n_diverged))
            continue
        final = window_level_db(c.num, c.den, n - win, n)
        seg_end = first if first is not None else n
        # convergence is judged on the segment before the first event
        seg_final = window_level_db(c.num, c.den, seg_end - win, seg_end)
        seg_start = window_level_db(c.num, c.den, 0, win)
        t_conv = None
        # a curve that ends no lower than it started never crossed into a steady state
        if seg_final <= seg_start - 3.0:
            t_conv = convergence_time(c.emse_db[:seg_end], sample_rate_hz, seg_final, 3.0, final_window_s)
        pre = seg_final if first is not None else None
        out.append(CurveSummary(tag, final, t_conv, pre, c.n_runs, c.n_diverged))
    return out


def compare(scene: AcousticScene, algos, noise: NoiseSource, duration_s, n_runs=1, master_seed=0,
            events=(), decnet=None, window=400, fixed_W=None):
    """Monte Carlo learning curves for every algorithm on shared realizations.

    Returns ``(curves, summaries)``.
    """
    fs = scene.sample_rate_hz
    n = int(round(duration_s * fs))
    names = {a.name for a in algos}
    if "DecNetLMS" in names and decnet is None:
        raise InvalidArgumentError("DecNet-LMS requested without a checkpoint")
    kwargs = {"decnet": decnet}
    if "FixedWiener" in names:
        L = next(a.L for a in algos if a.name == "FixedWiener")
        kwargs["fixed_W"] = fixed_W if fixed_W is not None else fixed_wiener_controller(scene, noise, L)
    inv = [a for a in algos if a.name == "InverseFxLMS"]
    if inv:
        a = inv[0]
        delay = a.delay if a.delay is not None else scene.secondary_direct_delay() + 1
        kwargs["inverse_bank"] = design_inverse_bank(scene.secondary_taps(), a.L_f, delay)
    curves = monte_carlo(scene, algos, noise, n, n_runs, master_seed, events, window, **kwargs)
    return curves, summarize(curves, fs, events)


def switch_events(duration_s, switch_s, fs=2000.0):
    if not 0 < switch_s < duration_s:
        raise InvalidArgumentError("switch time must fall inside the run")
    return [ScenarioEvent(int(round(switch_s * fs)))]


__all__ = [
    "CANONICAL_TAU",
    "CurveSummary",
    "SceneSpec",
    "analysis_scene",
    "analyze",
    "canonical_scene",
    "compare",
    "default_algorithms",
    "make_noise",
    "pure_delay_scene",
    "simulate_wiener_residual_db",
    "summarize",
    "switch_events",
    "synth_scene",
]
