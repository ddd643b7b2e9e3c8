"""Compare the compiled and pure-Python sample loops on identical inputs.

    python3 benchmarks/bench_kernels.py [--samples N]
"""

import argparse
import time

import numpy as np

from decnet_anc import kernels
from decnet_anc.decnet import DecNetParams
from decnet_anc.experiments import canonical_scene


def _cases(n):
    rng = np.random.default_rng(0)
    scene = canonical_scene()
    S = np.ascontiguousarray(scene.secondary_taps())
    K, L = scene.K, 160
    x = rng.standard_normal(n)
    d = np.stack([np.convolve(x, p)[:n] for p in scene.primary_taps()])
    eta = 0.03 * rng.standard_normal((K, n))
    xf = np.ascontiguousarray(np.stack([[np.convolve(x, S[k, l])[:n] for l in range(K)] for k in range(K)]))
    W0 = np.zeros((K, L))
    F = np.zeros((K, K, 32))
    F[0, 0, 0] = F[1, 1, 0] = 1.0
    net = DecNetParams.initialize(K, 32, 512, 8, seed=0)
    net.W2[:] = 0.01 * rng.standard_normal(net.W2.shape)
    h = rng.standard_normal(128)
    guard = 1e6
    return {
        "fir_filter (128 taps)": lambda m: m.fir_filter(x, h),
        "DCFxLMS loop": lambda m: m.fxlms_loop(x, xf, d, eta, S, W0, 0.1, True, 1e-6, False, True, guard),
        "CFxLMS loop": lambda m: m.fxlms_loop(x, xf, d, eta, S, W0, 0.1, True, 1e-6, True, True, guard),
        "inverse FxLMS loop": lambda m: m.inverse_lms_loop(x, d, eta, S, F, W0, 8, 0.1, True, 1e-6, True, guard),
        "DecNet-LMS loop": lambda m: m.decnet_lms_loop(x, d, eta, S, net.W1, net.b1, net.W2, net.b2, W0, 8,
                                                       0.1, True, 1e-6, True, guard),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=2000)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"{args.samples} samples, canonical 2-channel scene, L=160")
    print(f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in _cases(args.samples).items():
        times = {}
        outs = {}
        for b, mod in backends.items():
            t0 = time.perf_counter()
            outs[b] = fn(mod)
            times[b] = time.perf_counter() - t0
        line = f"{name:24s}" + "".join(f"{times[b]:13.4f}s" for b in backends)
        if len(backends) > 1:
            line += f"{times['python'] / times['cython']:11.1f}x"
            a, c = outs["python"], outs["cython"]
            a0, c0 = (a[0], c[0]) if isinstance(a, tuple) else (a, c)
            line += f"   max|diff| {np.max(np.abs(np.asarray(a0) - np.asarray(c0))):.1e}"
        print(line)


if __name__ == "__main__":
    main()
