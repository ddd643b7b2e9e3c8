import numpy as np
import pytest

from decnet_anc import analysis as an
from decnet_anc import kernels
from decnet_anc.controllers import (
    FilteredReferenceState,
    FirController,
    design_inverse_bank,
    filter_reference,
    fxlms_step_centralized,
    fxlms_step_decentralized,
    lms_step,
    load_controllers,
    save_controllers,
)
from decnet_anc.errors import DivergenceError, InvalidArgumentError
from decnet_anc.experiments import pure_delay_scene
from decnet_anc.paths import AcousticScene, convolve_fir, synth_reverberant
from decnet_anc.simulate import AlgorithmConfig, NoiseSource, run_closed_loop


def coupled(seed, gain=0.6, noise=1e-3):
    prim = [synth_reverberant(seed * 10 + k, 24, 3) for k in range(2)]
    sec = [[synth_reverberant(seed * 10 + 4 + 2 * k + l, 6, 1 if k == l else 2).taps * (1 if k == l else gain)
            for l in range(2)] for k in range(2)]
    return AcousticScene(prim, sec, noise)


def diagonal(seed=1, noise=1e-3, Lp=32, Ls=8):
    prim = [synth_reverberant(seed * 10 + k, Lp, 4) for k in range(2)]
    sec = [[synth_reverberant(seed * 10 + 5 + k, Ls, 1).taps if k == l else np.zeros(Ls) for l in range(2)]
           for k in range(2)]
    return AcousticScene(prim, sec, noise)


class TestFirController:
    def test_invariants(self):
        with pytest.raises(DivergenceError):
            FirController([1.0, np.inf], 0.1)
        with pytest.raises(InvalidArgumentError):
            FirController([1.0], 0.0)


class TestLmsStep:
    def test_zero_error(self):
        c = FirController([0.3, -0.2], 0.1)
        np.testing.assert_array_equal(lms_step(c, [1.0, 2.0], 0.0).w, c.w)

    def test_hand_arithmetic(self):
        np.testing.assert_allclose(lms_step(FirController([0, 0], 0.1), [1, -1], 2.0).w, [-0.2, 0.2])

    def test_linear_in_error(self, rng):
        c = FirController(rng.standard_normal(5), 0.05)
        x = rng.standard_normal(5)
        a, b = 0.7, -1.3
        one = lms_step(c, x, a + b).w
        two = lms_step(lms_step(c, x, a), x, b).w
        np.testing.assert_allclose(one, two, rtol=0, atol=1e-15)

    def test_nonfinite_is_divergence(self):
        with pytest.raises(DivergenceError):
            lms_step(FirController([0.0], 0.1), [np.nan], 1.0)
        with pytest.raises(DivergenceError):
            lms_step(FirController([0.0], 0.1), [1.0], np.inf)

    def test_shape(self):
        with pytest.raises(InvalidArgumentError):
            lms_step(FirController([0.0, 0.0], 0.1), [1.0], 1.0)

    def test_converges_to_delayed_wiener(self):
        tau, L = 3, 160
        sc = pure_delay_scene(K=1, delay=tau, seed=4)
        F = np.ones((1, 1, 1))
        x = np.random.default_rng(0).standard_normal(60_000)
        d = convolve_fir(x, sc.primary[0])[None]
        eta = np.sqrt(sc.noise_variance[0]) * np.random.default_rng(1).standard_normal((1, x.size))
        _, W, n = kernels.inverse_lms_loop(x, d, eta, sc.secondary_taps(), F, np.zeros((1, L)), tau,
                                           1e-3, False, 0.0, True, 1e6)
        cs = an.correlations_white(sc, 0, 0, L, tau=tau)
        w_opt = an.wiener_delayed(cs.R_xx, cs.r_delta)
        assert n == x.size
        assert np.linalg.norm(W[0] - w_opt) <= 0.05 * np.linalg.norm(w_opt)


class TestFxlmsSteps:
    def test_decentralized_zero_error(self, rng):
        c = FirController(rng.standard_normal(4), 0.1)
        np.testing.assert_array_equal(fxlms_step_decentralized(c, rng.standard_normal(4), 0.0).w, c.w)

    def test_centralized_zero_error(self, rng):
        cs = [FirController(rng.standard_normal(4), 0.1) for _ in range(2)]
        out = fxlms_step_centralized(cs, rng.standard_normal((2, 2, 4)), np.zeros(2))
        for a, b in zip(cs, out):
            np.testing.assert_array_equal(a.w, b.w)

    def test_centralized_single_channel_matches_decentralized(self, rng):
        c = FirController(rng.standard_normal(4), 0.1)
        xf = rng.standard_normal((1, 1, 4))
        np.testing.assert_allclose(fxlms_step_centralized([c], xf, [0.4])[0].w,
                                   fxlms_step_decentralized(c, xf[0, 0], 0.4).w, atol=1e-15)

    def test_centralized_sums_errors(self, rng):
        cs = [FirController(np.zeros(3), 0.5) for _ in range(2)]
        xf = rng.standard_normal((2, 2, 3))
        e = np.array([1.0, -2.0])
        out = fxlms_step_centralized(cs, xf, e)
        for l in range(2):
            np.testing.assert_allclose(out[l].w, -0.5 * (e[0] * xf[0, l] + e[1] * xf[1, l]))

    def test_step_functions_match_kernel_loop(self, rng):
        # the reference step semantics replayed sample by sample against the compiled loop
        sc = coupled(2)
        S = sc.secondary_taps()
        L, N, mu = 6, 300, 0.01
        x = rng.standard_normal(N)
        d = np.stack([convolve_fir(x, p) for p in sc.primary])
        eta = np.zeros((2, N))
        xf = np.stack([[convolve_fir(x, S[k, l]) for l in range(2)] for k in range(2)])
        for centralized in (False, True):
            e_k, W_k, _ = kernels.fxlms_loop(x, np.ascontiguousarray(xf), d, eta, S, np.zeros((2, L)), mu, False,
                                             0.0, centralized, True, 1e9)
            ctrls = [FirController(np.zeros(L), mu) for _ in range(2)]
            state = FilteredReferenceState(S, L)
            u_hist = np.zeros((2, S.shape[2]))
            x_hist = np.zeros(L)
            for n in range(N):
                x_hist = np.roll(x_hist, 1)
                x_hist[0] = x[n]
                bufs = state.push(x[n])
                u = np.array([c.w @ x_hist for c in ctrls])
                u_hist = np.roll(u_hist, 1, axis=1)
                u_hist[:, 0] = u
                e = d[:, n] + np.einsum("klm,lm->k", S, u_hist)
                assert e == pytest.approx(e_k[:, n], abs=1e-10)
                if centralized:
                    ctrls = fxlms_step_centralized(ctrls, bufs, e)
                else:
                    ctrls = [fxlms_step_decentralized(c, bufs[k, k], e[k]) for k, c in enumerate(ctrls)]
            np.testing.assert_allclose(np.stack([c.w for c in ctrls]), W_k, atol=1e-10)

    def test_unit_secondary_matches_plain_lms(self):
        sc = pure_delay_scene(K=1, delay=0, seed=2)
        x = np.random.default_rng(3).standard_normal(5000)
        d = convolve_fir(x, sc.primary[0])[None]
        eta = np.zeros((1, x.size))
        S = sc.secondary_taps()
        xf = np.ascontiguousarray(x[None, None])
        e1, W1, _ = kernels.fxlms_loop(x, xf, d, eta, S, np.zeros((1, 32)), 0.1, True, 1e-6, False, True, 1e6)
        e2, W2, _ = kernels.inverse_lms_loop(x, d, eta, S, np.ones((1, 1, 1)), np.zeros((1, 32)), 0, 0.1, True,
                                             1e-6, True, 1e6)
        np.testing.assert_allclose(e1, e2, atol=1e-12)
        np.testing.assert_allclose(W1, W2, atol=1e-12)

    def test_diagonal_plant_steady_state_matches_analysis(self):
        sc = diagonal()
        L = 32
        res = run_closed_loop(sc, AlgorithmConfig("DCFxLMS", L, alpha=0.02), NoiseSource("white"), 300_000,
                              seed=(0, 0))
        sim = np.mean(res.e[:, -100_000:] ** 2, axis=1)
        pred = an.residual_mse_decentralized(sc, L)
        assert np.all(np.abs(10 * np.log10(sim / pred)) <= 1.0)

    def test_diagonal_decentralized_equals_centralized(self):
        sc = diagonal()
        a = run_closed_loop(sc, AlgorithmConfig("DCFxLMS", 16), NoiseSource("white"), 20_000, seed=(5, 0))
        b = run_closed_loop(sc, AlgorithmConfig("CFxLMS", 16), NoiseSource("white"), 20_000, seed=(5, 0))
        np.testing.assert_array_equal(a.e, b.e)
        np.testing.assert_array_equal(a.W, b.W)

    def test_centralized_not_worse_on_coupled_scenes(self):
        for seed in range(5):
            sc = coupled(seed)
            power = {}
            for name in ("CFxLMS", "DCFxLMS"):
                r = run_closed_loop(sc, AlgorithmConfig(name, 16, alpha=0.02), NoiseSource("white"), 300_000,
                                    seed=(seed, 0))
                assert not r.diverged
                power[name] = np.mean(r.e[:, -100_000:] ** 2, axis=1).sum()
            assert power["CFxLMS"] <= power["DCFxLMS"], seed

    def test_residual_power_non_increasing_for_small_step(self):
        # raw step below 1 / (L * lambda_max); powers averaged over 10 seeds per 1 s window
        sc = diagonal(noise=1e-4)
        L = 32
        lam = max(np.linalg.eigvalsh(an.correlations_white(sc, k, k, L).R_kk).max() for k in range(2))
        mu = 0.5 / (L * lam)
        fs = int(sc.sample_rate_hz)
        windows = np.zeros(6)
        for seed in range(10):
            r = run_closed_loop(sc, AlgorithmConfig("DCFxLMS", L, mu=mu), NoiseSource("white"), 6 * fs,
                                seed=(seed, 0))
            windows += (r.e**2).mean(axis=0).reshape(6, fs).mean(axis=1)
        assert np.all(np.diff(windows[1:]) <= 0)


class TestFilterReference:
    def test_unit_and_delay(self, rng):
        hist = rng.standard_normal(8)
        assert filter_reference(hist, np.array([1.0, 0, 0])) == hist[0]
        assert filter_reference(hist, np.array([0, 0, 1.0])) == hist[2]

    def test_matches_convolution(self, rng):
        x = rng.standard_normal(100)
        s = rng.standard_normal(7)
        n = 60
        assert filter_reference(x[n::-1], s) == pytest.approx(convolve_fir(x, s)[n], abs=1e-12)

    def test_shallow_history(self):
        with pytest.raises(InvalidArgumentError):
            filter_reference(np.ones(2), np.ones(3))

    def test_state_newest_first(self, rng):
        S = rng.standard_normal((2, 2, 3))
        st = FilteredReferenceState(S, 4)
        x = rng.standard_normal(10)
        for v in x:
            bufs = st.push(v)
        assert bufs.shape == (2, 2, 4)
        for j in range(4):
            assert bufs[1, 0, j] == pytest.approx(convolve_fir(x, S[1, 0])[9 - j], abs=1e-12)


class TestInverseBank:
    def test_identity(self):
        S = np.zeros((2, 2, 4))
        S[0, 0, 0] = S[1, 1, 0] = 1.0
        bank = design_inverse_bank(S, 6, 2)
        want = np.zeros((2, 2, 6))
        want[0, 0, 2] = want[1, 1, 2] = 1.0
        np.testing.assert_allclose(bank.F, want, atol=1e-12)
        assert bank.residual <= 1e-20

    def test_geometric_inverse(self):
        bank = design_inverse_bank(np.array([[[1.0, 0.5]]]), 8, 0)
        series = (-0.5) ** np.arange(8)
        # the truncated series is feasible with squared residual 0.5^16; the least-squares
        # optimum redistributes that tail error, so it can only do better and stays close
        assert bank.residual <= 0.5**16
        assert bank.residual >= 0.5 * 0.5**16
        assert np.max(np.abs(bank.F[0, 0] - series)) <= 2.5e-3
        A = np.zeros((9, 8))
        for j in range(8):
            A[j : j + 2, j] = [1.0, 0.5]
        b = np.zeros(9)
        b[0] = 1.0
        f, *_ = np.linalg.lstsq(A, b, rcond=None)
        np.testing.assert_allclose(bank.F[0, 0], f, atol=1e-10)

    def test_nonminimum_phase_prefers_delay(self):
        S = np.array([[[0.5, 1.0]]])
        assert design_inverse_bank(S, 8, 4).residual < design_inverse_bank(S, 8, 0).residual

    def test_mimo_matches_lstsq(self, rng):
        S = rng.standard_normal((2, 2, 5))
        Lf, d = 7, 3
        bank = design_inverse_bank(S, Lf, d)
        for j in range(2):
            out = np.stack([sum(np.convolve(S[k, l], bank.F[l, j]) for l in range(2)) for k in range(2)])
            target = np.zeros_like(out)
            target[j, d] = 1.0
            assert np.sum((out - target) ** 2) <= bank.residual + 1e-12

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            design_inverse_bank(np.ones((1, 1, 2)), 0, 0)
        with pytest.raises(InvalidArgumentError):
            design_inverse_bank(np.ones((1, 1, 2)), 4, 5)


def test_controller_snapshot_roundtrip(tmp_path, rng):
    W = rng.standard_normal((2, 5))
    save_controllers(tmp_path / "w.json", W, {"algorithm": "CFxLMS"})
    back, meta = load_controllers(tmp_path / "w.json")
    np.testing.assert_array_equal(back, W)
    assert meta == {"algorithm": "CFxLMS"}
