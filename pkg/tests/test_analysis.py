import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decnet_anc import analysis as an
from decnet_anc.errors import InvalidArgumentError, PartitionPremiseError, SingularMatrixError
from decnet_anc.experiments import analysis_scene, canonical_scene, simulate_wiener_residual_db
from decnet_anc.paths import AcousticScene, synth_free_field, synth_reverberant
from decnet_anc.simulate import NoiseSource, make_noise


def scene_1ch(s, p, noise=0.0):
    return AcousticScene([p], [[s]], noise)


def delta(d, n):
    t = np.zeros(n)
    t[d] = 1.0
    return t


def coupled_scene(seed=3, Lp=24, Ls=6, noise=0.0):
    prim = [synth_reverberant(seed * 10 + k, Lp, 3) for k in range(2)]
    sec = [[synth_reverberant(seed * 10 + 4 + 2 * k + l, Ls, 1 if k == l else 2).taps * (1 if k == l else 0.4)
            for l in range(2)] for k in range(2)]
    return AcousticScene(prim, sec, noise)


class TestCorrelationsWhite:
    def test_identity_paths(self):
        sc = AcousticScene([np.ones(3)] * 2, [[delta(0, 2)] * 2] * 2, 0.0)
        np.testing.assert_array_equal(an.correlations_white(sc, 0, 1, 3).R_kl, np.eye(3))

    def test_lag_formula(self):
        sc = AcousticScene([np.ones(3)] * 2, [[delta(0, 2), delta(1, 2)], [delta(1, 2), delta(0, 2)]], 0.0)
        np.testing.assert_array_equal(an.correlations_white(sc, 0, 1, 2).R_kl, [[0, 0], [1, 0]])

    def test_unit_delta_gives_identity_R_kk(self):
        sc = scene_1ch(delta(0, 4), np.arange(1.0, 6.0))
        cs = an.correlations_white(sc, 0, 0, 5)
        np.testing.assert_array_equal(cs.R_kk, np.eye(5))
        np.testing.assert_array_equal(cs.R_pk, np.eye(5))

    def test_r_delta_shifts_primary(self):
        p = np.arange(1.0, 9.0)
        cs = an.correlations_white(scene_1ch(delta(0, 2), p), 0, 0, 4, var=2.0, tau=3)
        np.testing.assert_array_equal(cs.r_delta, 2.0 * p[3:7])

    def test_psd_and_symmetric(self):
        cs = an.correlations_white(coupled_scene(), 0, 1, 12)
        for M in (cs.R_p, cs.R_kk, cs.R_xx):
            np.testing.assert_allclose(M, M.T, atol=1e-14)
            assert np.linalg.eigvalsh(M).min() >= -1e-12

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            an.correlations_white(coupled_scene(), 0, 1, 0)


class TestSampleCorrelations:
    def test_matches_closed_form_at_1e6_samples(self):
        sc = coupled_scene()
        L = 8
        x = make_noise(NoiseSource("white", 1.0, seed=11), 1_000_000)
        est = an.sample_correlations(x, sc, 0, 1, L, tau=2)
        ref = an.correlations_white(sc, 0, 1, L, tau=2)
        for name in ("R_p", "R_pk", "R_kk", "R_kl", "r_k", "R_xx", "r_delta"):
            a, b = getattr(est, name), getattr(ref, name)
            # 1% of the matrix's largest entry; entries that are exactly zero in theory
            # only carry O(1/sqrt(N)) sampling noise
            assert np.max(np.abs(a - b)) <= 0.01 * np.max(np.abs(b)), name

    def test_error_shrinks_with_length(self):
        sc = coupled_scene()
        ref = an.correlations_white(sc, 0, 0, 6).R_kk
        errs = []
        for n in (10_000, 1_000_000):
            x = make_noise(NoiseSource("white", 1.0, seed=5), n)
            errs.append(np.max(np.abs(an.sample_correlations(x, sc, 0, 0, 6).R_kk - ref)))
        assert errs[1] < errs[0]

    def test_zero_trace(self):
        cs = an.sample_correlations(np.zeros(500), coupled_scene(), 0, 1, 4)
        for name in ("R_p", "R_pk", "R_kk", "R_kl", "r_k", "R_xx", "r_delta"):
            assert not np.any(getattr(cs, name))

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            an.sample_correlations(np.ones(4), coupled_scene(), 0, 1, 4)


class TestWiener:
    def test_identity(self):
        np.testing.assert_allclose(an.wiener_decentralized(np.eye(2), [1.0, 0.0]), [-1.0, 0.0], atol=1e-9)

    def test_delayed_impulse(self):
        p = synth_reverberant(1, 20, 4).taps
        d = 3
        cs = an.correlations_white(scene_1ch(delta(d, 5), p), 0, 0, 12)
        w = an.wiener_decentralized(cs.R_kk, cs.r_k)
        np.testing.assert_allclose(w, -p[d : d + 12], atol=1e-9)

    def test_random_spd_residual(self, rng):
        A = rng.standard_normal((20, 20))
        R = A @ A.T + 0.5 * np.eye(20)
        r = rng.standard_normal(20)
        w = an.wiener_decentralized(R, r)
        assert np.linalg.norm(R @ w + r) <= 1e-8 * np.linalg.norm(r)

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            an.wiener_decentralized(np.zeros((3, 3)), np.ones(3))
        with pytest.raises(SingularMatrixError):
            an.regularized_solve(np.diag([1.0, -1.0]), np.ones(2))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            an.regularized_solve(np.eye(3), np.ones(2))

    def test_delayed_wiener_is_shifted_primary(self):
        p = synth_reverberant(2, 30, 6).taps
        cs = an.correlations_white(scene_1ch(delta(0, 3), p), 0, 0, 40, tau=4)
        np.testing.assert_allclose(an.wiener_delayed(cs.R_xx, cs.r_delta), -np.concatenate([p[4:], np.zeros(14)]),
                                   atol=1e-9)


class TestModelingError:
    def test_unit_impulse_full_length(self):
        p = synth_reverberant(4, 32, 2)
        assert abs(an.modeling_error(scene_1ch(delta(0, 8), p), 0, 32)) <= 1e-10

    @pytest.mark.parametrize("d", [1, 3, 7])
    def test_delayed_impulse_sufficient_length(self, d):
        # causality: the primary must not arrive before the control path's delay
        p = synth_reverberant(d, 32, d)
        assert an.modeling_error(scene_1ch(delta(d, 8), p), 0, 40) <= 1e-10

    def test_matches_closed_loop_simulation(self):
        sc = analysis_scene()
        L = 64
        theory = an.to_db(an.modeling_error(sc, 0, L) / an.disturbance_power(sc, 0))
        sim = simulate_wiener_residual_db(sc, L, n_samples=1_000_000)[0]
        assert abs(sim - theory) <= 1.0

    def test_nonnegative_and_scaling(self):
        sc = coupled_scene()
        for L in (4, 10, 30):
            e1 = an.modeling_error(sc, 0, L, 1.0)
            e3 = an.modeling_error(sc, 0, L, 3.0)
            assert e1 >= -1e-9
            assert e3 == pytest.approx(3.0 * e1, rel=1e-10, abs=1e-12)
            c1 = an.correlations_white(sc, 0, 0, L, 1.0)
            c3 = an.correlations_white(sc, 0, 0, L, 3.0)
            np.testing.assert_allclose(an.wiener_decentralized(c1.R_kk, c1.r_k),
                                       an.wiener_decentralized(c3.R_kk, c3.r_k), atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), L=st.integers(1, 40))
    def test_property_nonnegative_and_optimal(self, seed, L):
        r = np.random.default_rng(seed)
        sc = scene_1ch(r.standard_normal(6), r.standard_normal(20))
        assert an.modeling_error(sc, 0, L) >= -1e-9
        cs = an.correlations_white(sc, 0, 0, L)
        w = an.wiener_decentralized(cs.R_kk, cs.r_k)
        grad = cs.R_kk @ w + cs.r_k
        # diagonal loading of 1e-10 tr(R)/L perturbs the optimum at that scale
        assert np.linalg.norm(grad) <= 1e-8 * max(np.linalg.norm(cs.r_k), 1e-300) + 1e-9 * np.trace(cs.R_kk)


class TestPartitioned:
    def test_aligned_delay(self):
        # B = R_kk when the impulse delay equals the split L_p - L
        p = np.concatenate([np.zeros(10), synth_reverberant(1, 22, 0).taps])
        sc = scene_1ch(delta(10, 12), p)
        assert abs(an.modeling_error_partitioned(sc, 0, 22)) <= 1e-10

    def test_delayed_impulse(self):
        p = np.concatenate([np.zeros(10), synth_reverberant(1, 22, 0).taps])
        sc = scene_1ch(delta(3, 4), p)
        assert abs(an.modeling_error_partitioned(sc, 0, 40)) <= 1e-10

    def test_zero_primary(self):
        sc = scene_1ch(synth_reverberant(2, 6, 1), np.zeros(12))
        assert an.modeling_error_partitioned(sc, 0, 6) == 0.0

    def test_premise_violation_reports_norm(self):
        sc = scene_1ch(synth_reverberant(2, 6, 1), synth_reverberant(3, 16, 0))
        with pytest.raises(PartitionPremiseError) as info:
            an.modeling_error_partitioned(sc, 0, 8)
        assert info.value.norm > 0
        assert "partition premise violated" in str(info.value)

    def test_concatenation_reproduces_primary(self):
        p = synth_reverberant(3, 16, 0).taps
        sc = scene_1ch(synth_reverberant(2, 6, 1), p)
        part = an.partition_primary(sc, 0, 10)
        np.testing.assert_array_equal(np.concatenate([part.p_0k, part.p_1k]), p)
        padded = an.partition_primary(sc, 0, 20)
        np.testing.assert_array_equal(padded.p_1k[:16], p)
        assert not np.any(padded.p_1k[16:])

    def test_reverberant_difference_is_reported(self):
        # both forms computed; for reverberant s_kk they need not agree
        p = np.concatenate([np.zeros(12), synth_reverberant(5, 20, 0).taps])
        sc = scene_1ch(synth_reverberant(6, 8, 0), p)
        row = an.epsilon_sweep(sc, 0, [20])[0]
        assert row["eps_partitioned"] is not None
        assert row["general_minus_partitioned"] == pytest.approx(row["eps"] - row["eps_partitioned"])
        assert np.isfinite(row["general_minus_partitioned"])


class TestCrosstalk:
    def test_zero_cases(self, rng):
        assert an.crosstalk_term(rng.standard_normal(3), np.zeros(3), rng.standard_normal((3, 3))) == 0.0
        assert an.crosstalk_term(rng.standard_normal(3), rng.standard_normal(3), np.zeros((3, 3))) == 0.0

    def test_hand(self):
        assert an.crosstalk_term([1.0], [1.0], [[0.3]]) == pytest.approx(0.6)

    def test_shape(self):
        with pytest.raises(InvalidArgumentError):
            an.crosstalk_term([1.0, 2.0], [1.0], [[0.3]])


class TestResidualMse:
    def test_single_channel(self):
        sc = scene_1ch(synth_reverberant(1, 6, 1), synth_reverberant(2, 20, 2), noise=0.02)
        assert an.residual_mse_decentralized(sc, 12)[0] == pytest.approx(an.modeling_error(sc, 0, 12) + 0.02)

    def test_diagonal_secondary(self):
        prim = [synth_reverberant(k, 20, 2) for k in range(2)]
        sec = [[synth_reverberant(5 + k, 6, 1).taps if k == l else np.zeros(6) for l in range(2)] for k in range(2)]
        sc = AcousticScene(prim, sec, [0.01, 0.03])
        got = an.residual_mse_decentralized(sc, 10)
        want = [an.modeling_error(sc, k, 10) + sc.noise_variance[k] for k in range(2)]
        np.testing.assert_array_equal(got, want)

    @pytest.mark.xfail(strict=True, reason="the per-channel crosstalk-penalty form omits the other channels' "
                                           "leakage power and disturbance cross terms; it can go negative on "
                                           "coupled scenes (see the decisions ledger)")
    def test_coupled_matches_wiener_loop(self):
        sc = coupled_scene(noise=1e-3)
        L = 16
        pred = an.residual_mse_decentralized(sc, L)
        W = np.stack([an.wiener_decentralized(c.R_kk, c.r_k)
                      for c in (an.correlations_white(sc, k, k, L) for k in range(2))])
        exact = an.exact_residual_power(sc, W)
        assert np.all(np.abs(10 * np.log10(np.maximum(pred, 1e-300) / exact)) <= 1.0)

    def test_exact_power_of_held_controllers_matches_simulation(self):
        sc = coupled_scene(noise=1e-3)
        L = 16
        W = np.stack([an.wiener_decentralized(c.R_kk, c.r_k)
                      for c in (an.correlations_white(sc, k, k, L) for k in range(2))])
        exact = an.exact_residual_power(sc, W)
        from decnet_anc.simulate import AlgorithmConfig, run_closed_loop
        res = run_closed_loop(sc, AlgorithmConfig("FixedWiener", L=L, adapt=False), NoiseSource("white"),
                              400_000, seed=(1, 0), fixed_W=W)
        sim = np.mean(res.e[:, 100:] ** 2, axis=1)
        np.testing.assert_allclose(sim, exact, rtol=0.02)


class TestSweep:
    def test_free_field_large_L(self):
        sc = analysis_scene(free_field=True)
        rows = an.epsilon_sweep(sc, 0, [128, 192, 256])
        assert all(r["eps_db"] <= -60 for r in rows)

    def test_reverberant_plateau(self):
        rows = an.epsilon_sweep(analysis_scene(), 0, [64, 256])
        assert rows[1]["eps_db"] >= rows[0]["eps_db"] - 3.0

    def test_single_entry(self):
        sc = analysis_scene()
        row = an.epsilon_sweep(sc, 0, [40])[0]
        assert row["eps"] == an.modeling_error(sc, 0, 40)

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            an.epsilon_sweep(analysis_scene(), 0, [])

    def test_csv_columns(self, tmp_path):
        rows = an.epsilon_sweep(analysis_scene(), 0, [32, 64])
        an.write_sweep_csv(rows, tmp_path / "e.csv", [-12.0, -14.0])
        with open(tmp_path / "e.csv") as fh:
            table = list(csv.reader(fh))
        assert table[0] == ["L", "epsilon_db_theory", "epsilon_db_theory_partitioned", "epsilon_db_simulated"]
        assert [r[0] for r in table[1:]] == ["32", "64"]


class TestCentralized:
    def test_sampled_matches_closed_form_for_white(self):
        sc = coupled_scene()
        L = 10
        x = make_noise(NoiseSource("white", 1.0, seed=3), 400_000)
        Wc = an.centralized_wiener(sc, L)
        Ws = an.centralized_wiener_sampled(x, sc, L)
        assert np.linalg.norm(Ws - Wc) <= 0.02 * np.linalg.norm(Wc)

    def test_centralized_not_worse_than_decentralized_fixed_point(self):
        sc = canonical_scene()
        for L in (40, 160):
            pc = an.exact_residual_power(sc, an.centralized_wiener(sc, L)).sum()
            pd = an.exact_residual_power(sc, an.decentralized_fixed_point(sc, L)).sum()
            assert pc <= pd * (1 + 1e-6)
