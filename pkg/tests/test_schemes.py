import math

import numpy as np
import pytest

from _util import (dft_channel, global_noise_mse_oracle, make_input, wafel_mc_mse, with_noise)
from airfl.channel import (CsiKind, RoundNoise, draw_rayleigh,
                           make_partial_phase_view)
from airfl.numerics import RngStream
from airfl.optim import mp_greedy_selection
from airfl.schemes import (AggregationInput, DegenerateEqualizerError, FullyBlindConfig,
                           GlobalCsitConfig, LocalCsitConfig, PartialPhaseConfig,
                           UnsupportedConfigurationError, WafelConfig, expected_power_check,
                           fully_blind_aggregate, global_csit_aggregate, local_csit_aggregate,
                           min_antennas_bound, normalize_models, partial_phase_blind_aggregate,
                           predicted_mse_global, stacked_channel, truncated_power,
                           truncation_rho, wafel_aggregate, wafel_equalizer, wafel_mse_matrix,
                           wafel_predicted_mse)

# rho = P / E1(theta) at P = 1, from mpmath's e1 (30 digits), frozen
RHO_ORACLE = {0.2: 0.8178951907042989, 1.0: 4.558218917694912, 3.0: 76.63785972994969}
# mean of |h| cos(U), h ~ CN(0, 1), U ~ Unif(-pi/4, pi/4): sqrt(pi)/2 * sin(pi/4)/(pi/4)
OMEGA_PI_4 = 0.7978845608028654


def _models(K, s, seed=0):
    gen = RngStream(seed).generator()
    return gen.normal(0.5, 1.0, (K, s)) * gen.uniform(0.5, 2.0, (K, 1))


class TestNormalization:
    def test_round_trip(self):
        W = _models(4, 32)
        W_bar, st = normalize_models(W)
        np.testing.assert_allclose(W_bar.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(W_bar.std(axis=1), 1, atol=1e-12)
        np.testing.assert_allclose(st.sigma[:, None] * W_bar + st.eta[:, None], W, atol=1e-12)

    def test_flat_device_sends_zeros(self):
        W = np.vstack([np.full(5, 3.0), np.arange(5.0)])
        W_bar, st = normalize_models(W)
        np.testing.assert_array_equal(W_bar[0], 0.0)
        assert st.sigma[0] == 0.0 and st.eta[0] == 3.0


class TestLocalCsit:
    def test_unit_channels_noiseless_exact_mean(self):
        W = _models(5, 16)
        inp = make_input(W, np.ones((5, 1)), CsiKind.LOCAL_CSIT, sigma_z2=0.0)
        out = local_csit_aggregate(inp, 0.5, np.zeros(16))
        np.testing.assert_allclose(out.global_model, W.mean(axis=0), rtol=1e-12)
        assert out.active_set == tuple(range(5))

    def test_all_below_threshold_carries_forward(self):
        prev = np.arange(4.0)
        inp = make_input(_models(3, 4), 0.1 * np.ones((3, 1)), CsiKind.LOCAL_CSIT)
        out = local_csit_aggregate(inp, 1.0, prev)
        np.testing.assert_array_equal(out.global_model, prev)
        assert "empty_active_set" in out.flags
        assert out.active_set == ()

    def test_two_device_hand_computation(self):
        W = _models(2, 6, seed=3)
        inp = make_input(W, np.array([[2.0], [0.1]]), CsiKind.LOCAL_CSIT, noise_rng=RngStream(4))
        out = local_csit_aggregate(inp, 1.0, np.zeros(6))
        rho = RHO_ORACLE[1.0]
        # device 0 inverts its gain: y = sqrt(rho) w_0 + z, device 1 is silent
        expected = W[0] + inp.noise.awgn[0].real / math.sqrt(rho)
        assert out.active_set == (0,)
        np.testing.assert_allclose(out.global_model, expected, rtol=1e-12)
        np.testing.assert_allclose(out.target, W[0])

    @pytest.mark.parametrize("theta", sorted(RHO_ORACLE))
    def test_rho_oracle(self, theta):
        assert truncation_rho(theta, 1.0) == pytest.approx(RHO_ORACLE[theta], rel=1e-10)

    def test_rho_decreases_with_theta(self):
        thetas = [0.05, 0.2, 0.5, 1.0, 2.0]
        rhos = [truncation_rho(t, 1.0) for t in thetas]
        assert all(a < b for a, b in zip(rhos, rhos[1:]))

    @pytest.mark.parametrize("theta,P", [(1.0, 1.0), (0.2, 4.0)])
    def test_expected_power(self, theta, P):
        assert expected_power_check(theta, P, 1_000_000, RngStream(5)) == pytest.approx(P, rel=0.02)

    def test_power_uses_own_channel_only(self):
        # changing another device's channel never changes device 0's power
        h = np.array([1.5 * np.exp(0.3j), 0.2, 2.0])
        rho = truncation_rho(1.0, 1.0)
        base = truncated_power(h[0], 1.0, rho)
        for other in (0.01, 5.0, -3j):
            h2 = h.copy()
            h2[1] = other
            view = make_input(np.zeros((3, 2)), h2[:, None], CsiKind.LOCAL_CSIT).csi
            assert truncated_power(view.device_channel(0)[0], 1.0, rho) == base
        # and the aggregate over devices {0, 2} is unchanged while device 1 stays silent
        W = _models(3, 4)
        outs = []
        for other in (0.2, 0.5):
            h2 = h.copy()
            h2[1] = other
            inp = make_input(W, h2[:, None], CsiKind.LOCAL_CSIT, sigma_z2=0.0)
            outs.append(local_csit_aggregate(inp, 1.0, np.zeros(4)).global_model)
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_multi_antenna_unsupported(self):
        inp = make_input(_models(2, 3), np.ones((2, 2)), CsiKind.LOCAL_CSIT)
        with pytest.raises(UnsupportedConfigurationError):
            local_csit_aggregate(inp, 1.0, np.zeros(3))
        with pytest.raises(UnsupportedConfigurationError):
            LocalCsitConfig(M=2)

    def test_wrong_view_rejected(self):
        inp = make_input(_models(2, 3), np.ones((2, 1)), CsiKind.GLOBAL_CSIT)
        with pytest.raises(UnsupportedConfigurationError):
            local_csit_aggregate(inp, 1.0, np.zeros(3))


class TestGlobalCsit:
    def test_noiseless_exact_mean_over_selection(self):
        ch = draw_rayleigh(RngStream(6), 6, 2)
        W = _models(6, 20)
        sel = mp_greedy_selection(ch, 1.0, 1.0, 4.0)
        inp = make_input(W, ch, CsiKind.GLOBAL_CSIT, sigma_z2=0.0)
        out = global_csit_aggregate(inp, sel, np.zeros(20))
        np.testing.assert_allclose(out.global_model, W[list(sel.active)].mean(axis=0),
                                   rtol=1e-10, atol=1e-12)

    def test_constant_models(self):
        W = np.array([[1.0] * 5, [3.0] * 5])
        inp = make_input(W, np.ones((2, 1)), CsiKind.GLOBAL_CSIT, sigma_z2=1.0)
        out = global_csit_aggregate(inp, ((0, 1), np.array([1.0 + 0j])), np.zeros(5))
        np.testing.assert_array_equal(out.global_model, np.full(5, 2.0))

    def test_power_constraint_met(self):
        ch = draw_rayleigh(RngStream(7), 5, 2)
        W = _models(5, 12)
        sel = mp_greedy_selection(ch, 2.0, 1.0, 10.0)
        S = list(sel.active)
        _, st = normalize_models(W[S])
        g = ch.coefficients[S] @ sel.equalizer.conj()
        amp = st.sigma / st.sigma.mean()
        rho = np.min(2.0 * np.abs(g) ** 2 / amp ** 2)
        p = math.sqrt(rho) * amp / np.abs(g)
        assert np.all(p ** 2 <= 2.0 * (1 + 1e-12))

    def test_predicted_mse_unit_case(self):
        assert predicted_mse_global([1.0], [0], np.array([[1.0]]), 1.0, 1.0) == 1.0

    def test_predicted_mse_halves_with_double_power(self):
        ch = draw_rayleigh(RngStream(8), 3, 2)
        b = np.array([1.0, 0.5j])
        a = predicted_mse_global(b, [0, 2], ch, 1.0, 1.0)
        assert predicted_mse_global(b, [0, 2], ch, 2.0, 1.0) == pytest.approx(a / 2)

    def test_predicted_mse_degenerate(self):
        H = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert predicted_mse_global([1.0, 0.0], [0, 1], H, 1.0, 1.0) == math.inf

    def test_predicted_mse_hand_set_vs_monte_carlo(self):
        H = np.array([[1.0 + 0.5j, 0.3], [0.2j, 0.9 - 0.4j]])
        b = np.array([0.8, 0.6 + 0.2j])
        pred = predicted_mse_global(b, [0, 1], H, 2.0, 0.5)
        mc = global_noise_mse_oracle(b, H, [0, 1], 2.0, 0.5, 100_000, RngStream(9))
        assert mc == pytest.approx(pred, rel=0.05)

    def test_degenerate_equalizer(self):
        inp = make_input(_models(2, 3), np.array([[1.0, 0], [0, 1.0]]), CsiKind.GLOBAL_CSIT)
        with pytest.raises(DegenerateEqualizerError):
            global_csit_aggregate(inp, ((0, 1), np.array([1.0, 0.0])), np.zeros(3))

    def test_empty_selection_carries_forward(self):
        inp = make_input(_models(2, 3), np.ones((2, 1)), CsiKind.GLOBAL_CSIT)
        out = global_csit_aggregate(inp, ((), None), np.ones(3))
        assert "empty_active_set" in out.flags
        np.testing.assert_array_equal(out.global_model, np.ones(3))

    def test_unbiased_over_noise(self):
        ch = draw_rayleigh(RngStream(10), 6, 2)
        W = _models(6, 16, seed=11)
        sel = mp_greedy_selection(ch, 1.0, 1.0, 6.0)
        inp = make_input(W, ch, CsiKind.GLOBAL_CSIT)
        outs = np.array([global_csit_aggregate(with_noise(inp, RngStream(12, (i,))), sel,
                                               None).global_model for i in range(4000)])
        target = W[list(sel.active)].mean(axis=0)
        assert np.linalg.norm(outs.mean(axis=0) - target) / np.linalg.norm(target) < 0.02

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GlobalCsitConfig(theta=0.0)


class TestFullyBlind:
    def test_orthogonal_unit_modulus_channels_exact_mean(self):
        K = 5
        W = _models(K, 8)
        inp = make_input(W, dft_channel(K), CsiKind.CSIR_ONLY, sigma_z2=0.0)
        out = fully_blind_aggregate(inp)
        np.testing.assert_allclose(out.global_model, W.mean(axis=0), rtol=1e-10)

    def test_single_device_law_of_large_numbers(self):
        W = _models(1, 8)
        ch = draw_rayleigh(RngStream(13), 1, 4096)
        out = fully_blind_aggregate(make_input(W, ch, CsiKind.CSIR_ONLY, sigma_z2=0.0))
        gain = np.sum(np.abs(ch.coefficients) ** 2) / 4096
        np.testing.assert_allclose(out.global_model, gain * W[0], rtol=1e-10)
        assert np.linalg.norm(out.global_model - W[0]) / np.linalg.norm(W[0]) < 0.05

    def test_common_vector_recovered_at_large_M(self):
        W = np.tile(np.linspace(-1, 1, 6), (4, 1))
        ch = draw_rayleigh(RngStream(14), 4, 4096)
        out = fully_blind_aggregate(make_input(W, ch, CsiKind.CSIR_ONLY, sigma_z2=1.0, P=10.0))
        assert np.linalg.norm(out.global_model - W[0]) / np.linalg.norm(W[0]) < 0.1

    def test_error_shrinks_with_antennas(self):
        W = _models(4, 8)

        def mean_error(M):
            errs = []
            for i in range(60):
                ch = draw_rayleigh(RngStream(15, (M, i)), 4, M)
                inp = make_input(W, ch, CsiKind.CSIR_ONLY, noise_rng=RngStream(16, (M, i)))
                errs.append(np.linalg.norm(fully_blind_aggregate(inp).global_model - W.mean(axis=0)))
            return np.mean(errs)

        ratio = mean_error(64) / mean_error(256)
        assert 1.5 <= ratio <= 2.5

    def test_antenna_bound_example(self):
        assert min_antennas_bound(1.0, 0.1, 10, 1.0, 1.0, 1.0) == 1280

    def test_antenna_bound_scaling(self):
        raw = lambda eps, K: 8 * K ** 2 / (eps ** 2 * 4) * math.log(6 * K / 0.1)
        assert min_antennas_bound(0.5, 0.1, 10, 1.0, 1.0, 1.0) == math.ceil(raw(0.5, 10))
        assert raw(0.5, 10) == pytest.approx(4 * raw(1.0, 10))
        assert min_antennas_bound(1.0, 0.1, 20, 1.0, 1.0, 1.0) > 4 * min_antennas_bound(1.0, 0.1, 10, 1.0, 1.0, 1.0) - 4

    def test_antenna_bound_arguments(self):
        with pytest.raises(ValueError):
            min_antennas_bound(1.0, 1.5, 10, 1.0, 1.0, 1.0)

    def test_config(self):
        with pytest.raises(ValueError):
            FullyBlindConfig(M=0)


class TestPartialPhase:
    def test_zero_error_unit_channels(self):
        W = _models(4, 10)
        inp = make_input(W, np.ones((4, 1)), CsiKind.PARTIAL_PHASE, sigma_z2=0.0)
        np.testing.assert_allclose(partial_phase_blind_aggregate(inp).global_model,
                                   W.mean(axis=0), rtol=1e-12)

    def test_imposed_weights(self):
        W = _models(2, 5)
        inp = make_input(W, np.array([[0.5], [1.5]]), CsiKind.PARTIAL_PHASE, sigma_z2=0.0)
        out = partial_phase_blind_aggregate(inp)
        np.testing.assert_allclose(out.global_model, (0.5 * W[0] + 1.5 * W[1]) / 2, rtol=1e-12)

    def test_mean_compensated_gain(self):
        ch = draw_rayleigh(RngStream(17), 100_000, 1)
        view = make_partial_phase_view(RngStream(18), ch, math.pi / 4)
        assert np.mean(view.server_effective_channels().real) == pytest.approx(OMEGA_PI_4, rel=0.02)

    def test_interference_replaces_awgn(self):
        W = _models(2, 6)
        h = np.ones((2, 1))
        clean = make_input(W, h, CsiKind.PARTIAL_PHASE, sigma_z2=0.0)
        xi = np.linspace(-1, 1, 6)
        noise = RoundNoise(np.full((1, 6), 100.0 + 0j), xi)
        inp = AggregationInput(W, clean.channel, clean.csi, noise, 4.0, 1.0)
        expected = W.mean(axis=0) + xi / (2.0 * 2)
        np.testing.assert_allclose(partial_phase_blind_aggregate(inp).global_model, expected)

    def test_multi_antenna_unsupported(self):
        with pytest.raises(UnsupportedConfigurationError):
            PartialPhaseConfig(M=4)


class TestWafel:
    def test_two_devices_noiseless_linear_solve(self):
        W = _models(2, 9, seed=19)
        h = np.array([[0.8 + 0.3j], [0.4 - 0.7j]])
        alpha = np.array([0.3, 0.7])
        # a nonzero phase error keeps the stacked columns independent
        inp = make_input(W, h, CsiKind.PARTIAL_PHASE, sigma_z2=0.0, P=2.0, phase_bound=1.0)
        out = wafel_aggregate(inp, alpha)
        # oracle: solve b^T H = (alpha * sigma)^T directly
        H = stacked_channel(inp.csi.server_effective_channels())
        sigma = W.std(axis=1)
        b = np.linalg.solve(H.T, alpha * sigma)
        np.testing.assert_allclose(wafel_equalizer(alpha, sigma, H, 2.0, 0.0), b, rtol=1e-10)
        np.testing.assert_allclose(out.global_model, alpha @ W, rtol=1e-10)

    def test_vertex_weight_returns_that_device(self):
        W = _models(2, 7)
        inp = make_input(W, np.array([[1.0 + 1j], [0.5 - 0.2j]]), CsiKind.PARTIAL_PHASE,
                         sigma_z2=0.0, phase_bound=1.0)
        out = wafel_aggregate(inp, np.array([0.0, 1.0]))
        np.testing.assert_allclose(out.global_model, W[1], rtol=1e-10)
        assert out.active_set == (1,)

    def test_zero_phase_error_cannot_separate_scales(self):
        # compensated channels are then all real, so H has rank one and
        # sum_k alpha_k w_k is not recoverable when the sigma_k differ
        W = _models(2, 7)
        inp = make_input(W, np.array([[1.0 + 1j], [0.5 - 0.2j]]), CsiKind.PARTIAL_PHASE,
                         sigma_z2=0.0)
        H = stacked_channel(inp.csi.server_effective_channels())
        assert np.linalg.matrix_rank(H) == 1
        out = wafel_aggregate(inp, np.array([0.5, 0.5]))
        assert np.linalg.norm(out.global_model - W.mean(axis=0)) > 1e-3

    def test_predicted_mse_vertex(self):
        gen = RngStream(20).generator()
        H = gen.standard_normal((2, 4))
        sigma = gen.uniform(0.5, 2, 4)
        inv = np.linalg.inv(np.eye(4) + (3.0 / 0.25) * H.T @ H)
        e = np.eye(4)[2]
        assert wafel_predicted_mse(e, sigma, H, 3.0, 0.5, 10) == pytest.approx(
            10 * sigma[2] ** 2 * inv[2, 2], rel=1e-10)

    def test_predicted_mse_increases_with_noise(self):
        gen = RngStream(21).generator()
        H = gen.standard_normal((2, 5))
        sigma = gen.uniform(0.5, 2, 5)
        alpha = np.full(5, 0.2)
        vals = [wafel_predicted_mse(alpha, sigma, H, 1.0, z, 8) for z in (0.01, 0.1, 1, 10, 100)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_mse_matrix_psd_symmetric(self):
        gen = RngStream(22).generator()
        Q = wafel_mse_matrix(gen.uniform(0.1, 2, 6), gen.standard_normal((2, 6)), 5.0, 1.0)
        np.testing.assert_array_equal(Q, Q.T)
        assert np.linalg.eigvalsh(Q)[0] > -1e-12

    def test_predicted_mse_vs_monte_carlo(self):
        K, s, P, z2 = 6, 32, 4.0, 1.0
        ch = draw_rayleigh(RngStream(23), K, 1)
        view = make_partial_phase_view(RngStream(24), ch, math.pi / 4)
        gen = RngStream(25).generator()
        sigma = gen.uniform(0.5, 2.0, K)
        eta = gen.normal(0, 1, K)
        alpha = gen.dirichlet(np.ones(K))
        H = stacked_channel(view.server_effective_channels())
        pred = wafel_predicted_mse(alpha, sigma, H, P, z2, s)

        def run(W, noise_rng):
            inp = make_input(W, ch, CsiKind.PARTIAL_PHASE, sigma_z2=z2, P=P, noise_rng=noise_rng)
            inp.csi = view
            out = wafel_aggregate(inp, alpha)
            return out.global_model, out.target

        mc = wafel_mc_mse(alpha, sigma, eta, None, P, z2, s, 5000, RngStream(26), run)
        assert mc == pytest.approx(pred, rel=0.05)

    def test_noise_mean_equals_noiseless_estimate(self):
        # with fixed models the only bias left is the channel-misalignment
        # term, which the noiseless estimate already contains
        K, s = 8, 16
        W = _models(K, s, seed=27)
        ch = draw_rayleigh(RngStream(28), K, 1)
        alpha = np.full(K, 1 / K)
        inp = make_input(W, ch, CsiKind.PARTIAL_PHASE, sigma_z2=1.0, P=10.0,
                         phase_bound=math.pi / 4)
        silent = AggregationInput(W, ch, inp.csi, RoundNoise(np.zeros((1, s), complex)), 10.0,
                                  1.0)
        reference = wafel_aggregate(silent, alpha).global_model
        outs = np.array([wafel_aggregate(with_noise(inp, RngStream(29, (i,))), alpha).global_model
                         for i in range(4000)])
        assert np.linalg.norm(outs.mean(axis=0) - reference) / np.linalg.norm(alpha @ W) < 0.02

    def test_simplex_violation(self):
        inp = make_input(_models(2, 3), np.ones((2, 1)), CsiKind.PARTIAL_PHASE)
        with pytest.raises(ValueError):
            wafel_aggregate(inp, np.array([0.7, 0.7]))
        with pytest.raises(ValueError):
            wafel_aggregate(inp, np.array([1.2, -0.2]))

    def test_config(self):
        with pytest.raises(UnsupportedConfigurationError):
            WafelConfig(M=2)
        with pytest.raises(ValueError):
            WafelConfig(weights="greedy")
        with pytest.raises(ValueError):
            WafelConfig(phase_error_bound=2.0)
