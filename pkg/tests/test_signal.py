"""Baseband physics: synthesis, detection, estimation, range processing."""
import numpy as np
import pytest

import hopsim.signal as sig


def table1_params(pri_s=20e-6, chirps=512):
    return sig.ChirpParams(f_c=77e9, subband_hz=150e6, n_subbands=6,
                           pri_s=pri_s, active_s=0.8 * pri_s, adc_hz=20e6,
                           chirps_per_frame=chirps)


def quadratic_phase_fit(samples, adc_hz):
    """Least-squares fit of unwrapped phase to a + b t + c t^2; returns c."""
    t = np.arange(samples.size) / adc_hz
    phase = np.unwrap(np.angle(samples))
    coeffs = np.polyfit(t, phase, 2)
    return coeffs[0]


class TestChirpParams:
    def test_table1_derived_quantities(self):
        p = table1_params()
        assert p.slope == pytest.approx(150e6 / 16e-6)
        assert p.n_samples == 320
        assert p.total_bandwidth == pytest.approx(900e6)
        assert p.coarse_bin_m == pytest.approx(1.0)
        assert p.fine_bin_m == pytest.approx(1.0 / 6.0)
        assert p.range_bin_m == pytest.approx(1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            table1_params(pri_s=-1.0)
        with pytest.raises(ValueError):
            sig.ChirpParams(f_c=77e9, subband_hz=150e6, n_subbands=6,
                            pri_s=20e-6, active_s=25e-6, adc_hz=20e6,
                            chirps_per_frame=512)

    def test_hop_offsets(self):
        p = table1_params()
        np.testing.assert_allclose(p.hop_offsets_hz(np.arange(6)),
                                   np.arange(6) * 150e6)
        assert p.subband_start_hz(0) == 77e9


class TestTxChirpPhase:
    def test_zero_at_t0(self):
        assert sig.tx_chirp_phase(table1_params(), 77e9, 0.0) == 0.0

    def test_plugin_value(self):
        p = table1_params()
        t = 1e-6
        expect = 2 * np.pi * (77e9 * t + 0.5 * p.slope * t * t)
        assert sig.tx_chirp_phase(p, 77e9, t) == pytest.approx(expect)

    def test_monotone_in_t(self):
        p = table1_params()
        t = np.linspace(0, p.active_s * 0.99, 200)
        phase = sig.tx_chirp_phase(p, 77e9, t)
        assert np.all(np.diff(phase) > 0)

    def test_t_out_of_range(self):
        p = table1_params()
        with pytest.raises(ValueError):
            sig.tx_chirp_phase(p, 77e9, p.active_s)


class TestCoarseDecompose:
    def test_split(self):
        p = table1_params()
        rbar, eps = sig.coarse_decompose(p, 20.3)
        assert rbar == pytest.approx(20.0)
        assert eps == pytest.approx(0.3)
        assert abs(eps) <= sig.C / (4 * p.subband_hz) + 1e-12


class TestDechirpedEcho:
    def test_static_target_no_hop_constant_tone(self):
        p = table1_params()
        tgt = sig.Target(range_m=20.0, velocity_mps=0.0, snr_db=20.0)
        c0 = sig.dechirped_echo(p, tgt, 0, 0.0)
        c5 = sig.dechirped_echo(p, tgt, 5, 0.0)
        np.testing.assert_allclose(c0, c5, atol=1e-12)
        # single tone at beat frequency -f_r: constant modulus
        np.testing.assert_allclose(np.abs(c0), np.abs(c0[0]), rtol=1e-12)

    def test_doppler_frequency_table1(self):
        p = table1_params()
        f_d = -2.0 * (-15.0) * p.pri_s * p.f_c / sig.C
        assert f_d == pytest.approx(0.154)

    def test_range_frequency_table1(self):
        p = table1_params()
        f_r = 2.0 * 20.0 * p.slope / sig.C
        assert f_r == pytest.approx(1.25e6)
        tgt = sig.Target(range_m=20.0, velocity_mps=0.0, snr_db=20.0)
        samples = sig.dechirped_echo(p, tgt, 0, 0.0)
        # the measured tone frequency equals -f_r
        dphase = np.angle(samples[1:] * np.conj(samples[:-1]))
        measured = np.mean(dphase) * p.adc_hz / (2 * np.pi)
        assert measured == pytest.approx(-f_r, rel=1e-9)

    def test_amplitude_from_snr(self):
        p = table1_params()
        tgt = sig.Target(range_m=20.0, velocity_mps=0.0, snr_db=20.0)
        samples = sig.dechirped_echo(p, tgt, 0, 0.0, noise_power=2.0)
        assert np.mean(np.abs(samples) ** 2) == pytest.approx(200.0)

    def test_beyond_unambiguous_range(self):
        p = table1_params()
        tgt = sig.Target(range_m=3000.0, velocity_mps=0.0, snr_db=20.0)
        with pytest.raises(ValueError):
            sig.dechirped_echo(p, tgt, 0, 0.0)

    def test_echo_frame_matches_per_chirp(self):
        p = table1_params(chirps=8)
        tgt = sig.Target(range_m=20.0, velocity_mps=-15.0, snr_db=20.0)
        hops = np.array([0.0, 150e6, 300e6, 0.0, 750e6, 150e6, 0.0, 600e6])
        frame = sig.echo_frame(p, tgt, hops, phase0=0.3)
        for k in range(8):
            single = sig.dechirped_echo(p, tgt, k, hops[k], phase0=0.3)
            np.testing.assert_allclose(frame[:, k], single, atol=1e-9)


class TestDechirpedInterference:
    def test_no_collision_zero(self):
        p = table1_params()
        link = sig.InterferenceLink(source=1, inr_db=30.0)
        out = sig.dechirped_interference(p, link, p, 0, False,
                                         np.random.default_rng(0))
        assert np.all(out == 0)

    def test_equal_slopes_constant_modulus_tone(self):
        p = table1_params()
        link = sig.InterferenceLink(source=1, inr_db=30.0)
        out = sig.dechirped_interference(p, link, p, 0, True,
                                         np.random.default_rng(0))
        np.testing.assert_allclose(np.abs(out), np.abs(out[0]), rtol=1e-12)
        # zero residual slope: phase is constant
        np.testing.assert_allclose(np.angle(out * np.conj(out[0])), 0.0,
                                   atol=1e-9)

    def test_residual_slope_quadratic_phase_fit(self):
        victim = table1_params(pri_s=20e-6, chirps=512)
        source = table1_params(pri_s=40e-6, chirps=256)
        link = sig.InterferenceLink(source=1, inr_db=30.0)
        out = sig.dechirped_interference(victim, link, source, 0, True,
                                         np.random.default_rng(1))
        # fit only samples whose instantaneous frequency is within Nyquist
        # (the residual sweep aliases later in the chirp)
        n_fit = int(0.5 * victim.adc_hz**2 / (victim.slope - source.slope))
        c2 = quadratic_phase_fit(out[:n_fit], victim.adc_hz)
        expect = np.pi * (victim.slope - source.slope)
        assert c2 == pytest.approx(expect, rel=1e-6)

    def test_inr_power_scaling(self):
        p = table1_params()
        link = sig.InterferenceLink(source=1, inr_db=30.0)
        out = sig.dechirped_interference(p, link, p, 0, True,
                                         np.random.default_rng(2),
                                         noise_power=1.0)
        assert np.mean(np.abs(out) ** 2) == pytest.approx(1000.0)


class TestComposeReceived:
    def test_empty_zero_noise(self):
        out = sig.compose_received([], [], 0.0, np.random.default_rng(0))
        assert out.size == 0

    def test_single_echo_no_noise_passthrough(self):
        echo = np.exp(1j * np.linspace(0, 6, 64))
        out = sig.compose_received([echo], [], 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(out, echo)

    def test_noise_power_concentration(self):
        rng = np.random.default_rng(3)
        out = sig.compose_received([np.zeros(4096, dtype=complex)], [], 2.0, rng)
        assert np.mean(np.abs(out) ** 2) == pytest.approx(2.0, rel=0.05)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sig.compose_received([np.zeros(4)], [np.zeros(5)], 1.0,
                                 np.random.default_rng(0))

    def test_power_additivity(self):
        rng = np.random.default_rng(4)
        n = 8192
        echo = np.sqrt(3.0) * np.exp(2j * np.pi * 0.17 * np.arange(n))
        intf = np.sqrt(5.0) * np.exp(2j * np.pi * 0.31 * np.arange(n)
                                     + 1j * 0.7)
        out = sig.compose_received([echo], [intf], 2.0, rng)
        assert np.mean(np.abs(out) ** 2) == pytest.approx(10.0, rel=0.05)


class TestTheoreticalSinr:
    def test_reduces_to_snr(self):
        assert sig.theoretical_sinr(100.0, 0.0, 1.0) == pytest.approx(100.0)

    def test_zero_db_case(self):
        assert sig.theoretical_sinr(100.0, 90.0, 10.0) == pytest.approx(1.0)

    def test_monotone_in_interference(self):
        vals = [sig.theoretical_sinr(100.0, i, 1.0) for i in (0.0, 10.0, 100.0)]
        assert vals[0] > vals[1] > vals[2]

    def test_nonpositive_noise_rejected(self):
        with pytest.raises(ValueError):
            sig.theoretical_sinr(1.0, 1.0, 0.0)


class TestDetectInterference:
    def test_pure_noise_rarely_flags(self):
        rng = np.random.default_rng(5)
        flags = 0
        for _ in range(1000):
            x = (rng.standard_normal(320) + 1j * rng.standard_normal(320)) \
                * np.sqrt(0.5)
            flag, _, _ = sig.detect_interference(x, 1.0)
            flags += flag
        assert flags <= 10

    def test_interference_at_inr30_detected(self):
        p = table1_params()
        source = table1_params(pri_s=40e-6, chirps=256)
        tgt = sig.Target(range_m=20.0, velocity_mps=-15.0, snr_db=20.0)
        link = sig.InterferenceLink(source=1, inr_db=30.0)
        rng = np.random.default_rng(6)
        detected = 0
        trials = 200
        for k in range(trials):
            echo = sig.dechirped_echo(p, tgt, 0, 0.0)
            intf = sig.dechirped_interference(p, link, source, 0, True, rng)
            x = sig.compose_received([echo], [intf], 1.0, rng)
            flag, _, _ = sig.detect_interference(x, 1.0)
            detected += flag
        assert detected >= 0.99 * trials

    def test_split_is_a_partition(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        _, clean, est = sig.detect_interference(x, 0.01)
        np.testing.assert_allclose(clean + est, x)

    def test_factor_validation(self):
        with pytest.raises(ValueError):
            sig.detect_interference(np.zeros(8, dtype=complex), 1.0, factor=1.0)


class TestEstimateEpisodeSinr:
    def test_single_clean_chirp(self):
        meas = sig.ChirpMeasurements(
            subbands=np.array([2]), clean_power=np.array([100.0]),
            interference_power=np.array([0.0]), flagged=np.array([False]),
            noise_power=1.0)
        stats = sig.estimate_episode_sinr(meas, 6)
        assert stats.sinr_db[2] == pytest.approx(20.0)
        assert stats.snr_db[2] == pytest.approx(20.0)
        assert stats.count[2] == 1

    def test_linear_mean_of_two_chirps(self):
        meas = sig.ChirpMeasurements(
            subbands=np.array([0, 0]), clean_power=np.array([10.0, 20.0]),
            interference_power=np.array([0.0, 0.0]),
            flagged=np.array([True, True]), noise_power=1.0)
        stats = sig.estimate_episode_sinr(meas, 2)
        assert stats.sinr_db[0] == pytest.approx(10.0 * np.log10(15.0))

    def test_db_mean_option(self):
        meas = sig.ChirpMeasurements(
            subbands=np.array([0, 0]), clean_power=np.array([10.0, 1000.0]),
            interference_power=np.array([0.0, 0.0]),
            flagged=np.array([False, False]), noise_power=1.0)
        stats = sig.estimate_episode_sinr(meas, 1, db_average=True)
        assert stats.sinr_db[0] == pytest.approx(20.0)  # mean of 10 and 30 dB

    def test_unplayed_subband_is_nan(self):
        meas = sig.ChirpMeasurements(
            subbands=np.array([0]), clean_power=np.array([5.0]),
            interference_power=np.array([0.0]), flagged=np.array([False]),
            noise_power=1.0)
        stats = sig.estimate_episode_sinr(meas, 3)
        assert np.isnan(stats.sinr_db[1]) and np.isnan(stats.sinr_db[2])
        assert stats.count[1] == 0

    def test_flag_split_feeds_snr_and_hit_estimates(self):
        meas = sig.ChirpMeasurements(
            subbands=np.array([0, 0]), clean_power=np.array([100.0, 100.0]),
            interference_power=np.array([0.0, 900.0]),
            flagged=np.array([False, True]), noise_power=1.0)
        stats = sig.estimate_episode_sinr(meas, 1)
        assert stats.snr_db[0] == pytest.approx(20.0)
        assert stats.hit_sinr_db[0] == pytest.approx(10.0 * np.log10(100 / 901))
        assert stats.clean_count[0] == 1 and stats.hit_count[0] == 1

    def test_estimator_consistency_with_theory(self):
        # >=100 chirps per subband, fixed conditions: estimate within 1 dB
        p = table1_params()
        tgt = sig.Target(range_m=20.0, velocity_mps=0.0, snr_db=20.0)
        rng = np.random.default_rng(8)
        n_chirps = 120
        clean_p = np.empty(n_chirps)
        intf_p = np.zeros(n_chirps)
        for k in range(n_chirps):
            echo = sig.dechirped_echo(p, tgt, 0, 0.0)
            x = sig.compose_received([echo], [], 1.0, rng)
            clean_p[k] = np.mean(np.abs(x) ** 2)
        meas = sig.ChirpMeasurements(
            subbands=np.zeros(n_chirps, dtype=int), clean_power=clean_p,
            interference_power=intf_p, flagged=np.zeros(n_chirps, dtype=bool),
            noise_power=1.0)
        stats = sig.estimate_episode_sinr(meas, 1)
        theory = 10.0 * np.log10(sig.theoretical_sinr(100.0, 0.0, 1.0) + 1.0)
        assert abs(stats.sinr_db[0] - theory) <= 1.0


class TestRangeFft:
    def test_tone_peak_bin(self):
        p = table1_params()
        tgt = sig.Target(range_m=20.0, velocity_mps=0.0, snr_db=20.0)
        samples = sig.dechirped_echo(p, tgt, 0, 0.0)[:, None]
        spec = sig.range_fft(samples)
        f_r = 2.0 * 20.0 * p.slope / sig.C
        assert int(np.argmax(np.abs(spec[:, 0]))) == round(f_r * p.n_samples / p.adc_hz)

    def test_table1_target_bin_20(self):
        p = table1_params()
        tgt = sig.Target(range_m=20.0, velocity_mps=0.0, snr_db=20.0)
        spec = sig.range_fft(sig.dechirped_echo(p, tgt, 0, 0.0)[:, None])
        assert int(np.argmax(np.abs(spec[:, 0]))) == 20

    def test_zero_input(self):
        assert np.all(sig.range_fft(np.zeros((16, 3), dtype=complex)) == 0)

    def test_parseval(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((64, 5)) + 1j * rng.standard_normal((64, 5))
        spec = sig.range_fft(x)
        assert np.sum(np.abs(spec) ** 2) == pytest.approx(
            np.sum(np.abs(x) ** 2), rel=1e-9)

    def test_unknown_window(self):
        with pytest.raises(ValueError):
            sig.range_fft(np.zeros((8, 1), dtype=complex), window="flattop")


def synth_frame(p, tgt, hops, seed=0, noise_power=1.0):
    rng = np.random.default_rng(seed)
    echo = sig.echo_frame(p, tgt, hops)
    nz = np.sqrt(noise_power / 2) * (
        rng.standard_normal(echo.shape) + 1j * rng.standard_normal(echo.shape))
    return sig.ChirpFrame(samples=echo + nz, hops_hz=np.asarray(hops, float))


class TestFineRangeDoppler:
    def test_no_hop_flat_in_eps(self):
        p = table1_params(chirps=64)
        tgt = sig.Target(range_m=20.0, velocity_mps=-15.0, snr_db=20.0)
        hops = np.zeros(64)
        frame = synth_frame(p, tgt, hops, noise_power=0.0)
        rfft = sig.range_fft(frame)
        eps = sig.default_eps_grid(p)
        surf = sig.fine_range_doppler(rfft, hops, 20, np.array([-15.0]), eps, p)
        assert np.ptp(surf[0]) < 1e-6

    def test_grid_bounds_enforced(self):
        p = table1_params(chirps=8)
        with pytest.raises(ValueError):
            sig.fine_range_doppler(np.zeros((320, 8), dtype=complex),
                                   np.zeros(8), 20, np.array([0.0]),
                                   np.array([1.0]), p)

    def test_true_parameters_achieve_argmax(self):
        p = table1_params(chirps=128)
        rng = np.random.default_rng(10)
        hits = 0
        trials = 40
        v_true, eps_true = -15.0, 1.0 / 12.0
        for trial in range(trials):
            tgt = sig.Target(range_m=20.0 + eps_true, velocity_mps=v_true,
                             snr_db=10.0)
            hops = rng.integers(0, 6, size=128) * p.subband_hz
            frame = synth_frame(p, tgt, hops, seed=trial)
            rfft = sig.range_fft(frame)
            v_grid = np.linspace(-20, -10, 21)
            eps_grid = sig.default_eps_grid(p)
            surf = sig.fine_range_doppler(rfft, hops, 20, v_grid, eps_grid, p)
            vi, ei = np.unravel_index(np.argmax(surf), surf.shape)
            if abs(v_grid[vi] - v_true) <= 0.5 and abs(eps_grid[ei] - eps_true) <= p.fine_bin_m / 2:
                hits += 1
        assert hits >= 0.95 * trials

    def test_single_subband_eps_flat(self):
        p = table1_params(chirps=64)
        tgt = sig.Target(range_m=20.0, velocity_mps=-15.0, snr_db=20.0)
        hops = np.full(64, 2 * p.subband_hz)
        frame = synth_frame(p, tgt, hops, noise_power=0.0)
        rfft = sig.range_fft(frame)
        surf = sig.fine_range_doppler(rfft, hops, 20, np.array([-15.0]),
                                      sig.default_eps_grid(p), p)
        assert np.ptp(surf[0]) < 1e-6


class TestRangeProfile:
    def _profile(self, hops_choice, seed=0, r=20.0, v=-15.0, snr=20.0,
                 chirps=256):
        p = table1_params(chirps=chirps)
        rng = np.random.default_rng(seed)
        hops = rng.choice(hops_choice, size=chirps) * p.subband_hz
        tgt = sig.Target(range_m=r, velocity_mps=v, snr_db=snr)
        frame = synth_frame(p, tgt, hops, seed=seed + 1)
        rfft = sig.range_fft(frame)
        surf = sig.sweep_coarse_bins(rfft, hops, np.arange(160),
                                     np.array([v]), sig.default_eps_grid(p), p)
        return sig.range_profile_at_velocity(surf, v), p

    def test_table1_peak_at_truth(self):
        profile, p = self._profile(np.arange(6))
        assert abs(profile.peak_range_m - 20.0) <= p.fine_bin_m

    def test_off_grid_velocity_rejected(self):
        profile, p = self._profile(np.arange(6))
        surf = sig.RangeVelocitySurface(
            coarse_bins=np.array([20]), v_grid=np.array([-15.0]),
            eps_grid=np.array([0.0]), mags_db=np.zeros((1, 1, 1)),
            range_bin_m=1.0)
        with pytest.raises(ValueError):
            sig.range_profile_at_velocity(surf, -14.0)

    def test_resolution_law_subband_count(self):
        # -3 dB width shrinks with the hopped bandwidth: 1, then contiguous
        # 3-subband, then all 6 subbands.
        widths = {}
        for label, choice in (("one", [0]), ("three", [0, 1, 2]),
                              ("six", list(range(6)))):
            acc = []
            for seed in range(5):
                profile, p = self._profile(np.array(choice), seed=seed,
                                           snr=30.0)
                acc.append(sig.mainlobe_width(profile))
            widths[label] = float(np.median(acc))
        assert widths["six"] < widths["three"] < widths["one"]
        assert widths["three"] / widths["one"] == pytest.approx(1 / 3, rel=0.25)
        assert widths["six"] / widths["one"] == pytest.approx(1 / 6, rel=0.25)

    def test_two_targets_one_fine_bin_apart(self):
        p = table1_params(chirps=512)
        rng = np.random.default_rng(11)
        hops = rng.integers(0, 6, size=512) * p.subband_hz
        t1 = sig.Target(range_m=20.0, velocity_mps=-15.0, snr_db=25.0)
        t2 = sig.Target(range_m=20.0 + p.fine_bin_m * 2, velocity_mps=-15.0,
                        snr_db=25.0)
        echo = sig.echo_frame(p, t1, hops) + sig.echo_frame(p, t2, hops)
        nz = np.sqrt(0.5) * (rng.standard_normal(echo.shape)
                             + 1j * rng.standard_normal(echo.shape))
        frame = sig.ChirpFrame(samples=echo + nz, hops_hz=hops)
        rfft = sig.range_fft(frame)
        eps = sig.default_eps_grid(p, points_per_bin=24)
        surf = sig.sweep_coarse_bins(rfft, hops, np.arange(18, 24),
                                     np.array([-15.0]), eps, p)
        profile = sig.range_profile_at_velocity(surf, -15.0)
        # both targets appear as local maxima near their true ranges
        for r_true in (20.0, 20.0 + p.fine_bin_m * 2):
            near = np.abs(profile.ranges_m - r_true) <= p.fine_bin_m / 2
            far = np.abs(profile.ranges_m - r_true) > p.fine_bin_m / 2
            band = (profile.ranges_m > 19.0) & (profile.ranges_m < 21.5)
            assert profile.mags_db[near].max() >= profile.mags_db[far & band].max() - 3.0


class TestFrameDump:
    def test_round_trip(self, tmp_path):
        p = table1_params(chirps=16)
        rng = np.random.default_rng(12)
        samples = (rng.standard_normal((p.n_samples, 16))
                   + 1j * rng.standard_normal((p.n_samples, 16))).astype(np.complex64)
        hops = rng.integers(0, 6, size=16) * p.subband_hz
        frame = sig.ChirpFrame(samples=samples.astype(complex), hops_hz=hops)
        path = tmp_path / "frame.bin"
        sig.write_frame(path, frame, p.adc_hz)
        loaded, f_s = sig.read_frame(path)
        assert f_s == p.adc_hz
        np.testing.assert_allclose(loaded.samples, frame.samples, atol=1e-6)
        np.testing.assert_array_equal(loaded.hops_hz, hops)

    def test_header_magic_checked(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(ValueError):
            sig.read_frame(path)

    def test_header_is_32_bytes(self, tmp_path):
        p = table1_params(chirps=2)
        frame = sig.ChirpFrame(samples=np.zeros((p.n_samples, 2), dtype=complex),
                               hops_hz=np.zeros(2))
        path = tmp_path / "frame.bin"
        sig.write_frame(path, frame, p.adc_hz)
        raw = path.read_bytes()
        assert raw[:4] == b"HOPF"
        assert len(raw) == 32 + p.n_samples * 2 * 8


class TestMainlobeWidth:
    def test_triangular_peak_interpolated(self):
        r = np.arange(11, dtype=float)
        m = -np.abs(r - 5.0) * 2.0  # 2 dB per meter slope
        profile = sig.FineRangeProfile(ranges_m=r, mags_db=m, coarse_bin=5,
                                       velocity_mps=0.0)
        assert sig.mainlobe_width(profile) == pytest.approx(3.0)
