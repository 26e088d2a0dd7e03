import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdvae import features as F
from cdvae.features import FeatureDomain, FeatureSequence, MccWarpConfig, SpeakerStats
from cdvae.nn import ShapeError


def cosine_basis(N: int) -> np.ndarray:
    """Rows are the orthonormal DCT-II basis vectors, built term by term."""
    C = np.empty((N, N))
    for k in range(N):
        scale = math.sqrt(1 / N) if k == 0 else math.sqrt(2 / N)
        for n in range(N):
            C[k, n] = scale * math.cos(math.pi * k * (2 * n + 1) / (2 * N))
    return C


def brute_dct(x: np.ndarray) -> np.ndarray:
    return x @ cosine_basis(x.shape[-1]).T


def smooth_spectra(rng, n, n_bins=513):
    """Random positive spectra whose log is a sum of a few low-frequency cosines."""
    f = np.linspace(0, 1, n_bins)
    out = np.empty((n, n_bins))
    for i in range(n):
        k = rng.uniform(0.5, 6, 4)
        a = rng.normal(0, 1, 4)
        ph = rng.uniform(0, 2 * np.pi, 4)
        out[i] = np.exp((a[:, None] * np.cos(2 * np.pi * k[:, None] * f + ph[:, None])).sum(0) - 3)
    return out


def stats(spk, mean, std, gv=None):
    gv = np.ones(35) if gv is None else gv
    return SpeakerStats(spk, mean, std, gv, np.zeros_like(gv))


coef = st.integers(-20_000, 20_000).map(lambda i: i / 1000.0)
positive_frames = arrays(np.float64, st.integers(2, 40), elements=st.floats(1e-6, 1e6))


class TestNormalizeSp:
    def test_unit_energy(self):
        sp = np.random.default_rng(0).dirichlet(np.ones(513))
        norm, e = F.normalize_sp(sp)
        assert abs(e) < 1e-15
        np.testing.assert_allclose(norm, np.log10(sp), atol=1e-14)

    def test_uniform(self):
        norm, e = F.normalize_sp(np.full(513, 1 / 513))
        assert abs(e) < 1e-15
        np.testing.assert_allclose(norm, math.log10(1 / 513), rtol=1e-14)
        assert round(norm[0], 4) == -2.7101

    def test_denormalize_manual(self):
        np.testing.assert_array_equal(F.denormalize_sp(np.zeros(4), 0.0), np.ones(4))

    @given(positive_frames)
    def test_inverse_pair(self, sp):
        norm, e = F.normalize_sp(sp)
        np.testing.assert_allclose(F.denormalize_sp(norm, e), sp, rtol=1e-12)

    def test_matrix_form(self):
        sp = smooth_spectra(np.random.default_rng(1), 3)
        norm, e = F.normalize_sp(sp)
        assert e.shape == (3,)
        np.testing.assert_allclose(F.denormalize_sp(norm, e), sp, rtol=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
    def test_non_positive(self, bad):
        sp = np.ones(5)
        sp[2] = bad
        with pytest.raises(F.FeatureError):
            F.normalize_sp(sp)


class TestCodec:
    def test_flat_spectrum_only_c0(self):
        c = 0.7
        mcc = F.sp_to_mcc(np.full(513, math.exp(c)), MccWarpConfig(alpha=0.0))
        assert abs(mcc[0] - c * F.log_spectrum_gain(513)) < 1e-12
        assert np.max(np.abs(mcc[1:])) < 1e-12
        assert F.log_spectrum_gain(513) == math.sqrt(513)

    def test_flat_spectrum_warped(self):
        # warping a constant is still a constant
        mcc = F.sp_to_mcc(np.full(513, math.e), MccWarpConfig())
        assert abs(mcc[0] - F.log_spectrum_gain(513)) < 1e-12
        assert np.max(np.abs(mcc[1:])) < 1e-12

    @pytest.mark.parametrize("n_bins", [2, 3, 17, 128])
    def test_matches_brute_force_oracle(self, n_bins):
        rng = np.random.default_rng(n_bins)
        log_sp = rng.normal(size=(4, n_bins))
        cfg = MccWarpConfig(alpha=0.0, order=n_bins, n_bins=n_bins)
        np.testing.assert_allclose(F.sp_to_mcc(np.exp(log_sp), cfg), brute_dct(log_sp), atol=1e-9)

    @pytest.mark.parametrize("k", [0, 1, 7, 34, 200, 512])
    def test_cosine_basis_excites_one_coefficient(self, k):
        N = 513
        log_sp = np.cos(np.pi * k * (2 * np.arange(N) + 1) / (2 * N))
        mcc = F.sp_to_mcc(np.exp(log_sp), MccWarpConfig(alpha=0.0, order=N))
        others = np.delete(mcc, k)
        assert abs(mcc[k]) > 1.0
        assert np.max(np.abs(others)) < 1e-9

    def test_full_order_round_trip(self):
        cfg = MccWarpConfig(alpha=0.0, order=513)
        sp = smooth_spectra(np.random.default_rng(2), 20)
        back = F.mcc_to_sp(F.sp_to_mcc(sp, cfg), cfg)
        assert np.max(np.abs(np.log(back) - np.log(sp))) < 1e-6

    def test_zero_mcc_is_flat(self):
        np.testing.assert_allclose(F.mcc_to_sp(np.zeros(35)), np.ones(513), rtol=1e-14)

    def test_truncation_error_decreases_with_order(self):
        sp = smooth_spectra(np.random.default_rng(3), 5)
        errs = []
        for order in (10, 35):
            cfg = MccWarpConfig(order=order)
            errs.append(np.abs(np.log(F.mcc_to_sp(F.sp_to_mcc(sp, cfg), cfg)) - np.log(sp)).max())
        assert errs[1] <= errs[0]

    def test_warp_frequency_properties(self):
        w = np.linspace(0, np.pi, 101)
        np.testing.assert_array_equal(F.warp_frequency(w, 0.0), w)
        ww = F.warp_frequency(w, 0.455)
        assert abs(ww[0]) < 1e-15 and abs(ww[-1] - np.pi) < 1e-12
        assert np.all(np.diff(ww) > 0)
        assert np.all(ww[1:-1] > w[1:-1])  # low frequencies are stretched

    def test_order_exceeding_bins(self):
        with pytest.raises(ValueError):
            MccWarpConfig(order=600, n_bins=513)

    def test_wrong_bin_count(self):
        with pytest.raises(F.FeatureError):
            F.sp_to_mcc(np.ones(100))


class TestF0:
    def test_constant(self, caplog):
        mean, std = F.f0_statistics([np.full(7, math.exp(5))])
        assert abs(mean - 5) < 1e-12 and std == 0
        assert "degenerate" in caplog.text

    def test_hand_case(self):
        seq = FeatureSequence(FeatureDomain.F0, np.array([0, math.exp(4), 0, math.exp(6), 0.0]))
        mean, std = F.f0_statistics([seq])
        assert abs(mean - 5) < 1e-12 and abs(std - 1) < 1e-12

    def test_unvoiced_ignored(self):
        base = np.array([100.0, 150.0, 120.0])
        assert F.f0_statistics([base]) == F.f0_statistics([np.r_[0, base, 0, 0], np.zeros(3)])

    def test_no_voiced(self):
        with pytest.raises(F.StatisticsError):
            F.f0_statistics([np.zeros(4)])

    def test_convert_examples(self):
        src, tgt = stats("s", 4.8, 0.2), stats("t", 5.2, 0.3)
        assert F.convert_f0(0.0, src, tgt) == 0.0
        assert abs(math.log(F.convert_f0(math.exp(4.8), src, tgt)) - 5.2) < 1e-12
        assert abs(math.log(F.convert_f0(math.exp(5.0), src, tgt)) - 5.5) < 1e-12

    def test_degenerate_source(self):
        with pytest.raises(F.StatisticsError):
            F.convert_f0(100.0, stats("s", 4.0, 0.0), stats("t", 5.0, 0.2))

    def test_voicing_pattern_preserved(self):
        f0 = np.array([0, 110, 0, 0, 95, 130, 0.0])
        out = F.convert_f0(f0, stats("s", 4.7, 0.1), stats("t", 5.3, 0.2))
        assert np.array_equal(out > 0, f0 > 0) and np.all(out[f0 == 0] == 0)

    def test_monte_carlo_stats(self):
        rng = np.random.default_rng(9)
        src, tgt = stats("s", 4.7, 0.15), stats("t", 5.4, 0.25)
        f0 = np.exp(rng.normal(src.logf0_mean, src.logf0_std, 200_000))
        out = np.log(F.convert_f0(f0, src, tgt))
        # sampling error of the mean is sigma/sqrt(n) ~ 6e-4
        assert abs(out.mean() - tgt.logf0_mean) < 3e-3
        assert abs(out.std() - tgt.logf0_std) < 3e-3


class TestMcd:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=35)
        assert F.mcd_frame(x, x) == 0

    def test_unit_difference(self):
        a, b = np.zeros(35), np.zeros(35)
        b[7] = 1
        assert abs(F.mcd_frame(a, b) - 10 / math.log(10) * math.sqrt(2)) < 1e-12
        assert abs(F.mcd_frame(a, b) - 6.1421) < 5e-4

    def test_power_excluded(self):
        a, b = np.zeros(35), np.zeros(35)
        b[0] = 9.0
        assert F.mcd_frame(a, b) == 0

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            F.mcd_frame(np.zeros(35), np.zeros(34))

    @given(arrays(np.float64, 35, elements=coef), arrays(np.float64, 35, elements=coef), st.floats(-100, 100))
    def test_metric_properties(self, a, b, shift):
        d = F.mcd_frame(a, b)
        assert d >= 0
        assert d == F.mcd_frame(b, a)
        a2 = a.copy()
        a2[0] += shift
        assert F.mcd_frame(a2, b) == d
        assert (d == 0) == np.array_equal(a[1:], b[1:])

    def test_mean_of_two_frames(self):
        unit = 10 / math.log(10) * math.sqrt(2)
        a = np.zeros((2, 35))
        b = np.zeros((2, 35))
        b[0, 3] = 6.0 / unit
        b[1, 5] = 8.0 / unit
        assert abs(F.mean_mcd(a, b, silence_threshold_db=1e9) - 7.0) < 1e-12

    def test_identical_sequences(self):
        x = np.random.default_rng(1).normal(size=(10, 35))
        assert F.mean_mcd(x, x) == 0

    def test_silence_mask_matches_brute_force(self):
        rng = np.random.default_rng(4)
        ref = rng.normal(size=(50, 35))
        ref[:, 0] = rng.uniform(-400, 0, 50)
        conv = ref + rng.normal(0, 0.5, size=ref.shape)
        thr = 30.0
        # a frame is silent when its level is more than thr dB under the loudest frame
        level_db = ref[:, 0] / F.log_spectrum_gain(513) * 10 / math.log(10)
        keep = level_db > level_db.max() - thr
        per_frame = [F.mcd_frame(conv[i], ref[i]) for i in range(50)]
        expected = np.mean([p for p, k in zip(per_frame, keep) if k])
        assert 0 < keep.sum() < 50
        assert abs(F.mean_mcd(conv, ref, thr) - expected) < 1e-9

    def test_no_nonsilent_frames(self):
        with pytest.raises(F.EvaluationError):
            F.mean_mcd(np.zeros((3, 35)), np.zeros((3, 35)), silence_threshold_db=-1.0)


class TestGv:
    def _seq(self, seed=0, T=40):
        return FeatureSequence(FeatureDomain.MCC, np.random.default_rng(seed).normal(size=(T, 35)) * 3 + 1)

    def test_identity_when_matched(self):
        seq = self._seq()
        out = F.gv_postfilter(seq, stats("t", 0, 1, seq.frames.var(0)))
        np.testing.assert_allclose(out.frames, seq.frames, atol=1e-12)

    def test_variance_and_mean(self):
        seq = self._seq()
        gv = np.random.default_rng(5).uniform(0.1, 10, 35)
        out = F.gv_postfilter(seq, stats("t", 0, 1, gv))
        np.testing.assert_allclose(out.frames[:, 1:].var(0), gv[1:], rtol=1e-9)
        np.testing.assert_allclose(out.frames.mean(0), seq.frames.mean(0), atol=1e-12)
        np.testing.assert_array_equal(out.frames[:, 0], seq.frames[:, 0])

    @settings(max_examples=30)
    @given(st.integers(0, 10**6), st.integers(2, 60))
    def test_idempotent(self, seed, T):
        seq = self._seq(seed, T)
        gv = np.random.default_rng(seed + 1).uniform(0.1, 10, 35)
        once = F.gv_postfilter(seq, stats("t", 0, 1, gv))
        twice = F.gv_postfilter(once, stats("t", 0, 1, gv))
        np.testing.assert_allclose(twice.frames, once.frames, rtol=1e-9, atol=1e-9)

    def test_zero_variance_dim_passthrough(self):
        seq = self._seq()
        seq.frames[:, 4] = 2.0
        with pytest.warns(RuntimeWarning, match="dim 4"):
            out = F.gv_postfilter(seq, stats("t", 0, 1, np.ones(35)))
        np.testing.assert_array_equal(out.frames[:, 4], seq.frames[:, 4])

    def test_single_frame_rejected(self):
        with pytest.raises(ValueError):
            F.gv_postfilter(self._seq(T=1), stats("t", 0, 1))


class TestSmooth:
    def test_sigma_zero_identity(self):
        seq = FeatureSequence(FeatureDomain.MCC, np.random.default_rng(0).normal(size=(20, 3)))
        np.testing.assert_array_equal(F.gaussian_smooth(seq, 0.0).frames, seq.frames)

    def test_constant_unchanged(self):
        seq = FeatureSequence(FeatureDomain.MCC, np.full((15, 4), 2.5))
        np.testing.assert_allclose(F.gaussian_smooth(seq, 2.0).frames, 2.5, rtol=1e-14)

    @pytest.mark.parametrize("sigma", [0.7, 1.0, 2.5])
    def test_impulse_matches_direct_convolution(self, sigma):
        T = 41
        x = np.zeros((T, 1))
        x[20, 0] = 1.0
        out = F.gaussian_smooth(FeatureSequence(FeatureDomain.MCC, x), sigma).frames[:, 0]
        radius = int(3.0 * sigma + 0.5)
        taps = np.arange(-radius, radius + 1)
        kernel = np.exp(-0.5 * (taps / sigma) ** 2)
        kernel /= kernel.sum()
        expected = np.convolve(x[:, 0], kernel, mode="same")
        np.testing.assert_allclose(out, expected, atol=1e-12)
        assert abs(out.sum() - 1.0) < 1e-9

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            F.gaussian_smooth(FeatureSequence(FeatureDomain.MCC, np.zeros((3, 2))), -1.0)


class TestFeatureSequence:
    @pytest.mark.parametrize("domain,frames", [
        (FeatureDomain.SP, np.zeros((3, 4))),
        (FeatureDomain.F0, -np.ones(3)),
        (FeatureDomain.F0, np.ones((3, 2))),
        (FeatureDomain.MCC, np.full((2, 3), np.inf)),
        (FeatureDomain.MCC, np.zeros((0, 3))),
    ])
    def test_invalid(self, domain, frames):
        with pytest.raises(F.FeatureError):
            FeatureSequence(domain, frames)

    def test_vector_becomes_column(self):
        seq = FeatureSequence(FeatureDomain.F0, np.array([0.0, 100.0]))
        assert seq.frames.shape == (2, 1) and seq.n_frames == 2 and seq.dim == 1


def test_speaker_stats():
    rng = np.random.default_rng(3)
    mccs = [rng.normal(size=(10, 35)), rng.normal(size=(6, 35))]
    f0s = [np.r_[0, rng.uniform(80, 200, 9)], rng.uniform(80, 200, 6)]
    s = F.speaker_stats("x", f0s, mccs)
    allm = np.concatenate(mccs)
    np.testing.assert_allclose(s.mcc_gv, allm.var(0), rtol=1e-14)
    np.testing.assert_allclose(s.mcc_mean, allm.mean(0), rtol=1e-14)
    assert s.logf0_std > 0 and np.all(s.mcc_gv >= 0)
