"""Feature extraction: rectified cross-correlation and wavelet energies."""

import numpy as np
import pytest

from faultsig import corpus as cp
from faultsig import dsp, features, sisc


def unit_dictionary(rng, n, q):
    bases = rng.normal(size=(n, q))
    bases /= np.linalg.norm(bases, axis=1, keepdims=True)
    return sisc.Dictionary(bases=bases)


class TestSiscFeatures:
    def test_zero_signal(self):
        rng = np.random.default_rng(0)
        d = unit_dictionary(rng, 3, 16)
        assert np.array_equal(features.sisc_features(np.zeros(128), d), np.zeros(3))

    def test_matches_direct_relu_sum(self):
        rng = np.random.default_rng(1)
        d = unit_dictionary(rng, 4, 20)
        x = rng.normal(size=200)
        got = features.sisc_features(x, d)
        want = np.array([
            np.maximum(dsp.cross_correlate_valid(x, a), 0.0).sum()
            for a in d.bases
        ])
        assert np.allclose(got, want, atol=1e-9)

    def test_planted_copy_dominates(self):
        rng = np.random.default_rng(2)
        d = unit_dictionary(rng, 4, 32)
        # cross-basis rectified responses are measured, not assumed
        x = np.zeros(400)
        x[100:132] = d.bases[1]
        f = features.sisc_features(x, d)
        assert f[1] >= float(np.sum(d.bases[1] ** 2)) - 1e-9
        assert np.argmax(f) == 1

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(3)
        d = unit_dictionary(rng, 3, 16)
        x = rng.normal(size=150)
        f1 = features.sisc_features(x, d)
        f2 = features.sisc_features(2.5 * x, d)
        assert np.allclose(f2, 2.5 * f1, rtol=1e-12)

    def test_shift_covariance_away_from_edges(self):
        rng = np.random.default_rng(4)
        d = unit_dictionary(rng, 2, 16)
        pattern = rng.normal(size=16)
        p, q = 256, 16
        def embed(t):
            x = np.zeros(p)
            x[t:t + q] = pattern
            return x
        f_a = features.sisc_features(embed(40), d)
        f_b = features.sisc_features(embed(140), d)
        assert np.allclose(f_a, f_b, atol=1e-9)

    def test_all_features_nonnegative(self):
        rng = np.random.default_rng(5)
        d = unit_dictionary(rng, 5, 24)
        for _ in range(5):
            f = features.sisc_features(rng.normal(size=300), d)
            assert np.all(f >= 0)

    def test_basis_longer_than_sweep_rejected(self):
        rng = np.random.default_rng(6)
        d = unit_dictionary(rng, 2, 64)
        with pytest.raises(ValueError):
            features.sisc_features(np.ones(32), d)


class TestWaveletFeatures:
    def test_energy_conservation(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=1024)
        f = features.wavelet_features(x, levels=4)
        assert f.shape == (5,)
        assert abs(f.sum() - np.sum(x ** 2)) / np.sum(x ** 2) < 1e-9

    def test_low_tone_lands_in_deep_bands(self):
        # 10 kHz at 2 MHz lies below the level-4 boundary fs/32 = 62.5 kHz,
        # so the approximation band dominates
        fs = 2.0e6
        t = np.arange(4096) / fs
        x = np.sin(2 * np.pi * 10e3 * t)
        f = features.wavelet_features(x, levels=4)
        assert f[4] > 0.9 * f.sum()

    def test_high_band_tone(self):
        # 600 kHz lies in detail-1 (500 kHz .. 1 MHz at fs = 2 MHz)
        fs = 2.0e6
        t = np.arange(4096) / fs
        x = np.sin(2 * np.pi * 600e3 * t)
        f = features.wavelet_features(x, levels=4)
        assert np.argmax(f) == 0

    def test_zero_signal(self):
        assert np.array_equal(features.wavelet_features(np.zeros(256), 4), np.zeros(5))


class TestBuildFeatureMatrix:
    def corpus(self, m=4, p=512):
        cfg = cp.SynthConfig(n_per_class=m // 2, p=p, sample_rate=2e6, master_seed=0)
        return cp.build_faultlab_corpus(cfg)

    def test_shape_sisc_only(self):
        rng = np.random.default_rng(8)
        d = unit_dictionary(rng, 8, 32)
        fm = features.build_feature_matrix(self.corpus(), dictionary=d)
        assert fm.values.shape == (4, 8)
        assert fm.column_names == [f"basis_{j}" for j in range(1, 9)]

    def test_concatenated_ordering(self):
        rng = np.random.default_rng(9)
        d = unit_dictionary(rng, 8, 32)
        fm = features.build_feature_matrix(self.corpus(), dictionary=d,
                                           wavelet_levels=4)
        assert fm.values.shape == (4, 13)
        assert fm.column_names[:8] == [f"basis_{j}" for j in range(1, 9)]
        assert fm.column_names[8:] == ["wavelet_d1", "wavelet_d2", "wavelet_d3",
                                       "wavelet_d4", "wavelet_a4"]

    def test_row_alignment_under_permutation(self):
        rng = np.random.default_rng(10)
        d = unit_dictionary(rng, 3, 32)
        sweeps = self.corpus()
        fm = features.build_feature_matrix(sweeps, dictionary=d)
        perm = [2, 0, 3, 1]
        fm_p = features.build_feature_matrix([sweeps[i] for i in perm], dictionary=d)
        assert np.array_equal(fm_p.values, fm.values[perm])
        assert np.array_equal(fm_p.labels, fm.labels[perm])

    def test_labels_binary(self):
        rng = np.random.default_rng(11)
        d = unit_dictionary(rng, 2, 32)
        fm = features.build_feature_matrix(self.corpus(), dictionary=d)
        assert fm.labels.sum() == 2          # half fault
        assert set(fm.labels.tolist()) == {0, 1}

    def test_requires_extractor(self):
        with pytest.raises(ValueError):
            features.build_feature_matrix(self.corpus())

    def test_heterogeneous_lengths_rejected(self):
        rng = np.random.default_rng(12)
        d = unit_dictionary(rng, 2, 16)
        a = cp.Sweep(samples=np.ones(128), sample_rate=1e6, label="fault", id="a")
        b = cp.Sweep(samples=np.ones(64), sample_rate=1e6, label="non-fault", id="b")
        with pytest.raises(ValueError):
            features.build_feature_matrix([a, b], dictionary=d)

    def test_csv_export_round_trip_values(self, tmp_path):
        rng = np.random.default_rng(13)
        d = unit_dictionary(rng, 3, 32)
        fm = features.build_feature_matrix(self.corpus(), dictionary=d)
        path = tmp_path / "features.csv"
        fm.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "basis_1,basis_2,basis_3,label"
        assert len(lines) == 1 + fm.n_rows
        row0 = lines[1].split(",")
        assert float(row0[0]) == fm.values[0, 0]   # 17g round-trips exactly
        assert row0[-1] == str(int(fm.labels[0]))
