"""Synthetic corpus generators: determinism, phenomenology, disk format."""

import numpy as np
import pytest
from scipy import stats

from faultsig import corpus as cp
from faultsig import dsp
from faultsig.sisc import reconstruct


def small_cfg(**kw):
    defaults = dict(n_per_class=4, p=8192, sample_rate=2.0e6, master_seed=123)
    defaults.update(kw)
    return cp.SynthConfig(**defaults)


def band_energy(x, fs, lo, hi):
    freqs, mags = dsp.power_spectrum(x, fs)
    mask = (freqs >= lo) & (freqs <= hi)
    return float(np.sum(mags[mask] ** 2))


class TestBackground:
    def test_pure_tone_when_clean(self):
        # 10000 samples at 2 MHz puts 10 kHz exactly on a DFT bin
        cfg = small_cfg(p=10000, background=cp.BackgroundSpec(
            tone_freq_hz=10e3, tone_amplitude=0.5, am_carriers=(), noise_sigma=0.0))
        sweep = cp.gen_background(cfg, seed=42)
        assert np.max(np.abs(sweep.samples)) == pytest.approx(0.5, rel=1e-3)
        freqs, mags = dsp.power_spectrum(sweep.samples, cfg.sample_rate)
        peak = freqs[np.argmax(mags)]
        assert abs(peak - 10e3) <= freqs[1] - freqs[0]
        # single line: away from the peak the spectrum is tiny
        off = mags[np.abs(freqs - peak) > 5 * (freqs[1] - freqs[0])]
        assert off.max() < 1e-6 * mags.max()

    def test_determinism(self):
        cfg = small_cfg()
        a = cp.gen_background(cfg, seed=7)
        b = cp.gen_background(cfg, seed=7)
        assert np.array_equal(a.samples, b.samples)
        c = cp.gen_background(cfg, seed=8)
        assert not np.array_equal(a.samples, c.samples)

    def test_variance_matches_analytic_sum(self):
        cfg = cp.SynthConfig(master_seed=1)   # default 40000-sample sweep
        bg = cfg.background
        expected = bg.tone_amplitude ** 2 / 2.0
        for c in bg.am_carriers:
            expected += c.amplitude ** 2 / 2.0 * (1.0 + c.mod_depth ** 2 / 2.0)
        expected += bg.noise_sigma ** 2
        sweep = cp.gen_background(cfg, seed=99)
        var = float(np.var(sweep.samples))
        assert 0.8 * expected < var < 1.2 * expected

    def test_label_and_metadata(self):
        sweep = cp.gen_background(small_cfg(), seed=5, sweep_id="N1")
        assert sweep.label == cp.NON_FAULT
        assert sweep.id == "N1"
        assert sweep.seed == 5


class TestFault:
    def test_rate_zero_is_background(self):
        cfg = small_cfg(fault=cp.FaultSpec(transient_rate=0.0))
        f = cp.gen_fault(cfg, seed=31)
        b = cp.gen_background(cfg, seed=31)
        assert np.array_equal(f.samples, b.samples)
        assert f.label == cp.FAULT

    def test_extreme_concentration_hits_zero_crossings(self):
        cfg = cp.SynthConfig(p=40000, sample_rate=2e6,
                             fault=cp.FaultSpec(crossing_concentration=1e6))
        rng = np.random.default_rng(77)
        for trial in range(20):
            phase = rng.uniform(0, 2 * np.pi)
            onsets = cp._sample_onsets(cfg, np.random.default_rng(trial), 50, phase)
            crossings = cp.mains_zero_crossings(cfg, phase)
            assert crossings.size > 0
            for t in onsets:
                assert np.min(np.abs(crossings - t)) < 0.5e-3

    def test_uniform_when_unconcentrated(self):
        cfg = cp.SynthConfig(p=40000, sample_rate=2e6,
                             fault=cp.FaultSpec(crossing_concentration=0.0))
        onsets = cp._sample_onsets(cfg, np.random.default_rng(3), 4000, 1.0)
        assert onsets.min() >= 0 and onsets.max() < cfg.duration
        # roughly uniform: each half of the sweep gets about half the mass
        frac = np.mean(onsets < cfg.duration / 2)
        assert 0.45 < frac < 0.55

    def test_band_energy_monte_carlo(self):
        # fault sweeps carry more 40-200 kHz energy; n=1000/class, alpha=0.01
        cfg = small_cfg()
        fault_e, bg_e = [], []
        for i in range(1000):
            fs_seed = cp.derive_seed(cfg.master_seed, i)
            bg_seed = cp.derive_seed(cfg.master_seed, 100000 + i)
            fault_e.append(band_energy(cp.gen_fault(cfg, fs_seed).samples,
                                       cfg.sample_rate, 40e3, 200e3))
            bg_e.append(band_energy(cp.gen_background(cfg, bg_seed).samples,
                                    cfg.sample_rate, 40e3, 200e3))
        assert np.mean(fault_e) > np.mean(bg_e)
        result = stats.ttest_ind(fault_e, bg_e, equal_var=False, alternative="greater")
        assert result.pvalue < 0.01

    def test_signature_config_repeats_one_waveform(self):
        cfg = cp.signature_config(small_cfg(background=cp.BackgroundSpec(
            tone_amplitude=0.0, am_carriers=(), noise_sigma=0.0)))
        sweep = cp.gen_fault(cfg, seed=11)
        bg = cp.gen_background(cfg, seed=11)
        transient = sweep.samples - bg.samples
        wave = cp.signature_waveform(cfg, q=250)
        starts = np.flatnonzero((transient != 0) & (np.roll(transient, 1) == 0))
        starts = starts[starts + 250 <= cfg.p]
        assert starts.size >= 1
        for t0 in starts[:3]:
            seg = transient[t0:t0 + 250]
            # segment may carry overlapping tails; correlation stays high
            corr = np.dot(seg, wave) / (np.linalg.norm(seg) * np.linalg.norm(wave))
            assert corr > 0.95


class TestFaultlabCorpus:
    def test_counts_and_labels(self):
        sweeps = cp.build_faultlab_corpus(small_cfg(n_per_class=3))
        assert len(sweeps) == 6
        assert sum(s.label == cp.FAULT for s in sweeps) == 3
        assert len({s.id for s in sweeps}) == 6

    def test_reproducible_from_manifest_seeds(self):
        cfg = small_cfg(n_per_class=2)
        sweeps = cp.build_faultlab_corpus(cfg)
        again = cp.gen_fault(cfg, sweeps[0].seed, sweep_id=sweeps[0].id)
        assert np.array_equal(again.samples, sweeps[0].samples)


class TestPlantedCorpus:
    def test_single_activation_exact_copy(self):
        sweeps, truth = cp.gen_planted_corpus(
            n_bases=1, q=32, m=1, p=256, activations_per_sweep=1,
            snr_db=np.inf, seed=5)
        (shifts, values), = truth.true_codes[0].activations
        assert shifts.size == 1
        t, v = int(shifts[0]), float(values[0])
        expect = np.zeros(256)
        expect[t:t + 32] = v * truth.true_dictionary.bases[0]
        assert np.array_equal(sweeps[0].samples, expect)

    def test_snr_within_half_db(self):
        sweeps, truth = cp.gen_planted_corpus(
            n_bases=3, q=64, m=30, p=2048, activations_per_sweep=4,
            snr_db=10.0, seed=21)
        clean_sq, noise_sq = 0.0, 0.0
        for s, code in zip(sweeps, truth.true_codes):
            clean = reconstruct(truth.true_dictionary, code, s.p)
            clean_sq += float(np.sum(clean ** 2))
            noise_sq += float(np.sum((s.samples - clean) ** 2))
        measured = 10 * np.log10(clean_sq / noise_sq)
        assert abs(measured - 10.0) < 0.5

    def test_exact_reconstruction_when_noiseless(self):
        sweeps, truth = cp.gen_planted_corpus(
            n_bases=2, q=16, m=5, p=400, activations_per_sweep=3,
            snr_db=np.inf, seed=9)
        for s, code in zip(sweeps, truth.true_codes):
            clean = reconstruct(truth.true_dictionary, code, s.p)
            assert np.array_equal(s.samples, clean)

    def test_empty_corpus(self):
        sweeps, truth = cp.gen_planted_corpus(
            n_bases=2, q=16, m=0, p=400, activations_per_sweep=2,
            snr_db=20.0, seed=1)
        assert sweeps == []
        assert truth.true_codes == []
        assert truth.true_dictionary.n == 2

    def test_infeasible_sparsity_rejected(self):
        with pytest.raises(ValueError, match="infeasible"):
            cp.gen_planted_corpus(n_bases=1, q=100, m=1, p=256,
                                  activations_per_sweep=3, snr_db=10.0, seed=0)

    def test_unit_norm_bases(self):
        _, truth = cp.gen_planted_corpus(n_bases=4, q=50, m=0, p=500,
                                         activations_per_sweep=2, snr_db=10.0, seed=2)
        norms = np.linalg.norm(truth.true_dictionary.bases, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)


class TestDiskFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        sweeps = cp.build_faultlab_corpus(small_cfg(n_per_class=2, p=1024))
        cp.save_corpus(sweeps, tmp_path / "c")
        back = cp.load_corpus(tmp_path / "c")
        assert len(back) == len(sweeps)
        for a, b in zip(sweeps, back):
            assert a.id == b.id and a.label == b.label and a.kind == b.kind
            assert a.seed == b.seed
            assert a.sample_rate == b.sample_rate
            assert np.array_equal(a.samples, b.samples)

    def test_truncated_file_names_sweep(self, tmp_path):
        sweeps = cp.build_faultlab_corpus(small_cfg(n_per_class=1, p=512))
        cp.save_corpus(sweeps, tmp_path / "c")
        victim = sweeps[1].id
        raw = (tmp_path / "c" / f"{victim}.f64").read_bytes()
        (tmp_path / "c" / f"{victim}.f64").write_bytes(raw[:-16])
        with pytest.raises(cp.CorpusError, match=victim):
            cp.load_corpus(tmp_path / "c")

    def test_bad_label_rejected(self, tmp_path):
        sweeps = cp.build_faultlab_corpus(small_cfg(n_per_class=1, p=512))
        cp.save_corpus(sweeps, tmp_path / "c")
        manifest = (tmp_path / "c" / "manifest.json").read_text()
        (tmp_path / "c" / "manifest.json").write_text(
            manifest.replace('"non-fault"', '"mystery"'))
        with pytest.raises(cp.CorpusError, match="label"):
            cp.load_corpus(tmp_path / "c")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(cp.CorpusError, match="manifest"):
            cp.load_corpus(tmp_path)

    def test_planted_truth_round_trip(self, tmp_path):
        sweeps, truth = cp.gen_planted_corpus(
            n_bases=2, q=16, m=4, p=300, activations_per_sweep=2,
            snr_db=15.0, seed=33)
        cp.save_corpus(sweeps, tmp_path / "c")
        cp.save_planted_truth(truth, tmp_path / "c")
        back = cp.load_planted_truth(tmp_path / "c")
        assert back.snr_db == truth.snr_db
        assert np.array_equal(back.true_dictionary.bases, truth.true_dictionary.bases)
        for a, b in zip(truth.true_codes, back.true_codes):
            for (sa, va), (sb, vb) in zip(a.activations, b.activations):
                assert np.array_equal(sa, sb)
                assert np.array_equal(va, vb)


class TestConfigValidation:
    def test_bad_ranges(self):
        cfg = small_cfg(fault=cp.FaultSpec(freq_range_hz=(5e3, 1e3)))
        with pytest.raises(ValueError):
            cfg.validate()

    def test_negative_rate(self):
        cfg = small_cfg(fault=cp.FaultSpec(transient_rate=-1.0))
        with pytest.raises(ValueError):
            cfg.validate()
