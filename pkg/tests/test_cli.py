"""End-to-end CLI behavior: artifacts, determinism, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from faultsig import cli
from faultsig.corpus import load_corpus, load_planted_truth
from faultsig.evaluate import equivalent_wavelet_filter
from faultsig.sisc import Dictionary


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus") / "tiny"
    code = run("synth", "--preset", "faultlab", "--out", str(out),
               "--seed", "7", "--per-class", "4", "--p", "1024")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def tiny_dictionary(tmp_path_factory, tiny_corpus):
    out = tmp_path_factory.mktemp("learn") / "run"
    code = run("learn", "--corpus", str(tiny_corpus), "--out", str(out),
               "--seed", "3", "--n-bases", "2", "--basis-len", "16",
               "--iterations", "3")
    assert code == 0
    return out / "dictionary_n2.json"


class TestSynth:
    def test_planted_writes_corpus_and_truth(self, tmp_path):
        out = tmp_path / "planted"
        code = run("synth", "--preset", "planted", "--out", str(out),
                   "--seed", "5", "--n-bases", "2", "--q", "32", "--m", "6",
                   "--p", "512", "--activations", "2", "--snr", "12")
        assert code == 0
        sweeps = load_corpus(out)
        truth = load_planted_truth(out)
        assert len(sweeps) == 6
        assert truth.true_dictionary.n == 2
        assert (out / "run.json").is_file()

    def test_faultlab_counts(self, tiny_corpus):
        sweeps = load_corpus(tiny_corpus)
        assert len(sweeps) == 8
        assert sum(s.label == "fault" for s in sweeps) == 4

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--preset", "faultlab", "--out", str(out),
                       "--seed", "9", "--per-class", "2", "--p", "512") == 0
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_invalid_config_exit_2_no_output(self, tmp_path):
        out = tmp_path / "bad"
        code = run("synth", "--preset", "faultlab", "--out", str(out),
                   "--seed", "1", "--per-class", "-3")
        assert code == 2
        assert not (out / "manifest.json").exists()

    def test_signature_preset(self, tmp_path):
        out = tmp_path / "sig"
        code = run("synth", "--preset", "signature", "--out", str(out),
                   "--seed", "2", "--per-class", "2", "--p", "1024")
        assert code == 0
        run_info = json.loads((out / "run.json").read_text())
        fr = run_info["config"]["fault"]["freq_range_hz"]
        assert fr[0] == fr[1]


class TestLearn:
    def test_artifacts(self, tiny_dictionary):
        assert tiny_dictionary.is_file()
        d = Dictionary.load(tiny_dictionary)
        assert d.n == 2 and d.q == 16
        run_dir = tiny_dictionary.parent
        assert (run_dir / "history_n2.csv").is_file()
        assert (run_dir / "run.json").is_file()

    def test_sweep_mode_writes_summary(self, tmp_path, tiny_corpus):
        out = tmp_path / "sweep"
        code = run("learn", "--corpus", str(tiny_corpus), "--out", str(out),
                   "--seed", "4", "--n-bases", "2,3", "--basis-len", "16",
                   "--iterations", "2")
        assert code == 0
        assert (out / "dictionary_n2.json").is_file()
        assert (out / "dictionary_n3.json").is_file()
        summary = (out / "summary.csv").read_text().strip().split("\n")
        assert len(summary) == 3

    def test_missing_corpus_exit_3(self, tmp_path):
        code = run("learn", "--corpus", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "o"), "--seed", "1")
        assert code == 3

    def test_bad_basis_len_exit_2(self, tmp_path, tiny_corpus):
        code = run("learn", "--corpus", str(tiny_corpus),
                   "--out", str(tmp_path / "o"), "--seed", "1",
                   "--n-bases", "2", "--basis-len", "4000")
        assert code == 2

    def test_deterministic_reruns(self, tmp_path, tiny_corpus):
        a, b = tmp_path / "da", tmp_path / "db"
        for out in (a, b):
            assert run("learn", "--corpus", str(tiny_corpus), "--out", str(out),
                       "--seed", "11", "--n-bases", "2", "--basis-len", "16",
                       "--iterations", "2") == 0
        assert (a / "dictionary_n2.json").read_bytes() == \
            (b / "dictionary_n2.json").read_bytes()


class TestFeaturesCommand:
    def test_csv_written(self, tmp_path, tiny_corpus, tiny_dictionary):
        out = tmp_path / "feats"
        code = run("features", "--corpus", str(tiny_corpus),
                   "--dictionary", str(tiny_dictionary), "--out", str(out))
        assert code == 0
        lines = (out / "features.csv").read_text().strip().split("\n")
        assert lines[0] == "basis_1,basis_2,label"
        assert len(lines) == 9

    def test_wavelet_only_needs_no_dictionary(self, tmp_path, tiny_corpus):
        out = tmp_path / "wav"
        code = run("features", "--corpus", str(tiny_corpus),
                   "--features", "wavelet", "--out", str(out))
        assert code == 0
        header = (out / "features.csv").read_text().split("\n")[0]
        assert header.startswith("wavelet_d1")


class TestCrossval:
    def test_report_written_with_k_override(self, tmp_path, tiny_corpus, tiny_dictionary):
        out = tmp_path / "cv"
        code = run("crossval", "--corpus", str(tiny_corpus),
                   "--dictionary", str(tiny_dictionary), "--out", str(out),
                   "--k", "4", "--n-trees", "5", "--seed", "2")
        assert code == 0
        report = json.loads((out / "cv_report.json").read_text())
        assert report["k"] == 4
        assert len(report["folds"]) == 4
        assert 0.0 <= report["mean_accuracy"] <= 1.0

    def test_missing_dictionary_exit_3(self, tmp_path, tiny_corpus):
        code = run("crossval", "--corpus", str(tiny_corpus),
                   "--dictionary", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o"))
        assert code == 3


class TestRank:
    def test_outputs(self, tmp_path, tiny_corpus, tiny_dictionary):
        out = tmp_path / "rank"
        code = run("rank", "--corpus", str(tiny_corpus),
                   "--dictionary", str(tiny_dictionary), "--out", str(out))
        assert code == 0
        report = json.loads((out / "separability.json").read_text())
        assert len(report["entries"]) == 2
        text = (out / "separability.txt").read_text()
        assert "Separability (%)" in text


class TestCompare:
    def test_self_comparison_unity(self, tmp_path):
        g = equivalent_wavelet_filter(3)
        d = Dictionary(bases=g[None, :] / np.linalg.norm(g), sample_rate=2e6)
        dict_path = tmp_path / "d.json"
        d.save(dict_path)
        out = tmp_path / "cmp"
        code = run("compare", "--dictionary", str(dict_path), "--basis", "0",
                   "--level", "3", "--out", str(out))
        assert code == 0
        result = json.loads((out / "compare.json").read_text())
        assert result["time_correlation"] == pytest.approx(1.0, abs=1e-12)
        assert result["spectral_overlap"] == pytest.approx(1.0, abs=1e-12)
        for name in ("basis_time.csv", "wavelet_time.csv",
                     "basis_spectrum.csv", "wavelet_spectrum.csv"):
            assert (out / name).is_file()

    def test_bad_basis_index_exit_2(self, tmp_path, tiny_dictionary):
        code = run("compare", "--dictionary", str(tiny_dictionary),
                   "--basis", "9", "--out", str(tmp_path / "o"))
        assert code == 2


class TestRunJson:
    def test_records_version_and_config(self, tiny_dictionary):
        info = json.loads((tiny_dictionary.parent / "run.json").read_text())
        assert info["tool"] == "faultsig"
        assert info["subcommand"] == "learn"
        assert info["config"]["seed"] == 3
