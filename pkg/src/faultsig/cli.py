"""Command-line pipeline: synth, learn, features, crossval, rank, compare.

Every run validates its inputs before writing anything, then drops a
`run.json` with the fully resolved configuration next to its outputs so
any result can be reproduced byte for byte.

Exit codes: 0 success, 2 configuration/validation error, 3 I/O or
data-integrity error, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, jsonio
from .corpus import (
    FAULT,
    AMCarrier,
    BackgroundSpec,
    CorpusError,
    FaultSpec,
    SynthConfig,
    build_faultlab_corpus,
    gen_planted_corpus,
    load_corpus,
    save_corpus,
    save_planted_truth,
    signature_config,
)
from .evaluate import compare_wavelet_basis, equivalent_wavelet_filter, kfold_cv, rank_bases
from .features import build_feature_matrix
from .forest import ForestParams
from .sisc import ConvergenceFailure, Dictionary, TrainConfig, learn_dictionary

try:
    import tomllib as _toml
except ModuleNotFoundError:                       # Python 3.10
    import tomli as _toml


class ConfigError(ValueError):
    pass


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def _write_run_json(out_dir: Path, subcommand: str, resolved: dict) -> None:
    payload = {"tool": "faultsig", "version": __version__,
               "subcommand": subcommand, "config": resolved}
    jsonio.dump(payload, out_dir / "run.json")


def _corpus_or_exit(path) -> list:
    return load_corpus(path)


def _sweep_values(arg: str) -> list:
    try:
        return [int(v) for v in str(arg).split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {arg!r}") from exc


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _synth_config_from_toml(data: dict) -> SynthConfig:
    bg_kwargs = dict(data.get("background", {}))
    carriers = bg_kwargs.pop("am_carriers", None)
    if carriers is not None:
        bg_kwargs["am_carriers"] = tuple(AMCarrier(**c) for c in carriers)
    fault_kwargs = {k: tuple(v) if isinstance(v, list) else v
                    for k, v in data.get("fault", {}).items()}
    top = {k: v for k, v in data.items() if k not in ("background", "fault")}
    try:
        return SynthConfig(background=BackgroundSpec(**bg_kwargs),
                           fault=FaultSpec(**fault_kwargs), **top)
    except TypeError as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    if args.preset == "faultlab" or args.preset == "signature":
        if args.config:
            cfg = _synth_config_from_toml(_load_toml(args.config))
        else:
            cfg = SynthConfig()
        overrides = {}
        if args.per_class is not None:
            overrides["n_per_class"] = args.per_class
        if args.p is not None:
            overrides["p"] = args.p
        if args.sample_rate is not None:
            overrides["sample_rate"] = args.sample_rate
        overrides["master_seed"] = args.seed
        cfg = replace(cfg, **overrides)
        if args.preset == "signature":
            cfg = signature_config(cfg)
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        sweeps = build_faultlab_corpus(cfg, kind=args.kind)
        resolved = {
            "preset": args.preset, "seed": args.seed, "kind": args.kind,
            "n_per_class": cfg.n_per_class, "p": cfg.p,
            "sample_rate": cfg.sample_rate,
            "mains_freq_hz": cfg.mains_freq_hz,
            "background": {
                "tone_freq_hz": cfg.background.tone_freq_hz,
                "tone_amplitude": cfg.background.tone_amplitude,
                "noise_sigma": cfg.background.noise_sigma,
                "am_carriers": [
                    {"freq_hz": c.freq_hz, "amplitude": c.amplitude,
                     "mod_depth": c.mod_depth, "mod_freq_hz": c.mod_freq_hz}
                    for c in cfg.background.am_carriers],
            },
            "fault": {
                "transient_rate": cfg.fault.transient_rate,
                "freq_range_hz": list(cfg.fault.freq_range_hz),
                "damping_range": list(cfg.fault.damping_range),
                "amplitude_range": list(cfg.fault.amplitude_range),
                "crossing_concentration": cfg.fault.crossing_concentration,
                "phase_range": list(cfg.fault.phase_range),
            },
        }
        save_corpus(sweeps, out_dir)
        _write_run_json(out_dir, "synth", resolved)
    else:  # planted
        params = {"n_bases": args.n_bases, "q": args.q, "m": args.m,
                  "p": args.p if args.p is not None else 4000,
                  "activations_per_sweep": args.activations,
                  "snr_db": args.snr, "seed": args.seed,
                  "sample_rate": args.sample_rate or 2.0e6}
        try:
            sweeps, truth = gen_planted_corpus(**params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not sweeps:
            raise ConfigError("planted corpus is empty (m=0)")
        save_corpus(sweeps, out_dir)
        save_planted_truth(truth, out_dir)
        resolved = dict(params, preset="planted")
        if not math.isfinite(resolved["snr_db"]):
            resolved["snr_db"] = "inf"
        _write_run_json(out_dir, "synth", resolved)
    print(f"wrote {len(sweeps)} sweeps to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# learn
# ---------------------------------------------------------------------------

def cmd_learn(args) -> int:
    n_values = _sweep_values(args.n_bases)
    if not n_values:
        raise ConfigError("--n-bases must list at least one value")
    sweeps = _corpus_or_exit(args.corpus)
    if args.sweep_class != "all":
        sweeps = [s for s in sweeps if s.label == args.sweep_class]
    if not sweeps:
        raise ConfigError(f"no {args.sweep_class!r} sweeps in corpus")
    p = sweeps[0].p
    out_dir = Path(args.out)
    configs = []
    for n in n_values:
        cfg = TrainConfig(
            n_bases=n, basis_len=args.basis_len, beta=args.beta,
            outer_iterations=args.iterations, batch_size=args.batch_size,
            code_solver_tolerance=args.tol, c=args.c, seed=args.seed,
            threads=args.threads)
        try:
            cfg.validate(p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        configs.append(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ["n_bases,iterations,total,residual,sparsity,seconds,dictionary"]
    for cfg in configs:
        t0 = time.perf_counter()
        dictionary, history = learn_dictionary(sweeps, cfg)
        elapsed = time.perf_counter() - t0
        tag = f"n{cfg.n_bases}"
        dict_path = out_dir / f"dictionary_{tag}.json"
        dictionary.save(dict_path)
        history.to_csv(out_dir / f"history_{tag}.csv")
        last = history.rows[-1]
        summary.append(
            f"{cfg.n_bases},{last.iteration},{last.total:.17g},"
            f"{last.residual:.17g},{last.sparsity:.17g},{elapsed:.3f},"
            f"{dict_path.name}")
        print(f"n_bases={cfg.n_bases}: objective {last.total:.6g} "
              f"after {last.iteration} iterations ({elapsed:.1f}s)")
    if len(configs) > 1:
        (out_dir / "summary.csv").write_text("\n".join(summary) + "\n",
                                             encoding="utf-8")
    _write_run_json(out_dir, "learn", {
        "corpus": str(args.corpus), "n_bases": n_values,
        "basis_len": args.basis_len, "beta": args.beta,
        "iterations": args.iterations, "batch_size": args.batch_size,
        "tol": args.tol, "c": args.c, "seed": args.seed,
        "class_filter": args.sweep_class, "threads": args.threads})
    return 0


# ---------------------------------------------------------------------------
# features / crossval / rank / compare
# ---------------------------------------------------------------------------

def _extract(args, sweeps):
    dictionary = None
    if args.features in ("sisc", "both"):
        if not args.dictionary:
            raise ConfigError(f"--dictionary required for {args.features} features")
        try:
            dictionary = Dictionary.load(args.dictionary)
        except FileNotFoundError as exc:
            raise CorpusError(f"missing dictionary file: {args.dictionary}") from exc
    levels = args.wavelet_levels if args.features in ("wavelet", "both") else None
    return build_feature_matrix(sweeps, dictionary=dictionary, wavelet_levels=levels)


def cmd_features(args) -> int:
    sweeps = _corpus_or_exit(args.corpus)
    matrix = _extract(args, sweeps)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(out_dir / "features.csv")
    _write_run_json(out_dir, "features", {
        "corpus": str(args.corpus), "dictionary": args.dictionary,
        "features": args.features, "wavelet_levels": args.wavelet_levels})
    print(f"wrote {matrix.n_rows}x{matrix.n_columns} feature matrix")
    return 0


def cmd_crossval(args) -> int:
    sweeps = _corpus_or_exit(args.corpus)
    matrix = _extract(args, sweeps)
    params = ForestParams(n_trees=args.n_trees, max_splits=args.max_splits,
                          min_leaf=args.min_leaf, method=args.method)
    try:
        params.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = kfold_cv(matrix.values, matrix.labels, k=args.k, params=params,
                      seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "cv_report.json")
    _write_run_json(out_dir, "crossval", {
        "corpus": str(args.corpus), "dictionary": args.dictionary,
        "features": args.features, "wavelet_levels": args.wavelet_levels,
        "k": args.k, "seed": args.seed, "n_trees": args.n_trees,
        "max_splits": args.max_splits, "min_leaf": args.min_leaf,
        "method": args.method})
    print(f"accuracy {100 * report.mean_accuracy:.2f}%  "
          f"TPR {100 * report.mean_tpr:.2f}%  TNR {100 * report.mean_tnr:.2f}%")
    return 0


def cmd_rank(args) -> int:
    sweeps = _corpus_or_exit(args.corpus)
    matrix = _extract(args, sweeps)
    report = rank_bases(matrix)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "separability.json")
    (out_dir / "separability.txt").write_text(report.to_text(), encoding="utf-8")
    _write_run_json(out_dir, "rank", {
        "corpus": str(args.corpus), "dictionary": args.dictionary,
        "features": args.features, "wavelet_levels": args.wavelet_levels})
    print(report.to_text())
    return 0


def cmd_compare(args) -> int:
    try:
        dictionary = Dictionary.load(args.dictionary)
    except FileNotFoundError as exc:
        raise CorpusError(f"missing dictionary file: {args.dictionary}") from exc
    if not 0 <= args.basis < dictionary.n:
        raise ConfigError(
            f"basis index {args.basis} out of range [0, {dictionary.n})")
    basis = dictionary.bases[args.basis]
    result = compare_wavelet_basis(basis, level=args.level)
    g = equivalent_wavelet_filter(args.level)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonio.dump({"basis_index": args.basis, "level": args.level,
                 "time_correlation": result.time_correlation,
                 "spectral_overlap": result.spectral_overlap},
                out_dir / "compare.json")
    fs = dictionary.sample_rate or 1.0
    for name, signal in (("basis", basis), ("wavelet", g)):
        lines = ["sample,value"] + [f"{i},{v:.17g}" for i, v in enumerate(signal)]
        (out_dir / f"{name}_time.csv").write_text("\n".join(lines) + "\n",
                                                  encoding="utf-8")
        from .dsp import power_spectrum
        freqs, mags = power_spectrum(signal, fs)
        lines = ["frequency_hz,magnitude"] + [
            f"{f:.17g},{m:.17g}" for f, m in zip(freqs, mags)]
        (out_dir / f"{name}_spectrum.csv").write_text("\n".join(lines) + "\n",
                                                      encoding="utf-8")
    _write_run_json(out_dir, "compare", {
        "dictionary": str(args.dictionary), "basis": args.basis,
        "level": args.level})
    print(f"time correlation {result.time_correlation:.4f}  "
          f"spectral overlap {result.spectral_overlap:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultsig",
        description="Shift-invariant sparse coding fault-signature pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--preset", choices=("faultlab", "planted", "signature"),
                         default="faultlab")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--config", help="TOML file with a full SynthConfig")
    p_synth.add_argument("--per-class", type=int, dest="per_class")
    p_synth.add_argument("--p", type=int)
    p_synth.add_argument("--sample-rate", type=float, dest="sample_rate")
    p_synth.add_argument("--kind", choices=("voltage", "current"), default="voltage")
    p_synth.add_argument("--n-bases", type=int, dest="n_bases", default=4,
                         help="planted preset: generating dictionary size")
    p_synth.add_argument("--q", type=int, default=250)
    p_synth.add_argument("--m", type=int, default=200)
    p_synth.add_argument("--activations", type=int, default=3)
    p_synth.add_argument("--snr", type=float, default=10.0)
    p_synth.set_defaults(func=cmd_synth)

    p_learn = sub.add_parser("learn", help="learn a dictionary from a corpus")
    p_learn.add_argument("--corpus", required=True)
    p_learn.add_argument("--out", required=True)
    p_learn.add_argument("--seed", type=int, required=True)
    p_learn.add_argument("--n-bases", dest="n_bases", default="8",
                         help="dictionary size, or comma list for a sweep "
                              "(e.g. 8,16,32,64,128)")
    p_learn.add_argument("--basis-len", type=int, dest="basis_len", default=250)
    p_learn.add_argument("--beta", type=float, default=None)
    p_learn.add_argument("--iterations", type=int, default=100)
    p_learn.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    p_learn.add_argument("--tol", type=float, default=1e-5)
    p_learn.add_argument("--c", type=float, default=1.0)
    p_learn.add_argument("--threads", type=int, default=1)
    p_learn.add_argument("--class", dest="sweep_class", default="fault",
                         choices=("fault", "non-fault", "all"),
                         help="which sweeps to train on (default: fault)")
    p_learn.set_defaults(func=cmd_learn)

    def add_feature_args(p, dictionary_required):
        p.add_argument("--corpus", required=True)
        p.add_argument("--dictionary", required=dictionary_required)
        p.add_argument("--features", choices=("sisc", "wavelet", "both"),
                       default="sisc")
        p.add_argument("--wavelet-levels", type=int, dest="wavelet_levels",
                       default=4)
        p.add_argument("--out", required=True)

    p_feat = sub.add_parser("features", help="export a feature matrix CSV")
    add_feature_args(p_feat, dictionary_required=False)
    p_feat.set_defaults(func=cmd_features)

    p_cv = sub.add_parser("crossval", help="k-fold cross-validation report")
    add_feature_args(p_cv, dictionary_required=False)
    p_cv.add_argument("--k", type=int, default=10)
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.add_argument("--n-trees", type=int, dest="n_trees", default=100)
    p_cv.add_argument("--max-splits", type=int, dest="max_splits", default=32)
    p_cv.add_argument("--min-leaf", type=int, dest="min_leaf", default=3)
    p_cv.add_argument("--method", choices=("bagging", "boosting"),
                      default="bagging")
    p_cv.set_defaults(func=cmd_crossval)

    p_rank = sub.add_parser("rank", help="per-basis separability ranking")
    add_feature_args(p_rank, dictionary_required=False)
    p_rank.set_defaults(func=cmd_rank)

    p_cmp = sub.add_parser("compare", help="basis vs equivalent wavelet filter")
    p_cmp.add_argument("--dictionary", required=True)
    p_cmp.add_argument("--basis", type=int, required=True)
    p_cmp.add_argument("--level", type=int, default=3)
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
