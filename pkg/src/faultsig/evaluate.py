"""Dictionary validation and per-basis separability scoring.

Dictionaries are validated by stratified k-fold cross-validation of a
tree ensemble on the extracted features; individual bases are scored
by the accuracy of the best single-threshold classifier on their
feature, with the threshold chosen by minimum weighted Gini impurity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from . import jsonio
from .dsp import WaveletFilterPair, next_pow2, sym4
from .forest import ForestModel, ForestParams, train_forest


class StratificationError(ValueError):
    """A cross-validation training fold lost one of the classes."""


def gini_impurity(counts) -> float:
    """1 - sum(p_i^2) over class proportions."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a non-empty 1-D sequence")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("counts must sum to a positive total")
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class SplitResult:
    threshold: float | None
    weighted_gini: float
    separability_percent: float
    degenerate: bool = False


def best_split(values, labels) -> SplitResult:
    """Scan every midpoint between consecutive distinct sorted values.

    The reported threshold minimizes the size-weighted two-sided Gini
    impurity (ties to the smaller threshold); separability is the
    accuracy of the majority-vote classifier at that threshold, in
    percent.  A constant feature is flagged degenerate and scored with
    the unsplit impurity and the majority-class rate.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if values.ndim != 1 or values.shape != labels.shape:
        raise ValueError("values and labels must be equal-length 1-D sequences")
    n = values.size
    if n < 2:
        raise ValueError("need at least 2 observations")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least one observation of each class")
    if not np.all(np.isin(classes, (0, 1))):
        raise ValueError("labels must be 0/1")

    order = np.argsort(values, kind="stable")
    v = values[order]
    y = labels[order]
    n1 = int(y.sum())
    n0 = n - n1
    majority_rate = 100.0 * max(n0, n1) / n

    distinct = v[1:] > v[:-1]
    if not distinct.any():
        return SplitResult(threshold=None,
                           weighted_gini=gini_impurity((n0, n1)),
                           separability_percent=majority_rate,
                           degenerate=True)

    left1 = np.cumsum(y)[:-1]
    left_n = np.arange(1, n)
    left0 = left_n - left1
    right_n = n - left_n
    right1 = n1 - left1
    right0 = n0 - left0
    gl = 1.0 - ((left0 / left_n) ** 2 + (left1 / left_n) ** 2)
    gr = 1.0 - ((right0 / right_n) ** 2 + (right1 / right_n) ** 2)
    weighted = (left_n * gl + right_n * gr) / n
    weighted = np.where(distinct, weighted, np.inf)
    best = int(np.argmin(weighted))            # first hit = smaller threshold
    threshold = 0.5 * (v[best] + v[best + 1])
    correct = max(left0[best], left1[best]) + max(right0[best], right1[best])
    return SplitResult(threshold=float(threshold),
                       weighted_gini=float(weighted[best]),
                       separability_percent=100.0 * correct / n,
                       degenerate=False)


@dataclass(frozen=True)
class RankedFeature:
    rank: int
    column: int
    name: str
    threshold: float | None
    weighted_gini: float
    separability_percent: float
    gini_separability_percent: float   # 100*(1-2*GI), the alternative reading
    degenerate: bool


@dataclass
class SeparabilityReport:
    entries: list
    n_observations: int

    def to_payload(self) -> dict:
        return {
            "n_observations": self.n_observations,
            "entries": [
                {"rank": e.rank, "column": e.column, "name": e.name,
                 "threshold": e.threshold, "weighted_gini": e.weighted_gini,
                 "separability_percent": e.separability_percent,
                 "gini_separability_percent": e.gini_separability_percent,
                 "degenerate": e.degenerate}
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        jsonio.dump(self.to_payload(), path)

    def to_text(self) -> str:
        lines = [
            f"{'Functions number':>16}   {'Separability (%)':>16}",
            "-" * 35,
        ]
        for e in self.entries:
            lines.append(f"{e.name:>16}   {e.separability_percent:>16.2f}")
        return "\n".join(lines) + "\n"


def rank_bases(features, labels=None) -> SeparabilityReport:
    """Score every feature column by best_split, sorted most separable
    first; equal scores keep column order."""
    if labels is None:
        values, labels, names = features.values, features.labels, features.column_names
    else:
        values = np.atleast_2d(np.asarray(features, dtype=np.float64))
        names = [f"feature_{j + 1}" for j in range(values.shape[1])]
    labels = np.asarray(labels, dtype=np.int64)
    splits = [best_split(values[:, j], labels) for j in range(values.shape[1])]
    order = sorted(range(len(splits)),
                   key=lambda j: (-splits[j].separability_percent, j))
    entries = []
    for rank, j in enumerate(order, start=1):
        s = splits[j]
        entries.append(RankedFeature(
            rank=rank, column=j, name=names[j], threshold=s.threshold,
            weighted_gini=s.weighted_gini,
            separability_percent=s.separability_percent,
            gini_separability_percent=100.0 * (1.0 - 2.0 * s.weighted_gini),
            degenerate=s.degenerate))
    return SeparabilityReport(entries=entries, n_observations=values.shape[0])


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldResult:
    fold: int
    accuracy: float
    true_positive_rate: float
    true_negative_rate: float
    test_indices: tuple


@dataclass
class CVReport:
    folds: list
    k: int
    seed: int
    mean_accuracy: float
    mean_tpr: float
    mean_tnr: float
    params: dict = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "k": self.k, "seed": self.seed,
            "mean_accuracy": self.mean_accuracy,
            "mean_true_positive_rate": self.mean_tpr,
            "mean_true_negative_rate": self.mean_tnr,
            "params": self.params,
            "folds": [
                {"fold": f.fold, "accuracy": f.accuracy,
                 "true_positive_rate": f.true_positive_rate,
                 "true_negative_rate": f.true_negative_rate,
                 "test_indices": list(f.test_indices)}
                for f in self.folds
            ],
        }

    def save(self, path) -> None:
        jsonio.dump(self.to_payload(), path)


def stratified_folds(labels, k: int, seed: int) -> list:
    """k disjoint test folds covering every row once, class-balanced.

    Rows of each class are shuffled and dealt round-robin, continuing
    the fold cursor across classes so total fold sizes stay even.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds {n} observations")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 0xF01D))))
    folds = [[] for _ in range(k)]
    cursor = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for i in idx:
            folds[cursor % k].append(int(i))
            cursor += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def _rate(num: int, den: int) -> float:
    return num / den if den > 0 else math.nan


def kfold_cv(X, y, k: int = 10, params: ForestParams | None = None,
             seed: int = 0) -> CVReport:
    """Stratified k-fold cross-validation of a tree ensemble.

    Every row is tested exactly once; a training fold missing one of
    the classes raises StratificationError.  Fold TPR/TNR are NaN when
    the fold holds no row of that class (tiny-k edge); means skip NaNs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    params = params or ForestParams()
    folds = stratified_folds(y, k, seed)
    fold_seeds = [int(s.generate_state(1, dtype=np.uint64)[0])
                  for s in np.random.SeedSequence((int(seed), 0xCF0)).spawn(k)]
    results = []
    for fi, test_idx in enumerate(folds):
        mask = np.ones(y.size, dtype=bool)
        mask[test_idx] = False
        train_idx = np.flatnonzero(mask)
        if np.unique(y[train_idx]).size < 2:
            raise StratificationError(
                f"training fold {fi} lost a class ({y.size} rows, k={k})")
        model = train_forest(X[train_idx], y[train_idx], params,
                             seed=fold_seeds[fi])
        pred = model.predict(X[test_idx])
        truth = y[test_idx]
        tp = int(np.sum((pred == 1) & (truth == 1)))
        tn = int(np.sum((pred == 0) & (truth == 0)))
        fp = int(np.sum((pred == 1) & (truth == 0)))
        fn = int(np.sum((pred == 0) & (truth == 1)))
        results.append(FoldResult(
            fold=fi,
            accuracy=(tp + tn) / truth.size,
            true_positive_rate=_rate(tp, tp + fn),
            true_negative_rate=_rate(tn, tn + fp),
            test_indices=tuple(int(i) for i in test_idx)))
    accs = [f.accuracy for f in results]
    tprs = [f.true_positive_rate for f in results]
    tnrs = [f.true_negative_rate for f in results]
    return CVReport(
        folds=results, k=k, seed=int(seed),
        mean_accuracy=float(np.mean(accs)),
        mean_tpr=float(np.nanmean(tprs)),
        mean_tnr=float(np.nanmean(tnrs)),
        params={"n_trees": params.n_trees, "max_splits": params.max_splits,
                "min_leaf": params.min_leaf, "method": params.method})


# ---------------------------------------------------------------------------
# Basis vs wavelet comparison
# ---------------------------------------------------------------------------

def equivalent_wavelet_filter(level: int,
                              filters: WaveletFilterPair | None = None) -> np.ndarray:
    """Full-rate impulse response of the level-`level` detail branch:
    the lowpass cascade convolved with the upsampled highpass."""
    if not 1 <= int(level) <= 4:
        raise ValueError(f"level must be in 1..4, got {level}")
    level = int(level)
    filters = filters or sym4()

    def upsample(h, factor):
        if factor == 1:
            return h
        out = np.zeros((h.size - 1) * factor + 1)
        out[::factor] = h
        return out

    g = upsample(filters.highpass, 2 ** (level - 1))
    for lev in range(level - 1):
        g = np.convolve(upsample(filters.lowpass, 2 ** lev), g)
    return g


@dataclass(frozen=True)
class WaveletComparison:
    time_correlation: float
    spectral_overlap: float
    level: int


def _pad_to(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[:x.size] = x
    return out


def compare_signals(a, b) -> tuple:
    """(max |circular normalized cross-correlation|, cosine similarity
    of magnitude spectra), both over a common zero-padded length."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = next_pow2(max(a.size, b.size))
    ap, bp = _pad_to(a, n), _pad_to(b, n)
    na, nb = np.linalg.norm(ap), np.linalg.norm(bp)
    if na == 0.0 or nb == 0.0:
        return 0.0, 0.0
    fa, fb = _fft.rfft(ap), _fft.rfft(bp)
    corr = _fft.irfft(fa * np.conj(fb), n)
    time_corr = float(np.abs(corr).max() / (na * nb))
    ma, mb = np.abs(fa), np.abs(fb)
    denom = np.linalg.norm(ma) * np.linalg.norm(mb)
    overlap = float(np.dot(ma, mb) / denom) if denom > 0 else 0.0
    return time_corr, overlap


def compare_wavelet_basis(basis, level: int,
                          filters: WaveletFilterPair | None = None) -> WaveletComparison:
    """Score a learned basis against the equivalent detail filter of one
    decomposition level, in time (shift/sign-invariant correlation) and
    frequency (magnitude-spectrum cosine)."""
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 1 or basis.size == 0:
        raise ValueError("basis must be a non-empty 1-D array")
    g = equivalent_wavelet_filter(level, filters)
    time_corr, overlap = compare_signals(basis, g)
    return WaveletComparison(time_correlation=time_corr,
                             spectral_overlap=overlap, level=int(level))
