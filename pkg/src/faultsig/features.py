"""Fixed-length feature vectors from sweeps.

Two extractors: rectified cross-correlation against dictionary bases
(one feature per basis, the similarity reading of a convolution layer
followed by ReLU and a sum), and multilevel wavelet band energies.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as _fft

from .dsp import WaveletFilterPair, dwt_multilevel, next_pow2, sym4
from .sisc import Dictionary, _samples


@dataclass
class FeatureMatrix:
    """Rows = observations, columns = named features, labels aligned."""

    values: np.ndarray
    labels: np.ndarray
    column_names: list
    ids: list

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self):
        m, d = self.values.shape
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite entries")
        if self.labels.shape != (m,):
            raise ValueError(f"{self.labels.shape[0]} labels for {m} rows")
        if len(self.column_names) != d:
            raise ValueError(f"{len(self.column_names)} names for {d} columns")
        if len(self.ids) != m:
            raise ValueError(f"{len(self.ids)} ids for {m} rows")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        header = ",".join(list(self.column_names) + ["label"])
        lines = [header]
        for row, label in zip(self.values, self.labels):
            lines.append(",".join(f"{v:.17g}" for v in row) + f",{int(label)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sisc_features(x, dictionary: Dictionary) -> np.ndarray:
    """f_j = sum over shifts of max(0, <x[t:t+q], a_j>)."""
    arr = _samples(x)
    q = dictionary.q
    if q > arr.size:
        raise ValueError(f"basis length {q} exceeds sweep length {arr.size}")
    n_shifts = arr.size - q + 1
    nfft = max(2, next_pow2(arr.size))
    x_hat = _fft.rfft(arr, nfft)
    bases_hat = _fft.rfft(dictionary.bases, nfft, axis=1)
    corr = _fft.irfft(x_hat[None, :] * np.conj(bases_hat), nfft, axis=1)[:, :n_shifts]
    return np.maximum(corr, 0.0).sum(axis=1)


def wavelet_features(x, levels: int = 4,
                     filters: WaveletFilterPair | None = None) -> np.ndarray:
    """Band energies [detail_1, ..., detail_levels, approximation]."""
    arr = _samples(x)
    details, approx = dwt_multilevel(arr, levels, filters or sym4())
    energies = [float(np.sum(d ** 2)) for d in details]
    energies.append(float(np.sum(approx ** 2)))
    return np.array(energies)


def build_feature_matrix(corpus, dictionary: Dictionary | None = None,
                         wavelet_levels: int | None = None) -> FeatureMatrix:
    """Extract features for every sweep; SISC columns first, then wavelet
    band energies when both extractors are requested."""
    if len(corpus) == 0:
        raise ValueError("corpus must be non-empty")
    if dictionary is None and wavelet_levels is None:
        raise ValueError("need a dictionary, wavelet levels, or both")
    p = _samples(corpus[0]).size
    for s in corpus:
        if _samples(s).size != p:
            raise ValueError("corpus sweeps must share a common length")
    names = []
    if dictionary is not None:
        names += [f"basis_{j + 1}" for j in range(dictionary.n)]
    if wavelet_levels is not None:
        names += [f"wavelet_d{k + 1}" for k in range(wavelet_levels)]
        names.append(f"wavelet_a{wavelet_levels}")
    rows = []
    for s in corpus:
        parts = []
        if dictionary is not None:
            parts.append(sisc_features(s, dictionary))
        if wavelet_levels is not None:
            parts.append(wavelet_features(s, wavelet_levels))
        rows.append(np.concatenate(parts))
    labels = np.array([1 if getattr(s, "label", "fault") == "fault" else 0
                       for s in corpus])
    ids = [getattr(s, "id", str(i)) for i, s in enumerate(corpus)]
    return FeatureMatrix(values=np.stack(rows), labels=labels,
                         column_names=names, ids=ids)
