"""faultsig: shift-invariant sparse coding for high-frequency fault signatures.

Pipeline pieces: synthetic sweep corpora with planted ground truth,
dictionary learning by alternating convex minimization, rectified
cross-correlation and wavelet-energy features, tree-ensemble
cross-validation and single-split separability ranking.
"""

__version__ = "0.1.0"

from .corpus import (
    FAULT,
    NON_FAULT,
    AMCarrier,
    BackgroundSpec,
    CorpusError,
    FaultSpec,
    PlantedTruth,
    Sweep,
    SynthConfig,
    build_faultlab_corpus,
    gen_background,
    gen_fault,
    gen_planted_corpus,
    load_corpus,
    load_planted_truth,
    save_corpus,
    save_planted_truth,
    signature_config,
    signature_waveform,
)
from .dsp import (
    WaveletFilterPair,
    convolve_full,
    cross_correlate_valid,
    dwt_multilevel,
    idwt_multilevel,
    power_spectrum,
    sym4,
)
from .evaluate import (
    CVReport,
    SeparabilityReport,
    SplitResult,
    StratificationError,
    WaveletComparison,
    best_split,
    compare_wavelet_basis,
    equivalent_wavelet_filter,
    gini_impurity,
    kfold_cv,
    rank_bases,
    stratified_folds,
)
from .features import FeatureMatrix, build_feature_matrix, sisc_features, wavelet_features
from .forest import ForestModel, ForestParams, train_forest
from .sisc import (
    ConvergenceFailure,
    Dictionary,
    MatchResult,
    ObjectiveValue,
    SparseCode,
    TrainConfig,
    TrainHistory,
    basis_match_score,
    infer_codes,
    learn_dictionary,
    objective,
    reconstruct,
    update_dictionary,
)
