"""Synthetic sweep corpora with planted ground truth.

Two corpus families are provided: "faultlab" corpora that emulate the
phenomenology of high-frequency feeder recordings (steady narrowband
background plus clustered damped-sinusoid transients in the fault
class), and "planted" corpora synthesized from a known dictionary and
sparse activations, used as recovery oracles.

Every generator is a pure function of (config, seed); corpora are
bit-reproducible from their manifest alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.fft as _fft

from . import jsonio
from .sisc import Dictionary, SparseCode, reconstruct

FAULT = "fault"
NON_FAULT = "non-fault"
LABELS = (FAULT, NON_FAULT)
KINDS = ("voltage", "current")

_MANIFEST_NAME = "manifest.json"
_TRUTH_NAME = "truth.json"


class CorpusError(Exception):
    """Raised when a corpus directory is missing, inconsistent, or corrupt."""


@dataclass
class Sweep:
    """One fixed-rate sampled record; the observation unit of a corpus."""

    samples: np.ndarray
    sample_rate: float
    label: str
    id: str
    kind: str = "voltage"
    seed: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError(f"sweep {self.id!r}: samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"sweep {self.id!r}: non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sweep {self.id!r}: sample rate must be positive")
        if self.label not in LABELS:
            raise ValueError(f"sweep {self.id!r}: label must be one of {LABELS}")
        if self.kind not in KINDS:
            raise ValueError(f"sweep {self.id!r}: kind must be one of {KINDS}")

    @property
    def p(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class AMCarrier:
    """Amplitude-modulated narrowband interferer (broadcast-band style)."""

    freq_hz: float
    amplitude: float
    mod_depth: float = 0.4
    mod_freq_hz: float = 700.0


@dataclass(frozen=True)
class BackgroundSpec:
    tone_freq_hz: float = 10.0e3
    tone_amplitude: float = 0.35
    am_carriers: tuple = (
        AMCarrier(531.0e3, 0.18, 0.40, 700.0),
        AMCarrier(774.0e3, 0.12, 0.50, 450.0),
        AMCarrier(891.0e3, 0.08, 0.30, 1100.0),
    )
    noise_sigma: float = 0.12


@dataclass(frozen=True)
class FaultSpec:
    """Damped-sinusoid transient population added to fault sweeps.

    Onset times concentrate around mains-voltage zero crossings with
    von Mises-style strength `crossing_concentration` (0 = uniform).
    """

    transient_rate: float = 8.0
    freq_range_hz: tuple = (20.0e3, 400.0e3)
    damping_range: tuple = (8.0e3, 6.0e4)
    amplitude_range: tuple = (0.5, 2.0)
    crossing_concentration: float = 4.0
    phase_range: tuple = (0.0, 2.0 * math.pi)


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 566
    p: int = 40000
    sample_rate: float = 2.0e6
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    fault: FaultSpec = field(default_factory=FaultSpec)
    mains_freq_hz: float = 50.0
    master_seed: int = 0

    def validate(self):
        if self.n_per_class < 0:
            raise ValueError("n_per_class must be >= 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.mains_freq_hz <= 0:
            raise ValueError("mains_freq_hz must be positive")
        bg = self.background
        if bg.tone_amplitude < 0 or bg.noise_sigma < 0:
            raise ValueError("background amplitudes must be >= 0")
        for c in bg.am_carriers:
            if c.amplitude < 0 or c.freq_hz <= 0 or not 0 <= c.mod_depth <= 1:
                raise ValueError(f"invalid AM carrier spec: {c}")
        f = self.fault
        if f.transient_rate < 0:
            raise ValueError("transient_rate must be >= 0")
        for name, rng_ in (("freq_range_hz", f.freq_range_hz),
                           ("damping_range", f.damping_range),
                           ("amplitude_range", f.amplitude_range),
                           ("phase_range", f.phase_range)):
            lo, hi = rng_
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"fault {name} must satisfy lo <= hi, got {rng_}")
        if f.freq_range_hz[0] <= 0:
            raise ValueError("fault frequencies must be positive")
        if f.crossing_concentration < 0:
            raise ValueError("crossing_concentration must be >= 0")

    @property
    def duration(self) -> float:
        return self.p / self.sample_rate


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_seed(master_seed: int, index: int) -> int:
    """Per-sweep seed so parallel and serial corpus builds coincide."""
    ss = np.random.SeedSequence((int(master_seed), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _background_samples(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    bg = cfg.background
    t = np.arange(cfg.p) / cfg.sample_rate
    x = bg.tone_amplitude * np.sin(2.0 * np.pi * bg.tone_freq_hz * t + rng.uniform(0, 2 * np.pi))
    for c in bg.am_carriers:
        carrier_phase = rng.uniform(0, 2 * np.pi)
        mod_phase = rng.uniform(0, 2 * np.pi)
        envelope = 1.0 + c.mod_depth * np.sin(2.0 * np.pi * c.mod_freq_hz * t + mod_phase)
        x += c.amplitude * envelope * np.sin(2.0 * np.pi * c.freq_hz * t + carrier_phase)
    if bg.noise_sigma > 0:
        x += rng.normal(0.0, bg.noise_sigma, size=cfg.p)
    return x


def _sample_onsets(cfg: SynthConfig, rng: np.random.Generator, k: int,
                   mains_phase: float) -> np.ndarray:
    """Draw k onset times whose density on [0, duration) is
    exp(kappa * cos(2 * (w_mains t + phase))), peaking at zero crossings."""
    if k == 0:
        return np.empty(0)
    kappa = cfg.fault.crossing_concentration
    duration = cfg.duration
    u = rng.random(k)
    if kappa == 0.0:
        return u * duration
    grid = np.linspace(0.0, duration, 8193)
    theta = 2.0 * np.pi * cfg.mains_freq_hz * grid + mains_phase
    log_density = kappa * (np.cos(2.0 * theta) - 1.0)
    density = np.exp(log_density)
    cell = np.diff(grid)
    mass = 0.5 * (density[:-1] + density[1:]) * cell
    cdf = np.concatenate(([0.0], np.cumsum(mass)))
    total = cdf[-1]
    if total <= 0.0:
        # concentration so extreme the grid underflows: collapse to the peak
        return np.full(k, grid[np.argmax(log_density)])
    targets = u * total
    idx = np.searchsorted(cdf, targets, side="right") - 1
    idx = np.clip(idx, 0, len(mass) - 1)
    frac = (targets - cdf[idx]) / np.where(mass[idx] > 0, mass[idx], 1.0)
    return grid[idx] + np.clip(frac, 0.0, 1.0) * cell[idx]


def mains_zero_crossings(cfg: SynthConfig, mains_phase: float) -> np.ndarray:
    """Times in [0, duration) where sin(w_mains t + phase) crosses zero."""
    w = 2.0 * np.pi * cfg.mains_freq_hz
    k_lo = math.ceil(mains_phase / np.pi - 1e-12)
    k_hi = math.floor((w * cfg.duration + mains_phase) / np.pi + 1e-12)
    ks = np.arange(k_lo, k_hi + 1)
    times = (ks * np.pi - mains_phase) / w
    return times[(times >= 0) & (times < cfg.duration)]


def gen_background(cfg: SynthConfig, seed: int, sweep_id: str = "",
                   kind: str = "voltage") -> Sweep:
    """Non-fault sweep: narrowband tone + AM interferers + white noise."""
    cfg.validate()
    rng = _rng(seed)
    x = _background_samples(cfg, rng)
    return Sweep(samples=x, sample_rate=cfg.sample_rate, label=NON_FAULT,
                 id=sweep_id or f"N{seed & 0xFFFFFFFF:08x}", kind=kind, seed=int(seed))


def gen_fault(cfg: SynthConfig, seed: int, sweep_id: str = "",
              kind: str = "voltage") -> Sweep:
    """Fault sweep: background plus damped-sinusoid transients clustered
    near mains zero crossings.

    The background portion is drawn first from the same stream, so a
    transient rate of zero reproduces gen_background bit for bit.
    """
    cfg.validate()
    rng = _rng(seed)
    x = _background_samples(cfg, rng)
    spec = cfg.fault
    mains_phase = rng.uniform(0, 2 * np.pi)
    k = int(rng.poisson(spec.transient_rate))
    onsets = _sample_onsets(cfg, rng, k, mains_phase)
    fs = cfg.sample_rate
    for t0 in onsets:
        lo_f, hi_f = spec.freq_range_hz
        freq = lo_f if lo_f == hi_f else math.exp(rng.uniform(math.log(lo_f), math.log(hi_f)))
        damping = rng.uniform(*spec.damping_range)
        amp = rng.uniform(*spec.amplitude_range)
        phase = rng.uniform(*spec.phase_range)
        start = int(math.ceil(t0 * fs))
        if start >= cfg.p:
            continue
        tau = (np.arange(start, cfg.p) - t0 * fs) / fs
        x[start:] += amp * np.exp(-damping * tau) * np.sin(2.0 * np.pi * freq * tau + phase)
    return Sweep(samples=x, sample_rate=cfg.sample_rate, label=FAULT,
                 id=sweep_id or f"F{seed & 0xFFFFFFFF:08x}", kind=kind, seed=int(seed))


def build_faultlab_corpus(cfg: SynthConfig, kind: str = "voltage") -> list:
    """n_per_class fault + n_per_class non-fault sweeps, seeded per sweep."""
    cfg.validate()
    sweeps = []
    for i in range(cfg.n_per_class):
        seed = derive_seed(cfg.master_seed, i)
        sweeps.append(gen_fault(cfg, seed, sweep_id=f"F{i:05d}", kind=kind))
    for i in range(cfg.n_per_class):
        seed = derive_seed(cfg.master_seed, cfg.n_per_class + i)
        sweeps.append(gen_background(cfg, seed, sweep_id=f"N{i:05d}", kind=kind))
    return sweeps


def signature_config(base: SynthConfig | None = None,
                     freq_hz: float = 90.0e3,
                     damping: float = 2.5e4,
                     amplitude: float = 1.2) -> SynthConfig:
    """Config whose fault class carries exactly one repeating waveform:
    the transient frequency, damping, and phase ranges are collapsed."""
    cfg = base if base is not None else SynthConfig()
    sig = FaultSpec(
        transient_rate=cfg.fault.transient_rate,
        freq_range_hz=(freq_hz, freq_hz),
        damping_range=(damping, damping),
        amplitude_range=(amplitude, amplitude),
        crossing_concentration=cfg.fault.crossing_concentration,
        phase_range=(0.0, 0.0),
    )
    return replace(cfg, fault=sig)


def signature_waveform(cfg: SynthConfig, q: int) -> np.ndarray:
    """The planted signature of a signature_config corpus, sampled over q
    points; only meaningful when the fault ranges are degenerate."""
    spec = cfg.fault
    if spec.freq_range_hz[0] != spec.freq_range_hz[1]:
        raise ValueError("config does not define a single signature waveform")
    tau = np.arange(q) / cfg.sample_rate
    wave = (spec.amplitude_range[0] * np.exp(-spec.damping_range[0] * tau)
            * np.sin(2.0 * np.pi * spec.freq_range_hz[0] * tau + spec.phase_range[0]))
    return wave


@dataclass
class PlantedTruth:
    """Ground truth behind a planted corpus: the generating dictionary,
    the sparse activations of every sweep, and the injected noise level."""

    true_dictionary: Dictionary
    true_codes: list
    snr_db: float


def _smooth_unit_basis(rng: np.random.Generator, q: int) -> np.ndarray:
    """Random smooth unit-norm waveform: spectrally lowpassed white noise."""
    noise = rng.normal(size=q)
    spec = _fft.rfft(noise)
    f = np.arange(spec.size)
    cutoff = max(q / 16.0, 2.0)
    spec *= np.exp(-0.5 * (f / cutoff) ** 2)
    basis = _fft.irfft(spec, q)
    basis -= basis.mean()
    norm = np.linalg.norm(basis)
    if norm == 0.0:
        basis = np.ones(q)
        norm = math.sqrt(q)
    return basis / norm


def _non_overlapping_shifts(rng: np.random.Generator, k: int, p: int, q: int) -> np.ndarray:
    """k start indices in [0, p-q] with pairwise spacing >= q (gap method)."""
    slack = p - k * q
    if slack < 0:
        raise ValueError(
            f"infeasible sparsity: {k} activations of length {q} exceed signal length {p}"
        )
    gaps = np.sort(rng.random(k)) * slack
    return (np.floor(gaps).astype(int) + q * np.arange(k)).clip(0, p - q)


def gen_planted_corpus(n_bases: int, q: int, m: int, p: int,
                       activations_per_sweep: int, snr_db: float, seed: int,
                       sample_rate: float = 2.0e6):
    """Corpus synthesized as dictionary * sparse codes + white noise.

    Returns (sweeps, PlantedTruth).  snr_db = inf plants no noise.
    Activation shifts never overlap, amplitudes are signed, and each
    sweep carries exactly `activations_per_sweep` activations spread
    over randomly chosen bases.
    """
    if n_bases < 1:
        raise ValueError("n_bases must be >= 1")
    if not 1 <= q <= p:
        raise ValueError("need 1 <= q <= p")
    if m < 0:
        raise ValueError("m must be >= 0")
    if activations_per_sweep < 1:
        raise ValueError("activations_per_sweep must be >= 1")
    if activations_per_sweep * q > p:
        raise ValueError(
            f"infeasible sparsity: {activations_per_sweep} activations of "
            f"length {q} exceed signal length {p}"
        )
    rng = _rng(seed)
    bases = np.stack([_smooth_unit_basis(rng, q) for _ in range(n_bases)])
    dictionary = Dictionary(bases=bases, c=1.0, sample_rate=sample_rate,
                            metadata={"trained_on": "planted-truth"})
    sweeps, codes = [], []
    for i in range(m):
        sweep_seed = derive_seed(seed, i)
        srng = _rng(sweep_seed)
        shifts = _non_overlapping_shifts(srng, activations_per_sweep, p, q)
        owners = srng.integers(0, n_bases, size=activations_per_sweep)
        values = (srng.uniform(0.5, 1.5, size=activations_per_sweep)
                  * srng.choice((-1.0, 1.0), size=activations_per_sweep))
        per_basis = []
        for j in range(n_bases):
            mask = owners == j
            order = np.argsort(shifts[mask])
            per_basis.append((shifts[mask][order], values[mask][order]))
        code = SparseCode.from_pairs(per_basis, n_shifts=p - q + 1)
        clean = reconstruct(dictionary, code, p)
        if math.isfinite(snr_db):
            rms = float(np.sqrt(np.mean(clean ** 2)))
            sigma = rms / (10.0 ** (snr_db / 20.0))
            samples = clean + srng.normal(0.0, sigma, size=p)
        else:
            samples = clean
        sweeps.append(Sweep(samples=samples, sample_rate=sample_rate, label=FAULT,
                            id=f"P{i:05d}", seed=sweep_seed))
        codes.append(code)
    return sweeps, PlantedTruth(true_dictionary=dictionary, true_codes=codes,
                                snr_db=float(snr_db))


# ---------------------------------------------------------------------------
# Disk format: manifest.json plus one headerless little-endian float64
# file per sweep.  Round trips are bit-exact.
# ---------------------------------------------------------------------------

def save_corpus(sweeps: list, directory) -> None:
    directory = Path(directory)
    if not sweeps:
        raise ValueError("refusing to save an empty corpus")
    p = sweeps[0].p
    fs = sweeps[0].sample_rate
    for s in sweeps:
        s.validate()
        if s.p != p or s.sample_rate != fs:
            raise ValueError(f"sweep {s.id!r}: heterogeneous corpus "
                             f"(p={s.p}, sample_rate={s.sample_rate})")
    ids = [s.id for s in sweeps]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sweep ids")
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in sweeps:
        fname = f"{s.id}.f64"
        s.samples.astype("<f8", copy=False).tofile(directory / fname)
        entries.append({"id": s.id, "label": s.label, "kind": s.kind,
                        "seed": int(s.seed), "file": fname})
    manifest = {"version": 1, "sample_rate": fs, "p": int(p), "entries": entries}
    jsonio.dump(manifest, directory / _MANIFEST_NAME)


def load_corpus(directory) -> list:
    directory = Path(directory)
    manifest_path = directory / _MANIFEST_NAME
    if not manifest_path.is_file():
        raise CorpusError(f"missing manifest: {manifest_path}")
    try:
        manifest = jsonio.load(manifest_path)
    except ValueError as exc:
        raise CorpusError(f"unreadable manifest: {exc}") from exc
    for key in ("version", "sample_rate", "p", "entries"):
        if key not in manifest:
            raise CorpusError(f"manifest missing key {key!r}")
    p = int(manifest["p"])
    fs = float(manifest["sample_rate"])
    sweeps = []
    for entry in manifest["entries"]:
        sid = entry.get("id", "<missing id>")
        for key in ("id", "label", "kind", "seed", "file"):
            if key not in entry:
                raise CorpusError(f"sweep {sid!r}: manifest entry missing {key!r}")
        if entry["label"] not in LABELS:
            raise CorpusError(f"sweep {sid!r}: invalid label {entry['label']!r}")
        if entry["kind"] not in KINDS:
            raise CorpusError(f"sweep {sid!r}: invalid kind {entry['kind']!r}")
        fname = entry["file"]
        if Path(fname).name != fname:
            raise CorpusError(f"sweep {sid!r}: file name {fname!r} is not a plain name")
        fpath = directory / fname
        if not fpath.is_file():
            raise CorpusError(f"sweep {sid!r}: missing sample file {fname}")
        raw = np.fromfile(fpath, dtype="<f8")
        if raw.size != p:
            raise CorpusError(
                f"sweep {sid!r}: {fname} holds {raw.size} samples, manifest says {p}"
            )
        if not np.all(np.isfinite(raw)):
            raise CorpusError(f"sweep {sid!r}: non-finite samples in {fname}")
        sweeps.append(Sweep(samples=raw, sample_rate=fs, label=entry["label"],
                            id=entry["id"], kind=entry["kind"], seed=int(entry["seed"])))
    return sweeps


def save_planted_truth(truth: PlantedTruth, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d = truth.true_dictionary
    codes = []
    for i, code in enumerate(truth.true_codes):
        per_basis = []
        for j in range(code.n_bases):
            shifts, values = code.activations[j]
            per_basis.append({"basis": j, "shifts": [int(t) for t in shifts],
                              "values": list(map(float, values))})
        codes.append({"index": i, "n_shifts": int(code.n_shifts), "bases": per_basis})
    payload = {
        "version": 1,
        "snr_db": truth.snr_db,
        "dictionary": d.to_payload(),
        "codes": codes,
    }
    jsonio.dump(payload, directory / _TRUTH_NAME)


def load_planted_truth(directory) -> PlantedTruth:
    path = Path(directory) / _TRUTH_NAME
    if not path.is_file():
        raise CorpusError(f"missing truth file: {path}")
    payload = jsonio.load(path)
    dictionary = Dictionary.from_payload(payload["dictionary"])
    codes = []
    for entry in payload["codes"]:
        per_basis = [(np.asarray(b["shifts"], dtype=int), np.asarray(b["values"]))
                     for b in entry["bases"]]
        codes.append(SparseCode.from_pairs(per_basis, n_shifts=int(entry["n_shifts"])))
    return PlantedTruth(true_dictionary=dictionary, true_codes=codes,
                        snr_db=float(payload["snr_db"]))
