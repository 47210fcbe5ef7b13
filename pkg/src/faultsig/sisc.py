"""Shift-invariant sparse coding by alternating convex minimization.

The model writes each sweep as a sum of short bases convolved with
sparse activation vectors,

    x_i  ~=  sum_j  a_j * s_ij ,

and minimizes  sum_i ||x_i - sum_j a_j * s_ij||^2  +  beta * sum |s|
subject to ||a_j||^2 <= c.  The problem is biconvex: the code step is
an L1-regularized least squares solved per sweep with an accelerated
proximal gradient method (monotone, FFT-based gradients), and the
basis step is a norm-constrained quadratic solved by projected
gradient on sufficient statistics accumulated over the batch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as _fft

from . import jsonio
from .dsp import next_pow2

_DICT_FILE_VERSION = 1

# rows per batched code solve; small enough to stay cache-resident
_SOLVE_CHUNK_CAP = 16


class ConvergenceFailure(RuntimeError):
    """Code solve hit its iteration cap before meeting tolerance.

    Carries the last iterate (`code`) and its subgradient optimality
    residual so callers can keep going or inspect the failure.
    """

    def __init__(self, message, code=None, optimality_residual=None):
        super().__init__(message)
        self.code = code
        self.optimality_residual = optimality_residual


@dataclass
class Dictionary:
    """A bank of `n` learned waveforms of common length `q`, each with
    squared norm at most `c`."""

    bases: np.ndarray
    c: float = 1.0
    beta: float | None = None
    sample_rate: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bases = np.atleast_2d(np.asarray(self.bases, dtype=np.float64))
        self.validate()

    def validate(self):
        if self.bases.ndim != 2 or self.bases.shape[0] < 1 or self.bases.shape[1] < 1:
            raise ValueError(f"bases must be a non-empty (n, q) array, got {self.bases.shape}")
        if not np.all(np.isfinite(self.bases)):
            raise ValueError("bases contain non-finite values")
        if self.c <= 0:
            raise ValueError("norm bound c must be positive")
        sq = np.sum(self.bases ** 2, axis=1)
        worst = float(sq.max())
        if worst > self.c + 1e-9:
            raise ValueError(f"basis squared norm {worst} exceeds bound c={self.c}")

    @property
    def n(self) -> int:
        return self.bases.shape[0]

    @property
    def q(self) -> int:
        return self.bases.shape[1]

    def to_payload(self) -> dict:
        return {
            "version": _DICT_FILE_VERSION,
            "n": self.n,
            "q": self.q,
            "c": float(self.c),
            "beta": None if self.beta is None else float(self.beta),
            "sample_rate": None if self.sample_rate is None else float(self.sample_rate),
            "bases": self.bases,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Dictionary":
        bases = np.asarray(payload["bases"], dtype=np.float64)
        d = cls(bases=bases, c=float(payload["c"]),
                beta=payload.get("beta"), sample_rate=payload.get("sample_rate"))
        if bases.shape != (int(payload["n"]), int(payload["q"])):
            raise ValueError("dictionary payload shape disagrees with n/q fields")
        return d

    def save(self, path) -> None:
        jsonio.dump(self.to_payload(), path)

    @classmethod
    def load(cls, path) -> "Dictionary":
        return cls.from_payload(jsonio.load(path))


@dataclass
class SparseCode:
    """Activations of one sweep: per basis, (shift, value) pairs with
    implicit zeros elsewhere.  Shifts are strictly increasing."""

    activations: list
    n_shifts: int
    objective: float | None = None
    optimality_residual: float | None = None
    iterations: int | None = None
    converged: bool | None = None

    @classmethod
    def from_pairs(cls, per_basis, n_shifts: int, **info) -> "SparseCode":
        acts = []
        for shifts, values in per_basis:
            shifts = np.asarray(shifts, dtype=np.int64)
            values = np.asarray(values, dtype=np.float64)
            acts.append((shifts, values))
        code = cls(activations=acts, n_shifts=int(n_shifts), **info)
        code.validate()
        return code

    @classmethod
    def from_dense(cls, dense: np.ndarray, **info) -> "SparseCode":
        dense = np.atleast_2d(np.asarray(dense, dtype=np.float64))
        acts = []
        for row in dense:
            idx = np.flatnonzero(row)
            acts.append((idx.astype(np.int64), row[idx].copy()))
        return cls(activations=acts, n_shifts=dense.shape[1], **info)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_bases, self.n_shifts))
        for j, (shifts, values) in enumerate(self.activations):
            dense[j, shifts] = values
        return dense

    def validate(self):
        if self.n_shifts < 1:
            raise ValueError("n_shifts must be >= 1")
        for j, (shifts, values) in enumerate(self.activations):
            if shifts.shape != values.shape:
                raise ValueError(f"basis {j}: shift/value length mismatch")
            if shifts.size == 0:
                continue
            if np.any(np.diff(shifts) <= 0):
                raise ValueError(f"basis {j}: shifts must be strictly increasing")
            if shifts[0] < 0 or shifts[-1] >= self.n_shifts:
                raise ValueError(f"basis {j}: shift out of range [0, {self.n_shifts})")
            if not np.all(np.isfinite(values)) or np.any(values == 0.0):
                raise ValueError(f"basis {j}: values must be finite and nonzero")

    @property
    def n_bases(self) -> int:
        return len(self.activations)

    @property
    def nnz(self) -> int:
        return sum(int(s.size) for s, _ in self.activations)

    def l1(self) -> float:
        return float(sum(np.abs(v).sum() for _, v in self.activations))


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    residual: float
    sparsity: float


@dataclass
class TrainConfig:
    n_bases: int
    basis_len: int
    beta: float | None = None            # None: 0.1 * median(||x||^2 / p) * q
    outer_iterations: int = 100
    batch_size: int | None = None        # None: full corpus if m <= 1000 else 256
    code_solver_tolerance: float = 1e-5
    basis_step_tolerance: float = 1e-8
    c: float = 1.0
    seed: int = 0
    code_max_iter: int = 500
    basis_max_iter: int = 300
    threads: int = 1

    def validate(self, p: int):
        if self.n_bases < 1:
            raise ValueError("n_bases must be >= 1")
        if not 8 <= self.basis_len <= p:
            raise ValueError(f"basis_len must satisfy 8 <= q <= p={p}, got {self.basis_len}")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.code_solver_tolerance <= 0 or self.basis_step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class IterationStats:
    iteration: int
    total: float
    residual: float
    sparsity: float
    mean_nonzeros: float
    wall_time: float
    dead_bases: tuple = ()
    failed_sweeps: int = 0
    batch_size: int = 0


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    beta: float | None = None

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.rows])

    def to_csv(self, path) -> None:
        lines = ["iteration,total,residual,sparsity,mean_nonzeros,wall_time,"
                 "dead_bases,failed_sweeps,batch_size"]
        for r in self.rows:
            dead = ";".join(str(j) for j in r.dead_bases)
            lines.append(
                f"{r.iteration},{r.total:.17g},{r.residual:.17g},{r.sparsity:.17g},"
                f"{r.mean_nonzeros:.17g},{r.wall_time:.17g},{dead},{r.failed_sweeps},"
                f"{r.batch_size}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _samples(x) -> np.ndarray:
    arr = getattr(x, "samples", x)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("sweep samples must be a non-empty 1-D array")
    return arr


def _fft_len(p: int) -> int:
    return max(2, next_pow2(p))


def random_smooth_basis(rng: np.random.Generator, q: int) -> np.ndarray:
    """Unit-norm spectrally lowpassed Gaussian noise; the stock basis init."""
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


def reconstruct(dictionary: Dictionary, code: SparseCode, p: int) -> np.ndarray:
    """Sum over bases of a_j convolved with the dense activation row,
    i.e. the model term of the objective, length p."""
    if code.n_bases != dictionary.n:
        raise ValueError(f"code has {code.n_bases} bases, dictionary has {dictionary.n}")
    q = dictionary.q
    if code.n_shifts != p - q + 1:
        raise ValueError(f"code n_shifts={code.n_shifts}, expected p-q+1={p - q + 1}")
    y = np.zeros(p)
    for j, (shifts, values) in enumerate(code.activations):
        basis = dictionary.bases[j]
        for t, v in zip(shifts, values):
            y[t:t + q] += v * basis
    return y


def objective(corpus, dictionary: Dictionary, codes, beta: float) -> ObjectiveValue:
    """Evaluate the training objective for given codes."""
    if len(codes) != len(corpus):
        raise ValueError(f"{len(codes)} codes for {len(corpus)} sweeps")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    residuals, l1s = [], []
    for x, code in zip(corpus, codes):
        arr = _samples(x)
        y = reconstruct(dictionary, code, arr.size)
        residuals.append(float(np.sum((arr - y) ** 2)))
        l1s.append(code.l1())
    residual = math.fsum(residuals)
    sparsity = beta * math.fsum(l1s)
    return ObjectiveValue(total=residual + sparsity, residual=residual, sparsity=sparsity)


# ---------------------------------------------------------------------------
# Code step: per-sweep accelerated proximal gradient in the frequency domain
# ---------------------------------------------------------------------------

def _parseval_sq(spec: np.ndarray, nfft: int) -> float:
    """||r||^2 from its rfft, valid for even nfft."""
    mags = np.abs(spec) ** 2
    return float((mags[0] + 2.0 * mags[1:-1].sum() + mags[-1]) / nfft)


def _soft(v: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


class _CodeProblem:
    """Shared per-dictionary state for solving many sweeps."""

    def __init__(self, bases: np.ndarray, p: int, beta: float):
        self.p = int(p)
        self.n, self.q = bases.shape
        if self.q > p:
            raise ValueError(f"basis length {self.q} exceeds signal length {p}")
        self.n_shifts = p - self.q + 1
        self.beta = float(beta)
        self.nfft = _fft_len(p)
        self.bases = bases
        self.bases_hat = _fft.rfft(bases, self.nfft, axis=1)
        self.step = 1.0 / self._lipschitz()

    def _lipschitz(self) -> float:
        """Power-iteration estimate of 2*lambda_max(A^T A), with a spectral
        upper bound as fallback; a small overshoot is healed by the
        solver's backtracking."""
        bound = 2.0 * float(np.sum(np.abs(self.bases_hat) ** 2, axis=0).max())
        if bound == 0.0:
            return 1.0
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0xA11C)))
        v = rng.normal(size=(self.n, self.n_shifts))
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(20):
            # model support is exactly [0, p), so no output restriction needed
            y_hat = self.model_spec(_fft.rfft(v, self.nfft, axis=1))
            w = _fft.irfft(np.conj(self.bases_hat) * y_hat[None, :],
                           self.nfft, axis=1)[:, :self.n_shifts]
            lam = float(np.sum(v * w))
            norm = float(np.linalg.norm(w))
            if norm == 0.0:
                return bound
            v = w / norm
        return min(bound, 2.0 * lam * 1.05)

    def model_spec(self, dense_hat: np.ndarray) -> np.ndarray:
        return np.sum(self.bases_hat * dense_hat, axis=0)

    def _batch_resid(self, X_hat, S_hat, workers):
        """Per-row squared residual via Parseval; returns (resid, model_hat)."""
        model = np.einsum("bnf,nf->bf", S_hat, self.bases_hat)
        r_hat = X_hat - model
        mags = r_hat.real ** 2 + r_hat.imag ** 2
        resid = (mags[:, 0] + 2.0 * mags[:, 1:-1].sum(axis=1) + mags[:, -1]) / self.nfft
        return resid, r_hat

    def _grad(self, r_hat, workers):
        return -2.0 * _fft.irfft(np.conj(self.bases_hat)[None] * r_hat[:, None, :],
                                 self.nfft, axis=-1,
                                 workers=workers)[..., :self.n_shifts]

    def solve_many(self, xs, tol, max_iter, warms=None, workers=1):
        """Monotone FISTA with per-sweep backtracking, vectorized over sweeps.

        xs: (B, p) array; warms: optional (B, n, n_shifts).  Rows are fully
        independent, so results do not depend on batch composition or on
        `workers`.  Returns a list of per-sweep tuples
        (S, residual, l1, optimality_residual, iterations, converged).
        """
        nfft, ns, beta, n = self.nfft, self.n_shifts, self.beta, self.n
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        B = xs.shape[0]
        X_hat = _fft.rfft(xs, nfft, axis=-1, workers=workers)
        if warms is None:
            S = np.zeros((B, n, ns))
        else:
            S = np.asarray(warms, dtype=np.float64).copy()
        S_hat = _fft.rfft(S, nfft, axis=-1, workers=workers)
        resid, _ = self._batch_resid(X_hat, S_hat, workers)
        obj = resid + beta * np.abs(S).sum(axis=(1, 2))
        Y, Y_hat = S.copy(), S_hat.copy()
        step = np.full(B, self.step)
        t_mom = np.ones(B)
        orig = np.arange(B)
        iters_done = np.zeros(B, dtype=int)
        conv_flag = np.zeros(B, dtype=bool)
        out = [None] * B

        def finalize(rows_local):
            """Time-domain evaluation of finished rows (authoritative)."""
            sel_orig = orig[rows_local]
            S_fin = S[rows_local]
            model = np.einsum("bnf,nf->bf", S_hat[rows_local], self.bases_hat)
            y = _fft.irfft(model, nfft, axis=-1, workers=workers)[:, :self.p]
            for k, o in enumerate(sel_orig):
                x = xs[o]
                r = x - y[k]
                resid_time = float(np.sum(r * r))
                l1 = float(np.abs(S_fin[k]).sum())
                Sk = S_fin[k]
                if resid_time + beta * l1 > float(np.sum(x * x)):
                    # all-zero code dominates: only possible from a warm
                    # start that a dictionary change made worse than silence
                    Sk = np.zeros_like(Sk)
                    resid_time = float(np.sum(x * x))
                    l1 = 0.0
                    r = x.copy()
                r_hat = _fft.rfft(r, nfft)
                grad = -2.0 * _fft.irfft(np.conj(self.bases_hat) * r_hat[None, :],
                                         nfft, axis=-1)[:, :ns]
                nz = Sk != 0.0
                viol_nz = np.abs(grad[nz] + beta * np.sign(Sk[nz])).max() if nz.any() else 0.0
                viol_z = max(0.0, float(np.abs(grad[~nz]).max()) - beta) if (~nz).any() else 0.0
                out[o] = (Sk, resid_time, l1, float(max(viol_nz, viol_z)),
                          int(iters_done[o]), bool(conv_flag[o]))

        it = 0
        while orig.size and it < max_iter:
            it += 1
            resid_Y, r_hat_Y = self._batch_resid(X_hat[orig], Y_hat, workers)
            grad = self._grad(r_hat_Y, workers)
            b = orig.size
            Z = np.empty_like(Y)
            Z_hat = np.empty_like(Y_hat)
            resid_Z = np.empty(b)
            need = np.ones(b, dtype=bool)
            for _ in range(40):
                idx = np.flatnonzero(need)
                st = step[idx][:, None, None]
                Zi = _soft(Y[idx] - st * grad[idx], st * beta)
                Zi_hat = _fft.rfft(Zi, nfft, axis=-1, workers=workers)
                resid_i, _ = self._batch_resid(X_hat[orig[idx]], Zi_hat, workers)
                diff = Zi - Y[idx]
                bound = (resid_Y[idx]
                         + np.einsum("bns,bns->b", grad[idx], diff)
                         + np.einsum("bns,bns->b", diff, diff) / (2.0 * step[idx]))
                ok = resid_i <= bound + 1e-12 * np.maximum(np.abs(bound), 1.0)
                Z[idx] = Zi
                Z_hat[idx] = Zi_hat
                resid_Z[idx] = resid_i
                step[idx[~ok]] *= 0.5
                need[idx[~ok]] = True
                need[idx[ok]] = False
                if not need.any():
                    break
            obj_Z = resid_Z + beta * np.abs(Z).sum(axis=(1, 2))
            accepted = obj_Z <= obj
            acc3 = accepted[:, None, None]
            S_new = np.where(acc3, Z, S)
            S_new_hat = np.where(acc3, Z_hat, S_hat)
            obj_new = np.where(accepted, obj_Z, obj)
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
            a1 = (t_mom / t_new)[:, None, None]
            a2 = ((t_mom - 1.0) / t_new)[:, None, None]
            Y = S_new + a1 * (Z - S_new) + a2 * (S_new - S)
            Y_hat = S_new_hat + a1 * (Z_hat - S_new_hat) + a2 * (S_new_hat - S_hat)
            rel = (obj - obj_new) / np.maximum(np.abs(obj), 1e-300)
            S, S_hat, obj, t_mom = S_new, S_new_hat, obj_new, t_new
            iters_done[orig] = it
            newly = accepted & (rel < tol)
            if newly.any():
                conv_flag[orig[newly]] = True
                finalize(np.flatnonzero(newly))
                keep = ~newly
                orig = orig[keep]
                S, S_hat = S[keep], S_hat[keep]
                Y, Y_hat = Y[keep], Y_hat[keep]
                obj, t_mom, step = obj[keep], t_mom[keep], step[keep]
        if orig.size:
            finalize(np.arange(orig.size))
        return out

    def solve(self, x: np.ndarray, tol: float, max_iter: int,
              warm: np.ndarray | None = None, workers: int = 1):
        warms = None if warm is None else warm[None]
        return self.solve_many(np.asarray(x, dtype=np.float64)[None], tol,
                               max_iter, warms, workers)[0]


def infer_codes(x, dictionary: Dictionary, beta: float,
                tol: float = 1e-5, max_iter: int = 200,
                warm: SparseCode | None = None) -> SparseCode:
    """Solve the convex activation problem for one sweep, bases fixed.

    The returned code never scores worse than the all-zero code, and the
    subgradient optimality residual is attached to the result.  Raises
    ConvergenceFailure (carrying the last iterate) if the relative
    objective change has not dropped below `tol` within `max_iter`
    passes.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    arr = _samples(x)
    problem = _CodeProblem(dictionary.bases, arr.size, beta)
    warm_dense = None
    if warm is not None:
        if warm.n_bases != dictionary.n or warm.n_shifts != problem.n_shifts:
            raise ValueError("warm-start code shape mismatch")
        warm_dense = warm.to_dense()
    S, resid, l1, opt_res, iters, converged = problem.solve(
        arr, tol, max_iter, warm_dense)
    code = SparseCode.from_dense(
        S, objective=resid + beta * l1, optimality_residual=opt_res,
        iterations=iters, converged=converged)
    if not converged:
        raise ConvergenceFailure(
            f"code solve did not converge in {max_iter} iterations "
            f"(optimality residual {opt_res:.3e})",
            code=code, optimality_residual=opt_res)
    return code


# ---------------------------------------------------------------------------
# Basis step: projected gradient on sufficient statistics
# ---------------------------------------------------------------------------

class _BasisQuadratic:
    """The batch residual as a quadratic in the stacked bases.

    residual(a) = xx - 2 sum_j <G_j, a_j> + sum_jl a_j^T H_jl a_l with
    H_jl Toeplitz in the code cross-correlations; applying H uses small
    FFTs so iteration cost is independent of batch size.
    """

    def __init__(self, G: np.ndarray, R: np.ndarray, xx: float):
        self.G = G                      # (n, q)
        self.xx = float(xx)
        n, q = G.shape
        self.n, self.q = n, q
        m = next_pow2(3 * q - 2)
        self.m = m
        self.R_hat = _fft.rfft(R, m, axis=2)    # R: (n, n, 2q-1), lag d-(q-1)

    def apply(self, a: np.ndarray) -> np.ndarray:
        a_hat = _fft.rfft(a, self.m, axis=1)
        out_hat = np.einsum("jlf,lf->jf", self.R_hat, a_hat)
        out = _fft.irfft(out_hat, self.m, axis=1)
        return out[:, self.q - 1:2 * self.q - 1]

    def value(self, a: np.ndarray, qa: np.ndarray | None = None) -> float:
        if qa is None:
            qa = self.apply(a)
        return self.xx - 2.0 * float(np.sum(self.G * a)) + float(np.sum(a * qa))

    def grad(self, a: np.ndarray, qa: np.ndarray | None = None) -> np.ndarray:
        if qa is None:
            qa = self.apply(a)
        return 2.0 * (qa - self.G)

    def lipschitz(self) -> float:
        """Power iteration upper estimate of 2*lambda_max(H)."""
        v = np.full((self.n, self.q), 1.0 / math.sqrt(self.n * self.q))
        lam = 0.0
        for _ in range(25):
            w = self.apply(v)
            lam = float(np.sum(v * w))
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return 2.0
            v = w / norm
        return 2.0 * max(lam, 1e-12) * 1.05


def _project_norms(bases: np.ndarray, c: float) -> np.ndarray:
    sq = np.sum(bases ** 2, axis=1, keepdims=True)
    scale = np.where(sq > c, np.sqrt(c / np.maximum(sq, 1e-300)), 1.0)
    return bases * scale


def _code_stats(batch, codes, n: int, q: int, chunk: int = 16):
    """Accumulate G, R, xx over the batch with chunked FFT Grams."""
    xs = [_samples(x) for x in batch]
    xx = math.fsum(float(np.sum(x * x)) for x in xs)
    G = None
    R_hat_acc = None
    nfft = None
    for start in range(0, len(xs), chunk):
        sub_x = xs[start:start + chunk]
        sub_c = codes[start:start + chunk]
        p = sub_x[0].size
        nfft = _fft_len(p)
        dense = np.stack([c.to_dense() for c in sub_c])        # (B, n, n_shifts)
        S_hat = _fft.rfft(dense, nfft, axis=2)                 # (B, n, F)
        X_hat = _fft.rfft(np.stack(sub_x), nfft, axis=1)       # (B, F)
        g_hat = np.einsum("bnf,bf->nf", np.conj(S_hat), X_hat)
        g = _fft.irfft(g_hat, nfft, axis=1)[:, :q]
        G = g if G is None else G + g
        St = np.ascontiguousarray(S_hat.transpose(2, 1, 0))    # (F, n, B)
        gram = St.conj() @ St.transpose(0, 2, 1)               # (F, n, n)
        R_hat_acc = gram if R_hat_acc is None else R_hat_acc + gram
    R_circ = _fft.irfft(R_hat_acc.transpose(1, 2, 0), nfft, axis=2)  # (n, n, nfft)
    # lags -(q-1)..q-1; negative lags wrap to the top of the circular axis
    R = np.concatenate([R_circ[:, :, nfft - q + 1:], R_circ[:, :, :q]], axis=2)
    return G, R, xx


def _minimize_bases(quad: _BasisQuadratic, init: np.ndarray, c: float,
                    tol: float, max_iter: int):
    """Monotone accelerated projected gradient under ||a_j||^2 <= c."""
    step = 1.0 / quad.lipschitz()
    a = _project_norms(init.copy(), c)
    val = quad.value(a)
    z = a.copy()
    t_mom = 1.0
    for _ in range(max_iter):
        cand = _project_norms(z - step * quad.grad(z), c)
        cand_val = quad.value(cand)
        if cand_val > val:
            st = step
            grad_a = quad.grad(a)
            for _ in range(30):
                cand = _project_norms(a - st * grad_a, c)
                cand_val = quad.value(cand)
                if cand_val <= val:
                    break
                st *= 0.5
            if cand_val > val:
                break
            t_mom = 1.0
            z = cand
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            z = cand + ((t_mom - 1.0) / t_new) * (cand - a)
            t_mom = t_new
        rel = (val - cand_val) / max(abs(val), 1e-300)
        a, val = cand, cand_val
        if rel < tol:
            break
    return a, val


def update_dictionary(batch, codes, dictionary: Dictionary,
                      c: float | None = None, tol: float = 1e-8,
                      max_iter: int = 300) -> Dictionary:
    """Re-fit the bases to the batch with activations frozen.

    The batch residual never increases; bases with no activations
    anywhere in the batch are left untouched.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    if len(codes) != len(batch):
        raise ValueError(f"{len(codes)} codes for {len(batch)} sweeps")
    c = dictionary.c if c is None else float(c)
    n, q = dictionary.n, dictionary.q
    p = _samples(batch[0]).size
    for x in batch:
        if _samples(x).size != p:
            raise ValueError("batch sweeps must share a common length")
    for code in codes:
        if code.n_bases != n:
            raise ValueError("code/dictionary basis count mismatch")
        if code.n_shifts != p - q + 1:
            raise ValueError(f"code n_shifts={code.n_shifts}, expected {p - q + 1}")
    G, R, xx = _code_stats(batch, codes, n, q)
    quad = _BasisQuadratic(G, R, xx)
    old = dictionary.bases
    old_val = quad.value(old)
    new, new_val = _minimize_bases(quad, old, c, tol, max_iter)
    if new_val > old_val:
        new = old.copy()
    dead = np.flatnonzero(R[np.arange(n), np.arange(n), q - 1] == 0.0)
    new[dead] = old[dead]
    return Dictionary(bases=new, c=c, beta=dictionary.beta,
                      sample_rate=dictionary.sample_rate,
                      metadata=dict(dictionary.metadata))


def dead_bases(codes, n: int) -> np.ndarray:
    """Indices of bases with zero total activation across the codes."""
    tot = np.zeros(n)
    for code in codes:
        for j, (_, values) in enumerate(code.activations):
            tot[j] += np.abs(values).sum()
    return np.flatnonzero(tot == 0.0)


def _recenter_bases(bases: np.ndarray, codes, n_shifts: int,
                    eps_rel: float = 1e-12):
    """Slide basis content off a near-zero edge when the opposite edge is
    hot, compensating every stored activation shift.

    A basis that locked onto a pattern at a linear offset wastes window
    samples on one edge and truncates the pattern at the other; shifting
    both the basis and its activations is model-equivalent (up to the
    trimmed near-zero samples) and lets the truncated part grow back.
    Returns (new_bases, per-basis code shift, moved?).
    """
    n, q = bases.shape
    deltas = np.zeros(n, dtype=int)
    min_act = np.full(n, n_shifts, dtype=int)
    max_act = np.full(n, -1, dtype=int)
    for code in codes:
        if code is None:
            continue
        for j, (shifts, _) in enumerate(code.activations):
            if shifts.size:
                min_act[j] = min(min_act[j], int(shifts[0]))
                max_act[j] = max(max_act[j], int(shifts[-1]))
    new_bases = bases.copy()
    moved = False
    for j in range(n):
        b = bases[j]
        total = float(np.sum(b * b))
        if total <= 0.0:
            continue
        thresh = eps_rel * total
        hot = 0.5 * total / q
        delta = 0
        cum = np.cumsum(b * b)
        lead = int(np.searchsorted(cum, thresh, side="right"))
        if 0 < lead < q and b[q - 1] ** 2 > hot:
            if max_act[j] < 0 or max_act[j] + lead <= n_shifts - 1:
                delta = lead
        if delta == 0:
            cum_rev = np.cumsum(b[::-1] ** 2)
            trail = int(np.searchsorted(cum_rev, thresh, side="right"))
            if 0 < trail < q and b[0] ** 2 > hot:
                if min_act[j] >= n_shifts or min_act[j] - trail >= 0:
                    delta = -trail
        if delta > 0:
            new_bases[j, :q - delta] = b[delta:]
            new_bases[j, q - delta:] = 0.0
            moved = True
        elif delta < 0:
            d = -delta
            new_bases[j, d:] = b[:q - d]
            new_bases[j, :d] = 0.0
            moved = True
        deltas[j] = delta
    return new_bases, deltas, moved


def _shift_code(code: SparseCode, deltas: np.ndarray) -> SparseCode:
    acts = [((shifts + deltas[j]).astype(np.int64), values.copy())
            for j, (shifts, values) in enumerate(code.activations)]
    return SparseCode(activations=acts, n_shifts=code.n_shifts,
                      objective=code.objective,
                      optimality_residual=code.optimality_residual,
                      iterations=code.iterations, converged=code.converged)


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------

def default_beta(corpus, q: int) -> float:
    """Data-scaled sparsity weight: 0.1 * median(||x||^2 / p) * q."""
    powers = [float(np.sum(_samples(x) ** 2)) / _samples(x).size for x in corpus]
    return 0.1 * float(np.median(powers)) * q


def _init_bases(rng: np.random.Generator, n: int, q: int, c: float) -> np.ndarray:
    return np.stack([random_smooth_basis(rng, q) for _ in range(n)]) * math.sqrt(c)


def learn_dictionary(corpus, cfg: TrainConfig,
                     init_dictionary: Dictionary | None = None):
    """Alternate code inference and basis refitting over the corpus.

    Returns (Dictionary, TrainHistory).  With a full-corpus batch the
    recorded total objective is non-increasing; training stops early
    once its relative change drops below 1e-6.  Raises
    ConvergenceFailure only after three consecutive outer iterations
    whose code step failed to converge on some sweep.
    """
    if len(corpus) == 0:
        raise ValueError("corpus must be non-empty")
    xs = [_samples(x) for x in corpus]
    p = xs[0].size
    if any(x.size != p for x in xs):
        raise ValueError("corpus sweeps must share a common length")
    cfg.validate(p)
    m = len(xs)
    n, q = cfg.n_bases, cfg.basis_len
    beta = cfg.beta if cfg.beta is not None else default_beta(xs, q)
    if beta <= 0:
        raise ValueError("resolved beta must be positive")
    sample_rate = getattr(corpus[0], "sample_rate", None)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(cfg.seed), 0x5EED))))
    if init_dictionary is not None:
        if init_dictionary.n != n or init_dictionary.q != q:
            raise ValueError("init dictionary shape disagrees with config")
        bases = init_dictionary.bases.copy()
    else:
        bases = _init_bases(rng, n, q, cfg.c)

    batch_size = cfg.batch_size
    if batch_size is None:
        batch_size = m if m <= 1000 else 256
    batch_size = min(batch_size, m)
    full_batch = batch_size == m

    n_shifts = p - q + 1
    codes: list = [None] * m
    history = TrainHistory(beta=beta)
    dead_streak = np.zeros(n, dtype=int)
    consecutive_failures = 0
    prev_total = None

    # chunk so the solver's work arrays stay cache-friendly and bounded
    nfft = _fft_len(p)
    row_bytes = n * (nfft // 2 + 1) * 16 * 8
    chunk_size = max(2, min(_SOLVE_CHUNK_CAP, int(6e8 / max(row_bytes, 1))))

    for it in range(1, cfg.outer_iterations + 1):
        t0 = time.perf_counter()
        if full_batch:
            batch_idx = np.arange(m)
        else:
            batch_idx = np.sort(rng.choice(m, size=batch_size, replace=False))

        problem = _CodeProblem(bases, p, beta)
        results = []
        for start in range(0, len(batch_idx), chunk_size):
            sub = batch_idx[start:start + chunk_size]
            sub_x = np.stack([xs[i] for i in sub])
            if all(codes[i] is None for i in sub):
                warms = None
            else:
                warms = np.stack([
                    codes[i].to_dense() if codes[i] is not None
                    else np.zeros((n, n_shifts)) for i in sub])
            results.extend(problem.solve_many(
                sub_x, cfg.code_solver_tolerance, cfg.code_max_iter,
                warms, workers=cfg.threads))

        failed = 0
        l1_terms = []
        resid_terms = []
        for idx, (S, resid, l1, opt_res, iters, conv) in zip(batch_idx, results):
            if not conv:
                failed += 1
            codes[idx] = SparseCode.from_dense(
                S, objective=resid + beta * l1, optimality_residual=opt_res,
                iterations=iters, converged=conv)
            l1_terms.append(l1)
            resid_terms.append(resid)
        if failed:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                raise ConvergenceFailure(
                    f"code step failed on {failed} sweeps for "
                    f"3 consecutive outer iterations (iteration {it})")
        else:
            consecutive_failures = 0

        batch_codes = [codes[i] for i in batch_idx]
        batch_sweeps = [xs[i] for i in batch_idx]
        dictionary = Dictionary(bases=bases, c=cfg.c, beta=beta, sample_rate=sample_rate)
        resid_before = math.fsum(resid_terms)
        updated = update_dictionary(batch_sweeps, batch_codes, dictionary,
                                    c=cfg.c, tol=cfg.basis_step_tolerance,
                                    max_iter=cfg.basis_max_iter)
        per_sweep_resid = []
        for x, code in zip(batch_sweeps, batch_codes):
            r = x - reconstruct(updated, code, p)
            per_sweep_resid.append(float(np.sum(r * r)))
        resid_after = math.fsum(per_sweep_resid)
        if resid_after > resid_before:
            # numerically refuse any uphill basis move
            updated = dictionary
            per_sweep_resid = resid_terms
            resid_after = resid_before
        bases = updated.bases

        # offset-locked bases: try the model-equivalent recentered variant
        cand_bases, deltas, moved = _recenter_bases(bases, codes, n_shifts)
        if moved:
            cand_dict = Dictionary(bases=cand_bases, c=cfg.c, beta=beta,
                                   sample_rate=sample_rate)
            shifted = [None if c_ is None else _shift_code(c_, deltas)
                       for c_ in codes]
            per_sweep_cand = []
            for x, i in zip(batch_sweeps, batch_idx):
                r = x - reconstruct(cand_dict, shifted[i], p)
                per_sweep_cand.append(float(np.sum(r * r)))
            resid_cand = math.fsum(per_sweep_cand)
            if resid_cand <= resid_after:
                bases = cand_bases
                codes = shifted
                per_sweep_resid = per_sweep_cand
                resid_after = resid_cand
                updated = cand_dict

        sparsity = beta * math.fsum(l1_terms)
        total = resid_after + sparsity
        if not math.isfinite(total):
            raise ConvergenceFailure(f"objective became non-finite at iteration {it}")
        dead = dead_bases(batch_codes, n)
        mean_nnz = float(np.mean([c_.nnz for c_ in batch_codes]))
        history.rows.append(IterationStats(
            iteration=it, total=total, residual=resid_after, sparsity=sparsity,
            mean_nonzeros=mean_nnz, wall_time=time.perf_counter() - t0,
            dead_bases=tuple(int(j) for j in dead), failed_sweeps=failed,
            batch_size=len(batch_idx)))

        # revive bases that stayed silent too long from the worst-fit segment
        dead_streak[dead] += 1
        alive = np.ones(n, dtype=bool)
        alive[dead] = False
        dead_streak[alive] = 0
        revive = np.flatnonzero(dead_streak >= 5)
        if revive.size:
            worst_local = int(np.argmax(per_sweep_resid))
            worst_idx = int(batch_idx[worst_local])
            r = xs[worst_idx] - reconstruct(updated, codes[worst_idx], p)
            csum = np.concatenate(([0.0], np.cumsum(r * r)))
            window = csum[q:] - csum[:-q]
            start = int(np.argmax(window))
            segment = r[start:start + q].copy()
            norm = np.linalg.norm(segment)
            for j in revive:
                if norm > 0:
                    bases[j] = segment / norm * math.sqrt(cfg.c)
                else:
                    bases[j] = random_smooth_basis(rng, q) * math.sqrt(cfg.c)
                dead_streak[j] = 0

        if full_batch and prev_total is not None:
            if abs(prev_total - total) / max(abs(prev_total), 1e-300) < 1e-6:
                prev_total = total
                break
        prev_total = total

    final = Dictionary(
        bases=bases, c=cfg.c, beta=beta, sample_rate=sample_rate,
        metadata={"trained_on": m, "iterations": len(history.rows),
                  "seed": int(cfg.seed), "n_bases": n, "basis_len": q})
    # codes for sweeps outside the last batch may be stale; callers that
    # need codes should call infer_codes against the final dictionary
    return final, history


# ---------------------------------------------------------------------------
# Recovery metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchResult:
    pairs: tuple              # (truth_index, learned_index, score), greedy order
    scores: np.ndarray        # aligned to truth basis order
    mean_score: float


def _circular_match(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    # FFT length exactly len(a) makes the correlation circular, so a
    # wrapped shift of the same waveform still scores 1.0
    corr = _fft.irfft(_fft.rfft(a) * np.conj(_fft.rfft(b)), a.size)
    return float(np.abs(corr).max() / (na * nb))


def basis_match_score(learned: Dictionary, truth: Dictionary) -> MatchResult:
    """Greedy one-to-one matching by max |circular cross-correlation|,
    invariant to shift and sign."""
    if learned.q != truth.q:
        raise ValueError(f"basis length mismatch: {learned.q} vs {truth.q}")
    M = np.array([[_circular_match(t, l) for l in learned.bases] for t in truth.bases])
    avail_t = set(range(truth.n))
    avail_l = set(range(learned.n))
    pairs = []
    scores = np.zeros(truth.n)
    work = M.copy()
    for _ in range(min(truth.n, learned.n)):
        ti, li = np.unravel_index(np.argmax(work), work.shape)
        if ti not in avail_t or li not in avail_l:
            break
        score = float(M[ti, li])
        pairs.append((int(ti), int(li), score))
        scores[ti] = score
        avail_t.discard(int(ti))
        avail_l.discard(int(li))
        work[ti, :] = -1.0
        work[:, li] = -1.0
    return MatchResult(pairs=tuple(pairs), scores=scores,
                       mean_score=float(scores.mean()) if truth.n else 0.0)
