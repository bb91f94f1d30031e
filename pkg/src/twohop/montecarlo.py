"""Monte Carlo reference for the two-hop mutual information.

Every draw has its own Philox stream keyed by ``seed`` whose counter is
offset by the sample index, so a draw depends only on ``(seed, index)``.
Samples are computed in fixed-size chunks and stored in index order;
moments are reduced from that ordered array, which makes results
independent of the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import NumericalError, ParameterError
from .model import CorrelationSet, SystemParams

__all__ = [
    "ChannelSample",
    "MCResult",
    "Histogram",
    "ConvergenceRecord",
    "sample_channel",
    "sample_batch",
    "mi_pair",
    "mi_pair_batch",
    "run_mc",
    "mahalanobis_sq",
    "chi2_ks_distance",
    "empirical_esd",
    "loglog_fit",
    "convergence_study",
    "write_samples_csv",
]

CHUNK = 256
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class ChannelSample:
    H1: np.ndarray
    H2: np.ndarray


@dataclass(frozen=True, eq=False)
class MCResult:
    """Empirical moments of ``(I1, I2)``.

    Attributes
    ----------
    mean : ndarray, shape (2,)
    cov : ndarray, shape (2, 2)
        Unbiased sample covariance.
    stderr : ndarray, shape (2,)
        Standard errors of the means.
    cov_stderr : ndarray, shape (2, 2)
        Standard errors of the covariance entries.
    samples : ndarray, shape (n, 2) or None
    """

    n_samples: int
    seed: int
    mean: np.ndarray
    cov: np.ndarray
    stderr: np.ndarray
    cov_stderr: np.ndarray
    samples: np.ndarray | None = None

    @property
    def mean_I(self) -> float:
        return float(self.mean[0] - self.mean[1])

    @property
    def stderr_I(self) -> float:
        c = self.cov
        return math.sqrt(max(c[0, 0] + c[1, 1] - 2 * c[0, 1], 0.0) / self.n_samples)


def _rng(seed: int, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ParameterError("seed and stream index must be nonnegative")
    key = [seed & _MASK64, (seed >> 64) & _MASK64]
    counter = [0, 0, index & _MASK64, (index >> 64) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _apply(left, X, right, corr: CorrelationSet, lname: str, rname: str):
    if not corr.is_identity(lname):
        X = left @ X
    if not corr.is_identity(rname):
        X = X @ right
    return X


def sample_batch(corr: CorrelationSet, p: SystemParams, seed: int, start: int,
                 count: int) -> tuple[np.ndarray, np.ndarray]:
    """Draws ``start, ..., start + count - 1`` stacked along axis 0."""
    corr.check(p)
    N, L, M = p.N, p.L, p.M
    X1 = np.empty((count, N, L), dtype=complex)
    X2 = np.empty((count, L, M), dtype=complex)
    s1 = 1.0 / math.sqrt(2.0 * L)
    s2 = 1.0 / math.sqrt(2.0 * M)
    for j in range(count):
        g = _rng(seed, start + j)
        a = g.standard_normal((2, N, L))
        b = g.standard_normal((2, L, M))
        X1[j].real, X1[j].imag = a[0] * s1, a[1] * s1
        X2[j].real, X2[j].imag = b[0] * s2, b[1] * s2
    H1 = _apply(corr.sqrt("R1"), X1, corr.sqrt("T1"), corr, "R1", "T1")
    H2 = _apply(corr.sqrt("R2"), X2, corr.sqrt("T2"), corr, "R2", "T2")
    return H1, H2


def sample_channel(corr: CorrelationSet, p: SystemParams, stream_index: int,
                   seed: int) -> ChannelSample:
    """One channel draw ``H1 = R1^{1/2} X1 T1^{1/2}``, ``H2 = R2^{1/2} X2 T2^{1/2}``.

    ``X1`` has i.i.d. circular complex Gaussian entries of variance ``1/L``
    and ``X2`` of variance ``1/M``.
    """
    H1, H2 = sample_batch(corr, p, seed, stream_index, 1)
    return ChannelSample(H1[0], H2[0])


def _logdet_one(a: np.ndarray) -> float:
    a = 0.5 * (a + a.conj().T)
    try:
        c = np.linalg.cholesky(a)
        return float(2.0 * np.sum(np.log(np.real(np.diag(c)))))
    except np.linalg.LinAlgError:
        pass
    _, d, _ = scipy.linalg.ldl(a, hermitian=True)
    sign, ld = np.linalg.slogdet(d)
    if not (np.real(sign) > 0 and np.isfinite(ld)):
        raise NumericalError("log-determinant argument is not positive definite")
    return float(ld)


def _logdet_batch(a: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cholesky(a)
        return 2.0 * np.sum(np.log(np.real(np.diagonal(c, axis1=-2, axis2=-1))), axis=-1)
    except np.linalg.LinAlgError:
        return np.array([_logdet_one(x) for x in a])


def mi_pair_batch(H1: np.ndarray, H2: np.ndarray, p: SystemParams) -> np.ndarray:
    """``(I1, I2)`` for stacked channels; returns shape ``(batch, 2)``."""
    N = H1.shape[-2]
    eye = np.eye(N)
    G = H1 @ H2
    Hh = H1 @ np.swapaxes(H1.conj(), -1, -2)
    Gg = G @ np.swapaxes(G.conj(), -1, -2)
    A1 = eye + (Gg + p.s_bar * Hh) / p.z
    A2 = eye + (p.s_under / p.z) * Hh
    out = np.empty((H1.shape[0], 2))
    out[:, 0] = _logdet_batch(A1)
    out[:, 1] = 0.0 if p.s_under == 0 else _logdet_batch(A2)
    return out


def mi_pair(ch: ChannelSample, p: SystemParams) -> tuple[float, float]:
    """Exact ``(I1, I2)`` in nats for one channel draw."""
    r = mi_pair_batch(ch.H1[None], ch.H2[None], p)[0]
    return float(r[0]), float(r[1])


def _moments(x: np.ndarray):
    n = x.shape[0]
    mean = x.mean(axis=0)
    c = x - mean
    cov = (c.T @ c) / (n - 1)
    stderr = np.sqrt(np.diag(cov) / n)
    prod = c[:, :, None] * c[:, None, :]
    cov_se = prod.reshape(n, 4).std(axis=0, ddof=1).reshape(2, 2) / math.sqrt(n)
    return mean, cov, stderr, cov_se


def run_mc(corr: CorrelationSet, p: SystemParams, n_samples: int, seed: int = 0,
           workers: int = 1, keep_samples: bool = True) -> MCResult:
    """Sample ``(I1, I2)`` ``n_samples`` times.

    Parameters
    ----------
    corr, p : CorrelationSet, SystemParams
    n_samples : int
        At least 2.
    seed : int
        Nonnegative seed, up to 128 bits.
    workers : int
        Thread count; does not affect the result.
    keep_samples : bool
        Store the raw ``(n, 2)`` sample array.
    """
    corr.check(p)
    if n_samples < 2:
        raise ParameterError("need at least two samples")
    if workers < 1:
        raise ParameterError("workers must be positive")
    starts = list(range(0, n_samples, CHUNK))

    def work(s):
        cnt = min(CHUNK, n_samples - s)
        H1, H2 = sample_batch(corr, p, seed, s, cnt)
        try:
            return mi_pair_batch(H1, H2, p)
        except NumericalError as exc:
            raise NumericalError(f"samples {s}..{s + cnt - 1}: {exc}") from exc

    if workers == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, starts))
    x = np.concatenate(parts, axis=0)
    mean, cov, se, cse = _moments(x)
    return MCResult(n_samples, seed, mean, cov, se, cse, x if keep_samples else None)


def write_samples_csv(path, mc: MCResult) -> None:
    """Raw draws as ``sample,I1,I2``."""
    if mc.samples is None:
        raise ParameterError("result holds no samples")
    lines = ["sample,I1,I2"]
    lines += [f"{i},{a:.17g},{b:.17g}" for i, (a, b) in enumerate(mc.samples)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# diagnostics


def mahalanobis_sq(samples, gm) -> np.ndarray:
    """Sorted squared Mahalanobis distances to the Gaussian model.

    ``d^2 = (x - mu)^T V^{-1} (x - mu)`` with the model mean ``mu``.
    ``samples`` is an :class:`MCResult` or an ``(n, 2)`` array.
    """
    x = samples.samples if isinstance(samples, MCResult) else np.asarray(samples, dtype=float)
    if x is None:
        raise ParameterError("result holds no samples")
    V = np.asarray(gm.V, dtype=float)
    try:
        c = scipy.linalg.cho_factor(V)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is singular") from exc
    r = x - gm.mean
    d2 = np.einsum("ij,ij->i", r, scipy.linalg.cho_solve(c, r.T).T)
    return np.sort(d2)


def chi2_ks_distance(d2, df: int = 2) -> float:
    """Kolmogorov-Smirnov distance between ``d2`` and a chi-square law."""
    return float(scipy.stats.kstest(np.asarray(d2), "chi2", args=(df,)).statistic)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    n_eigenvalues: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


def empirical_esd(ch, s_bar: float, n_bins: int = 100, range=None) -> Histogram:
    """Normalized eigenvalue histogram of ``H1 H2 H2^H H1^H + s_bar H1 H1^H``.

    ``ch`` may be one :class:`ChannelSample` or a sequence of them, in
    which case eigenvalues are pooled.
    """
    if n_bins < 1:
        raise ParameterError("n_bins must be positive")
    chs = [ch] if isinstance(ch, ChannelSample) else list(ch)
    eig = []
    for c in chs:
        G = c.H1 @ c.H2
        B = G @ G.conj().T + s_bar * (c.H1 @ c.H1.conj().T)
        eig.append(np.linalg.eigvalsh(0.5 * (B + B.conj().T)))
    ev = np.concatenate(eig)
    if range is None:
        top = 1.05 * float(ev.max())
        range = (0.0, top if top > 0 else 1.0)
    lo, hi = range
    counts, edges = np.histogram(np.clip(ev, lo, hi), bins=n_bins, range=(lo, hi))
    dens = counts / (ev.size * np.diff(edges))
    return Histogram(edges, dens, ev.size)


# ---------------------------------------------------------------------------
# convergence rate


def loglog_fit(dims, errors) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log error`` against ``log dim``."""
    x = np.log(np.asarray(dims, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    if x.size < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), float(icpt)


@dataclass(frozen=True)
class ConvergenceRecord:
    dims: tuple
    mean_error: tuple
    mean_se: tuple
    cov_error: tuple
    cov_se: tuple
    mean_reliable: tuple
    cov_reliable: tuple
    mean_slope: float
    mean_intercept: float
    cov_slope: float
    cov_intercept: float


def convergence_study(corr_family: Callable[[int], CorrelationSet], p: SystemParams,
                      dims_list: Sequence[int], n_samples: int, seed: int = 0,
                      workers: int = 1, **solver_kw) -> ConvergenceRecord:
    """Error of the deterministic mean and covariance versus dimension.

    Each point uses ``N = L = M = n``. A point is excluded from a fit when
    its Monte Carlo standard error exceeds half the measured gap.
    """
    from .deterministic import analyze

    if len(dims_list) < 3:
        raise ParameterError("need at least three dimension points")
    me, mse, ce, cse, mr, cr = [], [], [], [], [], []
    for i, n in enumerate(dims_list):
        q = p.replace(N=n, L=n, M=n)
        corr = corr_family(n)
        gm = analyze(corr, q, **solver_kw).gm
        mc = run_mc(corr, q, n_samples, seed=seed + i, workers=workers, keep_samples=False)
        err = abs(mc.mean_I - gm.mean_I)
        se = mc.stderr_I
        cerr = float(np.linalg.norm(mc.cov - gm.V, 2))
        cse_ = float(np.linalg.norm(mc.cov_stderr, 2))
        me.append(err)
        mse.append(se)
        ce.append(cerr)
        cse.append(cse_)
        mr.append(bool(se <= 0.5 * err))
        cr.append(bool(cse_ <= 0.5 * cerr))
    d = np.asarray(dims_list, dtype=float)
    ms, mi = loglog_fit(d[np.array(mr)], np.array(me)[np.array(mr)])
    cs, ci = loglog_fit(d[np.array(cr)], np.array(ce)[np.array(cr)])
    return ConvergenceRecord(tuple(dims_list), tuple(me), tuple(mse), tuple(ce), tuple(cse),
                             tuple(mr), tuple(cr), ms, mi, cs, ci)
