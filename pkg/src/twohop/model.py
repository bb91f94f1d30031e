"""Domain types, angular correlation matrices and raw-channel reduction.

The equivalent two-hop channel is described by four Hermitian PSD
correlation matrices

* ``R1`` (N x N) and ``T1`` (L x L) for the relay-to-receiver hop,
* ``R2`` (L x L) and ``T2`` (M x M) for the transmitter-to-relay hop,

together with the scalars collected in :class:`SystemParams`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import NumericalError, ParameterError

__all__ = [
    "SystemParams",
    "CorrelationSet",
    "RawChannelSpec",
    "AssumptionReport",
    "as_hermitian_psd",
    "build_correlation",
    "reduce_raw_spec",
    "psd_sqrt",
    "assumption_report",
    "fixed_power_scaling",
    "read_matrix_csv",
    "write_matrix_csv",
]

HERMITIAN_ATOL = 1e-12
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class SystemParams:
    """Dimensions and noise scalars.

    Parameters
    ----------
    N, L, M : int
        Receive antennas, relay elements and transmit antennas.
    s_bar : float
        Relay noise power entering ``I1``.
    s_under : float
        Relay noise power entering ``I2``.
    z : float
        Receiver noise power.
    """

    N: int
    L: int
    M: int
    s_bar: float
    s_under: float
    z: float

    def __post_init__(self):
        for name in ("N", "L", "M"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in ("s_bar", "s_under", "z"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.z <= 0:
            raise ParameterError(f"z must be positive, got {self.z}")
        if self.s_bar < 0 or self.s_under < 0:
            raise ParameterError("s_bar and s_under must be nonnegative")

    def replace(self, **kw) -> "SystemParams":
        d = dict(N=self.N, L=self.L, M=self.M, s_bar=self.s_bar,
                 s_under=self.s_under, z=self.z)
        d.update(kw)
        return SystemParams(**d)


def as_hermitian_psd(m, name: str = "matrix", dim: int | None = None) -> np.ndarray:
    """Validate and return a read-only Hermitian PSD copy of ``m``.

    Eigenvalues in ``[-1e-10 * lmax, 0)`` are clamped to zero; anything
    more negative is rejected.
    """
    a = np.array(m, dtype=complex, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"{name} must be square, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ParameterError(f"{name} must be {dim}x{dim}, got {a.shape[0]}x{a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ParameterError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if _is_diagonal(a):
        d = np.diagonal(a)
        if np.max(np.abs(d.imag), initial=0.0) > HERMITIAN_ATOL * scale:
            raise ParameterError(f"{name} is not Hermitian")
        w = d.real
        lmax = max(float(w.max(initial=0.0)), 0.0)
        if w.min(initial=0.0) < -PSD_RTOL * lmax or (lmax == 0.0 and w.min(initial=0.0) < 0.0):
            raise NumericalError(f"{name} is not positive semidefinite "
                                 f"(min eigenvalue {w.min():.3e})")
        np.fill_diagonal(a, np.clip(w, 0.0, None))
        a.setflags(write=False)
        return a
    if np.max(np.abs(a - a.conj().T), initial=0.0) > HERMITIAN_ATOL * scale:
        raise ParameterError(f"{name} is not Hermitian")
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    lmax = max(float(w[-1]), 0.0)
    if w[0] < -PSD_RTOL * lmax or (lmax == 0.0 and w[0] < 0.0):
        raise NumericalError(f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    if w[0] < 0:
        a = (v * np.clip(w, 0.0, None)) @ v.conj().T
        a = 0.5 * (a + a.conj().T)
    a.setflags(write=False)
    return a


def psd_sqrt(m) -> np.ndarray:
    """Hermitian PSD square root by eigendecomposition.

    Parameters
    ----------
    m : array_like
        Hermitian PSD matrix. Singular input is fine.

    Returns
    -------
    ndarray
        ``S`` Hermitian PSD with ``S @ S == m``.
    """
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError("psd_sqrt expects a square matrix")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.conj().T), initial=0.0) > HERMITIAN_ATOL * scale:
        raise ParameterError("psd_sqrt expects a Hermitian matrix")
    if _is_diagonal(a):
        return np.diag(np.sqrt(np.clip(np.diagonal(a).real, 0.0, None))).astype(complex)
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    return 0.5 * (s + s.conj().T)


def _is_identity(a: np.ndarray) -> bool:
    return _is_diagonal(a) and bool(np.all(np.diagonal(a) == 1.0))


def _is_diagonal(a: np.ndarray) -> bool:
    return a.ndim == 2 and np.count_nonzero(a) == np.count_nonzero(np.diagonal(a))


@dataclass(frozen=True, eq=False)
class CorrelationSet:
    """The four correlation matrices of the equivalent model.

    Matrices are validated on construction and stored read-only.
    """

    R1: np.ndarray
    T1: np.ndarray
    R2: np.ndarray
    T2: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("R1", "T1", "R2", "T2"):
            object.__setattr__(self, name, as_hermitian_psd(getattr(self, name), name))
        if self.R2.shape != self.T1.shape:
            raise ParameterError("R2 and T1 must both be L x L")

    @classmethod
    def identity(cls, N: int, L: int, M: int) -> "CorrelationSet":
        return cls(np.eye(N), np.eye(L), np.eye(L), np.eye(M))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.R1.shape[0], self.T1.shape[0], self.T2.shape[0]

    def check(self, p: SystemParams) -> None:
        """Raise :class:`ParameterError` if dimensions disagree with ``p``."""
        if self.dims != (p.N, p.L, p.M):
            raise ParameterError(
                f"correlation dims {self.dims} do not match (N, L, M) = {(p.N, p.L, p.M)}")

    def sqrt(self, name: str) -> np.ndarray:
        """Cached PSD square root of one of the four matrices."""
        key = "sqrt_" + name
        if key not in self._cache:
            self._cache[key] = psd_sqrt(getattr(self, name))
        return self._cache[key]

    def is_identity(self, name: str) -> bool:
        key = "eye_" + name
        if key not in self._cache:
            self._cache[key] = _is_identity(getattr(self, name))
        return self._cache[key]

    def is_diagonal(self, name: str) -> bool:
        key = "diag_" + name
        if key not in self._cache:
            self._cache[key] = _is_diagonal(getattr(self, name))
        return self._cache[key]

    @property
    def all_diagonal(self) -> bool:
        """True when all four matrices are diagonal, so traces reduce to sums."""
        return all(self.is_diagonal(k) for k in ("R1", "T1", "R2", "T2"))

    def eigvals(self, name: str) -> np.ndarray:
        """Cached eigenvalues (ascending for dense input, diagonal order otherwise)."""
        key = "eig_" + name
        if key not in self._cache:
            a = getattr(self, name)
            if self.is_diagonal(name):
                w = np.diagonal(a).real.copy()
            else:
                w = np.linalg.eigvalsh(a)
            self._cache[key] = np.clip(w, 0.0, None)
        return self._cache[key]

    def scaled(self, r1=1.0, t1=1.0, r2=1.0, t2=1.0) -> "CorrelationSet":
        return CorrelationSet(r1 * self.R1, t1 * self.T1, r2 * self.R2, t2 * self.T2)


@dataclass(frozen=True, eq=False)
class RawChannelSpec:
    """Physical channel description before reduction.

    ``A1`` (N x N), ``B1`` (L x L), ``A2`` (L x L), ``B2`` (M x M),
    ``Phi`` (L x L) amplification matrix and ``P`` (M x M) transmit
    covariance.
    """

    A1: np.ndarray
    B1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    Phi: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("A1", "B1", "A2", "B2", "Phi", "P"):
            a = np.asarray(getattr(self, name), dtype=complex)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ParameterError(f"{name} must be square, got shape {a.shape}")
            object.__setattr__(self, name, a)
        L, M = self.B1.shape[0], self.B2.shape[0]
        for name, n in (("A2", L), ("Phi", L), ("P", M)):
            if getattr(self, name).shape[0] != n:
                raise ParameterError(f"{name} must be {n}x{n} to match B1/B2")
        object.__setattr__(self, "P", as_hermitian_psd(self.P, "P"))


def _left_gram(a: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(a)
    return (u * s**2) @ u.conj().T


def _right_gram(a: np.ndarray) -> np.ndarray:
    _, s, vh = np.linalg.svd(a)
    v = vh.conj().T
    return (v * s**2) @ v.conj().T


def reduce_raw_spec(raw: RawChannelSpec) -> CorrelationSet:
    """Map a raw channel description to its equivalent correlation set.

    ``R_i = U_A S_A^2 U_A^H`` from the SVD of ``A_i``; ``T1`` and ``T2``
    are the right Gram matrices of ``B1 Phi`` and ``B2 P^{1/2}``.
    """
    L = raw.A2.shape[0]
    M = raw.B2.shape[0]
    if raw.B1.shape[0] != L or raw.Phi.shape[0] != L:
        raise ParameterError("B1, A2 and Phi must share the relay dimension L")
    if raw.P.shape[0] != M:
        raise ParameterError("B2 and P must share the transmit dimension M")
    return CorrelationSet(
        R1=_left_gram(raw.A1),
        T1=_right_gram(raw.B1 @ raw.Phi),
        R2=_left_gram(raw.A2),
        T2=_right_gram(raw.B2 @ psd_sqrt(raw.P)),
    )


# ---------------------------------------------------------------------------
# angular correlation model

_GL_ORDER = 16
_GL_PANELS = 64
_GL_MAX_PANELS = 1 << 14
_QUAD_TOL = 1e-9


def _gl_integrate(c: np.ndarray, eta: float, dc: float, d_s: float, panels: int) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    edges = np.linspace(-180.0, 180.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    phi = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    gauss = np.exp(-((phi - eta) ** 2) / (2.0 * dc**2)) / np.sqrt(2.0 * np.pi * dc**2)
    phase = np.exp(2j * np.pi * d_s * np.outer(c, np.sin(np.pi * phi / 180.0)))
    return phase @ (wt * gauss)


def build_correlation(eta_deg: float, delta_c_deg: float, d_s: float, n: int) -> np.ndarray:
    """Angular-spread correlation matrix of a uniform linear array.

    Entry ``(m, k)`` is the integral over ``phi`` in [-180, 180] degrees of
    a Gaussian angular window (mean ``eta_deg``, spread ``delta_c_deg``)
    times the array phase ``exp(2 pi j d_s (m - k) sin(phi))``. The result
    is not normalized, so its diagonal equals the window mass inside the
    integration range.

    Parameters
    ----------
    eta_deg : float
        Mean angle in degrees.
    delta_c_deg : float
        Angular spread in degrees, positive.
    d_s : float
        Element spacing in wavelengths.
    n : int
        Matrix size.

    Returns
    -------
    ndarray
        Hermitian PSD Toeplitz matrix of shape ``(n, n)``.

    Raises
    ------
    ParameterError
        If ``delta_c_deg <= 0``, ``d_s < 0`` or ``n < 1``.
    NumericalError
        If panel doubling does not reach agreement.
    """
    if not np.isfinite(delta_c_deg) or delta_c_deg <= 0:
        raise ParameterError("angular spread must be positive")
    if not np.isfinite(d_s) or d_s < 0:
        raise ParameterError("element spacing must be nonnegative")
    if int(n) != n or n < 1:
        raise ParameterError("matrix size must be a positive integer")
    n = int(n)
    lags = np.arange(n, dtype=float)
    panels = _GL_PANELS
    col = _gl_integrate(lags, eta_deg, delta_c_deg, d_s, panels)
    while True:
        fine = _gl_integrate(lags, eta_deg, delta_c_deg, d_s, 2 * panels)
        if np.max(np.abs(fine - col)) <= _QUAD_TOL:
            col = fine
            break
        panels *= 2
        col = fine
        if panels >= _GL_MAX_PANELS:
            raise NumericalError("correlation quadrature did not converge under panel doubling")
    col[0] = col[0].real
    c = scipy.linalg.toeplitz(col, col.conj())
    return np.array(as_hermitian_psd(c, "correlation"))


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class AssumptionReport:
    """Dimension ratios, normalized traces and spectral norms."""

    ratio_N_L: float
    ratio_L_M: float
    traces: dict
    norms: dict

    @property
    def l(self) -> float:
        """Smallest normalized trace."""
        return min(self.traces.values())

    @property
    def r(self) -> float:
        """Largest spectral norm."""
        return max(self.norms.values())


def assumption_report(corr: CorrelationSet, p: SystemParams) -> AssumptionReport:
    corr.check(p)
    N, L, M = p.N, p.L, p.M
    traces = {
        "R2T1/L": float(np.real(np.sum(corr.R2 * corr.T1.T))) / L,
        "R1/N": float(np.trace(corr.R1).real) / N,
        "R2/L": float(np.trace(corr.R2).real) / L,
        "T1/L": float(np.trace(corr.T1).real) / L,
        "T2/M": float(np.trace(corr.T2).real) / M,
    }
    norms = {k: float(corr.eigvals(k).max()) for k in ("R1", "T1", "R2", "T2")}
    return AssumptionReport(N / L, L / M, traces, norms)


def fixed_power_scaling(L: int, p_t: float, p_relay: float, path_gain: float,
                        s1_sq: float) -> tuple[float, float, float]:
    """Scalar gains for an L-element amplifying relay with a fixed budget.

    The relay sees per-element input power ``path_gain * p_t + s1_sq`` and
    splits a total output power ``p_relay`` over its ``L`` elements, so the
    per-element power gain is ``p_relay / (L * (path_gain * p_t + s1_sq))``.

    Returns
    -------
    (t1, r2, t2) : tuple of float
        Multipliers for ``T1``, ``R2`` and ``T2`` (``R1`` is unscaled).
    """
    if L < 1 or p_t <= 0 or p_relay <= 0 or path_gain <= 0 or s1_sq < 0:
        raise ParameterError("invalid fixed-power parameters")
    a2 = p_relay / (L * (path_gain * p_t + s1_sq))
    return path_gain * a2, path_gain, p_t


# ---------------------------------------------------------------------------
# matrix files

_HEADER = re.compile(r"^#\s*dim\s*=\s*(\d+)\s+hermitian\s*$")


def _parse_entry(tok: str) -> complex:
    t = tok.strip().replace(" ", "")
    if not t:
        raise ParameterError("empty matrix entry")
    if t.endswith("i"):
        t = t[:-1] + "j"
    try:
        return complex(t)
    except ValueError:
        raise ParameterError(f"cannot parse matrix entry {tok!r}") from None


def read_matrix_csv(path) -> np.ndarray:
    """Read a square complex matrix written as ``re`` / ``re+imi`` CSV."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    lines = [ln for ln in text if ln.strip()]
    if not lines:
        raise ParameterError(f"{path}: empty matrix file")
    m = _HEADER.match(lines[0].strip())
    if not m:
        raise ParameterError(f"{path}: missing '# dim=<n> hermitian' header")
    n = int(m.group(1))
    rows = [[_parse_entry(t) for t in ln.split(",")] for ln in lines[1:]]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ParameterError(f"{path}: expected {n} rows of {n} entries")
    return np.array(rows, dtype=complex)


def _fmt_entry(x: complex) -> str:
    re_, im = float(x.real), float(x.imag)
    if im == 0.0:
        return f"{re_:.17g}"
    return f"{re_:.17g}{im:+.17g}i"


def write_matrix_csv(path, m) -> None:
    a = np.asarray(m, dtype=complex)
    out = [f"# dim={a.shape[0]} hermitian"]
    out += [",".join(_fmt_entry(x) for x in row) for row in a]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8", newline="\n")
