"""Deterministic equivalents: matrices, trace functionals, means, covariance.

All mutual-information values are in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.special

from .errors import InternalConsistencyError, NumericalError, ParameterError
from .fixed_point import (IidParams, SolutionS1, SolutionS2, iid_mF, iid_mG,
                          solve_system1, solve_system2)
from .model import CorrelationSet, SystemParams

__all__ = [
    "DetMatrices",
    "Functionals",
    "GaussianModel",
    "Analysis",
    "det_matrices",
    "functionals",
    "K1_matrix",
    "K2_matrix",
    "mean_I1",
    "mean_I2",
    "covariance_V",
    "analyze",
    "outage_probability",
    "outage_rate",
    "q_function",
    "q_inverse",
    "iid_means",
    "iid_deltas",
    "iid_covariance",
    "iid_large_L",
    "logdet_hpd",
]


def logdet_hpd(a: np.ndarray) -> float:
    """Log-determinant of a Hermitian positive definite matrix via Cholesky."""
    a = np.asarray(a)
    if a.shape == (0, 0):
        return 0.0
    try:
        c = scipy.linalg.cholesky(0.5 * (a + a.conj().T), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.real(np.diag(c)))))


class _Diag:
    """Diagonal matrix stored as its diagonal; ``@`` multiplies elementwise."""

    __slots__ = ("d",)

    def __init__(self, d):
        self.d = d

    def __matmul__(self, other):
        return _Diag(self.d * other.d)

    @property
    def shape(self):
        return self.d.shape * 2


def _tr(a) -> float:
    if isinstance(a, _Diag):
        return float(np.sum(a.d).real)
    return float(np.trace(a).real)


def _eye_like(a):
    if isinstance(a, _Diag):
        return _Diag(np.ones_like(a.d))
    return np.eye(a.shape[0], dtype=a.dtype)


# ---------------------------------------------------------------------------
# deterministic matrices


@dataclass(frozen=True, eq=False)
class DetMatrices:
    F_delta: np.ndarray
    F_omega: np.ndarray
    F_gamma: np.ndarray
    G_tau: np.ndarray
    G_tau_bar: np.ndarray
    consistency: dict = field(default_factory=dict)


def det_matrices(corr: CorrelationSet, p: SystemParams, sol1: SolutionS1,
                 sol2: SolutionS2) -> DetMatrices:
    """Form ``F_delta, F_omega, F_gamma, G_tau, G_tau_bar`` by direct inversion.

    The ``consistency`` attribute holds the absolute gaps between the
    fixed-point values and the traces they are supposed to reproduce.
    """
    corr.check(p)
    N, L, M = p.N, p.L, p.M
    d, wb, wu, g = sol1.as_tuple()
    try:
        Fd = np.linalg.inv(p.z * np.eye(N) + (p.s_bar * wb + g * wu) * corr.R1)
        Fw = np.linalg.inv(np.eye(L) + p.s_bar * d * corr.T1 + d * g * corr.R2 @ corr.T1)
        Fg = np.linalg.inv(np.eye(M) + (L / M) * d * wu * corr.T2)
        Gt = np.linalg.inv(p.z * np.eye(N) + p.s_under * sol2.tau_bar * corr.R1)
        Gtb = np.linalg.inv(np.eye(L) + p.s_under * sol2.tau * corr.T1)
    except np.linalg.LinAlgError as exc:
        raise InternalConsistencyError("singular deterministic matrix") from exc
    Fd = 0.5 * (Fd + Fd.conj().T)
    Gt = 0.5 * (Gt + Gt.conj().T)
    cons = {
        "delta": abs(_tr(corr.R1 @ Fd) / L - d),
        "omega_bar": abs(_tr(corr.T1 @ Fw) / L - wb),
        "omega_under": abs(_tr(corr.R2 @ corr.T1 @ Fw) / L - wu),
        "gamma": abs(_tr(corr.T2 @ Fg) / M - g),
        "tau": abs(_tr(corr.R1 @ Gt) / L - sol2.tau),
        "tau_bar": abs(_tr(corr.T1 @ Gtb) / L - sol2.tau_bar),
    }
    return DetMatrices(Fd, Fw, Fg, Gt, Gtb, cons)


# ---------------------------------------------------------------------------
# functionals


@dataclass(frozen=True)
class Functionals:
    """Scalar trace functionals.

    Families indexed by ``k`` are dicts ``{k: value}``; mixed families are
    dicts keyed by ``(k, l)``. ``omega_mixed[(k, l)]`` is
    ``Tr (T1 F_w)^k (R2 T1 F_w)^l / L`` and ``omega_mixed_I`` replaces the
    last ``R2 T1 F_w`` factor by ``F_w``.
    """

    L: int
    M: int
    s_bar: float
    s_under: float
    z: float
    delta: float
    omega_bar: float
    omega_under: float
    gamma: float
    tau: float
    tau_bar: float
    delta_k: dict
    delta_kI: dict
    omega_bar_k: dict
    omega_under_k: dict
    omega_under_kI: dict
    omega_mixed: dict
    omega_mixed_I: dict
    gamma_k: dict
    tau_k: dict
    tau_kI: dict
    tau_bar_k: dict
    vartheta_kl: dict
    vartheta_klI: dict
    vartheta_kIl: dict
    phi_bar_kl: dict
    phi_under_kl: dict
    phi_mixed_12: float
    phi_mixed_12_tilde: float
    varsigma: float
    Delta: float
    Delta_V1: float
    Delta_V2: float
    vartheta: float
    phi_bar: float
    phi_under: float
    Delta_C: float


def _powers(a, kmax: int) -> list:
    out = [_eye_like(a), a]
    for _ in range(2, kmax + 1):
        out.append(out[-1] @ a)
    return out


def functionals(corr: CorrelationSet, dm: DetMatrices, sol1: SolutionS1,
                sol2: SolutionS2, p: SystemParams, kmax: int = 3) -> Functionals:
    """Evaluate the scalar functionals by explicit matrix products."""
    mats = (corr.R1, corr.T1, corr.R2, corr.T2)
    return _functionals(mats, dm, sol1, sol2, p, kmax)


def _diagonal_inputs(corr: CorrelationSet, p: SystemParams, sol1: SolutionS1,
                     sol2: SolutionS2):
    """Correlations and deterministic matrices as :class:`_Diag` when all
    four correlations are diagonal."""
    d, wb, wu, g = sol1.as_tuple()
    r1, t1, r2, t2 = (np.diagonal(getattr(corr, k)).real for k in ("R1", "T1", "R2", "T2"))
    dm = DetMatrices(
        _Diag(1.0 / (p.z + (p.s_bar * wb + g * wu) * r1)),
        _Diag(1.0 / (1.0 + p.s_bar * d * t1 + d * g * r2 * t1)),
        _Diag(1.0 / (1.0 + (p.L / p.M) * d * wu * t2)),
        _Diag(1.0 / (p.z + p.s_under * sol2.tau_bar * r1)),
        _Diag(1.0 / (1.0 + p.s_under * sol2.tau * t1)),
    )
    return tuple(_Diag(v) for v in (r1, t1, r2, t2)), dm


def _functionals(mats, dm, sol1, sol2, p, kmax):
    R1, T1, R2, T2 = mats
    L, M = p.L, p.M
    s, su = p.s_bar, p.s_under
    d, wb, wu, g = sol1.as_tuple()
    RF = R1 @ dm.F_delta
    TF = T1 @ dm.F_omega
    RTF = R2 @ TF
    T2F = T2 @ dm.F_gamma
    RG = R1 @ dm.G_tau
    TG = T1 @ dm.G_tau_bar
    TFR = TF @ R2
    pRF, pTF, pRTF = _powers(RF, kmax), _powers(TF, kmax), _powers(RTF, kmax)
    pT2F, pRG, pTG = _powers(T2F, kmax), _powers(RG, kmax), _powers(TG, kmax)
    ks = range(1, kmax + 1)

    delta_k = {k: _tr(pRF[k]) / L for k in ks}
    delta_kI = {k: _tr(pRF[k - 1] @ dm.F_delta) / L for k in ks}
    omega_bar_k = {k: _tr(pTF[k]) / L for k in ks}
    omega_under_k = {k: _tr(pRTF[k]) / L for k in ks}
    omega_under_kI = {k: _tr(pRTF[k - 1] @ dm.F_omega) / L for k in ks}
    pairs = [(1, 1), (1, 2), (2, 1), (2, 2)]
    omega_mixed = {(k, l): _tr(pTF[k] @ pRTF[l]) / L for k, l in pairs}
    omega_mixed_I = {(k, l): _tr(pTF[k] @ pRTF[l - 1] @ dm.F_omega) / L for k, l in pairs}
    gamma_k = {k: _tr(pT2F[k]) / M for k in ks}
    tau_k = {k: _tr(pRG[k]) / L for k in ks}
    tau_kI = {k: _tr(pRG[k - 1] @ dm.G_tau) / L for k in ks}
    tau_bar_k = {k: _tr(pTG[k]) / L for k in ks}
    pTFR = _powers(TFR, 2)
    vartheta_kl = {(k, l): _tr(pRG[k] @ pRF[l]) / L for k, l in pairs}
    vartheta_klI = {(k, l): _tr(pRG[k] @ pRF[l - 1] @ dm.F_delta) / L for k, l in pairs}
    vartheta_kIl = {(k, l): _tr(pRG[k - 1] @ dm.G_tau @ pRF[l]) / L for k, l in pairs}
    phi_bar_kl = {(k, l): _tr(pTG[k] @ pTF[l]) / L for k, l in pairs}
    phi_under_kl = {(k, l): _tr(pTG[k] @ pTFR[l]) / L for k, l in pairs}
    phi_mixed_12 = _tr(TG @ TF @ RTF) / L
    phi_mixed_12_tilde = _tr(TG @ TF @ TF @ R2) / L

    X = omega_mixed[(1, 1)]
    varsigma = 2 * s * g * X + g**2 * omega_under_k[2] + s**2 * omega_bar_k[2]
    Delta = 1 - (L / M) * gamma_k[2] * omega_under_k[2] * d**2
    Delta_V1 = (1 - varsigma * delta_k[2]) * Delta - (L / M) * gamma_k[2] * omega_under_kI[2] ** 2 * delta_k[2]
    Delta_V2 = 1 - su**2 * tau_k[2] * tau_bar_k[2]
    vartheta = vartheta_kl[(1, 1)]
    phi_bar = phi_bar_kl[(1, 1)]
    phi_under = phi_under_kl[(1, 1)]
    Delta_C = 1 - su * vartheta * (g * phi_under + s * phi_bar)
    return Functionals(
        L=L, M=M, s_bar=s, s_under=su, z=p.z, delta=d, omega_bar=wb, omega_under=wu,
        gamma=g, tau=sol2.tau, tau_bar=sol2.tau_bar,
        delta_k=delta_k, delta_kI=delta_kI, omega_bar_k=omega_bar_k,
        omega_under_k=omega_under_k, omega_under_kI=omega_under_kI,
        omega_mixed=omega_mixed, omega_mixed_I=omega_mixed_I, gamma_k=gamma_k,
        tau_k=tau_k, tau_kI=tau_kI, tau_bar_k=tau_bar_k,
        vartheta_kl=vartheta_kl, vartheta_klI=vartheta_klI, vartheta_kIl=vartheta_kIl,
        phi_bar_kl=phi_bar_kl, phi_under_kl=phi_under_kl,
        phi_mixed_12=phi_mixed_12, phi_mixed_12_tilde=phi_mixed_12_tilde,
        varsigma=varsigma, Delta=Delta, Delta_V1=Delta_V1, Delta_V2=Delta_V2,
        vartheta=vartheta, phi_bar=phi_bar, phi_under=phi_under, Delta_C=Delta_C,
    )


def K1_matrix(fn: Functionals) -> np.ndarray:
    """4x4 Jacobian-type matrix whose determinant equals ``Delta_V1``.

    ``K1 @ d(delta, omega_bar, omega_under, gamma)/dz = (-delta_{2,I}, 0, 0, 0)``.
    """
    s, c = fn.s_bar, fn.L / fn.M
    d, wu, g = fn.delta, fn.omega_under, fn.gamma
    d2, wb2, wu2, g2 = fn.delta_k[2], fn.omega_bar_k[2], fn.omega_under_k[2], fn.gamma_k[2]
    X = fn.omega_mixed[(1, 1)]
    return np.array([
        [1.0, s * d2, g * d2, wu * d2],
        [s * wb2 + g * X, 1.0, 0.0, d * X],
        [s * X + g * wu2, 0.0, 1.0, d * wu2],
        [c * wu * g2, 0.0, c * d * g2, 1.0],
    ])


def K2_matrix(fn: Functionals) -> np.ndarray:
    """2x2 matrix whose determinant equals ``Delta_V2``."""
    su = fn.s_under
    return np.array([[1.0, su * fn.tau_k[2]], [su * fn.tau_bar_k[2], 1.0]])


# ---------------------------------------------------------------------------
# means and covariance


def mean_I1(corr: CorrelationSet, p: SystemParams, sol1: SolutionS1) -> float:
    """Deterministic equivalent of ``E[I1]``.

    The middle log-determinant uses ``I + s_bar delta T1 + delta gamma W2``
    with ``W2 = T1^{1/2} R2 T1^{1/2}``, which has the same determinant as
    ``I + s_bar delta T1 + delta gamma R2 T1`` but is Hermitian.
    """
    corr.check(p)
    N, L, M = p.N, p.L, p.M
    d, wb, wu, g = sol1.as_tuple()
    s, z = p.s_bar, p.z
    if corr.all_diagonal:
        r1, t1, r2, t2 = (corr.eigvals(k) for k in ("R1", "T1", "R2", "T2"))
        t = (np.sum(np.log1p(((s * wb + g * wu) / z) * r1))
             + np.sum(np.log1p(s * d * t1 + d * g * r2 * t1))
             + np.sum(np.log1p((L / M) * d * wu * t2)))
        return float(t - s * L * d * wb - 2.0 * L * d * wu * g)
    S = corr.sqrt("T1")
    W2 = S @ corr.R2 @ S
    t1 = logdet_hpd(np.eye(N) + ((s * wb + g * wu) / z) * corr.R1)
    t2 = logdet_hpd(np.eye(L) + s * d * corr.T1 + d * g * W2)
    t3 = logdet_hpd(np.eye(M) + (L / M) * d * wu * corr.T2)
    return t1 + t2 + t3 - s * L * d * wb - 2.0 * L * d * wu * g


def mean_I2(corr: CorrelationSet, p: SystemParams, sol2: SolutionS2) -> float:
    """Deterministic equivalent of ``E[I2]``."""
    corr.check(p)
    N, L = p.N, p.L
    su, z = p.s_under, p.z
    if corr.all_diagonal:
        t = (np.sum(np.log1p((su * sol2.tau_bar / z) * corr.eigvals("R1")))
             + np.sum(np.log1p(su * sol2.tau * corr.eigvals("T1"))))
        return float(t - L * su * sol2.tau * sol2.tau_bar)
    t1 = logdet_hpd(np.eye(N) + (su * sol2.tau_bar / z) * corr.R1)
    t2 = logdet_hpd(np.eye(L) + su * sol2.tau * corr.T1)
    return t1 + t2 - L * su * sol2.tau * sol2.tau_bar


def covariance_V(fn: Functionals) -> np.ndarray:
    """``[[-log Delta_V1, -log Delta_C], [-log Delta_C, -log Delta_V2]]``."""
    vals = (fn.Delta_V1, fn.Delta_C, fn.Delta_V2)
    if not all(v > 0 for v in vals):
        raise NumericalError(f"nonpositive variance factor {vals}; upstream solve is suspect")
    v11, v12, v22 = (-math.log(v) for v in vals)
    return np.array([[v11, v12], [v12, v22]])


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Joint Gaussian approximation of ``(I1, I2)``."""

    mean_I1: float
    mean_I2: float
    V: np.ndarray
    s_bar: float = float("nan")
    s_under: float = float("nan")

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_I1, self.mean_I2])

    @property
    def mean_I(self) -> float:
        return self.mean_I1 - self.mean_I2

    @property
    def var_I(self) -> float:
        V = self.V
        return float(V[0, 0] + V[1, 1] - 2.0 * V[0, 1])


@dataclass(frozen=True, eq=False)
class Analysis:
    """Everything computed for one configuration.

    ``dm`` holds dense matrices and is formed on first access.
    """

    sol1: SolutionS1
    sol2: SolutionS2
    fn: Functionals
    gm: GaussianModel
    corr: CorrelationSet = field(repr=False)
    p: SystemParams = field(repr=False)

    @cached_property
    def dm(self) -> DetMatrices:
        return det_matrices(self.corr, self.p, self.sol1, self.sol2)


def analyze(corr: CorrelationSet, p: SystemParams, tol: float = 1e-12,
            max_outer: int = 10000, max_inner: int = 200, damping: float = 1.0,
            max_iter: int = 100000) -> Analysis:
    """Solve both systems and assemble means and covariance."""
    sol1 = solve_system1(corr, p, tol=tol, max_outer=max_outer, max_inner=max_inner,
                         damping=damping)
    sol2 = solve_system2(corr, p, tol=tol, max_iter=max_iter)
    if corr.all_diagonal:
        fn = _functionals(*_diagonal_inputs(corr, p, sol1, sol2), sol1, sol2, p, 3)
    else:
        fn = functionals(corr, det_matrices(corr, p, sol1, sol2), sol1, sol2, p)
    gm = GaussianModel(mean_I1(corr, p, sol1), mean_I2(corr, p, sol2), covariance_V(fn),
                       p.s_bar, p.s_under)
    return Analysis(sol1, sol2, fn, gm, corr, p)


# ---------------------------------------------------------------------------
# outage


def q_function(x):
    """Gaussian tail probability ``P(X > x)`` for standard normal ``X``."""
    return 0.5 * scipy.special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def q_inverse(p: float) -> float:
    """Inverse of :func:`q_function` on ``(0, 1)``."""
    if not 0.0 < p < 1.0:
        raise ParameterError("probability must lie strictly between 0 and 1")
    x = math.sqrt(2.0) * float(scipy.special.erfcinv(2.0 * p))
    for _ in range(3):
        # Newton on Q(x) - p; Q'(x) = -phi(x)
        f = float(q_function(x)) - p
        dphi = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        if dphi == 0.0:
            break
        step = f / dphi
        x += step
        if abs(step) <= 1e-12 * max(1.0, abs(x)):
            break
    return x


def _outage_sd(gm: GaussianModel) -> float:
    if not gm.s_bar == gm.s_under:
        raise ParameterError("outage quantities need s_bar == s_under")
    v = gm.var_I
    if not v > 0:
        raise NumericalError(f"variance of I is not positive ({v})")
    return math.sqrt(v)


def outage_probability(gm: GaussianModel, R):
    """``P(I1 - I2 < R)`` under the Gaussian model."""
    sd = _outage_sd(gm)
    return 1.0 - q_function((np.asarray(R, dtype=float) - gm.mean_I) / sd)


def outage_rate(gm: GaussianModel, p_out: float) -> float:
    """Largest rate whose outage probability is ``p_out``."""
    sd = _outage_sd(gm)
    if not 0.0 < p_out < 1.0:
        raise ParameterError("p_out must lie strictly between 0 and 1")
    return gm.mean_I + sd * q_inverse(1.0 - p_out)


# ---------------------------------------------------------------------------
# identity correlations in closed form


def _iid_AU(iid: IidParams, s1_sq, s2_sq):
    c1, c2 = iid.c1, iid.c2
    mF = iid_mF(iid, s1_sq, s2_sq)
    U = c1 * s2_sq * mF + 1.0 - c1
    A = s2_sq * mF - 1.0 + s1_sq * mF * U
    return mF, U, A


def iid_means(iid: IidParams, N: int, s1_sq: float, s2_sq: float) -> tuple[float, float]:
    """Closed-form means of ``I1`` and ``I2`` for identity correlations.

    Both relay-noise arguments equal ``s1_sq``; ``L = N / c1`` and
    ``M = L / c2`` need not be integers.
    """
    if s2_sq <= 0 or s1_sq < 0:
        raise ParameterError("need s2_sq > 0 and s1_sq >= 0")
    c1, c2 = iid.c1, iid.c2
    L = N / c1
    M = L / c2
    mF, U, A = _iid_AU(iid, s1_sq, s2_sq)
    I1 = (-N * math.log(s2_sq * mF) - L * math.log(U) - M * math.log1p(c1 * c2 * A)
          + N * (2 * s2_sq * mF - 2 + s1_sq * mF * U))
    if s1_sq == 0:
        return I1, 0.0
    mG = iid_mG(c1, s1_sq, s2_sq)
    I2 = (-N * math.log(s2_sq * mG) - L * math.log(c1 * s2_sq * mG + 1 - c1)
          + N * (s2_sq * mG - 1))
    return I1, I2


def iid_deltas(iid: IidParams, s1_sq: float, s2_sq: float) -> tuple[float, float, float]:
    """``(Delta_V1, Delta_V2, Delta_C)`` for identity correlations."""
    c1, c2 = iid.c1, iid.c2
    mF, U, A = _iid_AU(iid, s1_sq, s2_sq)
    dv1 = (1 + (2 * s2_sq + (c1 - 1) * (s1_sq + c2 + 1)) * A - c1 * (s2_sq * mF - 1) ** 2
           + (c1 - 1) / c1 + ((c1 + 1) / c1) * U + (2 * (s1_sq + 1) + c2 * (c1 + 1)) * A * U)
    if s1_sq == 0:
        return dv1, 1.0, 1.0
    mG = iid_mG(c1, s1_sq, s2_sq)
    r = s2_sq / s1_sq
    dv2 = (r + 1 + c1) * s2_sq * mG + 1 - c1 - r
    dc = 1 - c1 * (1 - s2_sq * mF) * (1 - s2_sq * mG)
    return dv1, dv2, dc


def iid_covariance(iid: IidParams, s1_sq: float, s2_sq: float) -> np.ndarray:
    """Closed-form covariance of ``(I1, I2)`` for identity correlations."""
    dv1, dv2, dc = iid_deltas(iid, s1_sq, s2_sq)
    if not (dv1 > 0 and dv2 > 0 and dc > 0):
        raise NumericalError(f"nonpositive variance factor {(dv1, dv2, dc)}")
    return np.array([[-math.log(dv1), -math.log(dc)], [-math.log(dc), -math.log(dv2)]])


def iid_large_L(c: float, N: int, M: int, s1_sq: float, s2_sq: float) -> tuple[float, float]:
    """Mean and variance of ``I1 - I2`` as the relay size grows without bound.

    Parameters
    ----------
    c : float
        ``N / M``.
    N, M : int
        Receive and transmit dimensions.
    s1_sq, s2_sq : float
        Relay and receiver noise powers.

    Returns
    -------
    (mean, variance) : tuple of float
    """
    if c <= 0 or s2_sq <= 0 or s1_sq < 0:
        raise ParameterError("need c > 0, s2_sq > 0, s1_sq >= 0")
    S = s1_sq + s2_sq
    b = S + 1.0 - c
    a = c * S
    m = 2.0 / (b + math.sqrt(b * b + 4.0 * a))
    mean = -N * math.log(S * m) - M * math.log1p(c * S * m - c) + N * (S * m - 1.0)
    dv = (S + 1.0 + c) * S * m + 1.0 - c - S
    if not dv > 0:
        raise NumericalError(f"nonpositive variance factor {dv}")
    return mean, -math.log(dv)
