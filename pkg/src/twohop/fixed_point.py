"""Fixed-point systems for the two-hop deterministic equivalents.

System 1, unknowns ``(delta, omega_bar, omega_under, gamma)``::

    delta       = Tr R1 (z I + (s_bar omega_bar + gamma omega_under) R1)^-1 / L
    omega_bar   = Tr T1 F_w / L
    omega_under = Tr R2 T1 F_w / L,     F_w = (I + s_bar delta T1 + delta gamma R2 T1)^-1
    gamma       = Tr T2 (I + (L/M) delta omega_under T2)^-1 / M

System 2, unknowns ``(tau, tau_bar)``::

    tau     = Tr R1 (z I + s_under tau_bar R1)^-1 / L
    tau_bar = Tr T1 (I + s_under tau T1)^-1 / L

With ``S = T1^{1/2}`` and ``W2 = S R2 S`` one has
``Tr T1 F_w = Tr (I + s_bar delta T1 + delta gamma W2)^-1 T1`` and
``Tr R2 T1 F_w = Tr (I + s_bar delta T1 + delta gamma W2)^-1 W2``, which
only involve Hermitian matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, InternalConsistencyError, ParameterError
from .model import CorrelationSet, SystemParams, assumption_report

__all__ = [
    "SolutionS1",
    "SolutionS2",
    "ComplexSolutionS1",
    "ComplexSolutionS2",
    "IidParams",
    "solve_system1",
    "solve_system2",
    "solve_system1_complex",
    "solve_system2_complex",
    "residuals_system1",
    "residuals_system2",
    "solution_bounds",
    "iid_LF",
    "iid_mF",
    "iid_mG",
]


@dataclass(frozen=True)
class SolutionS1:
    delta: float
    omega_bar: float
    omega_under: float
    gamma: float
    residual: float
    iterations: int
    inner_iterations: int = 0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.delta, self.omega_bar, self.omega_under, self.gamma


@dataclass(frozen=True)
class SolutionS2:
    tau: float
    tau_bar: float
    residual: float
    iterations: int


@dataclass(frozen=True)
class ComplexSolutionS1:
    delta: complex
    omega_bar: complex
    omega_under: complex
    gamma: complex
    zeta: complex
    residual: float
    iterations: int

    def as_tuple(self):
        return self.delta, self.omega_bar, self.omega_under, self.gamma


@dataclass(frozen=True)
class ComplexSolutionS2:
    tau: complex
    tau_bar: complex
    zeta: complex
    residual: float
    iterations: int


@dataclass(frozen=True)
class IidParams:
    """Dimension ratios ``c1 = N/L`` and ``c2 = L/M``."""

    c1: float
    c2: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ParameterError("c1 and c2 must be positive")

    @classmethod
    def from_dims(cls, N: int, L: int, M: int) -> "IidParams":
        return cls(N / L, L / M)


# ---------------------------------------------------------------------------
# trace evaluation


class _Traces:
    """Trace evaluator for one correlation set.

    ``R1`` and ``T2`` enter only through their eigenvalues. For the
    ``omega`` pair, if ``T1`` and ``W2`` commute they are diagonalized
    jointly; otherwise a generalized eigenproblem (real arguments) or a
    dense solve (complex arguments) is used.
    """

    def __init__(self, corr: CorrelationSet):
        self.N, self.L, self.M = corr.dims
        self.r1 = corr.eigvals("R1")
        self.t2 = corr.eigvals("T2")
        self.t1 = corr.eigvals("T1")
        self.T1 = corr.T1
        if corr.is_diagonal("T1") and corr.is_diagonal("R2"):
            self.W2 = None
            self.joint = self.t1, np.clip(self.t1 * np.diagonal(corr.R2).real, 0.0, None)
            return
        S = corr.sqrt("T1")
        W2 = S @ corr.R2 @ S
        self.W2 = 0.5 * (W2 + W2.conj().T)
        self.joint = self._joint_diag()

    @property
    def trace_W2(self) -> float:
        if self.W2 is None:
            return float(np.sum(self.joint[1]))
        return float(np.trace(self.W2).real)

    def _joint_diag(self):
        T1, W2 = self.T1, self.W2
        if self.L == 1:
            return T1[0, 0].real.reshape(1), W2[0, 0].real.reshape(1)
        nt = np.linalg.norm(T1, 2)
        nw = np.linalg.norm(W2, 2)
        scale = max(nt * nw, np.finfo(float).tiny)
        if np.linalg.norm(T1 @ W2 - W2 @ T1) > 1e-12 * scale * self.L:
            return None
        # generic combination separates common eigenspaces
        c = np.sqrt(2.0) + 0.318309886 * (nt / nw if nw > 0 else 1.0)
        _, V = np.linalg.eigh(T1 + c * W2)
        dt = V.conj().T @ T1 @ V
        dw = V.conj().T @ W2 @ V
        t = np.real(np.diag(dt))
        w = np.real(np.diag(dw))
        off = max(np.linalg.norm(dt - np.diag(t)), np.linalg.norm(dw - np.diag(w)))
        if off > 1e-10 * max(nt, nw, 1e-300):
            return None
        return np.clip(t, 0.0, None), np.clip(w, 0.0, None)

    # -- omega pair ---------------------------------------------------------
    def omega_basis(self, s_bar, delta):
        """Return ``(a, b)`` with ``omega_bar = sum a/(1+dg b)/L`` and
        ``omega_under = sum b/(1+dg b)/L`` at fixed ``delta``."""
        if self.joint is not None:
            t, w = self.joint
            den = 1.0 + s_bar * delta * t
            return t / den, w / den
        if np.iscomplexobj(delta) or isinstance(delta, complex):
            return None
        C = np.eye(self.L) + s_bar * delta * self.T1
        lam, V = scipy.linalg.eigh(self.W2, C)
        a = np.real(np.einsum("ij,ij->j", V.conj(), self.T1 @ V))
        return a, lam

    def omega_pair(self, s_bar, delta, gamma, basis=None):
        if basis is None:
            basis = self.omega_basis(s_bar, delta)
        if basis is not None:
            a, b = basis
            den = 1.0 + delta * gamma * b
            return np.sum(a / den) / self.L, np.sum(b / den) / self.L
        A = np.eye(self.L) + s_bar * delta * self.T1 + delta * gamma * self.W2
        X = np.linalg.solve(A, np.hstack([self.T1, self.W2]))
        return np.trace(X[:, : self.L]) / self.L, np.trace(X[:, self.L:]) / self.L

    def delta(self, z, a):
        return np.sum(self.r1 / (z + a * self.r1)) / self.L

    def gamma(self, delta, omega_under):
        return np.sum(self.t2 / (1.0 + (self.L / self.M) * delta * omega_under * self.t2)) / self.M

    def map1(self, s_bar, z, x):
        d, wb, wu, g = x
        wb_n, wu_n = self.omega_pair(s_bar, d, g)
        return (self.delta(z, s_bar * wb + g * wu), wb_n, wu_n, self.gamma(d, wu))


def _traces(corr: CorrelationSet) -> _Traces:
    key = "_traces"
    if key not in corr._cache:
        corr._cache[key] = _Traces(corr)
    return corr._cache[key]


def _check_a3(corr: CorrelationSet, p: SystemParams) -> None:
    rep = assumption_report(corr, p)
    bad = [k for k, v in rep.traces.items() if not v > 0]
    if bad:
        raise ParameterError(f"normalized traces must be positive: {', '.join(bad)}")


# ---------------------------------------------------------------------------
# real solvers


def residuals_system1(corr: CorrelationSet, p: SystemParams, sol) -> tuple[float, float, float, float]:
    """Absolute residuals ``|lhs - rhs|`` of the four equations of system 1.

    ``sol`` may be a :class:`SolutionS1` or a 4-tuple.
    """
    corr.check(p)
    x = sol.as_tuple() if hasattr(sol, "as_tuple") else tuple(sol)
    tr = _traces(corr)
    y = tr.map1(p.s_bar, p.z, x)
    return tuple(float(abs(a - b)) for a, b in zip(x, y))


def residuals_system2(corr: CorrelationSet, p: SystemParams, sol) -> tuple[float, float]:
    corr.check(p)
    tau, tau_bar = (sol.tau, sol.tau_bar) if hasattr(sol, "tau") else sol
    tr = _traces(corr)
    t_new = np.sum(tr.r1 / (p.z + p.s_under * tau_bar * tr.r1)) / tr.L
    tb_new = _tau_bar(tr, p.s_under, tau)
    return float(abs(tau - t_new)), float(abs(tau_bar - tb_new))


def solve_system1(corr: CorrelationSet, p: SystemParams, tol: float = 1e-12,
                  max_outer: int = 10000, max_inner: int = 200, damping: float = 1.0,
                  init=None) -> SolutionS1:
    """Nested fixed-point iteration for system 1.

    The inner loop updates ``omega_under`` and ``gamma`` at fixed
    ``delta`` (Jacobi style); the outer loop then refreshes
    ``omega_bar`` and ``delta``. Both loops stop once the change drops
    below ``tol``; the outer loop stops when the full residual does.

    Parameters
    ----------
    corr, p : CorrelationSet, SystemParams
    tol : float
        Target max-abs residual over the four equations.
    max_outer, max_inner : int
        Iteration budgets.
    damping : float
        Relaxation weight in (0, 1]; 1 is plain substitution.
    init : tuple of 4 floats, optional
        Starting point. Defaults to ``(1/z, 1, 1, 1)``.

    Raises
    ------
    ConvergenceError
        Budget exhausted; carries the last iterate.
    ParameterError
        Bad inputs, including a vanishing normalized trace.
    """
    corr.check(p)
    if not 0 < damping <= 1:
        raise ParameterError("damping must lie in (0, 1]")
    _check_a3(corr, p)
    tr = _traces(corr)
    s, z, a = p.s_bar, p.z, damping
    d, wb, wu, g = (1.0 / z, 1.0, 1.0, 1.0) if init is None else map(float, init)
    basis = tr.omega_basis(s, d)
    n_inner = 0
    res = np.inf
    for t in range(1, max_outer + 1):
        for _ in range(max_inner):
            _, wu_n = tr.omega_pair(s, d, g, basis)
            g_n = tr.gamma(d, wu)
            change = max(abs(wu_n - wu), abs(g_n - g))
            wu = (1 - a) * wu + a * wu_n
            g = (1 - a) * g + a * g_n
            n_inner += 1
            if change <= tol:
                break
        wb_n, _ = tr.omega_pair(s, d, g, basis)
        wb = (1 - a) * wb + a * wb_n
        d = (1 - a) * d + a * tr.delta(z, s * wb + g * wu)
        basis = tr.omega_basis(s, d)
        wb_r, wu_r = tr.omega_pair(s, d, g, basis)
        res = max(abs(tr.delta(z, s * wb + g * wu) - d), abs(wb_r - wb),
                  abs(wu_r - wu), abs(tr.gamma(d, wu) - g))
        if not np.isfinite(res):
            break
        if res <= tol:
            return SolutionS1(float(d), float(wb), float(wu), float(g), float(res), t, n_inner)
    raise ConvergenceError(
        f"system 1 did not converge (residual {res:.3e} after {max_outer} outer iterations)",
        last=(d, wb, wu, g), residual=float(res), iterations=max_outer)


def _tau_bar(tr: _Traces, s_under, tau):
    return np.sum(tr.t1 / (1.0 + s_under * tau * tr.t1)) / tr.L


def solve_system2(corr: CorrelationSet, p: SystemParams, tol: float = 1e-12,
                  max_iter: int = 100000) -> SolutionS2:
    """Alternating iteration for system 2 starting at
    ``tau = Tr R1 / (L z)``, ``tau_bar = Tr T1 / L``."""
    corr.check(p)
    tr = _traces(corr)
    s, z, L = p.s_under, p.z, tr.L
    tau = np.sum(tr.r1) / (L * z)
    tau_bar = float(np.sum(tr.t1)) / L
    if s == 0.0:
        return SolutionS2(float(tau), float(tau_bar), 0.0, 1)
    _check_a3(corr, p)
    res = np.inf
    for k in range(1, max_iter + 1):
        tau = np.sum(tr.r1 / (z + s * tau_bar * tr.r1)) / L
        tau_bar = _tau_bar(tr, s, tau)
        res = abs(np.sum(tr.r1 / (z + s * tau_bar * tr.r1)) / L - tau)
        if res <= tol:
            return SolutionS2(float(tau), float(tau_bar), float(res), k)
    raise ConvergenceError(f"system 2 did not converge (residual {res:.3e})",
                           last=(tau, tau_bar), residual=float(res), iterations=max_iter)


# ---------------------------------------------------------------------------
# complex argument


def solve_system1_complex(corr: CorrelationSet, s_bar: float, zeta: complex,
                          warm_start=None, tol: float = 1e-12, max_iter: int = 200000,
                          damping: float = 0.5) -> ComplexSolutionS1:
    """Solve system 1 at ``z = -zeta`` with ``Im zeta > 0``.

    Damped substitution ``x <- (1 - a) x + a T(x)``. ``warm_start`` may be a
    previous :class:`ComplexSolutionS1` or a 4-tuple.
    """
    zeta = complex(zeta)
    if not zeta.imag > 0:
        raise ParameterError("zeta must have a positive imaginary part")
    if s_bar < 0:
        raise ParameterError("s_bar must be nonnegative")
    tr = _traces(corr)
    z = -zeta
    if warm_start is None:
        x = np.array([np.sum(tr.r1) / (tr.L * z), np.sum(tr.t1) / tr.L,
                      tr.trace_W2 / tr.L, np.sum(tr.t2) / tr.M], dtype=complex)
    else:
        ws = warm_start.as_tuple() if hasattr(warm_start, "as_tuple") else warm_start
        x = np.array(ws, dtype=complex)
    res = np.inf
    for k in range(1, max_iter + 1):
        y = np.array(tr.map1(s_bar, z, x), dtype=complex)
        res = float(np.max(np.abs(y - x)))
        x = (1 - damping) * x + damping * y
        if res <= tol:
            return ComplexSolutionS1(*x, zeta=zeta, residual=res, iterations=k)
        if not np.isfinite(res):
            break
    raise ConvergenceError(f"complex system 1 did not converge at zeta={zeta} (residual {res:.3e})",
                           last=tuple(x), residual=res, iterations=max_iter)


def solve_system2_complex(corr: CorrelationSet, s_under: float, zeta: complex,
                          warm_start=None, tol: float = 1e-12, max_iter: int = 200000,
                          damping: float = 0.5) -> ComplexSolutionS2:
    """System 2 at ``z = -zeta``; same scheme as :func:`solve_system1_complex`."""
    zeta = complex(zeta)
    if not zeta.imag > 0:
        raise ParameterError("zeta must have a positive imaginary part")
    tr = _traces(corr)
    z = -zeta
    L = tr.L
    if warm_start is None:
        x = np.array([np.sum(tr.r1) / (L * z), np.sum(tr.t1) / L], dtype=complex)
    else:
        ws = (warm_start.tau, warm_start.tau_bar) if hasattr(warm_start, "tau") else warm_start
        x = np.array(ws, dtype=complex)
    res = np.inf
    for k in range(1, max_iter + 1):
        y = np.array([np.sum(tr.r1 / (z + s_under * x[1] * tr.r1)) / L,
                      np.sum(tr.t1 / (1.0 + s_under * x[0] * tr.t1)) / L])
        res = float(np.max(np.abs(y - x)))
        x = (1 - damping) * x + damping * y
        if res <= tol:
            return ComplexSolutionS2(x[0], x[1], zeta, res, k)
        if not np.isfinite(res):
            break
    raise ConvergenceError(f"complex system 2 did not converge at zeta={zeta}",
                           last=tuple(x), residual=res, iterations=max_iter)


# ---------------------------------------------------------------------------
# bounds


def solution_bounds(corr: CorrelationSet, p: SystemParams) -> dict:
    """Intervals guaranteed to contain the solution of system 1.

    ``l`` is the smallest normalized trace and ``r`` the largest spectral
    norm of the four correlation matrices.

    Returns
    -------
    dict
        ``{"delta": (lo, hi), "omega_bar": ..., "omega_under": ..., "gamma": ...}``
    """
    rep = assumption_report(corr, p)
    l, r = rep.l, rep.r
    N, L, M, s, z = p.N, p.L, p.M, p.s_bar, p.z
    low_w = l / (1.0 + N * (s * r**2 + r**4) / (L * z))
    return {
        "delta": (N * l / (L * (z + s * r**2 + r**4)), N * r / (L * z)),
        "omega_bar": (low_w, r),
        "omega_under": (low_w, r**2),
        "gamma": (l / (1.0 + N * r**4 / (M * z)), r),
    }


# ---------------------------------------------------------------------------
# iid closed forms


def iid_LF(m, c1, c2, s_bar, z):
    """Quartic whose bracketed root gives ``m_F`` for identity correlations."""
    u = c1 * z * m + 1.0 - c1
    return c1 * c2 * m * u * (z * m - 1.0 + s_bar * m * u) + (s_bar + 1.0) * m * u + z * m - 1.0


def iid_mF(iid: IidParams, s_bar: float, z: float, tol: float = 1e-13) -> float:
    """Unique root of the quartic inside ``(max(0, (1 - 1/c1)/z), 1/z)``.

    Bisection down to relative width ``tol``, then one secant step.
    """
    if z <= 0 or s_bar < 0:
        raise ParameterError("need z > 0 and s_bar >= 0")
    c1, c2 = iid.c1, iid.c2
    f = lambda m: iid_LF(m, c1, c2, s_bar, z)  # noqa: E731
    lo, hi = max(0.0, (1.0 - 1.0 / c1) / z), 1.0 / z
    flo, fhi = f(lo), f(hi)
    if not (flo < 0 < fhi):
        raise InternalConsistencyError(
            f"quartic bracket has no sign change: L_F({lo})={flo}, L_F({hi})={fhi}")
    for _ in range(400):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if fm < 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    m = lo - flo * (hi - lo) / (fhi - flo)
    if not lo <= m <= hi:
        m = 0.5 * (lo + hi)
    return float(m)


def iid_mG(c1: float, s_under: float, z: float) -> float:
    """Positive root of ``s m (c1 z m + 1 - c1) + z m - 1 = 0``."""
    if z <= 0 or s_under < 0 or c1 <= 0:
        raise ParameterError("need z > 0, s_under >= 0, c1 > 0")
    if s_under == 0:
        return 1.0 / z
    a = s_under * c1 * z
    b = s_under * (1.0 - c1) + z
    return float(2.0 / (b + np.sqrt(b * b + 4.0 * a)))
