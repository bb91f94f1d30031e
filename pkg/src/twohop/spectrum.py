"""Limiting spectral density by Stieltjes inversion.

For ``B = H1 H2 H2^H H1^H + s_bar H1 H1^H`` the deterministic
equivalent of ``(1/N) Tr (B - zeta I)^{-1}`` is ``(1/N) Tr F_delta``
evaluated at ``z = -zeta``. The density is ``Im m(x + iy) / pi`` for a
small offset ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, NumericalError, ParameterError
from .fixed_point import _traces, solve_system1_complex, solve_system2_complex
from .model import CorrelationSet

__all__ = ["SpectralDensity", "stieltjes_m", "lsd_density", "support_scale", "right_edge",
           "write_density_csv"]


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Density sampled on ``grid``.

    ``atom`` is ``max(0, 1 - mass)``, the mass the inversion cannot
    resolve (a point mass at zero when ``B`` is rank deficient).
    ``failed`` marks grid points that were interpolated.
    """

    grid: np.ndarray
    density: np.ndarray
    y: float
    mass: float
    atom: float
    failed: np.ndarray

    @property
    def first_moment(self) -> float:
        return float(np.trapezoid(self.grid * self.density, self.grid))


def _m_from(corr, system, s, zeta, sol):
    tr = _traces(corr)
    z = -zeta
    if system == 1:
        a = s * sol.omega_bar + sol.gamma * sol.omega_under
    else:
        a = s * sol.tau_bar
    return complex(np.sum(1.0 / (z + a * tr.r1)) / tr.N)


def stieltjes_m(corr: CorrelationSet, s_bar: float, zeta: complex, warm=None,
                system: int = 1, return_solution: bool = False, **solver_kw):
    """Deterministic Stieltjes transform at ``zeta`` (``Im zeta > 0``).

    Parameters
    ----------
    corr : CorrelationSet
    s_bar : float
        Relay noise weight. With ``system=2`` it plays the role of
        ``s_under`` and the matrix is ``s_under H1 H1^H``.
    zeta : complex
    warm : solution object, optional
        Starting iterate, typically the solution at a nearby point.
    system : {1, 2}
    return_solution : bool
        Also return the fixed-point solution for continuation.
    """
    if system not in (1, 2):
        raise ParameterError("system must be 1 or 2")
    solve = solve_system1_complex if system == 1 else solve_system2_complex
    sol = solve(corr, s_bar, zeta, warm_start=warm, **solver_kw)
    m = _m_from(corr, system, s_bar, complex(zeta), sol)
    return (m, sol) if return_solution else m


def support_scale(corr: CorrelationSet, s_bar: float, system: int = 1,
                  edge: bool = False) -> float:
    """Spectral scale ``|R1||T1|(s_bar + |R2||T2|)`` (``s_bar |R1||T1|`` for
    system 2).

    With ``edge=True`` the norms of the white factors are included through
    their asymptotic largest eigenvalues ``(1 + sqrt(N/L))^2`` and
    ``(1 + sqrt(L/M))^2``, giving an upper estimate of the right edge.
    """
    N, L, M = corr.dims
    n = {k: float(np.linalg.eigvalsh(getattr(corr, k))[-1]) for k in ("R1", "T1", "R2", "T2")}
    e1 = (1.0 + np.sqrt(N / L)) ** 2 if edge else 1.0
    e2 = (1.0 + np.sqrt(L / M)) ** 2 if edge else 1.0
    h1 = n["R1"] * n["T1"] * e1
    if system == 2:
        return s_bar * h1
    return h1 * (s_bar + n["R2"] * n["T2"] * e2)


def right_edge(corr: CorrelationSet, s_bar: float, system: int = 1, n: int = 120,
               rel_offset: float = 1e-6) -> float:
    """Estimate the right end of the spectrum.

    The transform is evaluated close to the real axis on ``n`` points up to
    ``1.2 * support_scale(..., edge=True)``. Outside the support the
    imaginary part is of order ``rel_offset``; the last point where the
    density exceeds 1e-3 of its maximum, plus one spacing, is returned.
    Points that fail to converge count as inside the support.
    """
    bound = 1.2 * support_scale(corr, s_bar, system, edge=True)
    yy = rel_offset * support_scale(corr, s_bar, system)
    xs = np.linspace(0.0, bound, n + 1)[1:]
    f = np.empty(n)
    for i, x in enumerate(xs):
        try:
            f[i] = stieltjes_m(corr, s_bar, complex(x, yy), system=system,
                               max_iter=20000).imag / np.pi
        except ConvergenceError:
            f[i] = np.inf
    ok = np.isfinite(f)
    if not ok.any():
        return bound
    inside = f > 1e-3 * np.max(f[ok])
    return float(min(xs[inside][-1] + (xs[1] - xs[0]), bound))


def lsd_density(corr: CorrelationSet, s_bar: float, grid=None, y: float | None = None,
                system: int = 1, richardson: bool = False, tol: float = 1e-10,
                max_iter: int = 200000, damping: float = 0.5) -> SpectralDensity:
    """Density of the limiting spectrum on ``grid``.

    Points are solved left to right, each warm-started from its
    predecessor. Defaults: ``y = 1e-3 * support_scale(...)`` and 400
    points on ``[0, 1.2 * right_edge(...)]``.
    With ``richardson`` the estimate ``2 f(y/2) - f(y)`` is returned.

    Raises
    ------
    NumericalError
        If more than 5% of the points fail to converge.
    """
    scale = support_scale(corr, s_bar, system)
    if not scale > 0:
        raise ParameterError("spectrum is a point mass at zero")
    if grid is None:
        grid = np.linspace(0.0, 1.2 * right_edge(corr, s_bar, system), 400)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ParameterError("grid must be strictly ascending with at least two points")
    if y is None:
        y = 1e-3 * scale
    if not y > 0:
        raise ParameterError("offset y must be positive")

    def sweep(yy):
        f = np.empty(grid.size)
        bad = np.zeros(grid.size, dtype=bool)
        warm = None
        for i, x in enumerate(grid):
            try:
                m, warm = stieltjes_m(corr, s_bar, complex(x, yy), warm=warm, system=system,
                                      return_solution=True, tol=tol, max_iter=max_iter,
                                      damping=damping)
                f[i] = m.imag / np.pi
            except ConvergenceError:
                bad[i] = True
                f[i] = np.nan
        return f, bad

    f, bad = sweep(y)
    if richardson:
        f2, bad2 = sweep(0.5 * y)
        f = 2.0 * f2 - f
        bad |= bad2
    if bad.mean() > 0.05:
        raise NumericalError(f"{int(bad.sum())} of {grid.size} grid points failed to converge")
    if bad.any():
        f[bad] = np.interp(grid[bad], grid[~bad], f[~bad])
    if np.any(f < -1e-10):
        if richardson:
            f = np.clip(f, 0.0, None)
        else:
            raise NumericalError("negative density beyond clamping tolerance")
    f = np.clip(f, 0.0, None)
    mass = float(np.trapezoid(f, grid))
    return SpectralDensity(grid, f, float(y), mass, max(0.0, 1.0 - mass), bad)


def write_density_csv(path, x, f, column: str = "f") -> None:
    """Write ``x,<column>`` rows with 17 significant digits."""
    lines = [f"x,{column}"] + [f"{a:.17g},{b:.17g}" for a, b in zip(x, f)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
