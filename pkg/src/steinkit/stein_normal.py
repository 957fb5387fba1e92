"""Stein operators for densities on the line, and the normal Stein equation solver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .dist_core import gauss_hermite_expect
from .errors import DomainError, PreconditionError

Func = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DensitySpec:
    """A density through its log and its score ``psi = p'/p`` on an open interval."""

    log_density: Func
    psi: Func
    support: tuple[float, float] = (-math.inf, math.inf)

    def contains(self, x: float) -> bool:
        lo, hi = self.support
        return lo < x < hi


STANDARD_NORMAL = DensitySpec(
    log_density=lambda x: -0.5 * np.square(x) - 0.5 * math.log(2.0 * math.pi),
    psi=lambda x: -np.asarray(x, dtype=float),
)


def general_stein_apply(d: DensitySpec, f: float, fprime: float, x: float) -> float:
    """``f'(x) + psi(x) f(x)``, whose expectation vanishes under the density."""
    if not d.contains(x):
        raise DomainError(f"x = {x} is not in the interior of the support {d.support}")
    return float(fprime + d.psi(x) * f)


def normal_stein_apply(f: float, fprime: float, w: float) -> float:
    return fprime - w * f


def ou_generator_apply(fprime: float, fsecond: float, w: float) -> float:
    """Ornstein-Uhlenbeck generator ``-w f'(w) + f''(w)``."""
    return -w * fprime + fsecond


@dataclass(frozen=True, eq=False)
class GridFunction:
    lo: float
    hi: float
    step: float
    values: np.ndarray

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        v = np.asarray(self.values, dtype=float)
        expected = int(round((self.hi - self.lo) / self.step)) + 1
        if v.shape != (expected,):
            raise ValueError(f"expected {expected} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, lo: float = -8.0, hi: float = 8.0, step: float = 1e-3) -> "GridFunction":
        if not step > 0:
            raise ValueError("step must be positive")
        n = int(round((hi - lo) / step)) + 1
        return cls(lo, hi, step, np.zeros(n))

    @property
    def x(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.values.size)


def _gauss_legendre(order: int = 8):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


_GL_NODES, _GL_WEIGHTS = _gauss_legendre()


def _cell_integrals(edges: np.ndarray, integrand: Func) -> np.ndarray:
    """Integral of ``integrand`` over each cell ``[edges[k], edges[k+1]]``."""
    a = edges[:-1, None]
    width = np.diff(edges)[:, None]
    pts = a + width * _GL_NODES[None, :]
    vals = np.asarray(integrand(pts), dtype=float)
    return (vals * _GL_WEIGHTS[None, :]).sum(axis=1) * width[:, 0]


def _eval_h(h: Func, x: np.ndarray) -> np.ndarray:
    out = np.asarray(h(x), dtype=float)
    if out.shape != np.shape(x):
        out = np.vectorize(lambda t: float(h(t)))(x)
    return out


@dataclass(frozen=True, eq=False)
class NormalSteinSolution:
    """Tabulated solution of ``f' + psi f = h - E h`` on a grid.

    ``fprime`` is read off the Stein equation itself from the tabulated ``f``;
    independent checks of the solve should difference ``f`` instead.
    """

    f: GridFunction
    fprime: GridFunction
    h: Func
    mean_h: float
    density: DensitySpec
    breakpoints: tuple[float, ...] = ()
    sup_norm: float = field(init=False)
    deriv_norm: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(self.f.values))))
        object.__setattr__(self, "deriv_norm", float(np.max(np.abs(self.fprime.values))))

    def covers(self, lo: float, hi: float) -> bool:
        return self.f.lo <= lo and hi <= self.f.hi

    def __call__(self, x) -> np.ndarray:
        """Interpolate ``f`` (cubic Hermite through tabulated values and slopes)."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.f.lo - 1e-12) or np.any(x > self.f.hi + 1e-12):
            raise DomainError("evaluation point outside the solution grid")
        return self._spline()(x)

    def derivative(self, x) -> np.ndarray:
        """``f'`` at arbitrary points, from the equation ``f' = h - E h - psi f``."""
        x = np.asarray(x, dtype=float)
        return _eval_h(self.h, x) - self.mean_h - self.density.psi(x) * self(x)

    def _spline(self) -> CubicHermiteSpline:
        sp = self.__dict__.get("_spline_cache")
        if sp is None:
            sp = CubicHermiteSpline(self.f.x, self.f.values, self.fprime.values)
            object.__setattr__(self, "_spline_cache", sp)
        return sp


def _extend(edge: float, direction: int, d: DensitySpec, step: float, drop: float = 40.0) -> float:
    """Move outward from ``edge`` until the log-density has dropped by ``drop``."""
    lo, hi = d.support
    limit = hi if direction > 0 else lo
    base = float(d.log_density(np.array(edge)))
    dist = step
    while True:
        cand = edge + direction * dist
        if (direction > 0 and cand >= limit) or (direction < 0 and cand <= limit):
            # stop one cell short of a finite support end
            return limit - direction * step if math.isfinite(limit) else cand
        if float(d.log_density(np.array(cand))) <= base - drop:
            return cand
        dist *= 2.0


def _weighted_integrals(h, d, grid, breakpoints, mean_h):
    """Both integral forms of ``f p`` at the grid nodes, plus ``E h`` and masses.

    Returns ``(left, right, cum_mass, logp, mean_h)`` where ``left`` is the
    integral of ``(h - E h) p`` from the far left and ``right`` is minus the
    integral to the far right, both scaled by a common constant.
    """
    step = grid.step
    if not (d.contains(grid.lo) and d.contains(grid.hi)):
        raise DomainError("solver grid must lie inside the open support")
    lo_ext = min(grid.lo, _extend(grid.lo, -1, d, step))
    hi_ext = max(grid.hi, _extend(grid.hi, +1, d, step))
    n_left = int(math.ceil((grid.lo - lo_ext) / step - 1e-9))
    n_right = int(math.ceil((hi_ext - grid.hi) / step - 1e-9))
    edges = np.concatenate(
        (
            grid.lo - step * np.arange(n_left, 0, -1),
            grid.x,
            grid.hi + step * np.arange(1, n_right + 1),
        )
    )
    is_node = np.zeros(edges.size, dtype=bool)
    is_node[n_left : n_left + grid.values.size] = True
    extra = [b for b in breakpoints if edges[0] < b < edges[-1] and not np.any(edges == b)]
    if extra:
        merged = np.union1d(edges, extra)
        is_node = np.isin(merged, edges[is_node])
        edges = merged

    shift = float(np.max(np.asarray(d.log_density(grid.x), dtype=float)))

    def weight(t):
        return np.exp(np.asarray(d.log_density(t), dtype=float) - shift)

    mass = _cell_integrals(edges, weight)
    total_mass = math.fsum(mass)
    if mean_h is None:
        hm = _cell_integrals(edges, lambda t: _eval_h(h, t) * weight(t))
        if not np.all(np.isfinite(hm)):
            raise DomainError("h is not integrable against the density on the grid")
        mean_h = math.fsum(hm) / total_mass
    if not math.isfinite(mean_h):
        raise DomainError("E h is not finite")

    cells = _cell_integrals(edges, lambda t: (_eval_h(h, t) - mean_h) * weight(t))
    if not np.all(np.isfinite(cells)):
        raise DomainError("h is not integrable against the density on the grid")
    # an integrable h p has negligible mass in the outermost cells
    scale = math.fsum(np.abs(cells))
    if max(abs(cells[0]), abs(cells[-1])) > 1e-12 * scale:
        raise DomainError("h p does not decay at the ends of the integration range: h looks non-integrable")
    left = np.concatenate(([0.0], np.cumsum(cells)))[is_node]
    right = -np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))[is_node]
    cum_mass = (np.concatenate(([0.0], np.cumsum(mass))) / total_mass)[is_node]
    logp = np.asarray(d.log_density(grid.x), dtype=float) - shift
    return left, right, cum_mass, logp, float(mean_h)


def solve_stein_normal(
    h: Func,
    d: DensitySpec = STANDARD_NORMAL,
    grid: GridFunction | None = None,
    breakpoints: Sequence[float] = (),
    mean_h: float | None = None,
) -> NormalSteinSolution:
    """Solve ``f' + psi f = h - E h`` on ``grid`` in density-weighted form.

    ``f(x) p(x)`` is the integral of ``(h - E h) p`` from the left end for
    points left of the median and minus the integral to the right end for
    points right of it, so ``f p`` is never formed by cancelling two large
    numbers. The integration range is extended past the grid until the density
    has dropped by a factor ``e^40``, and each cell is integrated by 8-point
    Gauss-Legendre. ``h`` must accept numpy arrays. Jumps of ``h`` should be
    listed in ``breakpoints`` so that no cell straddles one; ``E h`` is computed
    by the same quadrature unless supplied.
    """
    if grid is None:
        grid = GridFunction.zeros()
    left, right, cum_mass, logp, mean_h = _weighted_integrals(h, d, grid, breakpoints, mean_h)
    fvals = np.where(cum_mass <= 0.5, left, right) / np.exp(logp)
    x = grid.x
    fprime = _eval_h(h, x) - mean_h - np.asarray(d.psi(x), dtype=float) * fvals
    return NormalSteinSolution(
        f=GridFunction(grid.lo, grid.hi, grid.step, fvals),
        fprime=GridFunction(grid.lo, grid.hi, grid.step, fprime),
        h=h,
        mean_h=mean_h,
        density=d,
        breakpoints=tuple(float(b) for b in breakpoints),
    )


def solve_stein_normal_one_sided(
    h: Func,
    direction: str,
    d: DensitySpec = STANDARD_NORMAL,
    grid: GridFunction | None = None,
    breakpoints: Sequence[float] = (),
    mean_h: float | None = None,
) -> GridFunction:
    """Solution built from a single integral form over the whole grid.

    ``direction="left"`` integrates from the far left, ``"right"`` takes minus
    the integral to the far right. Each is accurate only on its own side of the
    median; on the overlap they must agree with each other and with
    :func:`solve_stein_normal`.
    """
    if direction not in ("left", "right"):
        raise ValueError("direction must be 'left' or 'right'")
    if grid is None:
        grid = GridFunction.zeros()
    left, right, _, logp, _ = _weighted_integrals(h, d, grid, breakpoints, mean_h)
    fp = left if direction == "left" else right
    return GridFunction(grid.lo, grid.hi, grid.step, fp / np.exp(logp))


def finite_difference_residual(sol: NormalSteinSolution, exclude_cells: int = 1) -> np.ndarray:
    """Stein-equation residual on the grid with ``f'`` from a 5-point stencil.

    Returns the residual ``f' + psi f - (h - E h)`` at interior points; entries
    within ``exclude_cells`` cells of a breakpoint of ``h`` (and the two
    boundary cells at each end) are NaN.
    """
    g = sol.f
    v = g.values
    x = g.x
    dv = np.full(v.size, np.nan)
    dv[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * g.step)
    res = dv + np.asarray(sol.density.psi(x)) * v - (_eval_h(sol.h, x) - sol.mean_h)
    for b in sol.breakpoints:
        res[np.abs(x - b) <= exclude_cells * g.step * (1 + 1e-9)] = np.nan
    return res


def normal_expectation(h: Func, degree: int = 120) -> float:
    """``E h(Z)`` by Gauss-Hermite; only accurate for smooth ``h``."""
    return gauss_hermite_expect(h, degree)


def lyapounov_bound(moments3: Sequence[float], f2norm: float) -> float:
    """``(3/2) * sum E|X_i|^3 * ||f''||`` for a sum of independent centered summands."""
    m = np.asarray(moments3, dtype=float)
    if np.any(m < 0):
        raise PreconditionError("third absolute moments must be nonnegative")
    if f2norm < 0:
        raise PreconditionError("f2norm must be nonnegative")
    return 1.5 * math.fsum(m) * f2norm
