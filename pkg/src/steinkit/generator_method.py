"""Markov-generator route to Stein operators.

Two chains live here: the coordinate-resampling chain whose stationary law is
that of independent coordinates ``(X_1..X_n)``, and the immigration-death chain
whose stationary law is Poisson. For a finite-state generator ``Q`` the
Poisson equation is solved by a dense linear solve.

Sign conventions: :func:`solve_poisson_equation` returns ``g`` with
``Q g = -(h - pi h)``, i.e. ``g(w) = int_0^inf E[h(Z_t) - pi h | Z_0 = w] dt``.
The Stein solution is the recurrent potential ``-g``
(:func:`recurrent_potential`), which solves ``Q f = h - pi h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .dist_core import FiniteRv
from .errors import DomainError, PreconditionError, ResourceError

ROW_SUM_TOL = 1e-12
ENUMERATION_BUDGET = 10**6
MOMENT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CtmcGenerator:
    states: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.rates, dtype=float)
        s = np.asarray(self.states)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != s.size:
            raise ValueError("rates must be a square matrix matching the state list")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        scale = max(1.0, float(np.max(np.abs(Q))))
        if np.max(np.abs(Q.sum(axis=1))) > ROW_SUM_TOL * scale:
            raise ValueError("generator rows must sum to zero")
        object.__setattr__(self, "rates", Q)
        object.__setattr__(self, "states", s)

    @property
    def size(self) -> int:
        return self.states.size

    def is_irreducible(self) -> bool:
        off = self.rates - np.diag(np.diag(self.rates))
        k, _ = connected_components(csr_matrix(off > 0), directed=True, connection="strong")
        return k == 1

    def stationary(self) -> np.ndarray:
        """Stationary law ``pi Q = 0``, ``sum pi = 1`` (irreducible chains only)."""
        if not self.is_irreducible():
            raise PreconditionError("generator is reducible; stationary law is not unique")
        m = self.size
        A = self.rates.T.copy()
        A[-1, :] = 1.0
        b = np.zeros(m)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
        return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.rates @ np.asarray(f, dtype=float)


@dataclass(frozen=True, eq=False)
class CoordinateChainSpec:
    coords: tuple[FiniteRv, ...]

    def __post_init__(self):
        if len(self.coords) < 1:
            raise ValueError("at least one coordinate is required")
        object.__setattr__(self, "coords", tuple(self.coords))

    @property
    def n(self) -> int:
        return len(self.coords)

    def check_configuration(self, z: Sequence[float]) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,):
            raise DomainError(f"configuration must have {self.n} coordinates")
        for i, (zi, X) in enumerate(zip(z, self.coords)):
            if np.min(np.abs(X.values - zi)) > 1e-12:
                raise DomainError(f"z[{i}] = {zi} is not an atom of coordinate {i}")
        return z

    def check_centered(self) -> None:
        means = [X.mean() for X in self.coords]
        if max(abs(m) for m in means) > MOMENT_TOL:
            raise PreconditionError("coordinates must be centered")
        total = math.fsum(X.moment(2) for X in self.coords)
        if abs(total - 1.0) > MOMENT_TOL:
            raise PreconditionError(f"sum of E X_i^2 is {total}, expected 1")


def coordinate_generator_apply(spec: CoordinateChainSpec, f: Callable, z: Sequence[float]) -> float:
    """``(1/n) sum_i E{f(z + e_i (X_i - z_i)) - f(z)}`` for ``f`` on configurations."""
    z = spec.check_configuration(z)
    fz = float(f(z))
    total = 0.0
    for i, X in enumerate(spec.coords):
        acc = 0.0
        for x, q in zip(X.values, X.probs):
            y = z.copy()
            y[i] = x
            acc += q * (float(f(y)) - fz)
        total += acc
    return total / spec.n


class ProjectionExpansion(NamedTuple):
    lhs: float
    remainder: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def _taylor_remainder(X: FiniteRv, zi: float, w: float, f, f1, f2) -> float:
    """``E{f(w + X - zi) - f(w) - (X - zi) f'(w) - (X - zi)^2 f''(w) / 2}``."""
    d = X.values - zi
    vals = f(w + d) - f(w) - d * f1(w) - 0.5 * d * d * f2(w)
    return float(np.dot(X.probs, vals))


def projection_expansion(spec: CoordinateChainSpec, f, fprime, fsecond, z) -> ProjectionExpansion:
    """Second-order expansion of the coordinate generator applied to ``f`` of the sum.

    ``lhs`` is ``n`` times the generator applied to ``f(sum z)``; ``rhs`` is
    ``-g f'(g) + (1/2)(1 + sum z_i^2) f''(g) + remainder`` with ``g = sum z``.
    The two agree exactly when the coordinates are centered with
    ``sum E X_i^2 = 1``.
    """
    spec.check_centered()
    z = spec.check_configuration(z)
    g = float(np.sum(z))
    lhs = spec.n * coordinate_generator_apply(spec, lambda y: f(float(np.sum(y))), z)
    remainder = math.fsum(
        _taylor_remainder(X, z[i], g, f, fprime, fsecond) for i, X in enumerate(spec.coords)
    )
    rhs = -g * fprime(g) + 0.5 * (1.0 + float(np.dot(z, z))) * fsecond(g) + remainder
    return ProjectionExpansion(float(lhs), float(remainder), float(rhs))


def enumerate_product(rvs: Sequence[FiniteRv], budget: int = ENUMERATION_BUDGET):
    """All configurations of independent coordinates with their probabilities."""
    count = math.prod(X.size for X in rvs)
    if count > budget:
        raise ResourceError(f"{count} configurations exceed the enumeration budget {budget}")
    grids = np.meshgrid(*[X.values for X in rvs], indexing="ij")
    pgrids = np.meshgrid(*[X.probs for X in rvs], indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    prob = np.prod(np.stack([g.ravel() for g in pgrids], axis=1), axis=1)
    return z, prob


class IdentityCheck(NamedTuple):
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def coordinate_stein_identity(rvs: Sequence[FiniteRv], f, fprime, fsecond) -> IdentityCheck:
    """Both sides of the Stein identity of the coordinate-resampling chain.

    ``lhs = -E{-W f'(W) + f''(W)}`` and
    ``rhs = (1/2) E{(sum X_i^2 - 1) f''(W)} + E R(X)`` where ``R`` is the
    second-order Taylor remainder summed over coordinates, all by enumeration.
    """
    spec = CoordinateChainSpec(tuple(rvs))
    spec.check_centered()
    z, prob = enumerate_product(rvs)
    w = z.sum(axis=1)
    f1 = np.asarray(fprime(w), dtype=float)
    f2 = np.asarray(fsecond(w), dtype=float)
    lhs = -math.fsum(prob * (-w * f1 + f2))
    rem = np.zeros_like(w)
    for i, X in enumerate(rvs):
        d = X.values[None, :] - z[:, i : i + 1]
        wi = w[:, None]
        vals = (
            np.asarray(f(wi + d), dtype=float)
            - np.asarray(f(wi), dtype=float)
            - d * f1[:, None]
            - 0.5 * d * d * f2[:, None]
        )
        rem += vals @ X.probs
    sq = (z * z).sum(axis=1)
    rhs = 0.5 * math.fsum(prob * (sq - 1.0) * f2) + math.fsum(prob * rem)
    return IdentityCheck(float(lhs), float(rhs))


def coordinate_dynkin_check(rvs: Sequence[FiniteRv], f) -> float:
    """``|E L(f o g)(X)|`` over the product stationary law, by enumeration."""
    spec = CoordinateChainSpec(tuple(rvs))
    z, prob = enumerate_product(rvs)
    w = z.sum(axis=1)
    fw = np.asarray(f(w), dtype=float)
    total = np.zeros_like(w)
    for i, X in enumerate(rvs):
        d = X.values[None, :] - z[:, i : i + 1]
        total += (np.asarray(f(w[:, None] + d), dtype=float) - fw[:, None]) @ X.probs
    return abs(math.fsum(prob * total)) / spec.n


def bernoulli_generator_expansion(p: Sequence[float], f, z: Sequence[int]) -> IdentityCheck:
    """Coordinate generator for Bernoulli coordinates versus its birth-death form.

    ``lhs = n L(f o g)(z)`` computed directly; ``rhs`` is
    ``lam Delta f(w) - w Delta f(w-1) - sum_i z_i p_i Delta^2 f(w-1)`` with
    ``w = sum z``. The correction term enters with a minus sign.
    """
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=int)
    coords = tuple(FiniteRv.from_atoms([0.0, 1.0], [1.0 - pi, pi]) if 0 < pi < 1
                   else FiniteRv.point_mass(float(pi)) for pi in p)
    spec = CoordinateChainSpec(coords)
    lhs = spec.n * coordinate_generator_apply(spec, lambda y: f(int(round(np.sum(y)))), z)
    w = int(z.sum())
    lam = float(p.sum())
    d2 = f(w + 1) - 2 * f(w) + f(w - 1)
    rhs = lam * (f(w + 1) - f(w)) - w * (f(w) - f(w - 1)) - float(np.dot(z, p)) * d2
    return IdentityCheck(float(lhs), float(rhs))


def immigration_death_generator(lam: float, N: int, strict: bool = True) -> CtmcGenerator:
    """Immigration rate ``lam``, unit per-capita death rate, reflected at ``N``.

    With ``strict`` the truncation must satisfy ``N >= ceil(lam) + 10 sqrt(lam)``
    so that the Poisson mass beyond ``N`` is negligible.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if N < 1:
        raise PreconditionError("N must be at least 1")
    if strict and N < math.ceil(lam) + 10.0 * math.sqrt(lam):
        raise PreconditionError(
            f"N = {N} is below ceil(lam) + 10 sqrt(lam) = {math.ceil(lam) + 10 * math.sqrt(lam):.2f}"
        )
    Q = np.zeros((N + 1, N + 1))
    w = np.arange(N + 1)
    Q[w[:-1], w[:-1] + 1] = lam
    Q[w[1:], w[1:] - 1] = w[1:]
    Q[w, w] = -Q.sum(axis=1)
    return CtmcGenerator(w, Q)


def solve_poisson_equation(Q: CtmcGenerator, h: Sequence[float]) -> np.ndarray:
    """``g`` with ``Q g = -(h - pi h)`` and ``pi g = 0``.

    One balance equation is redundant (``pi Q = 0``); it is replaced by the
    normalization row, choosing the state of largest stationary mass.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (Q.size,):
        raise ValueError("h must have one value per state")
    pi = Q.stationary()
    rhs = -(h - float(np.dot(pi, h)))
    A = Q.rates.copy()
    k = int(np.argmax(pi))
    A[k, :] = pi
    b = rhs.copy()
    b[k] = 0.0
    try:
        g = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError("Poisson equation system is singular") from exc
    return g


def recurrent_potential(Q: CtmcGenerator, h: Sequence[float]) -> np.ndarray:
    """Stein solution ``f`` with ``Q f = h - pi h``, ``pi f = 0``."""
    return -solve_poisson_equation(Q, h)


def poisson_equation_residual(Q: CtmcGenerator, g: np.ndarray, h: Sequence[float]) -> float:
    """``max |Q g + (h - pi h)|``."""
    pi = Q.stationary()
    h = np.asarray(h, dtype=float)
    return float(np.max(np.abs(Q.apply(g) + (h - float(np.dot(pi, h))))))


def stationarity_check(Q: CtmcGenerator, f: Sequence[float]) -> float:
    """``|sum_w pi(w) (Q f)(w)|``, zero for every ``f`` when ``pi`` is stationary."""
    pi = Q.stationary()
    return abs(math.fsum(pi * Q.apply(f)))


def stein_difference_from_potential(potential: np.ndarray) -> np.ndarray:
    """``f(w) = potential(w) - potential(w - 1)`` for ``w >= 1``, with ``f(0) = 0``.

    Applied to the recurrent potential of the immigration-death chain this is
    the operator-form Poisson Stein solution.
    """
    potential = np.asarray(potential, dtype=float)
    out = np.empty_like(potential)
    out[0] = 0.0
    out[1:] = np.diff(potential)
    return out


def time_integrated_potential(Q: CtmcGenerator, h: Sequence[float], t_max: float, dt: float) -> np.ndarray:
    """``-int_0^T E[h(Z_t) - pi h | Z_0 = w] dt`` by the trapezoid rule on ``exp(Q dt)``.

    A direct time-domain evaluation of the recurrent potential, for cross-checking
    the linear solve on small chains.
    """
    from scipy.linalg import expm

    h = np.asarray(h, dtype=float)
    pi = Q.stationary()
    centered = h - float(np.dot(pi, h))
    step = expm(Q.rates * dt)
    steps = int(round(t_max / dt))
    cur = centered.copy()
    acc = 0.5 * cur
    for _ in range(steps - 1):
        cur = step @ cur
        acc += cur
    cur = step @ cur
    acc += 0.5 * cur
    return -dt * acc

