"""Exact distribution engine and distance oracle.

Everything here is a pure function of immutable inputs. The laws built by this
module are the ground truth against which every bound in the package is
certified, so truncation is never silent: a truncated law carries its missing
mass in ``tail_mass`` and distances come back as brackets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import gammainc, gammaln, ndtr

from .errors import DomainError, PreconditionError, ResourceError

PROB_TOL = 1e-12
MERGE_TOL = 1e-12
CONVOLUTION_BUDGET = 10**7
DEFAULT_POISSON_EPS = 1e-12
# absorbs floating-point rounding in the summed absolute differences
ROUNDING_SLACK = 1e-15


@dataclass(frozen=True)
class DistanceInterval:
    """A certified bracket ``[lo, hi]`` around a distance."""

    lo: float
    hi: float

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(f"invalid distance interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    @classmethod
    def point(cls, value: float, pad: float = 0.0) -> "DistanceInterval":
        return cls(max(0.0, value - pad), max(0.0, value) + pad)


@dataclass(frozen=True)
class BoundCertificate:
    """One computed bound set against the exact distance it is meant to dominate.

    ``margin = bound - exact.hi``; the certificate passes iff the margin is
    nonnegative, i.e. the bound covers the whole oracle bracket.
    """

    theorem: str
    bound: float
    exact: DistanceInterval
    components: dict = field(default_factory=dict)
    margin: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "margin", float(self.bound - self.exact.hi))

    @property
    def passed(self) -> bool:
        return self.margin >= 0.0

    def as_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "bound": self.bound,
            "exact_lo": self.exact.lo,
            "exact_hi": self.exact.hi,
            "margin": self.margin,
            "passed": self.passed,
            "components": dict(self.components),
        }


@dataclass(frozen=True, eq=False)
class LatticePmf:
    """Probability mass function on ``origin, origin + 1, ...``.

    ``tail_mass`` is the probability lying outside the stored window; it is
    zero for finitely supported laws such as Bernoulli convolutions.
    """

    origin: int
    weights: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-D array")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if not 0.0 <= self.tail_mass <= 1.0:
            raise ValueError("tail_mass must lie in [0, 1]")
        total = math.fsum(w) + self.tail_mass
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"weights + tail_mass = {total!r}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "origin", int(self.origin))

    @property
    def support(self) -> np.ndarray:
        return self.origin + np.arange(self.weights.size)

    @property
    def last(self) -> int:
        return self.origin + self.weights.size - 1

    def pmf(self, k: int) -> float:
        i = k - self.origin
        if 0 <= i < self.weights.size:
            return float(self.weights[i])
        return 0.0

    def mean(self) -> float:
        return float(np.dot(self.support, self.weights))

    def variance(self) -> float:
        k = self.support
        m = np.dot(k, self.weights)
        return float(np.dot((k - m) ** 2, self.weights))

    def expect(self, h: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(np.asarray(h(self.support), dtype=float), self.weights))


@dataclass(frozen=True, eq=False)
class FiniteRv:
    """Finite-support real random variable: sorted distinct atoms with masses."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        if v.ndim != 1 or v.shape != p.shape or v.size == 0:
            raise ValueError("values and probs must be nonempty 1-D arrays of equal length")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(math.fsum(p) - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(p)!r}, expected 1")
        if np.any(np.diff(v) <= 0):
            raise ValueError("atom values must be strictly increasing")
        v.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_atoms(cls, values: Sequence[float], probs: Sequence[float]) -> "FiniteRv":
        """Build from unsorted atoms, merging values closer than ``MERGE_TOL``."""
        v, p = _merge_atoms(np.asarray(values, dtype=float), np.asarray(probs, dtype=float))
        return cls(v, p)

    @classmethod
    def point_mass(cls, value: float = 0.0) -> "FiniteRv":
        return cls(np.array([float(value)]), np.array([1.0]))

    @classmethod
    def two_point(cls, a: float, b: float, p: float) -> "FiniteRv":
        """Value ``a`` with probability ``p`` and ``b`` with probability ``1 - p``."""
        return cls.from_atoms([a, b], [p, 1.0 - p])

    @property
    def size(self) -> int:
        return self.values.size

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(np.asarray(f(self.values), dtype=float), self.probs))

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def moment(self, k: int) -> float:
        return float(np.dot(self.values**k, self.probs))

    def abs_moment(self, k: float) -> float:
        return float(np.dot(np.abs(self.values) ** k, self.probs))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot((self.values - m) ** 2, self.probs))

    def cdf(self, x: float) -> float:
        return float(self.probs[self.values <= x].sum())

    def prob_between(self, a: float, b: float, tol: float = MERGE_TOL) -> float:
        """``P(a <= X <= b)``, counting atoms within ``tol`` of an endpoint as inside."""
        mask = (self.values >= a - tol) & (self.values <= b + tol)
        return math.fsum(self.probs[mask])

    def scaled(self, c: float) -> "FiniteRv":
        if c == 0:
            return FiniteRv.point_mass(0.0)
        return FiniteRv.from_atoms(self.values * c, self.probs)

    def shifted(self, c: float) -> "FiniteRv":
        return FiniteRv(self.values + c, self.probs)


def _merge_atoms(values: np.ndarray, probs: np.ndarray, tol: float = MERGE_TOL):
    order = np.argsort(values, kind="stable")
    v = values[order]
    p = probs[order]
    if v.size == 0:
        return v, p
    # a new group starts wherever the gap to the previous atom exceeds tol
    starts = np.concatenate(([True], np.diff(v) > tol))
    group = np.cumsum(starts) - 1
    merged_p = np.bincount(group, weights=p)
    merged_v = v[starts]
    return merged_v, merged_p


def convolve_bernoulli(p: Sequence[float]) -> LatticePmf:
    """Exact law of a sum of independent ``Be(p_i)`` variables on ``{0..n}``."""
    probs = np.asarray(p, dtype=float).ravel()
    if np.any(~np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
        raise DomainError("every p_i must lie in [0, 1]")
    w = np.zeros(probs.size + 1)
    w[0] = 1.0
    for k, pk in enumerate(probs, start=1):
        # right-hand side is built before assignment, so w[:k] is the previous law
        w[1 : k + 1] = w[1 : k + 1] * (1.0 - pk) + w[:k] * pk
        w[0] *= 1.0 - pk
    return LatticePmf(0, w, 0.0)


def convolve_finite(rvs: Sequence[FiniteRv], budget: int = CONVOLUTION_BUDGET) -> FiniteRv:
    """Exact law of the sum of independent finite-support variables."""
    if len(rvs) == 0:
        raise PreconditionError("convolve_finite needs at least one variable")
    acc_v = rvs[0].values
    acc_p = rvs[0].probs
    for rv in rvs[1:]:
        pairs = acc_v.size * rv.size
        if pairs > budget:
            raise ResourceError(
                f"convolution step needs {pairs} atom pairs (budget {budget}); "
                "use sampling instead"
            )
        v = (acc_v[:, None] + rv.values[None, :]).ravel()
        p = (acc_p[:, None] * rv.probs[None, :]).ravel()
        acc_v, acc_p = _merge_atoms(v, p)
    return FiniteRv(acc_v, acc_p)


def iid_sum(x: FiniteRv, n: int, budget: int = CONVOLUTION_BUDGET) -> FiniteRv:
    """Law of the sum of ``n`` independent copies of ``x`` (point mass at 0 for n = 0)."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    if n == 0:
        return FiniteRv.point_mass(0.0)
    return convolve_finite([x] * n, budget=budget)


def _poisson_log_pmf(k: np.ndarray, lam: float) -> np.ndarray:
    return k * math.log(lam) - lam - gammaln(k + 1.0)


def poisson_tail(j: int, lam: float) -> float:
    """``P(Z > j)`` for ``Z ~ Po(lam)``, accurate in relative terms."""
    if j < 0:
        return 1.0
    return float(gammainc(j + 1.0, lam))


def poisson_pmf(lam: float, eps: float = DEFAULT_POISSON_EPS) -> LatticePmf:
    """Truncated ``Po(lam)`` on ``[0, J]`` with ``J`` minimal such that the tail is <= eps.

    Weights come from the recurrence ``p(j+1) = p(j) * lam / (j+1)``, anchored
    at the mode so that large rates do not underflow ``p(0)``. The tail beyond
    ``J`` is the regularized incomplete gamma function.
    """
    if not lam > 0 or not math.isfinite(lam):
        raise DomainError("lambda must be a positive finite rate")
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    j = max(0, int(math.floor(lam)))
    while poisson_tail(j, lam) > eps:
        j += 1
    # walk back down in case the mode already satisfies the tolerance
    while j > 0 and poisson_tail(j - 1, lam) <= eps:
        j -= 1
    w = np.empty(j + 1)
    if lam <= 700.0:
        w[0] = math.exp(-lam)
        for k in range(j):
            w[k + 1] = w[k] * lam / (k + 1)
    else:
        # exp(-lam) underflows: anchor at the mode and renormalize the window
        mode = min(int(math.floor(lam)), j)
        w[mode] = 1.0
        for k in range(mode, j):
            w[k + 1] = w[k] * lam / (k + 1)
        for k in range(mode, 0, -1):
            w[k - 1] = w[k] * k / lam
        w *= (1.0 - poisson_tail(j, lam)) / math.fsum(w)
    return LatticePmf(0, w, poisson_tail(j, lam))


def poisson_pmf_window(lam: float, last: int) -> LatticePmf:
    """``Po(lam)`` stored on ``[0, last]`` exactly, with the rest as tail mass."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    k = np.arange(last + 1)
    w = np.exp(_poisson_log_pmf(k, lam))
    return LatticePmf(0, w, poisson_tail(last, lam))


def _interval(abs_sum: float, tail_p: float, tail_q: float, cross_p: float, cross_q: float):
    """Bracket ``(1/2) sum |P - Q|`` given the stored part and the unknown tails.

    ``cross_p`` is the stored Q-mass lying outside P's window, which is the only
    place where P's tail can cancel against Q (and symmetrically).
    """
    # an exactly zero sum needs no slack: identical stored laws
    slack = ROUNDING_SLACK if abs_sum > 0 else 0.0
    lo = 0.5 * (abs_sum - min(tail_p, cross_p) - min(tail_q, cross_q)) - slack
    hi = 0.5 * (abs_sum + tail_p + tail_q) + slack
    return DistanceInterval(max(0.0, lo), min(1.0, max(hi, 0.0)))


def tv_distance(P: LatticePmf, Q: LatticePmf) -> DistanceInterval:
    """Total variation distance ``sup_A |P(A) - Q(A)|`` as a certified bracket."""
    lo = min(P.origin, Q.origin)
    hi = max(P.last, Q.last)
    a = np.zeros(hi - lo + 1)
    b = np.zeros(hi - lo + 1)
    a[P.origin - lo : P.last - lo + 1] = P.weights
    b[Q.origin - lo : Q.last - lo + 1] = Q.weights
    in_p = np.zeros(a.size, dtype=bool)
    in_q = np.zeros(a.size, dtype=bool)
    in_p[P.origin - lo : P.last - lo + 1] = True
    in_q[Q.origin - lo : Q.last - lo + 1] = True
    abs_sum = math.fsum(np.abs(a - b))
    cross_p = math.fsum(b[~in_p])
    cross_q = math.fsum(a[~in_q])
    return _interval(abs_sum, P.tail_mass, Q.tail_mass, cross_p, cross_q)


_SQRT2 = math.sqrt(2.0)


def std_normal_cdf(x: float) -> float:
    """Standard normal distribution function.

    Uses ``Phi(x) = erfc(-x / sqrt 2) / 2`` from the C library, whose relative
    error is a few ulps over the whole line; the complementary form keeps full
    relative accuracy in the lower tail. Saturates to exactly 0 or 1 for
    ``|x| >= 40``.
    """
    if x >= 40.0:
        return 1.0
    if x <= -40.0:
        return 0.0
    return 0.5 * math.erfc(-x / _SQRT2)


def std_normal_cdf_array(x: np.ndarray) -> np.ndarray:
    return np.clip(ndtr(np.asarray(x, dtype=float)), 0.0, 1.0)


def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def kolmogorov_distance_to_normal(W: FiniteRv) -> float:
    """Exact ``sup_z |F_W(z) - Phi(z)|``.

    Between atoms ``F_W`` is flat and ``Phi`` increases, so the supremum is
    attained at an atom, either at its value or approached from the left.
    """
    phi = np.array([std_normal_cdf(float(x)) for x in W.values])
    right = np.cumsum(W.probs)
    left = np.concatenate(([0.0], right[:-1]))
    return float(max(np.max(np.abs(right - phi)), np.max(np.abs(left - phi))))


def gauss_hermite_expect(f: Callable, degree: int = 40) -> float:
    """``E f(Z)`` for ``Z ~ N(0, 1)`` by Gauss-Hermite quadrature.

    Exact for polynomials of degree up to ``2 * degree - 1``.
    """
    if not 2 <= degree <= 200:
        raise DomainError("degree must lie in [2, 200]")
    nodes, weights = hermegauss(degree)
    vals = np.asarray(f(nodes), dtype=float)
    if vals.shape != nodes.shape:
        vals = np.array([float(f(t)) for t in nodes])
    return float(np.dot(weights, vals) / math.sqrt(2.0 * math.pi))
