"""Concentration inequality for sums of i.i.d. centered variables.

``W_n = X_1 + ... + X_n`` with ``E X = 0`` and ``E X^2 = 1/n``. The K-function

    K(t) = n E{X [1(0 < t < X) - 1(X < t < 0)]}

is a probability density, and ``E W_n f(W_n) = E int f'(W_{n-1} + t) K(t) dt``.
K is piecewise constant, so integrals against it are done plateau by plateau:
``int_{b_k}^{b_{k+1}} f'(w + t) dt = f(w + b_{k+1}) - f(w + b_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import quad

from .dist_core import (
    BoundCertificate,
    DistanceInterval,
    FiniteRv,
    iid_sum,
    kolmogorov_distance_to_normal,
    std_normal_cdf,
)
from .errors import DomainError, PreconditionError, ResourceError
from .generator_method import enumerate_product
from .stein_normal import GridFunction, NormalSteinSolution, solve_stein_normal

MOMENT_TOL = 1e-12
INVARIANT_TOL = 1e-12
ENUMERATION_BUDGET = 10**6


@dataclass(frozen=True, eq=False)
class KFunction:
    """``K(t) = plateau_values[k]`` on ``[breakpoints[k], breakpoints[k+1])``, zero outside."""

    breakpoints: np.ndarray
    plateau_values: np.ndarray
    beta: float
    n: int

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        b = self.breakpoints
        k = np.searchsorted(b, t, side="right") - 1
        inside = (k >= 0) & (k < self.plateau_values.size)
        return np.where(inside, self.plateau_values[np.clip(k, 0, self.plateau_values.size - 1)], 0.0)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def total_mass(self) -> float:
        return math.fsum(self.plateau_values * self.widths)

    def abs_first_moment(self) -> float:
        b = self.breakpoints
        # plateaus never straddle 0, so |t| integrates to |b1^2 - b0^2| / 2
        return math.fsum(self.plateau_values * np.abs(b[1:] ** 2 - b[:-1] ** 2) / 2.0)

    def mass_between(self, lo: float, hi: float) -> float:
        """``int_lo^hi K``."""
        b = self.breakpoints
        overlap = np.clip(np.minimum(b[1:], hi) - np.maximum(b[:-1], lo), 0.0, None)
        return math.fsum(self.plateau_values * overlap)

    def integrate_derivative(self, f: Callable, w) -> np.ndarray:
        """``int f'(w + t) K(t) dt`` for each ``w``, given the antiderivative ``f``."""
        w = np.asarray(w, dtype=float)
        b = self.breakpoints
        vals = np.asarray(f(w[..., None] + b), dtype=float)
        return (np.diff(vals, axis=-1) * self.plateau_values).sum(axis=-1)

    def integrate_quad(self, fprime: Callable, w: float) -> float:
        """Same integral by adaptive quadrature of ``f'`` on each plateau."""
        b = self.breakpoints
        total = 0.0
        for k, K in enumerate(self.plateau_values):
            val, _ = quad(lambda t: fprime(w + t), b[k], b[k + 1], epsabs=1e-13, epsrel=1e-12, limit=200)
            total += K * val
        return total


def _check_moments(X: FiniteRv, n: int) -> None:
    if n < 1:
        raise DomainError("n must be at least 1")
    if abs(X.mean()) > MOMENT_TOL:
        raise PreconditionError(f"E X = {X.mean():.3g}, expected 0")
    if abs(X.moment(2) - 1.0 / n) > MOMENT_TOL:
        raise PreconditionError(f"E X^2 = {X.moment(2):.6g}, expected 1/n = {1.0 / n:.6g}")


def k_function(X: FiniteRv, n: int) -> KFunction:
    """Exact piecewise-constant K for summand law ``X``; checks its mass and first moment."""
    _check_moments(X, n)
    b = np.unique(np.concatenate(([0.0], X.values)))
    lo, hi = b[:-1], b[1:]
    xp = X.values * X.probs
    # t > 0: n E[X; X > t]; t < 0: -n E[X; X < t]
    pos = np.array([n * math.fsum(xp[X.values >= h]) for h in hi])
    neg = np.array([-n * math.fsum(xp[X.values <= l]) for l in lo])
    plateaus = np.where(lo >= 0.0, pos, neg)
    beta = n**1.5 * X.abs_moment(3)
    K = KFunction(b, plateaus, beta, n)
    if np.any(plateaus < -INVARIANT_TOL):
        raise PreconditionError("K is negative on a plateau")
    if abs(K.total_mass() - 1.0) > INVARIANT_TOL:
        raise PreconditionError(f"int K = {K.total_mass()!r}, expected 1")
    if abs(K.abs_first_moment() - beta / (2.0 * math.sqrt(n))) > INVARIANT_TOL:
        raise PreconditionError("int |t| K differs from beta / (2 sqrt n)")
    return K


def _check_budget(X: FiniteRv, n: int) -> None:
    if X.size**n > ENUMERATION_BUDGET:
        raise ResourceError(f"{X.size}^{n} configurations exceed the budget {ENUMERATION_BUDGET}")


class KIdentity(NamedTuple):
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def k_identity_check(X: FiniteRv, n: int, f: Callable, fprime: Callable | None = None, method: str = "ftc") -> KIdentity:
    """``E W_n f(W_n)`` by full enumeration against ``E int f'(W_{n-1} + t) K(t) dt``.

    The right side uses the law of ``W_{n-1}``: the identity is stated at ``n``
    with the last summand integrated out. ``method="ftc"`` integrates exactly
    through the antiderivative ``f``; ``method="quad"`` integrates ``fprime``
    numerically on each plateau.
    """
    _check_budget(X, n)
    K = k_function(X, n)
    z, prob = enumerate_product([X] * n)
    w = z.sum(axis=1)
    lhs = math.fsum(prob * w * np.asarray(f(w), dtype=float))
    rest = iid_sum(X, n - 1)
    if method == "ftc":
        inner = K.integrate_derivative(f, rest.values)
    elif method == "quad":
        if fprime is None:
            raise PreconditionError("quad method needs fprime")
        inner = np.array([K.integrate_quad(fprime, u) for u in rest.values])
    else:
        raise DomainError(f"unknown method {method!r}")
    return KIdentity(lhs, math.fsum(rest.probs * inner))


def symmetry_form(X: FiniteRv, n: int, f: Callable) -> float:
    """``n E[X_n (f(W_{n-1} + X_n) - f(W_{n-1}))]`` from the law of ``W_{n-1}``."""
    rest = iid_sum(X, n - 1)
    u = rest.values[:, None]
    x = X.values[None, :]
    vals = x * (np.asarray(f(u + x), dtype=float) - np.asarray(f(u), dtype=float))
    return n * float(rest.probs @ vals @ X.probs)


@dataclass(frozen=True)
class RampFunction:
    """``g_x``: slope 1 on ``[a - x, b + x]``, centered at ``(a + b) / 2``, flat outside."""

    a: float
    b: float
    x: float

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        return np.clip(w, self.a - self.x, self.b + self.x) - 0.5 * (self.a + self.b)

    def derivative(self, w):
        w = np.asarray(w, dtype=float)
        return ((w >= self.a - self.x) & (w <= self.b + self.x)).astype(float)

    @property
    def sup_norm(self) -> float:
        return 0.5 * (self.b - self.a) + self.x


def g_x(a: float, b: float, x: float) -> RampFunction:
    if not a < b:
        raise DomainError("need a < b")
    if not x > 0:
        raise DomainError("need x > 0")
    return RampFunction(float(a), float(b), float(x))


def concentration_lemma_check(X: FiniteRv, n: int, a: float, b: float) -> BoundCertificate:
    """``P(a <= W_{n-1} <= b) <= (b - a) + 2 beta / sqrt n``, with every step of its proof.

    Components hold the intermediate quantities of the argument with
    ``f = g_x`` at ``x = beta / sqrt n``:

    * ``half_mass_one_sided``: ``int_{t <= x} K``, at least 1/2
    * ``half_mass_two_sided``: ``int_{|t| <= x} K``, at least 1/2
    * ``ramp_integral``: ``E int f'(W_{n-1} + t) K(t) dt``
    * ``ramp_lower``: ``P(a <= W_{n-1} <= b) int_{|t| <= x} K``, below ``ramp_integral``
    * ``two_ewf``: ``2 E W_n f(W_n)``, equal to twice ``ramp_integral``
    * ``two_e_abs_wf``: ``2 E|W_n f(W_n)|``, at most the bound
    """
    if not a < b:
        raise DomainError("need a < b")
    if n < 2:
        raise PreconditionError("n must be at least 2 so that W_{n-1} is a nondegenerate sum")
    K = k_function(X, n)
    x = K.beta / math.sqrt(n)
    bound = (b - a) + 2.0 * x
    rest = iid_sum(X, n - 1)
    full = iid_sum(X, n)
    exact = rest.prob_between(a, b)
    g = g_x(a, b, x)
    one_sided = K.mass_between(-math.inf, x)
    two_sided = K.mass_between(-x, x)
    ramp_integral = math.fsum(rest.probs * K.integrate_derivative(g, rest.values))
    wf = full.values * g(full.values)
    two_ewf = 2.0 * math.fsum(full.probs * wf)
    two_abs = 2.0 * math.fsum(full.probs * np.abs(wf))
    return BoundCertificate(
        theorem="concentration_lemma",
        bound=bound,
        exact=DistanceInterval.point(exact, 1e-14),
        components={
            "beta": K.beta,
            "x": x,
            "half_mass_one_sided": one_sided,
            "half_mass_two_sided": two_sided,
            "ramp_integral": ramp_integral,
            "ramp_lower": exact * two_sided,
            "two_ewf": two_ewf,
            "two_e_abs_wf": two_abs,
            "sup_g": g.sup_norm,
        },
    )


def lemma_chain_holds(cert: BoundCertificate, tol: float = 1e-12) -> bool:
    """Every inequality of the proof chain, in order, up to ``tol``."""
    c = cert.components
    p = cert.exact.hi
    return (
        c["half_mass_one_sided"] >= 0.5 - tol
        and c["half_mass_two_sided"] >= 0.5 - tol
        and c["ramp_integral"] >= c["ramp_lower"] - tol
        and c["ramp_lower"] >= 0.5 * p - tol
        and abs(c["two_ewf"] - 2.0 * c["ramp_integral"]) <= 1e-10
        and p <= c["two_ewf"] + tol
        and c["two_ewf"] <= c["two_e_abs_wf"] + tol
        and c["two_e_abs_wf"] <= cert.bound + tol
    )


class BerryEsseenReport(NamedTuple):
    rhs: float
    cdf_gap: float

    @property
    def magnitude(self) -> float:
        return abs(self.rhs)


def berry_esseen_rhs(X: FiniteRv, n: int, z: float, solution: NormalSteinSolution | None = None) -> BerryEsseenReport:
    """``E int {f'(W_{n-1} + X_n) - f'(W_{n-1} + t)} K(t) dt`` for ``h = 1(w <= z)``.

    ``f`` is the normal Stein solution for ``h`` (solved here unless supplied).
    The value equals ``E{f'(W_n) - W_n f(W_n)} = F_n(z) - Phi(z)``, returned
    alongside as ``cdf_gap`` for comparison. Reported only; no constant is
    asserted.
    """
    _check_budget(X, n)
    K = k_function(X, n)
    if solution is None:
        h = lambda w: (np.asarray(w) <= z).astype(float)
        solution = solve_stein_normal(h, grid=GridFunction.zeros(-8.0, 8.0, 1e-3), breakpoints=(z,), mean_h=std_normal_cdf(z))
    rest = iid_sum(X, n - 1)
    full = iid_sum(X, n)
    lo = rest.values[0] + min(K.breakpoints[0], X.values[0])
    hi = rest.values[-1] + max(K.breakpoints[-1], X.values[-1])
    if not solution.covers(lo, hi):
        raise PreconditionError(f"solution grid [{solution.f.lo}, {solution.f.hi}] does not cover [{lo}, {hi}]")
    first = math.fsum(full.probs * solution.derivative(full.values)) * K.total_mass()
    second = math.fsum(rest.probs * K.integrate_derivative(solution, rest.values))
    gap = full.cdf(z) - std_normal_cdf(z)
    return BerryEsseenReport(first - second, gap)


def kolmogorov_scaling(n_values) -> list[tuple[int, float, float]]:
    """``(n, d_K, d_K sqrt(n) / beta)`` for symmetric ``+-1/sqrt n`` sums."""
    out = []
    for n in n_values:
        X = FiniteRv.two_point(-1.0 / math.sqrt(n), 1.0 / math.sqrt(n), 0.5)
        d = kolmogorov_distance_to_normal(iid_sum(X, n))
        beta = n**1.5 * X.abs_moment(3)
        out.append((n, d, d * math.sqrt(n) / beta))
    return out
