"""Poisson Stein operator, exact Stein-equation solver and total-variation bounds.

Solutions are stored in operator form: ``values[w] = f(w)`` for ``w = 0..J`` with
``lam * f(w+1) - w * f(w) = h(w) - E h(Z)``. The free value ``f(0)`` is fixed
to 0. :meth:`SteinSolution.partial_sum_form` gives the same solution in the
partial-sum indexing ``F(j) = lam * f(j+1)``, where
``F(j) p(j) = sum_{i <= j} (h(i) - E h) p(i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist_core import (
    DEFAULT_POISSON_EPS,
    BoundCertificate,
    DistanceInterval,
    LatticePmf,
    convolve_bernoulli,
    poisson_pmf,
    poisson_pmf_window,
    poisson_tail,
    tv_distance,
)
from .errors import DomainError, PreconditionError, ResourceError, WindowError

SOLVER_TAIL_TOL = 1e-12
MAX_ENUMERATION_SITES = 20


@dataclass(frozen=True, eq=False)
class SteinSolution:
    values: np.ndarray
    lam: float
    mean_h: float = 0.0
    sup_norm: float = field(init=False)
    diff_norm: float = field(init=False)
    diff2_norm: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("values must be a nonempty 1-D array")
        object.__setattr__(self, "values", v)
        d1 = np.diff(v)
        d2 = np.diff(v, 2)
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(v))))
        object.__setattr__(self, "diff_norm", float(np.max(np.abs(d1))) if d1.size else 0.0)
        object.__setattr__(self, "diff2_norm", float(np.max(np.abs(d2))) if d2.size else 0.0)

    @property
    def last(self) -> int:
        return self.values.size - 1

    def partial_sum_form(self) -> np.ndarray:
        """``F(j) = lam * f(j + 1)`` for ``j = 0..J-1``."""
        return self.lam * self.values[1:]


def poisson_op_apply(f: SteinSolution, w: int) -> float:
    """``lam f(w+1) - w f(w)``."""
    if w < 0:
        raise DomainError("w must be a nonnegative integer")
    if w + 1 > f.last:
        raise WindowError(f"w + 1 = {w + 1} lies beyond the stored window [0, {f.last}]")
    return float(f.lam * f.values[w + 1] - w * f.values[w])


def solve_stein_poisson(h: Sequence[float], lam: float) -> SteinSolution:
    """Exact solution of the Poisson Stein equation for ``h`` given on ``0..J``.

    ``E h`` is taken under ``Po(lam)`` restricted to ``0..J`` and renormalized
    (it is stored as ``mean_h``), which differs from the untruncated mean by at
    most ``2 ||h|| P(Z > J)``. Left of the mode ``f`` comes from forward partial
    sums, right of it from tail sums, so the division by ``p(w)`` never
    amplifies cancellation.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 1 or h.size < 2:
        raise PreconditionError("h must be a vector on 0..J with J >= 1")
    if not lam > 0:
        raise DomainError("lambda must be positive")
    J = h.size - 1
    if poisson_tail(J, lam) > SOLVER_TAIL_TOL:
        raise PreconditionError(
            f"Po({lam}) tail beyond J = {J} is {poisson_tail(J, lam):.3g} > {SOLVER_TAIL_TOL}"
        )
    p = poisson_pmf_window(lam, J).weights
    mean_h = math.fsum(h * p) / math.fsum(p)
    g = (h - mean_h) * p
    head = np.cumsum(g)
    # -(sum over j > w), accumulated from the far end
    tail = -(np.cumsum(g[::-1])[::-1] - g)
    mode = int(math.floor(lam))
    F = np.where(np.arange(J + 1) <= mode, head, tail) / p
    values = np.empty(J + 1)
    values[0] = 0.0
    values[1:] = F[:-1] / lam
    return SteinSolution(values, lam, mean_h)


def stein_residual(sol: SteinSolution, h: Sequence[float]) -> np.ndarray:
    """``lam f(w+1) - w f(w) - (h(w) - mean_h)`` for ``w = 0..J-1``."""
    h = np.asarray(h, dtype=float)
    w = np.arange(sol.last)
    return sol.lam * sol.values[1:] - w * sol.values[:-1] - (h[:-1] - sol.mean_h)


def magic_factor_bounds(lam: float) -> tuple[float, float]:
    """``(sup ||Delta f_h||, sup ||f_h||)`` over ``||h|| <= 1``: ``2 min(1, 1/lam)``, ``2 min(1, lam^-1/2)``."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    return 2.0 * min(1.0, 1.0 / lam), 2.0 * min(1.0, lam**-0.5)


def _check_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("every p_i must lie in [0, 1]")
    return p


def _tv_to_poisson(law: LatticePmf, lam: float, eps: float = DEFAULT_POISSON_EPS) -> DistanceInterval:
    if lam == 0:
        # Po(0) is the point mass at 0
        return tv_distance(law, LatticePmf(0, np.array([1.0])))
    return tv_distance(law, poisson_pmf(lam, eps))


def independent_bound(p: Sequence[float], eps: float = DEFAULT_POISSON_EPS) -> BoundCertificate:
    """``min(1, 1/lam) sum p_i^2`` for a sum of independent Bernoullis, certified.

    ``eps`` is the Poisson truncation tail; it widens the exact bracket by at most ``eps / 2``.
    """
    p = _check_probs(p)
    if p.size == 0:
        raise PreconditionError("empty Bernoulli system: lambda = 0 is undefined")
    lam = math.fsum(p)
    sq = math.fsum(p * p)
    factor = min(1.0, 1.0 / lam) if lam > 0 else 1.0
    exact = _tv_to_poisson(convolve_bernoulli(p), lam, eps)
    return BoundCertificate(
        theorem="poisson_independent",
        bound=factor * sq,
        exact=exact,
        components={"lambda": lam, "sum_p2": sq, "factor": factor},
    )


def lecam_bound(p: Sequence[float]) -> float:
    """Le Cam's ``8 min(1, 1/lam) sum p_i^2``, valid only when every ``p_i <= 1/4``."""
    p = _check_probs(p)
    if p.size and p.max() > 0.25:
        raise PreconditionError(f"Le Cam's bound needs max p_i <= 1/4, got {p.max()}")
    lam = math.fsum(p)
    factor = min(1.0, 1.0 / lam) if lam > 0 else 1.0
    return 8.0 * factor * math.fsum(p * p)


def prohorov_binomial_bound(n: int, p: float, c: float) -> float:
    """``c p min(1, n p)`` for ``Bi(n, p)`` against ``Po(n p)``; ``c`` is caller-supplied."""
    if not c > 0:
        raise PreconditionError("the constant c must be positive")
    if not 0 <= p <= 1:
        raise DomainError("p must lie in [0, 1]")
    if n < 0:
        raise DomainError("n must be nonnegative")
    return c * p * min(1.0, n * p)


def bit_table(n: int) -> np.ndarray:
    """All ``2^n`` 0/1 configurations; row ``k`` has bit ``i`` of ``k`` in column ``i``."""
    if n > MAX_ENUMERATION_SITES:
        raise ResourceError(f"2^{n} configurations exceed the enumeration cap 2^{MAX_ENUMERATION_SITES}")
    return ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class BernoulliEnsemble:
    """Dependent Bernoulli indicators ``X_1..X_n``.

    ``joint[k]`` is the probability of the configuration whose bits are those of
    ``k`` (bit ``i`` is ``X_i``). ``neighborhoods[i]`` lists the indices whose sum,
    excluding ``i`` itself, forms ``Y_i``.
    """

    p: np.ndarray
    neighborhoods: tuple[tuple[int, ...], ...] | None = None
    joint: np.ndarray | None = None

    def __post_init__(self):
        p = _check_probs(self.p)
        object.__setattr__(self, "p", p)
        n = p.size
        if self.neighborhoods is not None:
            nb = tuple(tuple(sorted(set(int(j) for j in s))) for s in self.neighborhoods)
            if len(nb) != n or any(j < 0 or j >= n for s in nb for j in s):
                raise ValueError("neighborhoods must give one index set in 0..n-1 per site")
            object.__setattr__(self, "neighborhoods", nb)
        if self.joint is not None:
            joint = np.asarray(self.joint, dtype=float)
            if joint.shape != (2**n,):
                raise ValueError(f"joint must have 2^{n} entries")
            if np.any(joint < 0) or abs(math.fsum(joint) - 1.0) > 1e-12:
                raise ValueError("joint must be a probability vector")
            marg = bit_table(n).T.astype(float) @ joint
            if np.max(np.abs(marg - p), initial=0.0) > 1e-12:
                raise ValueError("marginals of joint do not reproduce p")
            object.__setattr__(self, "joint", joint)

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def lam(self) -> float:
        return math.fsum(self.p)

    @classmethod
    def independent(cls, p: Sequence[float], neighborhoods=None) -> "BernoulliEnsemble":
        p = _check_probs(p)
        bits = bit_table(p.size)
        joint = np.prod(np.where(bits == 1, p[None, :], 1.0 - p[None, :]), axis=1)
        if neighborhoods is None:
            neighborhoods = tuple((i,) for i in range(p.size))
        return cls(p, neighborhoods, joint)

    def sum_law(self) -> LatticePmf:
        if self.joint is None:
            raise PreconditionError("the exact joint law is required")
        w = bit_table(self.n).sum(axis=1)
        return LatticePmf(0, np.bincount(w, weights=self.joint, minlength=self.n + 1), 0.0)


def local_dependence_bound(e: BernoulliEnsemble) -> BoundCertificate:
    """Poisson bound for a locally dependent Bernoulli sum, every term exact.

    bound = sum{p_i^2 + p_i E Y_i + E(X_i Y_i)} min(1, 1/lam)
            + sum E|E(X_i | W~_i) - p_i| 2 min(1, lam^-1/2)
    with ``W~_i = W - X_i - Y_i``, evaluated from the exact joint law.
    """
    if e.joint is None or e.neighborhoods is None:
        raise PreconditionError("local_dependence_bound needs both the joint law and neighborhoods")
    if e.n > MAX_ENUMERATION_SITES:
        raise ResourceError(f"n = {e.n} exceeds the exact enumeration cap {MAX_ENUMERATION_SITES}")
    bits = bit_table(e.n)
    joint = e.joint
    w = bits.sum(axis=1)
    lam = e.lam
    first = 0.0
    cond = 0.0
    for i in range(e.n):
        others = [j for j in e.neighborhoods[i] if j != i]
        x = bits[:, i]
        y = bits[:, others].sum(axis=1) if others else np.zeros_like(w)
        wt = w - x - y
        ey = float(np.dot(joint, y))
        exy = float(np.dot(joint, x * y))
        first += e.p[i] ** 2 + e.p[i] * ey + exy
        # sum_k |P(X_i = 1, W~ = k) - p_i P(W~ = k)| = E|E(X_i | W~_i) - p_i|
        pk = np.bincount(wt, weights=joint, minlength=e.n + 1)
        pxk = np.bincount(wt, weights=joint * x, minlength=e.n + 1)
        cond += math.fsum(np.abs(pxk - e.p[i] * pk))
    if lam > 0:
        c1 = min(1.0, 1.0 / lam)
        c0 = 2.0 * min(1.0, lam**-0.5)
    else:
        c1, c0 = 1.0, 2.0
    bound = first * c1 + cond * c0
    exact = _tv_to_poisson(e.sum_law(), lam)
    return BoundCertificate(
        theorem="poisson_local_dependence",
        bound=bound,
        exact=exact,
        components={
            "lambda": lam,
            "neighborhood_sum": first,
            "conditional_sum": cond,
            "diff_factor": c1,
            "sup_factor": c0,
        },
    )
